#include "signline/corpus_stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "signline/error.hpp"

namespace signline {

double RankFrequency::total() const {
	double sum = 0.0;
	for (const auto& e : entries) {
		sum += e.count;
	}
	return sum;
}

RankFrequency rank_frequency_from_counts(const std::vector<double>& counts) {
	RankFrequency rf;
	rf.entries.reserve(counts.size());
	for (std::size_t i = 0; i < counts.size(); ++i) {
		if (counts[i] < 0.0) {
			throw ValidationError("negative count for class " + std::to_string(i));
		}
		rf.entries.push_back({static_cast<int>(i), counts[i]});
	}
	std::stable_sort(rf.entries.begin(), rf.entries.end(), [](const RankEntry& a, const RankEntry& b) {
		if (a.count != b.count) {
			return a.count > b.count;
		}
		return a.class_id < b.class_id;
	});
	return rf;
}

RankFrequency rank_frequency(const Dataset& dataset) {
	if (dataset.num_annotations() == 0) {
		throw ValidationError("rank-frequency needs at least one annotation");
	}
	std::vector<double> counts(dataset.catalog.size(), 0.0);
	for (const auto& image : dataset.images) {
		for (const auto& a : image.annotations) {
			counts.at(static_cast<std::size_t>(a.class_id)) += 1.0;
		}
	}
	return rank_frequency_from_counts(counts);
}

double coefficient_of_determination(double sse, double sst) {
	if (sst <= 0.0) {
		if (sse <= 0.0) {
			return 1.0;
		}
		throw ValidationError("r^2 undefined: zero total variance with nonzero residuals");
	}
	return std::clamp(1.0 - sse / sst, 0.0, 1.0);
}

namespace {

struct LogPoints {
	std::vector<double> x; // ln rank
	std::vector<double> y; // ln count
};

LogPoints log_points(const RankFrequency& rf) {
	LogPoints pts;
	for (std::size_t i = 0; i < rf.entries.size(); ++i) {
		if (rf.entries[i].count > 0.0) {
			pts.x.push_back(std::log(static_cast<double>(i + 1)));
			pts.y.push_back(std::log(rf.entries[i].count));
		}
	}
	return pts;
}

bool all_equal(const std::vector<double>& y, std::size_t begin, std::size_t end) {
	for (std::size_t i = begin + 1; i < end; ++i) {
		if (y[i] != y[begin]) {
			return false;
		}
	}
	return true;
}

double total_sum_squares(const std::vector<double>& y, std::size_t begin, std::size_t end) {
	if (all_equal(y, begin, end)) {
		return 0.0;
	}
	double mean = 0.0;
	for (std::size_t i = begin; i < end; ++i) {
		mean += y[i];
	}
	mean /= static_cast<double>(end - begin);
	double sst = 0.0;
	for (std::size_t i = begin; i < end; ++i) {
		sst += (y[i] - mean) * (y[i] - mean);
	}
	return sst;
}

struct LineFit {
	double slope{0.0};
	double intercept{0.0};
	double sse{0.0};
};

LineFit ols(const LogPoints& pts, std::size_t begin, std::size_t end) {
	if (all_equal(pts.y, begin, end)) {
		return {0.0, pts.y[begin], 0.0};
	}
	const auto n = static_cast<double>(end - begin);
	double mx = 0.0;
	double my = 0.0;
	for (std::size_t i = begin; i < end; ++i) {
		mx += pts.x[i];
		my += pts.y[i];
	}
	mx /= n;
	my /= n;
	double sxx = 0.0;
	double sxy = 0.0;
	for (std::size_t i = begin; i < end; ++i) {
		sxx += (pts.x[i] - mx) * (pts.x[i] - mx);
		sxy += (pts.x[i] - mx) * (pts.y[i] - my);
	}
	LineFit fit;
	fit.slope = sxx > 0.0 ? sxy / sxx : 0.0;
	fit.intercept = my - fit.slope * mx;
	for (std::size_t i = begin; i < end; ++i) {
		const double r = pts.y[i] - (fit.intercept + fit.slope * pts.x[i]);
		fit.sse += r * r;
	}
	return fit;
}

PowerLawFit segment_fit(const LogPoints& pts, std::size_t begin, std::size_t end, double slope, double intercept) {
	double sse = 0.0;
	for (std::size_t i = begin; i < end; ++i) {
		const double r = pts.y[i] - (intercept + slope * pts.x[i]);
		sse += r * r;
	}
	const double sst = total_sum_squares(pts.y, begin, end);
	// A segment can be a single point or a perfectly flat run; report r^2 = 1
	// when it is reproduced exactly and 0 when there is no variance to explain.
	double r2 = 0.0;
	if (sst > 0.0) {
		r2 = std::clamp(1.0 - sse / sst, 0.0, 1.0);
	} else if (sse <= 1e-24) {
		r2 = 1.0;
	}
	return {slope, intercept, r2};
}

// Least squares for y = c + s1 * min(x - xb, 0) + s2 * max(x - xb, 0).
// Returns false when the 3x3 normal system is singular.
bool fit_hinge(const LogPoints& pts, double xb, std::array<double, 3>& params, double& sse) {
	std::array<std::array<double, 4>, 3> a{};
	for (std::size_t i = 0; i < pts.x.size(); ++i) {
		const double d = pts.x[i] - xb;
		const std::array<double, 3> f{1.0, std::min(d, 0.0), std::max(d, 0.0)};
		for (int r = 0; r < 3; ++r) {
			for (int c = 0; c < 3; ++c) {
				a[r][c] += f[r] * f[c];
			}
			a[r][3] += f[r] * pts.y[i];
		}
	}
	// Gaussian elimination with partial pivoting.
	for (int col = 0; col < 3; ++col) {
		int pivot = col;
		for (int r = col + 1; r < 3; ++r) {
			if (std::abs(a[r][col]) > std::abs(a[pivot][col])) {
				pivot = r;
			}
		}
		if (std::abs(a[pivot][col]) < 1e-12) {
			return false;
		}
		std::swap(a[col], a[pivot]);
		for (int r = 0; r < 3; ++r) {
			if (r == col) {
				continue;
			}
			const double factor = a[r][col] / a[col][col];
			for (int c = col; c < 4; ++c) {
				a[r][c] -= factor * a[col][c];
			}
		}
	}
	for (int r = 0; r < 3; ++r) {
		params[r] = a[r][3] / a[r][r];
	}
	sse = 0.0;
	for (std::size_t i = 0; i < pts.x.size(); ++i) {
		const double d = pts.x[i] - xb;
		const double pred = params[0] + params[1] * std::min(d, 0.0) + params[2] * std::max(d, 0.0);
		sse += (pts.y[i] - pred) * (pts.y[i] - pred);
	}
	return true;
}

} // namespace

PowerLawFit fit_power_law(const RankFrequency& rf) {
	const LogPoints pts = log_points(rf);
	if (pts.x.size() < 2) {
		throw ValidationError("power-law fit needs at least 2 classes with positive counts");
	}
	const LineFit fit = ols(pts, 0, pts.x.size());
	const double sst = total_sum_squares(pts.y, 0, pts.y.size());
	return {fit.slope, fit.intercept, coefficient_of_determination(fit.sse, sst)};
}

BrokenPowerLawFit fit_broken_power_law(const RankFrequency& rf, bool continuous) {
	const LogPoints pts = log_points(rf);
	const std::size_t n = pts.x.size();
	if (n < 4) {
		throw ValidationError("broken power-law fit needs at least 4 classes with positive counts");
	}
	const double sst = total_sum_squares(pts.y, 0, n);
	const LineFit single = ols(pts, 0, n);

	BrokenPowerLawFit best;
	best.continuous = continuous;
	double best_sse = std::numeric_limits<double>::infinity();
	std::array<double, 3> best_hinge{};

	// Break rank b puts ranks 1..b on the left segment and b+1..n on the right.
	const std::size_t last_break = sst > 0.0 ? (continuous ? n - 1 : n - 2) : 1;
	for (std::size_t b = 2; b <= last_break; ++b) {
		if (continuous) {
			std::array<double, 3> params{};
			double sse = 0.0;
			if (fit_hinge(pts, pts.x[b - 1], params, sse) && sse < best_sse) {
				best_sse = sse;
				best.break_rank = b;
				best_hinge = params;
			}
		} else {
			const LineFit left = ols(pts, 0, b);
			const LineFit right = ols(pts, b, n);
			const double sse = left.sse + right.sse;
			if (sse < best_sse) {
				best_sse = sse;
				best.break_rank = b;
				best.left = segment_fit(pts, 0, b, left.slope, left.intercept);
				best.right = segment_fit(pts, b, n, right.slope, right.intercept);
			}
		}
	}

	// The single line is a member of the two-segment family, so never report
	// a worse fit than it because of rounding in the scan.
	if (!(best_sse < single.sse)) {
		best_sse = single.sse;
		if (best.break_rank == 0) {
			best.break_rank = 2;
		}
		best.left = segment_fit(pts, 0, best.break_rank, single.slope, single.intercept);
		best.right = segment_fit(pts, best.break_rank, n, single.slope, single.intercept);
	} else if (continuous) {
		const double xb = pts.x[best.break_rank - 1];
		const double c = best_hinge[0];
		best.left = segment_fit(pts, 0, best.break_rank, best_hinge[1], c - best_hinge[1] * xb);
		best.right = segment_fit(pts, best.break_rank, n, best_hinge[2], c - best_hinge[2] * xb);
	}
	best.r2_total = coefficient_of_determination(best_sse, sst);
	return best;
}

double coverage_topn(const RankFrequency& rf, std::size_t n) {
	if (n < 1 || n > rf.entries.size()) {
		throw ValidationError("coverage rank n must lie in 1.." + std::to_string(rf.entries.size()));
	}
	const double total = rf.total();
	if (total <= 0.0) {
		throw ValidationError("coverage undefined for an empty corpus");
	}
	if (n == rf.entries.size()) {
		return 1.0;
	}
	double top = 0.0;
	for (std::size_t i = 0; i < n; ++i) {
		top += rf.entries[i].count;
	}
	return top / total;
}

} // namespace signline
