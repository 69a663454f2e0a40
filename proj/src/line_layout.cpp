#include "signline/line_layout.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "signline/error.hpp"
#include "signline/random.hpp"

namespace signline {

void LineConfig::validate() const {
	if (!(residual_threshold > 0.0)) {
		throw ValidationError("residual_threshold must be > 0");
	}
	if (!(max_abs_slope > 0.0)) {
		throw ValidationError("max_abs_slope must be > 0");
	}
	if (ransac_iterations < 1) {
		throw ValidationError("ransac_iterations must be >= 1");
	}
	if (min_line_points < 2) {
		throw ValidationError("min_line_points must be >= 2");
	}
	if (!(ridge_lambda >= 0.0)) {
		throw ValidationError("ridge_lambda must be >= 0");
	}
}

namespace {

struct Moments {
	double n{0.0};
	double mean_x{0.0};
	double mean_y{0.0};
	double sxx{0.0};
	double sxy{0.0};
};

Moments centered_moments(std::span<const Point2> points) {
	if (points.size() < 2) {
		throw ValidationError("line fit needs at least 2 points");
	}
	Moments m;
	m.n = static_cast<double>(points.size());
	for (const auto& p : points) {
		m.mean_x += p.x;
		m.mean_y += p.y;
	}
	m.mean_x /= m.n;
	m.mean_y /= m.n;
	for (const auto& p : points) {
		m.sxx += (p.x - m.mean_x) * (p.x - m.mean_x);
		m.sxy += (p.x - m.mean_x) * (p.y - m.mean_y);
	}
	if (!(m.sxx > 0.0)) {
		throw ValidationError("line fit is degenerate: all points share the same x");
	}
	return m;
}

double perpendicular_distance(const TextLine& line, const Point2& p) {
	return std::abs(line.slope * p.x - p.y + line.intercept) / std::sqrt(line.slope * line.slope + 1.0);
}

double nearest_member_distance(const TextLine& line, const Point2& p, std::span<const Point2> points) {
	double best = std::numeric_limits<double>::infinity();
	for (const auto m : line.members) {
		best = std::min(best, std::hypot(points[m].x - p.x, points[m].y - p.y));
	}
	return best;
}

struct Candidate {
	double slope{0.0};
	double intercept{0.0};
	std::size_t inliers{0};
	double residual{0.0};
};

} // namespace

RidgeLine fit_ridge_line(std::span<const Point2> points, double lambda) {
	const Moments m = centered_moments(points);
	const double slope = m.sxy / (m.sxx + lambda);
	return {slope, m.mean_y - slope * m.mean_x};
}

RidgeLine fit_ridge_line_standardized(std::span<const Point2> points, double lambda) {
	const Moments m = centered_moments(points);
	// In standardised x the Gram term is n; scaling back gives Sxx (1 + lambda / n).
	const double slope = m.sxy / (m.sxx * (1.0 + lambda / m.n));
	return {slope, m.mean_y - slope * m.mean_x};
}

double default_residual_threshold(std::span<const BoundingBox> boxes) {
	if (boxes.empty()) {
		return 1.0;
	}
	std::vector<double> heights;
	heights.reserve(boxes.size());
	for (const auto& b : boxes) {
		heights.push_back(b.height());
	}
	std::sort(heights.begin(), heights.end());
	const std::size_t mid = heights.size() / 2;
	const double median = heights.size() % 2 == 1 ? heights[mid] : 0.5 * (heights[mid - 1] + heights[mid]);
	return median > 0.0 ? 0.75 * median : 1.0;
}

std::vector<std::size_t> assign_outliers(std::span<const Point2> points, std::span<const std::size_t> outliers,
                                         std::vector<TextLine>& lines, OutlierDistance metric) {
	std::vector<std::size_t> assigned;
	assigned.reserve(outliers.size());
	if (outliers.empty()) {
		return assigned;
	}
	if (lines.empty()) {
		double mean_y = 0.0;
		for (const auto idx : outliers) {
			mean_y += points[idx].y;
		}
		mean_y /= static_cast<double>(outliers.size());
		TextLine line;
		line.intercept = mean_y;
		line.members.assign(outliers.begin(), outliers.end());
		lines.push_back(std::move(line));
		assigned.assign(outliers.size(), lines.size() - 1);
		return assigned;
	}

	// Distances are measured against the lines as they were before any
	// outlier joined them.
	const std::vector<TextLine> reference = lines;
	for (const auto idx : outliers) {
		std::size_t best_line = 0;
		double best = std::numeric_limits<double>::infinity();
		for (std::size_t l = 0; l < reference.size(); ++l) {
			const double d = metric == OutlierDistance::perpendicular
			                     ? perpendicular_distance(reference[l], points[idx])
			                     : nearest_member_distance(reference[l], points[idx], points);
			if (d < best) {
				best = d;
				best_line = l;
			}
		}
		lines[best_line].members.push_back(idx);
		assigned.push_back(best_line);
	}
	return assigned;
}

std::vector<std::size_t> order_reading(std::vector<TextLine>& lines, std::span<const Point2> points) {
	std::stable_sort(lines.begin(), lines.end(),
	                 [](const TextLine& a, const TextLine& b) { return a.intercept < b.intercept; });
	std::vector<std::size_t> sequence;
	for (auto& line : lines) {
		std::stable_sort(line.members.begin(), line.members.end(), [&](std::size_t a, std::size_t b) {
			if (points[a].x != points[b].x) {
				return points[a].x < points[b].x;
			}
			return a < b;
		});
		sequence.insert(sequence.end(), line.members.begin(), line.members.end());
	}
	return sequence;
}

LayoutResult sequential_ransac(std::span<const Point2> points, const LineConfig& config) {
	config.validate();
	LayoutResult result;
	if (points.empty()) {
		return result;
	}

	Rng rng(config.seed);
	std::vector<std::size_t> remaining(points.size());
	std::iota(remaining.begin(), remaining.end(), 0);
	std::vector<TextLine> lines;

	auto score_candidate = [&](std::size_t a, std::size_t b, Candidate& best, bool& found) {
		const Point2& p = points[a];
		const Point2& q = points[b];
		if (p.x == q.x) {
			return;
		}
		const double slope = (q.y - p.y) / (q.x - p.x);
		if (std::abs(slope) > config.max_abs_slope) {
			return;
		}
		Candidate c{slope, p.y - slope * p.x, 0, 0.0};
		for (const auto idx : remaining) {
			const double r = std::abs(points[idx].y - (c.slope * points[idx].x + c.intercept));
			if (r <= config.residual_threshold) {
				++c.inliers;
				c.residual += r;
			}
		}
		if (!found || c.inliers > best.inliers || (c.inliers == best.inliers && c.residual < best.residual)) {
			best = c;
			found = true;
		}
	};

	while (remaining.size() >= 2) {
		Candidate best;
		bool found = false;
		const std::size_t n = remaining.size();
		const std::size_t pair_count = n * (n - 1) / 2;
		if (pair_count <= static_cast<std::size_t>(config.ransac_iterations)) {
			// Few enough points to score every pair.
			for (std::size_t i = 0; i < n; ++i) {
				for (std::size_t j = i + 1; j < n; ++j) {
					score_candidate(remaining[i], remaining[j], best, found);
				}
			}
		} else {
			for (int it = 0; it < config.ransac_iterations; ++it) {
				const std::size_t i = rng.index(n);
				std::size_t j = rng.index(n - 1);
				if (j >= i) {
					++j;
				}
				score_candidate(remaining[i], remaining[j], best, found);
			}
		}
		if (!found || best.inliers < static_cast<std::size_t>(config.min_line_points)) {
			break;
		}

		TextLine line;
		std::vector<std::size_t> rest;
		std::vector<Point2> inlier_points;
		for (const auto idx : remaining) {
			const double r = std::abs(points[idx].y - (best.slope * points[idx].x + best.intercept));
			if (r <= config.residual_threshold) {
				line.members.push_back(idx);
				inlier_points.push_back(points[idx]);
			} else {
				rest.push_back(idx);
			}
		}
		const RidgeLine fit = fit_ridge_line_standardized(inlier_points, config.ridge_lambda);
		line.slope = fit.slope;
		line.intercept = fit.intercept;
		if (std::abs(line.slope) > config.max_abs_slope) {
			double mean_x = 0.0;
			double mean_y = 0.0;
			for (const auto& p : inlier_points) {
				mean_x += p.x;
				mean_y += p.y;
			}
			mean_x /= static_cast<double>(inlier_points.size());
			mean_y /= static_cast<double>(inlier_points.size());
			line.slope = std::copysign(config.max_abs_slope, line.slope);
			line.intercept = mean_y - line.slope * mean_x;
		}
		lines.push_back(std::move(line));
		remaining = std::move(rest);
	}

	std::stable_sort(lines.begin(), lines.end(),
	                 [](const TextLine& a, const TextLine& b) { return a.intercept < b.intercept; });
	assign_outliers(points, remaining, lines, config.outlier_distance);
	result.reading_sequence = order_reading(lines, points);
	result.lines = std::move(lines);
	result.assignment.assign(points.size(), 0);
	for (std::size_t l = 0; l < result.lines.size(); ++l) {
		for (const auto m : result.lines[l].members) {
			result.assignment[m] = l;
		}
	}
	return result;
}

} // namespace signline
