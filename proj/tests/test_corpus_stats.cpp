#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "signline/corpus_stats.hpp"
#include "signline/error.hpp"

using namespace signline;

namespace {

Dataset with_counts(const std::vector<int>& counts) {
	Dataset d;
	ImageRecord img{"I", "T", "I.png", 1000, 1000, {}};
	for (std::size_t c = 0; c < counts.size(); ++c) {
		d.catalog.push_back({static_cast<int>(c), std::string(1, static_cast<char>('A' + c))});
		for (int i = 0; i < counts[c]; ++i) {
			img.annotations.push_back({std::to_string(c) + "-" + std::to_string(i), {0, 0, 1, 1}, static_cast<int>(c)});
		}
	}
	d.images.push_back(img);
	return d;
}

std::vector<double> broken_law(int n, int brk, double s1, double s2) {
	std::vector<double> counts;
	for (int r = 1; r <= n; ++r) {
		counts.push_back(r <= brk ? 1000.0 * std::pow(r, s1) : 1000.0 * std::pow(brk, s1) * std::pow(double(r) / brk, s2));
	}
	return counts;
}

// Least squares of y on x, written out.
std::pair<double, double> ols(const std::vector<double>& x, const std::vector<double>& y) {
	double mx = 0, my = 0;
	for (std::size_t i = 0; i < x.size(); ++i) {
		mx += x[i];
		my += y[i];
	}
	mx /= double(x.size());
	my /= double(x.size());
	double sxy = 0, sxx = 0;
	for (std::size_t i = 0; i < x.size(); ++i) {
		sxy += (x[i] - mx) * (y[i] - my);
		sxx += (x[i] - mx) * (x[i] - mx);
	}
	return {sxy / sxx, my - sxy / sxx * mx};
}

} // namespace

TEST_CASE("rank frequency ordering") {
	const RankFrequency rf = rank_frequency(with_counts({3, 1}));
	REQUIRE(rf.entries.size() == 2);
	CHECK(rf.entries[0].class_id == 0);
	CHECK(rf.entries[0].count == 3);
	CHECK(rf.entries[1].class_id == 1);

	const RankFrequency tie = rank_frequency(with_counts({1, 2, 2}));
	CHECK(tie.entries[0].class_id == 1);
	CHECK(tie.entries[1].class_id == 2);
	CHECK(tie.entries[2].class_id == 0);

	const RankFrequency zeros = rank_frequency(with_counts({0, 4}));
	CHECK(zeros.entries.back().count == 0);
	CHECK(zeros.total() == 4);
}

TEST_CASE("zipf construction ranks") {
	// class c gets round(600 / (r)) with a shuffled rank assignment
	Rng rng(8);
	std::vector<int> rank_of(20);
	for (int i = 0; i < 20; ++i) {
		rank_of[i] = i + 1;
	}
	rng.shuffle(rank_of);
	std::vector<int> counts;
	for (int c = 0; c < 20; ++c) {
		counts.push_back(static_cast<int>(std::lround(600.0 / rank_of[c])) * 2 + (20 - rank_of[c]) % 2);
	}
	const RankFrequency rf = rank_frequency(with_counts(counts));
	for (int c = 0; c < 20; ++c) {
		CHECK(rf.entries[rank_of[c] - 1].class_id == c);
	}
}

TEST_CASE("single power law") {
	SUBCASE("exact 1/r") {
		std::vector<double> counts;
		for (int r = 1; r <= 100; ++r) {
			counts.push_back(1000.0 / r);
		}
		const PowerLawFit f = fit_power_law(rank_frequency_from_counts(counts));
		CHECK(std::abs(f.slope + 1.0) < 1e-6);
		CHECK(std::abs(f.intercept - std::log(1000.0)) < 1e-6);
		CHECK(f.r2 >= 0.999999);
	}
	SUBCASE("constant counts") {
		const PowerLawFit f = fit_power_law(rank_frequency_from_counts({5, 5, 5, 5}));
		CHECK(f.slope == 0.0);
		CHECK(f.r2 == 1.0);
	}
	SUBCASE("matches least squares on noisy counts") {
		Rng rng(3);
		std::vector<double> counts;
		for (int r = 1; r <= 60; ++r) {
			counts.push_back(std::round(5000.0 * std::pow(r, -1.3) * std::exp(rng.normal(0, 0.3))) + 1);
		}
		const RankFrequency rf = rank_frequency_from_counts(counts);
		std::vector<double> x, y;
		for (std::size_t i = 0; i < rf.entries.size(); ++i) {
			x.push_back(std::log(double(i + 1)));
			y.push_back(std::log(rf.entries[i].count));
		}
		const auto [slope, intercept] = ols(x, y);
		const PowerLawFit f = fit_power_law(rf);
		CHECK(f.slope == doctest::Approx(slope).epsilon(1e-10));
		CHECK(f.intercept == doctest::Approx(intercept).epsilon(1e-10));
	}
	SUBCASE("zero counts are skipped") {
		const PowerLawFit f = fit_power_law(rank_frequency_from_counts({100, 50, 0, 0}));
		CHECK(f.slope == doctest::Approx(-1.0));
	}
}

TEST_CASE("broken power law") {
	SUBCASE("construction") {
		const RankFrequency rf = rank_frequency_from_counts(broken_law(100, 20, -0.5, -2.0));
		const BrokenPowerLawFit b = fit_broken_power_law(rf);
		CHECK(b.break_rank >= 18);
		CHECK(b.break_rank <= 22);
		CHECK(std::abs(b.left.slope + 0.5) <= 0.05);
		CHECK(std::abs(b.right.slope + 2.0) <= 0.05);
		CHECK(b.r2_total >= fit_power_law(rf).r2);
		const BrokenPowerLawFit free = fit_broken_power_law(rf, false);
		// rank 20 lies on both segments, so breaking at 19 fits equally well
		CHECK(free.break_rank >= 19);
		CHECK(free.break_rank <= 20);
		CHECK(free.left.slope == doctest::Approx(-0.5));
		CHECK(free.right.slope == doctest::Approx(-2.0));
	}
	SUBCASE("continuous fit against an exhaustive hinge scan") {
		Rng rng(12);
		for (int trial = 0; trial < 20; ++trial) {
			std::vector<double> counts = broken_law(40, 5 + static_cast<int>(rng.index(30)), rng.uniform(-1, -0.2),
			                                        rng.uniform(-3, -1));
			for (auto& c : counts) {
				c = std::max(1.0, std::round(c * std::exp(rng.normal(0, 0.1))));
			}
			const RankFrequency rf = rank_frequency_from_counts(counts);
			std::vector<double> x, y;
			for (std::size_t i = 0; i < rf.entries.size(); ++i) {
				x.push_back(std::log(double(i + 1)));
				y.push_back(std::log(rf.entries[i].count));
			}
			// Hinge basis [1, x, max(0, x - xb)]: 3-parameter OLS via normal equations.
			double best_sse = 1e300;
			std::size_t best_b = 0;
			for (std::size_t b = 2; b + 1 <= x.size(); ++b) {
				const double xb = x[b - 1];
				double m[3][4] = {};
				for (std::size_t i = 0; i < x.size(); ++i) {
					const double f[3] = {1.0, x[i], std::max(0.0, x[i] - xb)};
					for (int r = 0; r < 3; ++r) {
						for (int c = 0; c < 3; ++c) {
							m[r][c] += f[r] * f[c];
						}
						m[r][3] += f[r] * y[i];
					}
				}
				for (int p = 0; p < 3; ++p) {
					for (int r = p + 1; r < 3; ++r) {
						const double k = m[r][p] / m[p][p];
						for (int c = p; c < 4; ++c) {
							m[r][c] -= k * m[p][c];
						}
					}
				}
				double beta[3];
				for (int r = 2; r >= 0; --r) {
					double s = m[r][3];
					for (int c = r + 1; c < 3; ++c) {
						s -= m[r][c] * beta[c];
					}
					beta[r] = s / m[r][r];
				}
				double sse = 0;
				for (std::size_t i = 0; i < x.size(); ++i) {
					const double e = y[i] - beta[0] - beta[1] * x[i] - beta[2] * std::max(0.0, x[i] - xb);
					sse += e * e;
				}
				if (sse < best_sse - 1e-12) {
					best_sse = sse;
					best_b = b;
				}
			}
			const BrokenPowerLawFit fit = fit_broken_power_law(rf);
			CHECK(fit.break_rank == best_b);
		}
	}
	SUBCASE("nesting on random inputs") {
		Rng rng(21);
		for (int trial = 0; trial < 200; ++trial) {
			std::vector<double> counts;
			const std::size_t n = 4 + rng.index(60);
			for (std::size_t i = 0; i < n; ++i) {
				counts.push_back(1 + std::floor(std::exp(rng.uniform(0, 8))));
			}
			const RankFrequency rf = rank_frequency_from_counts(counts);
			const double single = fit_power_law(rf).r2;
			CHECK(fit_broken_power_law(rf).r2_total >= single - 1e-12);
			CHECK(fit_broken_power_law(rf, false).r2_total >= single - 1e-12);
		}
	}
}

TEST_CASE("coverage") {
	const RankFrequency rf = rank_frequency_from_counts({20, 50, 30});
	CHECK(coverage_topn(rf, 1) == 0.5);
	CHECK(coverage_topn(rf, 2) == 0.8);
	CHECK(coverage_topn(rf, 3) == 1.0);
	CHECK_THROWS_AS(coverage_topn(rf, 0), ValidationError);
}

TEST_CASE("coefficient of determination convention") {
	CHECK(coefficient_of_determination(0.0, 0.0) == 1.0);
	CHECK(coefficient_of_determination(1.0, 4.0) == 0.75);
	CHECK_THROWS(coefficient_of_determination(1.0, 0.0));
}
