#pragma once
// Seeded synthetic line layouts with known line membership.

#include <algorithm>
#include <cmath>
#include <vector>

#include "signline/geometry.hpp"
#include "signline/random.hpp"

namespace layouts {

struct Layout {
	std::vector<signline::Point2> points;
	std::vector<std::size_t> truth; // line index per point, top line = 0
	std::size_t lines{0};
	double residual_threshold{10.0};
};

// 3-10 lines on a 600 px wide tablet, each a left-aligned row of 3-15 signs
// at a pitch of 1.2-2 sign heights (sign height = threshold / 0.75). Slopes
// stay within +-0.2, neighbouring lines are at least 3x the threshold apart
// over the whole width, and centroids jitter vertically by up to half the
// threshold.
inline Layout make(std::uint64_t seed, double threshold = 10.0) {
	signline::Rng rng(seed);
	Layout out;
	out.residual_threshold = threshold;
	out.lines = 3 + rng.index(8);
	const double width = 600.0;
	const double base = rng.uniform(-0.17, 0.17);
	std::vector<double> slopes, intercepts;
	double y0 = 40.0;
	for (std::size_t l = 0; l < out.lines; ++l) {
		const double slope = std::clamp(base + rng.uniform(-0.03, 0.03), -0.2, 0.2);
		double intercept = y0;
		if (l > 0) {
			// smallest intercept keeping the gap >= 3 threshold at both ends
			const double need0 = intercepts.back() + 3 * threshold;
			const double need1 = slopes.back() * width + intercepts.back() + 3 * threshold - slope * width;
			intercept = std::max(need0, need1) + rng.uniform(0, 2 * threshold);
		}
		slopes.push_back(slope);
		intercepts.push_back(intercept);
		const std::size_t n = 3 + rng.index(13);
		const double h = threshold / 0.75;
		const double pitch = rng.uniform(1.2, 2.0) * h;
		const double start = rng.uniform(0, 2 * h);
		for (std::size_t k = 0; k < n; ++k) {
			const double x = start + pitch * double(k) + rng.uniform(-0.2, 0.2) * h;
			out.points.push_back({x, slope * x + intercept + rng.uniform(-0.5, 0.5) * threshold});
			out.truth.push_back(l);
		}
	}
	// Present the points in random order.
	std::vector<std::size_t> order(out.points.size());
	for (std::size_t i = 0; i < order.size(); ++i) {
		order[i] = i;
	}
	rng.shuffle(order);
	Layout shuffled = out;
	for (std::size_t i = 0; i < order.size(); ++i) {
		shuffled.points[i] = out.points[order[i]];
		shuffled.truth[i] = out.truth[order[i]];
	}
	return shuffled;
}

// Share of points whose line matches the truth after mapping each emitted
// line to its majority truth line; lines are already ordered top-down, so a
// correct result maps emitted line i to truth line i.
inline double assignment_accuracy(const Layout& layout, const std::vector<std::size_t>& assignment) {
	std::size_t ok = 0;
	for (std::size_t i = 0; i < layout.points.size(); ++i) {
		ok += assignment[i] == layout.truth[i];
	}
	return static_cast<double>(ok) / static_cast<double>(layout.points.size());
}

} // namespace layouts
