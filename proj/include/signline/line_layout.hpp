#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "signline/geometry.hpp"

namespace signline {

enum class OutlierDistance {
	perpendicular,  // distance from the point to the fitted line
	nearest_member, // distance to the closest point already on the line
};

struct LineConfig {
	/// Inlier band in pixels (vertical residual). Callers usually derive it
	/// with default_residual_threshold().
	double residual_threshold{10.0};
	/// Slope penalty, applied with x standardised to zero mean / unit variance.
	double ridge_lambda{10.0};
	double max_abs_slope{0.3};
	int ransac_iterations{200};
	int min_line_points{2};
	std::uint64_t seed{0};
	OutlierDistance outlier_distance{OutlierDistance::perpendicular};

	void validate() const;
};

/// y = slope * x + intercept in image pixels; members hold input point
/// indices sorted by ascending x.
struct TextLine {
	double slope{0.0};
	double intercept{0.0};
	std::vector<std::size_t> members;

	double y_at(double x) const { return slope * x + intercept; }
};

struct LayoutResult {
	std::vector<TextLine> lines;           // ascending intercept
	std::vector<std::size_t> assignment;   // point index -> line index
	std::vector<std::size_t> reading_sequence;
};

struct RidgeLine {
	double slope{0.0};
	double intercept{0.0};
};

/// Minimises sum (y - a x - b)^2 + lambda a^2 with the intercept unpenalised.
/// Throws ValidationError for fewer than 2 points or when all x coincide.
RidgeLine fit_ridge_line(std::span<const Point2> points, double lambda);

/// Same penalty, but applied after standardising x (zero mean, unit
/// variance); the result is mapped back to pixel coordinates.
RidgeLine fit_ridge_line_standardized(std::span<const Point2> points, double lambda);

/// 0.75 x the median box height; falls back to 1 px for empty input.
double default_residual_threshold(std::span<const BoundingBox> boxes);

/// Assigns each outlier to the nearest line (ties to the lower line index).
/// `lines` must already be in reading order. With no lines, every outlier
/// goes to a single new flat line through their mean y, appended to `lines`.
std::vector<std::size_t> assign_outliers(std::span<const Point2> points, std::span<const std::size_t> outliers,
                                         std::vector<TextLine>& lines,
                                         OutlierDistance metric = OutlierDistance::perpendicular);

/// Sorts lines by intercept (stable), orders members by x and returns the
/// flattened sequence.
std::vector<std::size_t> order_reading(std::vector<TextLine>& lines, std::span<const Point2> points);

/// Sequential RANSAC: repeatedly find the flat-enough 2-point candidate line
/// with the most inliers, refit those inliers with the ridge penalty, remove
/// them, and continue until at most one point (or no admissible candidate)
/// remains. Leftover points join their nearest line.
LayoutResult sequential_ransac(std::span<const Point2> points, const LineConfig& config);

} // namespace signline
