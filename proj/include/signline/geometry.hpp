#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signline/dataset.hpp"

namespace signline {

struct Point2 {
	double x{0.0};
	double y{0.0};

	bool operator==(const Point2&) const = default;
};

/// Single-class detector output.
struct ScoredBox {
	BoundingBox bbox;
	double score{0.0};
	std::string source_id;
};

struct MatchPair {
	std::size_t pred_index{0};
	std::size_t gt_index{0};
	double iou{0.0};
};

struct MatchResult {
	std::vector<MatchPair> pairs;
	std::vector<std::size_t> unmatched_preds;
	std::vector<std::size_t> unmatched_gts;
	double iou_threshold{0.5};
};

enum class Matcher { greedy, hungarian };

inline constexpr double kDefaultAlignmentIou = 0.5;

Point2 centroid(const BoundingBox& b);

double intersection_area(const BoundingBox& a, const BoundingBox& b);
double iou(const BoundingBox& a, const BoundingBox& b);

/// Score-descending greedy matching: each prediction (ties by lower index)
/// takes the still-unmatched ground-truth box with the highest IoU at or above
/// the threshold (ties by lower index). One-to-one on both sides.
MatchResult match_greedy(std::span<const ScoredBox> preds, std::span<const BoundingBox> gts, double iou_threshold);

/// Assignment maximising total IoU over pairs that clear the threshold.
/// Exposed for sensitivity checks against the greedy rule.
MatchResult match_hungarian(std::span<const ScoredBox> preds, std::span<const BoundingBox> gts, double iou_threshold);

MatchResult match(Matcher matcher, std::span<const ScoredBox> preds, std::span<const BoundingBox> gts,
                  double iou_threshold);

struct LabeledBox {
	ScoredBox box;
	/// Ground-truth class carried over from the aligned hotspot; empty for
	/// false positives.
	std::optional<int> class_id;
	std::optional<std::size_t> gt_index;

	bool false_positive() const { return !class_id.has_value(); }
};

struct ImputedLabels {
	std::vector<LabeledBox> boxes; // same order as the predictions
	std::size_t false_positives{0};
	std::size_t missed_gts{0};
};

/// Transfers ground-truth labels onto matched predictions.
ImputedLabels impute_labels(const MatchResult& match, std::span<const ScoredBox> preds, std::span<const Annotation> gts);

std::vector<BoundingBox> boxes_of(std::span<const Annotation> annotations);

} // namespace signline
