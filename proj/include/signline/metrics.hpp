#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "signline/geometry.hpp"

namespace signline {

struct PRPoint {
	double recall{0.0};
	double precision{0.0};
};

struct PRCurve {
	std::vector<PRPoint> points; // one per ranked prediction
	double ap{0.0};
};

enum class ApInterpolation {
	points101, // precision envelope sampled at recall 0.00, 0.01, ..., 1.00
	all_points // exact area under the precision envelope
};

/// Pooled single-class AP. preds[i] and gts[i] belong to the same image.
/// Throws ValidationError when there is no ground truth at all.
PRCurve average_precision(std::span<const std::vector<ScoredBox>> preds, std::span<const std::vector<BoundingBox>> gts,
                          double iou_threshold, ApInterpolation interpolation = ApInterpolation::points101);

inline constexpr double kDefaultScoreThreshold = 0.5;

/// Mean of per-tablet recalls. tablet_of[i] names the tablet of image i;
/// only predictions scoring >= score_threshold take part.
double recall_at(std::span<const std::vector<ScoredBox>> preds, std::span<const std::vector<BoundingBox>> gts,
                 std::span<const std::string> tablet_of, double iou_threshold,
                 double score_threshold = kDefaultScoreThreshold);

/// Fraction of samples whose label is among the first k ranked classes.
double topk_accuracy(std::span<const std::vector<int>> rankings, std::span<const int> labels, std::size_t k);

/// Rows are true classes, columns predicted top-1 classes.
struct ConfusionTally {
	std::vector<std::vector<std::size_t>> matrix;
	std::vector<std::size_t> train_count;

	explicit ConfusionTally(std::size_t num_classes = 0)
	    : matrix(num_classes, std::vector<std::size_t>(num_classes, 0)), train_count(num_classes, 0) {}

	std::size_t num_classes() const { return matrix.size(); }
	void add(int truth, int predicted);
	std::size_t support(std::size_t c) const;
	std::size_t predicted(std::size_t c) const;
};

double mean_recall(const ConfusionTally& confusion);

/// Pearson correlation of average ranks.
double spearman_rho(std::span<const double> x, std::span<const double> y);

std::size_t edit_distance(std::span<const int> a, std::span<const int> b);

/// edit_distance / max(1, |reference|).
double cer(std::span<const int> hypothesis, std::span<const int> reference);

struct CorpusCer {
	double micro{0.0};       // total edits / total reference tokens
	double macro{0.0};       // mean over groups of per-group micro CER
	std::size_t edits{0};
	std::size_t reference_tokens{0};
};

/// hypotheses[i] / references[i] form one sequence pair; group_of[i] names
/// the group (tablet) used for the macro average.
CorpusCer corpus_cer(std::span<const std::vector<int>> hypotheses, std::span<const std::vector<int>> references,
                     std::span<const std::string> group_of);

/// Share of predictions scoring >= threshold that matched no ground truth;
/// 0 when no prediction clears the threshold.
double detector_fpr(const MatchResult& match, std::span<const ScoredBox> preds, double score_threshold);

struct ClassRow {
	int class_id{0};
	std::size_t train_count{0};
	std::size_t support{0};
	std::size_t predicted{0};
	std::optional<double> precision; // empty when the class was never predicted
	double recall{0.0};              // 0 for zero-support classes
};

struct PerClassReport {
	std::vector<ClassRow> rows;
	/// (ln train_count, recall) for classes with support > 0 and train_count > 0.
	std::vector<std::pair<double, double>> log_train_vs_recall;
};

PerClassReport per_class_report(const ConfusionTally& confusion);

} // namespace signline
