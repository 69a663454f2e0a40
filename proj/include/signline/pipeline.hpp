#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "signline/backends.hpp"
#include "signline/baseline.hpp"
#include "signline/dataset.hpp"
#include "signline/geometry.hpp"
#include "signline/line_layout.hpp"
#include "signline/metrics.hpp"

namespace signline {

inline constexpr const char* kVersion = "0.3.0";

/// Which implementation sits behind a pipeline stage.
///   detector kinds:   baseline | fixture | stream | http
///   classifier kinds: centroid | fixture | oracle | stream | http
/// `path` is the fixture predictions file or a trained centroid model (when
/// empty, a centroid classifier is trained on each fold's training split).
struct BackendSpec {
	std::string kind;
	std::string path{};
	std::string command{};
	std::string url{};
	nlohmann::json params = nlohmann::json::object();
};

struct PipelineConfig {
	BackendSpec detector{.kind = "baseline"};
	BackendSpec classifier{.kind = "centroid"};
	LineConfig lines;
	/// Derive the line residual threshold from each image's box heights.
	bool adaptive_residual{true};
	double score_threshold{kDefaultScoreThreshold};
	std::vector<double> iou_thresholds{0.5, 0.75};
	std::vector<int> top_k{1, 3, 5};
	double alignment_iou{kDefaultAlignmentIou};
	Matcher matcher{Matcher::greedy};
	int suggestions{5};
	int folds{5};
	std::uint64_t seed{0};
	/// Compare sequences line by line instead of as whole-image sequences.
	bool per_line_cer{false};

	void validate() const;
};

nlohmann::json config_to_json(const PipelineConfig& config);
/// Missing keys keep their defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);

// Backend construction ------------------------------------------------------------

using ClassifierProvider = std::function<std::shared_ptr<Classifier>(const Dataset& train)>;

std::shared_ptr<Detector> make_detector(const BackendSpec& spec, std::size_t num_classes);
/// `truth` feeds the oracle; `images` feeds per-fold centroid training.
ClassifierProvider make_classifier_provider(const BackendSpec& spec, std::shared_ptr<const Dataset> truth,
                                            const ImageStore& images);

// Transliteration -----------------------------------------------------------------

struct Suggestion {
	int class_id{0};
	double score{0.0};
};

struct TransliteratedSign {
	BoundingBox bbox;
	double detection_score{0.0};
	std::string box_id;
	std::size_t line{0};
	std::vector<Suggestion> suggestions; // best first
};

struct TransliterationResult {
	std::string image_id;
	std::vector<TransliteratedSign> signs; // reading order
	std::vector<std::vector<int>> lines;   // top-1 class ids per line
	std::vector<int> sequence;             // flattened top-1 sequence

	nlohmann::json to_json(const Dataset* names = nullptr) const;
};

/// detect -> score filter -> classify -> line layout on box centroids.
/// Backend failures are rethrown as BackendError prefixed with the stage.
TransliterationResult run_transliterate(const ImageSource& image, Detector& detector, Classifier& classifier,
                                        const PipelineConfig& config);

/// Lays out arbitrary boxes (e.g. ground truth) with the configured line model.
LayoutResult layout_boxes(std::span<const BoundingBox> boxes, const PipelineConfig& config);

// Evaluation ---------------------------------------------------------------------

/// Ordered metric name -> value pairs; NaN marks an undefined value.
using MetricList = std::vector<std::pair<std::string, double>>;

struct FoldReport {
	int fold{0};
	std::vector<std::string> train_images;
	std::vector<std::string> test_images;
	MetricList metrics;
	PerClassReport per_class; // ground-truth crops

	double metric(const std::string& name) const;
	nlohmann::json to_json() const;
};

struct AggregateRow {
	std::string name;
	double mean{0.0};
	double std{0.0}; // sample standard deviation over folds
	std::size_t folds{0};

	/// "mean (std)" with three decimals.
	std::string formatted() const;
};

struct EvalReport {
	std::vector<FoldReport> folds;
	std::vector<AggregateRow> aggregate;

	nlohmann::json to_json() const;
	/// Plain-text table: one row per fold plus the aggregate row.
	std::string table() const;
	/// fold,class_id,class_name,train_count,support,predicted,precision,recall
	std::string per_class_csv(const Dataset& names) const;
};

/// Evaluates one train/test partition. Throws ValidationError when a test
/// tablet also appears in the training split.
FoldReport evaluate_fold(const Dataset& train, const Dataset& test, Detector& detector, Classifier& classifier,
                         const ImageStore& images, const PipelineConfig& config, int fold);

EvalReport run_evaluate(const Dataset& dataset, const FoldAssignment& folds, const PipelineConfig& config,
                        const ImageStore& images, Detector& detector, const ClassifierProvider& classifier_for);

std::vector<AggregateRow> aggregate_folds(std::span<const FoldReport> folds);

// Ablation -----------------------------------------------------------------------

struct AblationPoint {
	double fraction{1.0};
	double mean{0.0};
	double std{0.0};
	std::vector<double> values; // one per repeat
};

struct AblationReport {
	std::string metric;
	int test_fold{0};
	std::vector<AblationPoint> points;
	std::vector<std::vector<FoldReport>> runs; // [fraction][repeat]

	nlohmann::json to_json() const;
	/// fraction,mean,std
	std::string csv() const;
};

/// Fixed split (test_fold of `folds`); for every fraction x repeat the
/// training images are subsampled (by image), the classifier is rebuilt by
/// `classifier_for` and evaluated on the fixed test split.
AblationReport run_ablation(const Dataset& dataset, const FoldAssignment& folds, int test_fold,
                            std::span<const double> fractions, int repeats, const std::string& metric,
                            const PipelineConfig& config, const ImageStore& images, Detector& detector,
                            const ClassifierProvider& classifier_for);

// Run manifest ---------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct RunManifest {
	std::string command;
	nlohmann::json config = nlohmann::json::object();
	std::map<std::string, std::string> input_hashes; // path -> sha256
	std::map<std::string, std::uint64_t> seeds;
	std::map<std::string, std::string> versions;
	nlohmann::json folds = nlohmann::json::array(); // per fold: train/test image ids
	std::string started;
	std::string finished;

	void add_input(const std::filesystem::path& path);
	nlohmann::json to_json() const;
};

RunManifest begin_manifest(const std::string& command, nlohmann::json config);
/// Stamps the finish time and writes manifest.json into `dir`.
void write_manifest(RunManifest& manifest, const std::filesystem::path& dir);

} // namespace signline
