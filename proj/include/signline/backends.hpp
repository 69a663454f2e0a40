#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "signline/dataset.hpp"
#include "signline/geometry.hpp"

namespace signline {

/// An image handed to a backend: its id, where it lives on disk, and
/// optionally the already-decoded pixels (synthetic corpora stay in memory).
struct ImageSource {
	std::string image_id;
	std::filesystem::path path;
	cv::Mat pixels;

	/// 8-bit single-channel view; decodes `path` when no pixels are attached.
	cv::Mat gray() const;
};

/// Resolves dataset file names against a root directory, with optional
/// in-memory overrides keyed by image id.
class ImageStore {
public:
	ImageStore() = default;
	explicit ImageStore(std::filesystem::path root) : root_(std::move(root)) {}

	void put(const std::string& image_id, cv::Mat pixels) { memory_[image_id] = std::move(pixels); }
	ImageSource source(const ImageRecord& image) const;
	const std::filesystem::path& root() const { return root_; }

private:
	std::filesystem::path root_;
	std::map<std::string, cv::Mat> memory_;
};

struct DetectionSet {
	std::string image_id;
	std::vector<ScoredBox> boxes;
};

/// Unnormalised per-class scores ("logits").
struct ScoreVector {
	std::vector<double> scores;

	/// Class ids by descending score, ties by ascending class id.
	std::vector<int> ranking() const;
	int top1() const;
};

std::vector<int> rank_scores(std::span<const double> scores);

class Detector {
public:
	virtual ~Detector() = default;
	virtual DetectionSet detect(const ImageSource& image) = 0;
};

class Classifier {
public:
	virtual ~Classifier() = default;
	/// One score vector per box, in box order.
	virtual std::vector<ScoreVector> classify(const ImageSource& image, std::span<const BoundingBox> boxes) = 0;
	virtual std::size_t num_classes() const = 0;
};

// Predictions schema ---------------------------------------------------------

struct PredictedBox {
	BoundingBox bbox;
	double score{1.0};
	std::optional<std::vector<double>> class_scores;
	/// Optional stable id (e.g. the annotation id when replaying ground truth).
	std::optional<std::string> box_id;
};

struct ImagePredictions {
	std::string image_id;
	std::vector<PredictedBox> boxes;
};

struct Predictions {
	std::vector<ImagePredictions> images;

	const ImagePredictions* find(const std::string& image_id) const;
};

nlohmann::json predictions_to_json(const Predictions& predictions);
Predictions predictions_from_json(const nlohmann::json& j);
Predictions load_predictions(const std::filesystem::path& path);
void save_predictions(const Predictions& predictions, const std::filesystem::path& path);

/// Ground truth replayed as predictions: score 1, one-hot class scores,
/// box_id = annotation id.
Predictions ground_truth_predictions(const Dataset& dataset, bool with_class_scores = true);

// Fixture and oracle backends -------------------------------------------------

class FixtureDetector final : public Detector {
public:
	explicit FixtureDetector(std::shared_ptr<const Predictions> predictions) : predictions_(std::move(predictions)) {}
	DetectionSet detect(const ImageSource& image) override;

private:
	std::shared_ptr<const Predictions> predictions_;
};

/// Replays stored class scores: each query box takes the scores of the stored
/// box it overlaps most.
class FixtureClassifier final : public Classifier {
public:
	FixtureClassifier(std::shared_ptr<const Predictions> predictions, std::size_t num_classes);
	std::vector<ScoreVector> classify(const ImageSource& image, std::span<const BoundingBox> boxes) override;
	std::size_t num_classes() const override { return num_classes_; }

private:
	std::shared_ptr<const Predictions> predictions_;
	std::size_t num_classes_;
};

/// Reads the ground-truth label of the best-overlapping annotation and emits a
/// one-hot score vector; boxes overlapping nothing get all-zero scores.
class OracleClassifier final : public Classifier {
public:
	explicit OracleClassifier(std::shared_ptr<const Dataset> truth) : truth_(std::move(truth)) {}
	std::vector<ScoreVector> classify(const ImageSource& image, std::span<const BoundingBox> boxes) override;
	std::size_t num_classes() const override { return truth_->num_classes(); }

private:
	std::shared_ptr<const Dataset> truth_;
};

struct BackendPair {
	std::shared_ptr<Detector> detector;
	std::shared_ptr<Classifier> classifier;
};

/// Both fixture backends over one predictions file. The classifier's class
/// count comes from the first stored class_scores vector (0 if none).
BackendPair load_fixture_predictions(const std::filesystem::path& path);
BackendPair fixture_backends(Predictions predictions, std::size_t num_classes);

// External backends -------------------------------------------------------------

/// Request documents of the line-delimited wire protocol.
nlohmann::json detect_request(const ImageSource& image);
nlohmann::json classify_request(const ImageSource& image, std::span<const BoundingBox> boxes);
/// Validates a response document and converts it to the backend results.
DetectionSet parse_detect_response(const nlohmann::json& response, const std::string& image_id);
std::vector<ScoreVector> parse_classify_response(const nlohmann::json& response, std::size_t expected_boxes,
                                                 std::size_t num_classes);

/// Child process speaking the protocol on stdin/stdout, one JSON document per
/// line. Requests are serialised: one in flight per process.
class StreamBackend final : public Detector, public Classifier {
public:
	StreamBackend(std::string command, std::size_t num_classes);
	~StreamBackend() override;
	StreamBackend(const StreamBackend&) = delete;
	StreamBackend& operator=(const StreamBackend&) = delete;

	DetectionSet detect(const ImageSource& image) override;
	std::vector<ScoreVector> classify(const ImageSource& image, std::span<const BoundingBox> boxes) override;
	std::size_t num_classes() const override { return num_classes_; }

	/// Sends one request and returns the parsed response line.
	nlohmann::json round_trip(const nlohmann::json& request);

private:
	std::string command_;
	std::size_t num_classes_;
	int pid_{-1};
	int to_child_{-1};
	int from_child_{-1};
	std::string buffer_;
	std::mutex mutex_;
};

/// Same protocol over HTTP: each request document is POSTed to `url` and the
/// response body is the reply document.
class HttpBackend final : public Detector, public Classifier {
public:
	HttpBackend(std::string url, std::size_t num_classes);

	DetectionSet detect(const ImageSource& image) override;
	std::vector<ScoreVector> classify(const ImageSource& image, std::span<const BoundingBox> boxes) override;
	std::size_t num_classes() const override { return num_classes_; }

	nlohmann::json round_trip(const nlohmann::json& request);

private:
	std::string host_;
	int port_{80};
	std::string path_;
	std::size_t num_classes_;
	std::mutex mutex_;
};

} // namespace signline
