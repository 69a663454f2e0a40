#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "signline/backends.hpp"
#include "signline/dataset.hpp"

namespace signline {

inline constexpr int kCropSide = 50;

/// Cuts `box` out of `image`, scales it so the longer side equals `side`
/// (aspect kept), centres it on a side x side canvas padded with the crop's
/// mean and standardises to zero mean / unit variance. Constant crops give an
/// all-zero patch. Returns CV_32F.
cv::Mat preprocess_crop(const cv::Mat& image, const BoundingBox& box, int side = kCropSide);

struct CentroidClassifierModel {
	int side{kCropSide};
	std::vector<SignClass> classes;
	/// Unit-norm mean patch per class; empty for classes without training crops.
	std::vector<cv::Mat> templates;
	std::vector<std::size_t> train_counts;

	std::size_t num_classes() const { return classes.size(); }
	/// Cosine similarity with each template; untrained classes score -2.
	ScoreVector score(const cv::Mat& patch) const;
};

/// Mean preprocessed crop per class over every annotation of `dataset`.
/// Classes without crops are left untrained and reported on stderr.
CentroidClassifierModel train_centroid_classifier(const Dataset& dataset, const ImageStore& images,
                                                  int side = kCropSide);

nlohmann::json centroid_model_to_json(const CentroidClassifierModel& model);
CentroidClassifierModel centroid_model_from_json(const nlohmann::json& j);
void save_centroid_model(const CentroidClassifierModel& model, const std::filesystem::path& path);
CentroidClassifierModel load_centroid_model(const std::filesystem::path& path);

class CentroidClassifier final : public Classifier {
public:
	explicit CentroidClassifier(CentroidClassifierModel model) : model_(std::move(model)) {}
	std::vector<ScoreVector> classify(const ImageSource& image, std::span<const BoundingBox> boxes) override;
	std::size_t num_classes() const override { return model_.num_classes(); }
	const CentroidClassifierModel& model() const { return model_; }

private:
	CentroidClassifierModel model_;
};

struct BaselineDetectorParams {
	int window{51};         // adaptive threshold block size (odd)
	double offset{15.0};    // subtracted from the local mean
	int dilation_radius{2};
	double min_area{40.0};  // component pixel count after dilation
	double max_area{20000.0};

	void validate() const;
};

/// Adaptive mean binarisation (dark ink), dilation, connected components,
/// area filter. Boxes are the component extents shrunk back by the dilation
/// radius; score = bounding-box area / largest accepted bounding-box area.
DetectionSet baseline_detect(const cv::Mat& image, const BaselineDetectorParams& params,
                             const std::string& image_id = "");

class BaselineDetector final : public Detector {
public:
	explicit BaselineDetector(BaselineDetectorParams params = {}) : params_(params) { params_.validate(); }
	DetectionSet detect(const ImageSource& image) override;

private:
	BaselineDetectorParams params_;
};

nlohmann::json detector_params_to_json(const BaselineDetectorParams& p);
BaselineDetectorParams detector_params_from_json(const nlohmann::json& j);

} // namespace signline
