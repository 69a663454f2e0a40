#include "signline/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <opencv2/imgproc.hpp>

#include "signline/error.hpp"

namespace signline {

using nlohmann::json;

namespace {

cv::Mat to_gray8(const cv::Mat& image) {
	ImageSource s;
	s.pixels = image;
	return s.gray();
}

cv::Mat to_gray64(const cv::Mat& image) {
	cv::Mat g = image;
	if (g.channels() == 3) {
		cv::cvtColor(g, g, cv::COLOR_BGR2GRAY);
	} else if (g.channels() == 4) {
		cv::cvtColor(g, g, cv::COLOR_BGRA2GRAY);
	}
	cv::Mat out;
	g.convertTo(out, CV_64F);
	return out;
}

} // namespace

cv::Mat preprocess_crop(const cv::Mat& image, const BoundingBox& box, int side) {
	if (side < 1) {
		throw ValidationError("crop side must be >= 1");
	}
	if (image.empty()) {
		throw ValidationError("empty image");
	}
	const int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
	const int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
	const int x1 = std::min(image.cols, static_cast<int>(std::ceil(box.x_max)));
	const int y1 = std::min(image.rows, static_cast<int>(std::ceil(box.y_max)));
	if (x1 <= x0 || y1 <= y0) {
		throw ValidationError("degenerate crop box");
	}
	const cv::Mat crop = to_gray64(image(cv::Rect(x0, y0, x1 - x0, y1 - y0)));
	const int w = crop.cols;
	const int h = crop.rows;
	const double scale = static_cast<double>(side) / std::max(w, h);
	const int nw = std::clamp(static_cast<int>(std::lround(w * scale)), 1, side);
	const int nh = std::clamp(static_cast<int>(std::lround(h * scale)), 1, side);

	cv::Mat resized;
	if (nw == w && nh == h) {
		resized = crop;
	} else {
		const int interp = scale < 1.0 ? cv::INTER_AREA : cv::INTER_LINEAR;
		cv::resize(crop, resized, cv::Size(nw, nh), 0, 0, interp);
	}

	cv::Mat canvas(side, side, CV_64F, cv::Scalar(cv::mean(crop)[0]));
	resized.copyTo(canvas(cv::Rect((side - nw) / 2, (side - nh) / 2, nw, nh)));

	cv::Scalar mean;
	cv::Scalar sd;
	cv::meanStdDev(canvas, mean, sd);
	cv::Mat out;
	if (sd[0] <= 1e-6 * std::max(1.0, std::abs(mean[0]))) {
		out = cv::Mat::zeros(side, side, CV_32F);
	} else {
		canvas.convertTo(out, CV_32F, 1.0 / sd[0], -mean[0] / sd[0]);
	}
	return out;
}

ScoreVector CentroidClassifierModel::score(const cv::Mat& patch) const {
	ScoreVector out;
	out.scores.assign(classes.size(), -2.0);
	const double norm = cv::norm(patch, cv::NORM_L2);
	for (std::size_t c = 0; c < templates.size(); ++c) {
		if (templates[c].empty()) {
			continue;
		}
		out.scores[c] = norm > 0.0 ? templates[c].dot(patch) / norm : 0.0;
	}
	return out;
}

CentroidClassifierModel train_centroid_classifier(const Dataset& dataset, const ImageStore& images, int side) {
	CentroidClassifierModel model;
	model.side = side;
	model.classes = dataset.catalog;
	const std::size_t c = dataset.num_classes();
	std::vector<cv::Mat> sums(c);
	model.train_counts.assign(c, 0);
	for (const auto& img : dataset.images) {
		if (img.annotations.empty()) {
			continue;
		}
		const cv::Mat gray = images.source(img).gray();
		for (const auto& a : img.annotations) {
			const cv::Mat patch = preprocess_crop(gray, a.bbox, side);
			cv::Mat& sum = sums.at(static_cast<std::size_t>(a.class_id));
			if (sum.empty()) {
				sum = cv::Mat::zeros(side, side, CV_64F);
			}
			cv::Mat p64;
			patch.convertTo(p64, CV_64F);
			sum += p64;
			++model.train_counts[static_cast<std::size_t>(a.class_id)];
		}
	}
	model.templates.resize(c);
	std::size_t missing = 0;
	for (std::size_t k = 0; k < c; ++k) {
		if (model.train_counts[k] == 0) {
			++missing;
			continue;
		}
		const double norm = cv::norm(sums[k], cv::NORM_L2);
		cv::Mat t;
		sums[k].convertTo(t, CV_32F, norm > 0.0 ? 1.0 / norm : 0.0);
		model.templates[k] = t;
	}
	if (missing > 0) {
		std::cerr << "warning: " << missing << " of " << c << " classes have no training crops and stay untrained\n";
	}
	return model;
}

json centroid_model_to_json(const CentroidClassifierModel& model) {
	json classes = json::array();
	for (const auto& sc : model.classes) {
		classes.push_back({{"class_id", sc.class_id}, {"name", sc.name}});
	}
	json templates = json::array();
	for (const auto& t : model.templates) {
		if (t.empty()) {
			templates.push_back(nullptr);
			continue;
		}
		const cv::Mat flat = t.reshape(1, 1);
		templates.push_back(std::vector<float>(flat.begin<float>(), flat.end<float>()));
	}
	return {{"side", model.side}, {"classes", classes}, {"train_counts", model.train_counts},
	        {"templates", templates}};
}

CentroidClassifierModel centroid_model_from_json(const json& j) {
	CentroidClassifierModel m;
	try {
		m.side = j.at("side").get<int>();
		for (const auto& jc : j.at("classes")) {
			m.classes.push_back({jc.at("class_id").get<int>(), jc.at("name").get<std::string>()});
		}
		m.train_counts = j.at("train_counts").get<std::vector<std::size_t>>();
		for (const auto& jt : j.at("templates")) {
			if (jt.is_null()) {
				m.templates.emplace_back();
				continue;
			}
			auto v = jt.get<std::vector<float>>();
			if (v.size() != static_cast<std::size_t>(m.side * m.side)) {
				throw ParseError("template size does not match side");
			}
			m.templates.push_back(cv::Mat(v, true).reshape(1, m.side));
		}
	} catch (const json::exception& e) {
		throw ParseError(std::string("centroid model: ") + e.what());
	}
	if (m.templates.size() != m.classes.size() || m.train_counts.size() != m.classes.size()) {
		throw ParseError("centroid model: class, template and count lists differ in length");
	}
	return m;
}

void save_centroid_model(const CentroidClassifierModel& model, const std::filesystem::path& path) {
	std::ofstream out(path);
	if (!out) {
		throw IoError("cannot write " + path.string());
	}
	out << centroid_model_to_json(model).dump() << '\n';
}

CentroidClassifierModel load_centroid_model(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open " + path.string());
	}
	json j;
	try {
		in >> j;
	} catch (const json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	return centroid_model_from_json(j);
}

std::vector<ScoreVector> CentroidClassifier::classify(const ImageSource& image, std::span<const BoundingBox> boxes) {
	std::vector<ScoreVector> out;
	if (boxes.empty()) {
		return out;
	}
	const cv::Mat gray = image.gray();
	out.reserve(boxes.size());
	for (const auto& b : boxes) {
		out.push_back(model_.score(preprocess_crop(gray, b, model_.side)));
	}
	return out;
}

void BaselineDetectorParams::validate() const {
	if (window < 3 || window % 2 == 0) {
		throw ValidationError("binarization window must be odd and >= 3");
	}
	if (!(offset > 0.0)) {
		throw ValidationError("binarization offset must be > 0");
	}
	if (dilation_radius < 0) {
		throw ValidationError("dilation radius must be >= 0");
	}
	if (!(min_area > 0.0) || !(min_area < max_area)) {
		throw ValidationError("component areas must satisfy 0 < min_area < max_area");
	}
}

DetectionSet baseline_detect(const cv::Mat& image, const BaselineDetectorParams& params, const std::string& image_id) {
	params.validate();
	DetectionSet out{image_id, {}};
	if (image.empty()) {
		return out;
	}
	const cv::Mat gray = to_gray8(image);
	cv::Mat binary;
	cv::adaptiveThreshold(gray, binary, 255, cv::ADAPTIVE_THRESH_MEAN_C, cv::THRESH_BINARY_INV, params.window,
	                      params.offset);
	const int r = params.dilation_radius;
	if (r > 0) {
		const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * r + 1, 2 * r + 1));
		cv::dilate(binary, binary, kernel);
	}
	cv::Mat labels;
	cv::Mat stats;
	cv::Mat centroids;
	const int n = cv::connectedComponentsWithStats(binary, labels, stats, centroids, 8, CV_32S);

	double max_box_area = 0.0;
	for (int i = 1; i < n; ++i) {
		const double area = stats.at<int>(i, cv::CC_STAT_AREA);
		if (area < params.min_area || area > params.max_area) {
			continue;
		}
		const int left = stats.at<int>(i, cv::CC_STAT_LEFT);
		const int top = stats.at<int>(i, cv::CC_STAT_TOP);
		const int w = stats.at<int>(i, cv::CC_STAT_WIDTH);
		const int h = stats.at<int>(i, cv::CC_STAT_HEIGHT);
		BoundingBox b{static_cast<double>(left), static_cast<double>(top), static_cast<double>(left + w),
		              static_cast<double>(top + h)};
		if (w > 2 * r && h > 2 * r) {
			b = {b.x_min + r, b.y_min + r, b.x_max - r, b.y_max - r};
		}
		b.x_min = std::clamp(b.x_min, 0.0, static_cast<double>(gray.cols));
		b.x_max = std::clamp(b.x_max, 0.0, static_cast<double>(gray.cols));
		b.y_min = std::clamp(b.y_min, 0.0, static_cast<double>(gray.rows));
		b.y_max = std::clamp(b.y_max, 0.0, static_cast<double>(gray.rows));
		max_box_area = std::max(max_box_area, b.area());
		out.boxes.push_back({b, b.area(), ""});
	}
	for (auto& b : out.boxes) {
		b.score = max_box_area > 0.0 ? std::clamp(b.score / max_box_area, 0.0, 1.0) : 0.0;
	}
	return out;
}

DetectionSet BaselineDetector::detect(const ImageSource& image) {
	return baseline_detect(image.gray(), params_, image.image_id);
}

json detector_params_to_json(const BaselineDetectorParams& p) {
	return {{"window", p.window},
	        {"offset", p.offset},
	        {"dilation_radius", p.dilation_radius},
	        {"min_area", p.min_area},
	        {"max_area", p.max_area}};
}

BaselineDetectorParams detector_params_from_json(const json& j) {
	BaselineDetectorParams p;
	try {
		p.window = j.value("window", p.window);
		p.offset = j.value("offset", p.offset);
		p.dilation_radius = j.value("dilation_radius", p.dilation_radius);
		p.min_area = j.value("min_area", p.min_area);
		p.max_area = j.value("max_area", p.max_area);
	} catch (const json::exception& e) {
		throw ParseError(std::string("detector params: ") + e.what());
	}
	p.validate();
	return p;
}

} // namespace signline
