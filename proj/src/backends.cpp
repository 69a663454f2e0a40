#include "signline/backends.hpp"

#include <algorithm>
#include <cerrno>
#include <csignal>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "httplib.h"
#include "signline/error.hpp"

namespace signline {

using nlohmann::json;

cv::Mat ImageSource::gray() const {
	cv::Mat img = pixels;
	if (img.empty()) {
		if (path.empty()) {
			throw IoError("image " + image_id + " has neither pixels nor a path");
		}
		img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
		if (img.empty()) {
			throw IoError("cannot decode image " + path.string());
		}
	}
	if (img.channels() == 3) {
		cv::cvtColor(img, img, cv::COLOR_BGR2GRAY);
	} else if (img.channels() == 4) {
		cv::cvtColor(img, img, cv::COLOR_BGRA2GRAY);
	}
	if (img.depth() != CV_8U) {
		cv::Mat converted;
		if (img.depth() == CV_16U) {
			img.convertTo(converted, CV_8U, 1.0 / 257.0);
		} else {
			img.convertTo(converted, CV_8U);
		}
		img = converted;
	}
	return img;
}

ImageSource ImageStore::source(const ImageRecord& image) const {
	ImageSource s;
	s.image_id = image.image_id;
	if (!image.file_name.empty()) {
		s.path = root_ / image.file_name;
	}
	if (auto it = memory_.find(image.image_id); it != memory_.end()) {
		s.pixels = it->second;
	}
	return s;
}

std::vector<int> rank_scores(std::span<const double> scores) {
	std::vector<int> order(scores.size());
	std::iota(order.begin(), order.end(), 0);
	std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
	return order;
}

std::vector<int> ScoreVector::ranking() const { return rank_scores(scores); }

int ScoreVector::top1() const {
	if (scores.empty()) {
		throw ValidationError("empty score vector");
	}
	return ranking().front();
}

// Predictions ------------------------------------------------------------------

const ImagePredictions* Predictions::find(const std::string& image_id) const {
	for (const auto& img : images) {
		if (img.image_id == image_id) {
			return &img;
		}
	}
	return nullptr;
}

json predictions_to_json(const Predictions& predictions) {
	json images = json::array();
	for (const auto& img : predictions.images) {
		json boxes = json::array();
		for (const auto& b : img.boxes) {
			json jb{{"bbox", b.bbox}, {"score", b.score}};
			if (b.class_scores) {
				jb["class_scores"] = *b.class_scores;
			}
			if (b.box_id) {
				jb["box_id"] = *b.box_id;
			}
			boxes.push_back(std::move(jb));
		}
		images.push_back({{"image_id", img.image_id}, {"boxes", std::move(boxes)}});
	}
	return {{"images", std::move(images)}};
}

namespace {

PredictedBox predicted_box_from_json(const json& jb) {
	PredictedBox b;
	b.bbox = jb.at("bbox").get<BoundingBox>();
	b.score = jb.value("score", 1.0);
	if (jb.contains("class_scores")) {
		b.class_scores = jb.at("class_scores").get<std::vector<double>>();
	}
	if (jb.contains("box_id")) {
		b.box_id = jb.at("box_id").get<std::string>();
	}
	if (!(b.bbox.x_min < b.bbox.x_max && b.bbox.y_min < b.bbox.y_max)) {
		throw ParseError("degenerate predicted box");
	}
	if (!(b.score >= 0.0 && b.score <= 1.0)) {
		throw ParseError("box score outside [0,1]");
	}
	return b;
}

} // namespace

Predictions predictions_from_json(const json& j) {
	Predictions out;
	try {
		for (const auto& ji : j.at("images")) {
			ImagePredictions img;
			img.image_id = ji.at("image_id").get<std::string>();
			for (const auto& jb : ji.at("boxes")) {
				img.boxes.push_back(predicted_box_from_json(jb));
			}
			out.images.push_back(std::move(img));
		}
	} catch (const json::exception& e) {
		throw ParseError(std::string("predictions: ") + e.what());
	}
	return out;
}

Predictions load_predictions(const std::filesystem::path& path) {
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
	return predictions_from_json(j);
}

void save_predictions(const Predictions& predictions, const std::filesystem::path& path) {
	std::ofstream out(path);
	if (!out) {
		throw IoError("cannot write " + path.string());
	}
	out << predictions_to_json(predictions).dump(1, '\t') << '\n';
}

Predictions ground_truth_predictions(const Dataset& dataset, bool with_class_scores) {
	Predictions p;
	for (const auto& img : dataset.images) {
		ImagePredictions ip;
		ip.image_id = img.image_id;
		for (const auto& a : img.annotations) {
			PredictedBox b;
			b.bbox = a.bbox;
			b.score = 1.0;
			b.box_id = a.annotation_id;
			if (with_class_scores) {
				std::vector<double> s(dataset.num_classes(), 0.0);
				s.at(static_cast<std::size_t>(a.class_id)) = 1.0;
				b.class_scores = std::move(s);
			}
			ip.boxes.push_back(std::move(b));
		}
		p.images.push_back(std::move(ip));
	}
	return p;
}

// Fixture / oracle -----------------------------------------------------------------

namespace {

const ImagePredictions& require_image(const Predictions& p, const std::string& image_id) {
	const ImagePredictions* img = p.find(image_id);
	if (img == nullptr) {
		throw NotFoundError("no stored predictions for image " + image_id);
	}
	return *img;
}

} // namespace

DetectionSet FixtureDetector::detect(const ImageSource& image) {
	const auto& stored = require_image(*predictions_, image.image_id);
	DetectionSet out{image.image_id, {}};
	for (const auto& b : stored.boxes) {
		out.boxes.push_back({b.bbox, b.score, b.box_id.value_or("")});
	}
	return out;
}

FixtureClassifier::FixtureClassifier(std::shared_ptr<const Predictions> predictions, std::size_t num_classes)
    : predictions_(std::move(predictions)), num_classes_(num_classes) {}

std::vector<ScoreVector> FixtureClassifier::classify(const ImageSource& image, std::span<const BoundingBox> boxes) {
	const auto& stored = require_image(*predictions_, image.image_id);
	std::vector<ScoreVector> out;
	out.reserve(boxes.size());
	for (const auto& q : boxes) {
		const PredictedBox* best = nullptr;
		double best_iou = 0.0;
		for (const auto& b : stored.boxes) {
			if (!b.class_scores) {
				continue;
			}
			const double o = iou(q, b.bbox);
			if (o > best_iou) {
				best_iou = o;
				best = &b;
			}
		}
		if (best == nullptr) {
			out.push_back({std::vector<double>(num_classes_, 0.0)});
			continue;
		}
		if (best->class_scores->size() != num_classes_) {
			throw ValidationError("stored class_scores length " + std::to_string(best->class_scores->size()) +
			                      " != " + std::to_string(num_classes_));
		}
		out.push_back({*best->class_scores});
	}
	return out;
}

std::vector<ScoreVector> OracleClassifier::classify(const ImageSource& image, std::span<const BoundingBox> boxes) {
	const ImageRecord* rec = truth_->find_image(image.image_id);
	if (rec == nullptr) {
		throw NotFoundError("oracle has no ground truth for image " + image.image_id);
	}
	std::vector<ScoreVector> out;
	out.reserve(boxes.size());
	for (const auto& q : boxes) {
		std::vector<double> s(truth_->num_classes(), 0.0);
		const Annotation* best = nullptr;
		double best_iou = 0.0;
		for (const auto& a : rec->annotations) {
			const double o = iou(q, a.bbox);
			if (o > best_iou) {
				best_iou = o;
				best = &a;
			}
		}
		if (best != nullptr) {
			s.at(static_cast<std::size_t>(best->class_id)) = 1.0;
		}
		out.push_back({std::move(s)});
	}
	return out;
}

BackendPair fixture_backends(Predictions predictions, std::size_t num_classes) {
	auto shared = std::make_shared<const Predictions>(std::move(predictions));
	return {std::make_shared<FixtureDetector>(shared), std::make_shared<FixtureClassifier>(shared, num_classes)};
}

BackendPair load_fixture_predictions(const std::filesystem::path& path) {
	Predictions p = load_predictions(path);
	std::size_t c = 0;
	for (const auto& img : p.images) {
		for (const auto& b : img.boxes) {
			if (b.class_scores) {
				c = b.class_scores->size();
				break;
			}
		}
		if (c != 0) {
			break;
		}
	}
	return fixture_backends(std::move(p), c);
}

// Wire protocol ------------------------------------------------------------------

json detect_request(const ImageSource& image) {
	if (image.path.empty()) {
		throw BackendError("external backends need an image path (image " + image.image_id + ")");
	}
	return {{"op", "detect"}, {"image", image.path.string()}, {"image_id", image.image_id}};
}

json classify_request(const ImageSource& image, std::span<const BoundingBox> boxes) {
	json req = detect_request(image);
	req["op"] = "classify";
	json jb = json::array();
	for (const auto& b : boxes) {
		jb.push_back(b);
	}
	req["boxes"] = std::move(jb);
	return req;
}

namespace {

const json& single_image(const json& response) {
	if (response.contains("error")) {
		throw BackendError("backend error: " + response.at("error").dump());
	}
	if (!response.contains("images") || !response.at("images").is_array() || response.at("images").size() != 1) {
		throw BackendError("backend response must hold exactly one image");
	}
	return response.at("images").at(0);
}

} // namespace

DetectionSet parse_detect_response(const json& response, const std::string& image_id) {
	const json& img = single_image(response);
	DetectionSet out{image_id, {}};
	try {
		for (const auto& jb : img.at("boxes")) {
			const PredictedBox b = predicted_box_from_json(jb);
			out.boxes.push_back({b.bbox, b.score, b.box_id.value_or("")});
		}
	} catch (const std::exception& e) {
		throw BackendError(std::string("malformed detect response: ") + e.what());
	}
	return out;
}

std::vector<ScoreVector> parse_classify_response(const json& response, std::size_t expected_boxes,
                                                 std::size_t num_classes) {
	const json& img = single_image(response);
	std::vector<ScoreVector> out;
	try {
		for (const auto& jb : img.at("boxes")) {
			const PredictedBox b = predicted_box_from_json(jb);
			if (!b.class_scores || b.class_scores->size() != num_classes) {
				throw BackendError("class_scores missing or not of length " + std::to_string(num_classes));
			}
			out.push_back({*b.class_scores});
		}
	} catch (const BackendError&) {
		throw;
	} catch (const std::exception& e) {
		throw BackendError(std::string("malformed classify response: ") + e.what());
	}
	if (out.size() != expected_boxes) {
		throw BackendError("classify response has " + std::to_string(out.size()) + " boxes, expected " +
		                   std::to_string(expected_boxes));
	}
	return out;
}

// Stream backend -------------------------------------------------------------------

StreamBackend::StreamBackend(std::string command, std::size_t num_classes)
    : command_(std::move(command)), num_classes_(num_classes) {
	int in_pipe[2];
	int out_pipe[2];
	if (pipe(in_pipe) != 0) {
		throw BackendError(std::string("pipe: ") + std::strerror(errno));
	}
	if (pipe(out_pipe) != 0) {
		close(in_pipe[0]);
		close(in_pipe[1]);
		throw BackendError(std::string("pipe: ") + std::strerror(errno));
	}
	pid_ = fork();
	if (pid_ < 0) {
		throw BackendError(std::string("fork: ") + std::strerror(errno));
	}
	if (pid_ == 0) {
		dup2(in_pipe[0], STDIN_FILENO);
		dup2(out_pipe[1], STDOUT_FILENO);
		close(in_pipe[0]);
		close(in_pipe[1]);
		close(out_pipe[0]);
		close(out_pipe[1]);
		execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
		_exit(127);
	}
	close(in_pipe[0]);
	close(out_pipe[1]);
	to_child_ = in_pipe[1];
	from_child_ = out_pipe[0];
	fcntl(to_child_, F_SETFD, FD_CLOEXEC);
	fcntl(from_child_, F_SETFD, FD_CLOEXEC);
	// A dead child must surface as EPIPE, not kill the caller.
	std::signal(SIGPIPE, SIG_IGN);
}

StreamBackend::~StreamBackend() {
	if (to_child_ >= 0) {
		close(to_child_);
	}
	if (from_child_ >= 0) {
		close(from_child_);
	}
	if (pid_ > 0) {
		int status = 0;
		waitpid(pid_, &status, 0);
	}
}

json StreamBackend::round_trip(const json& request) {
	std::lock_guard lock(mutex_);
	std::string line = request.dump() + "\n";
	std::size_t sent = 0;
	while (sent < line.size()) {
		const ssize_t n = write(to_child_, line.data() + sent, line.size() - sent);
		if (n < 0) {
			if (errno == EINTR) {
				continue;
			}
			throw BackendError(std::string("write to backend failed: ") + std::strerror(errno));
		}
		sent += static_cast<std::size_t>(n);
	}
	for (;;) {
		const auto nl = buffer_.find('\n');
		if (nl != std::string::npos) {
			std::string reply = buffer_.substr(0, nl);
			buffer_.erase(0, nl + 1);
			try {
				return json::parse(reply);
			} catch (const json::exception& e) {
				throw BackendError(std::string("backend sent invalid JSON: ") + e.what());
			}
		}
		char chunk[4096];
		const ssize_t n = read(from_child_, chunk, sizeof chunk);
		if (n < 0 && errno == EINTR) {
			continue;
		}
		if (n <= 0) {
			throw BackendError("backend process closed its output (" + command_ + ")");
		}
		buffer_.append(chunk, static_cast<std::size_t>(n));
	}
}

DetectionSet StreamBackend::detect(const ImageSource& image) {
	return parse_detect_response(round_trip(detect_request(image)), image.image_id);
}

std::vector<ScoreVector> StreamBackend::classify(const ImageSource& image, std::span<const BoundingBox> boxes) {
	if (boxes.empty()) {
		return {};
	}
	return parse_classify_response(round_trip(classify_request(image, boxes)), boxes.size(), num_classes_);
}

// HTTP backend -----------------------------------------------------------------------

HttpBackend::HttpBackend(std::string url, std::size_t num_classes) : num_classes_(num_classes) {
	const std::string scheme = "http://";
	if (url.rfind(scheme, 0) != 0) {
		throw ValidationError("backend url must start with http:// (" + url + ")");
	}
	std::string rest = url.substr(scheme.size());
	const auto slash = rest.find('/');
	path_ = slash == std::string::npos ? "/" : rest.substr(slash);
	std::string authority = rest.substr(0, slash);
	const auto colon = authority.rfind(':');
	if (colon != std::string::npos) {
		try {
			port_ = std::stoi(authority.substr(colon + 1));
		} catch (const std::exception&) {
			throw ValidationError("bad port in backend url " + url);
		}
		authority = authority.substr(0, colon);
	}
	host_ = authority;
	if (host_.empty()) {
		throw ValidationError("missing host in backend url " + url);
	}
}

json HttpBackend::round_trip(const json& request) {
	std::lock_guard lock(mutex_);
	httplib::Client client(host_, port_);
	client.set_read_timeout(300, 0);
	auto res = client.Post(path_, request.dump(), "application/json");
	if (!res) {
		throw BackendError("HTTP backend unreachable: " + httplib::to_string(res.error()));
	}
	if (res->status != 200) {
		throw BackendError("HTTP backend returned status " + std::to_string(res->status) + ": " + res->body);
	}
	try {
		return json::parse(res->body);
	} catch (const json::exception& e) {
		throw BackendError(std::string("HTTP backend sent invalid JSON: ") + e.what());
	}
}

DetectionSet HttpBackend::detect(const ImageSource& image) {
	return parse_detect_response(round_trip(detect_request(image)), image.image_id);
}

std::vector<ScoreVector> HttpBackend::classify(const ImageSource& image, std::span<const BoundingBox> boxes) {
	if (boxes.empty()) {
		return {};
	}
	return parse_classify_response(round_trip(classify_request(image, boxes)), boxes.size(), num_classes_);
}

} // namespace signline
