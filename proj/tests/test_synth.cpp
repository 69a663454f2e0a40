#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "signline/error.hpp"
#include "signline/geometry.hpp"
#include "signline/synth.hpp"

using namespace signline;

TEST_CASE("one tablet of 4 x 6 signs") {
	SynthConfig cfg;
	cfg.tablets = 1;
	const SynthCorpus c = generate_synthetic(cfg, 1);
	REQUIRE(c.dataset.images.size() == 1);
	const auto& img = c.dataset.images[0];
	CHECK(img.annotations.size() == 24);
	CHECK(c.images[0].type() == CV_8UC1);
	CHECK(c.images[0].cols == img.width);
	CHECK(c.images[0].rows == img.height);
	// flat lines: one centroid y per line, lines in top-down order
	for (int line = 0; line < 4; ++line) {
		const double y = centroid(img.annotations[static_cast<std::size_t>(line * 6)].bbox).y;
		for (int k = 1; k < 6; ++k) {
			const auto& a = img.annotations[static_cast<std::size_t>(line * 6 + k)];
			CHECK(centroid(a.bbox).y == y);
			CHECK(a.bbox.x_min > img.annotations[static_cast<std::size_t>(line * 6 + k - 1)].bbox.x_min);
		}
		if (line > 0) {
			CHECK(y > centroid(img.annotations[static_cast<std::size_t>(line * 6 - 1)].bbox).y);
		}
	}
	for (const auto& a : img.annotations) {
		CHECK(a.bbox.x_max <= img.width);
		CHECK(a.bbox.y_max <= img.height);
	}
}

TEST_CASE("determinism") {
	SynthConfig cfg;
	cfg.tablets = 4;
	cfg.slope_min = -0.1;
	cfg.slope_max = 0.1;
	cfg.position_jitter = 1.5;
	const SynthCorpus a = generate_synthetic(cfg, 77), b = generate_synthetic(cfg, 77);
	CHECK(dataset_to_json(a.dataset).dump() == dataset_to_json(b.dataset).dump());
	for (std::size_t i = 0; i < a.images.size(); ++i) {
		CHECK(cv::norm(a.images[i], b.images[i], cv::NORM_INF) == 0.0);
	}
	const SynthCorpus other = generate_synthetic(cfg, 78);
	CHECK(dataset_to_json(other.dataset).dump() != dataset_to_json(a.dataset).dump());
}

TEST_CASE("glyph alphabet") {
	const auto glyphs = glyph_alphabet(12, 28, 7);
	REQUIRE(glyphs.size() == 12);
	for (const auto& g : glyphs) {
		REQUIRE(g.rows == 28);
		cv::Mat ink = g > 0.5f;
		cv::Mat dilated;
		cv::dilate(ink, dilated, cv::getStructuringElement(cv::MORPH_ELLIPSE, {5, 5}));
		cv::Mat labels;
		CHECK(cv::connectedComponents(dilated, labels, 8) == 2);
		CHECK(cv::countNonZero(g.row(0) > 0.05f) > 0);
		CHECK(cv::countNonZero(g.row(27) > 0.05f) > 0);
		CHECK(cv::countNonZero(g.col(0) > 0.05f) > 0);
		CHECK(cv::countNonZero(g.col(27) > 0.05f) > 0);
	}
	for (std::size_t i = 0; i < glyphs.size(); ++i) {
		for (std::size_t j = i + 1; j < glyphs.size(); ++j) {
			cv::Mat a, b;
			cv::Scalar ma = cv::mean(glyphs[i]), mb = cv::mean(glyphs[j]);
			a = glyphs[i] - ma[0];
			b = glyphs[j] - mb[0];
			CHECK(a.dot(b) / (cv::norm(a) * cv::norm(b)) < 0.8);
		}
	}
	const auto again = glyph_alphabet(12, 28, 7);
	CHECK(cv::norm(again[5], glyphs[5], cv::NORM_INF) == 0.0);
}

TEST_CASE("zipf class frequencies") {
	SynthConfig cfg;
	cfg.tablets = 40;
	cfg.zipf_exponent = 1.0;
	const SynthCorpus c = generate_synthetic(cfg, 5);
	std::vector<int> counts(12, 0);
	for (const auto& img : c.dataset.images) {
		for (const auto& a : img.annotations) {
			++counts[static_cast<std::size_t>(a.class_id)];
		}
	}
	CHECK(counts[0] > 2 * counts[5]);
	CHECK(counts[0] > counts[1]);
}

TEST_CASE("configuration") {
	SynthConfig cfg;
	cfg.slope_min = 0.2;
	cfg.slope_max = 0.1;
	CHECK_THROWS_AS(cfg.validate(), ValidationError);
	cfg = {};
	cfg.num_classes = 0;
	CHECK_THROWS_AS(cfg.validate(), ValidationError);
	const SynthConfig back = synth_config_from_json(synth_config_to_json({.tablets = 3, .noise_sigma = 1.0}));
	CHECK(back.tablets == 3);
	CHECK(back.noise_sigma == 1.0);
	CHECK(synth_config_from_json(nlohmann::json::object()).tablets == SynthConfig{}.tablets);
}
