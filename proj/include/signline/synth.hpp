#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "json.hpp"
#include "signline/backends.hpp"
#include "signline/dataset.hpp"

namespace signline {

/// Synthetic tablet corpus. Every image holds `lines_per_image` straight lines
/// of `signs_per_line` glyphs; each glyph is a class template drawn from a
/// wedge-stroke alphabet that depends only on `glyph_seed`, so corpora built
/// with different seeds share one sign inventory.
struct SynthConfig {
	int num_classes{12};
	int tablets{10};
	int images_per_tablet{1};
	int lines_per_image{4};
	int signs_per_line{6};
	double slope_min{0.0};   // one slope per image, drawn uniformly
	double slope_max{0.0};
	int glyph_size{28};       // glyph cell side in pixels (= ground-truth box)
	double sign_pitch{1.6};   // horizontal centre spacing, in glyph sizes
	double line_pitch{2.4};   // vertical line spacing, in glyph sizes
	int margin{24};
	double position_jitter{0.0}; // std of per-glyph offsets, pixels
	double noise_sigma{3.0};
	double texture_amplitude{10.0};
	double background{190.0};
	double ink{60.0};
	double zipf_exponent{0.0}; // class frequencies ~ 1 / (rank ^ s); 0 = uniform
	std::uint64_t glyph_seed{7};

	void validate() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& c);
/// Missing keys keep their defaults.
SynthConfig synth_config_from_json(const nlohmann::json& j);

struct SynthCorpus {
	Dataset dataset;
	std::vector<cv::Mat> images; // CV_8UC1, aligned with dataset.images

	/// In-memory store with every image attached.
	ImageStore store(const std::filesystem::path& root = {}) const;
};

/// Ink masks (CV_32F in [0,1], size x size) of the class alphabet. Every
/// template is a single connected stroke group whose ink touches all four
/// sides of the cell.
std::vector<cv::Mat> glyph_alphabet(int num_classes, int size, std::uint64_t glyph_seed);

/// Deterministic in (config, seed). Annotation order is the generator's
/// reading order: lines top to bottom, glyphs left to right.
SynthCorpus generate_synthetic(const SynthConfig& config, std::uint64_t seed);

/// Writes images/<image_id>.png and dataset.json under `dir`.
void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir);

} // namespace signline
