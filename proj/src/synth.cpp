#include "signline/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "signline/error.hpp"
#include "signline/random.hpp"

namespace signline {

using nlohmann::json;

void SynthConfig::validate() const {
	if (num_classes < 1 || tablets < 1 || images_per_tablet < 1 || lines_per_image < 1 || signs_per_line < 1) {
		throw ValidationError("synth counts must be >= 1");
	}
	if (slope_min > slope_max || std::abs(slope_min) > 1.0 || std::abs(slope_max) > 1.0) {
		throw ValidationError("synth slope range must satisfy -1 <= min <= max <= 1");
	}
	if (glyph_size < 8) {
		throw ValidationError("glyph_size must be >= 8");
	}
	if (sign_pitch < 1.0 || line_pitch < 1.0) {
		throw ValidationError("pitches must be >= 1 glyph size");
	}
	if (margin < 0 || position_jitter < 0.0 || noise_sigma < 0.0 || texture_amplitude < 0.0) {
		throw ValidationError("margin, jitter, noise and texture must be non-negative");
	}
	if (zipf_exponent < 0.0) {
		throw ValidationError("zipf_exponent must be >= 0");
	}
}

json synth_config_to_json(const SynthConfig& c) {
	return {{"num_classes", c.num_classes},
	        {"tablets", c.tablets},
	        {"images_per_tablet", c.images_per_tablet},
	        {"lines_per_image", c.lines_per_image},
	        {"signs_per_line", c.signs_per_line},
	        {"slope_min", c.slope_min},
	        {"slope_max", c.slope_max},
	        {"glyph_size", c.glyph_size},
	        {"sign_pitch", c.sign_pitch},
	        {"line_pitch", c.line_pitch},
	        {"margin", c.margin},
	        {"position_jitter", c.position_jitter},
	        {"noise_sigma", c.noise_sigma},
	        {"texture_amplitude", c.texture_amplitude},
	        {"background", c.background},
	        {"ink", c.ink},
	        {"zipf_exponent", c.zipf_exponent},
	        {"glyph_seed", c.glyph_seed}};
}

SynthConfig synth_config_from_json(const json& j) {
	SynthConfig c;
	try {
		c.num_classes = j.value("num_classes", c.num_classes);
		c.tablets = j.value("tablets", c.tablets);
		c.images_per_tablet = j.value("images_per_tablet", c.images_per_tablet);
		c.lines_per_image = j.value("lines_per_image", c.lines_per_image);
		c.signs_per_line = j.value("signs_per_line", c.signs_per_line);
		c.slope_min = j.value("slope_min", c.slope_min);
		c.slope_max = j.value("slope_max", c.slope_max);
		c.glyph_size = j.value("glyph_size", c.glyph_size);
		c.sign_pitch = j.value("sign_pitch", c.sign_pitch);
		c.line_pitch = j.value("line_pitch", c.line_pitch);
		c.margin = j.value("margin", c.margin);
		c.position_jitter = j.value("position_jitter", c.position_jitter);
		c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
		c.texture_amplitude = j.value("texture_amplitude", c.texture_amplitude);
		c.background = j.value("background", c.background);
		c.ink = j.value("ink", c.ink);
		c.zipf_exponent = j.value("zipf_exponent", c.zipf_exponent);
		c.glyph_seed = j.value("glyph_seed", c.glyph_seed);
	} catch (const json::exception& e) {
		throw ParseError(std::string("synth config: ") + e.what());
	}
	c.validate();
	return c;
}

ImageStore SynthCorpus::store(const std::filesystem::path& root) const {
	ImageStore s(root);
	for (std::size_t i = 0; i < images.size(); ++i) {
		s.put(dataset.images[i].image_id, images[i]);
	}
	return s;
}

namespace {

struct Wedge {
	cv::Point2d start;
	cv::Point2d dir;
	double length{0.0};
};

// Head triangle plus a tapering tail, drawn white on a black canvas.
void draw_wedge(cv::Mat& canvas, const Wedge& w, double head, int tail_thickness) {
	const cv::Point2d n(-w.dir.y, w.dir.x);
	const cv::Point2d apex = w.start + w.dir * head;
	std::vector<cv::Point> tri{cv::Point(w.start + n * (head * 0.5)), cv::Point(w.start - n * (head * 0.5)),
	                           cv::Point(apex)};
	cv::fillConvexPoly(canvas, tri, cv::Scalar(255), cv::LINE_8);
	if (w.length > head) {
		cv::line(canvas, cv::Point(w.start + w.dir * (head * 0.5)), cv::Point(w.start + w.dir * w.length),
		         cv::Scalar(255), tail_thickness, cv::LINE_8);
	}
}

cv::Mat standardized(const cv::Mat& m) {
	cv::Scalar mean;
	cv::Scalar sd;
	cv::meanStdDev(m, mean, sd);
	cv::Mat out;
	m.convertTo(out, CV_64F, sd[0] > 0 ? 1.0 / sd[0] : 0.0, sd[0] > 0 ? -mean[0] / sd[0] : 0.0);
	return out;
}

bool single_component(const cv::Mat& mask, int size) {
	cv::Mat bin;
	cv::threshold(mask, bin, 0.5, 255, cv::THRESH_BINARY);
	bin.convertTo(bin, CV_8U);
	const int r = std::max(1, size / 28);
	cv::dilate(bin, bin, cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(2 * r + 1, 2 * r + 1)));
	cv::Mat labels;
	return cv::connectedComponents(bin, labels, 8) == 2;
}

cv::Mat draw_glyph(Rng& rng, int size) {
	const int res = size * 4;
	cv::Mat canvas = cv::Mat::zeros(res, res, CV_8U);
	const double head = res * 0.22;
	const int tail = std::max(2, res / 14);
	// Horizontal, vertical, two diagonals, and the short hook-like wedge.
	static const cv::Point2d kDirs[] = {{1, 0}, {0, 1}, {std::numbers::sqrt2 / 2, std::numbers::sqrt2 / 2},
	                                    {std::numbers::sqrt2 / 2, -std::numbers::sqrt2 / 2}, {-1, 0}};
	const int wedges = 2 + static_cast<int>(rng.index(4));
	std::vector<Wedge> drawn;
	for (int k = 0; k < wedges; ++k) {
		Wedge w;
		w.dir = kDirs[rng.index(std::size(kDirs))];
		w.length = res * rng.uniform(0.35, 0.7);
		if (drawn.empty()) {
			w.start = {res * rng.uniform(0.15, 0.5), res * rng.uniform(0.15, 0.5)};
		} else {
			// Attach to a point on an earlier wedge so the sign stays one blob.
			const Wedge& base = drawn[rng.index(drawn.size())];
			const double t = rng.uniform(0.0, 1.0) * base.length;
			w.start = base.start + base.dir * t - w.dir * (head * 0.3);
		}
		w.start.x = std::clamp(w.start.x, res * 0.05, res * 0.95);
		w.start.y = std::clamp(w.start.y, res * 0.05, res * 0.95);
		draw_wedge(canvas, w, head, tail);
		drawn.push_back(w);
	}
	std::vector<cv::Point> ink;
	cv::findNonZero(canvas, ink);
	const cv::Rect box = cv::boundingRect(ink);
	if (box.width < res * 0.4 || box.height < res * 0.4) {
		return {};
	}
	cv::Mat glyph;
	cv::resize(canvas(box), glyph, cv::Size(size, size), 0, 0, cv::INTER_AREA);
	glyph.convertTo(glyph, CV_32F, 1.0 / 255.0);
	return glyph;
}

} // namespace

std::vector<cv::Mat> glyph_alphabet(int num_classes, int size, std::uint64_t glyph_seed) {
	if (num_classes < 1 || size < 8) {
		throw ValidationError("alphabet needs >= 1 class and size >= 8");
	}
	std::vector<cv::Mat> alphabet;
	std::vector<cv::Mat> normalized;
	for (int c = 0; c < num_classes; ++c) {
		bool accepted = false;
		for (int attempt = 0; attempt < 5000 && !accepted; ++attempt) {
			Rng rng(derive_seed(glyph_seed, static_cast<std::uint64_t>(c) * 100000 + attempt));
			cv::Mat g = draw_glyph(rng, size);
			if (g.empty() || !single_component(g, size)) {
				continue;
			}
			const cv::Mat z = standardized(g);
			const double zz = z.dot(z);
			bool distinct = true;
			for (const auto& other : normalized) {
				if (z.dot(other) / std::sqrt(zz * other.dot(other)) > 0.8) {
					distinct = false;
					break;
				}
			}
			if (!distinct) {
				continue;
			}
			alphabet.push_back(g);
			normalized.push_back(z);
			accepted = true;
		}
		if (!accepted) {
			throw ValidationError("could not draw " + std::to_string(num_classes) + " distinct glyphs at size " +
			                      std::to_string(size));
		}
	}
	return alphabet;
}

SynthCorpus generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
	config.validate();
	const int s = config.glyph_size;
	const std::vector<cv::Mat> alphabet = glyph_alphabet(config.num_classes, s, config.glyph_seed);

	SynthCorpus corpus;
	for (int c = 0; c < config.num_classes; ++c) {
		char name[16];
		std::snprintf(name, sizeof name, "S%02d", c);
		corpus.dataset.catalog.push_back({c, name});
	}

	std::vector<double> cumulative(config.num_classes);
	double total = 0.0;
	for (int c = 0; c < config.num_classes; ++c) {
		total += 1.0 / std::pow(c + 1.0, config.zipf_exponent);
		cumulative[c] = total;
	}

	const int pitch_x = static_cast<int>(std::lround(config.sign_pitch * s));
	const int pitch_y = static_cast<int>(std::lround(config.line_pitch * s));
	const int span_x = (config.signs_per_line - 1) * pitch_x;
	const double max_slope = std::max(std::abs(config.slope_min), std::abs(config.slope_max));
	const int drift = static_cast<int>(std::ceil(max_slope * span_x));
	const double jitter_cap = 0.2 * s;
	const int width = 2 * config.margin + span_x + s;
	const int height = 2 * config.margin + (config.lines_per_image - 1) * pitch_y + s + drift;

	std::size_t image_index = 0;
	for (int t = 0; t < config.tablets; ++t) {
		char tablet[16];
		std::snprintf(tablet, sizeof tablet, "T%03d", t);
		for (int face = 0; face < config.images_per_tablet; ++face, ++image_index) {
			Rng rng(derive_seed(seed, image_index));
			ImageRecord rec;
			rec.tablet_id = tablet;
			rec.image_id = std::string(tablet) + "-" + std::to_string(face);
			rec.file_name = "images/" + rec.image_id + ".png";
			rec.width = width;
			rec.height = height;

			const double slope = config.slope_min == config.slope_max
			                         ? config.slope_min
			                         : rng.uniform(config.slope_min, config.slope_max);
			const double offset_y = slope < 0.0 ? -slope * span_x : 0.0;

			cv::Mat canvas(height, width, CV_64F);
			double freq[3][2];
			double phase[3];
			for (int k = 0; k < 3; ++k) {
				const double period = rng.uniform(80.0, 320.0);
				const double angle = rng.uniform(0.0, std::numbers::pi);
				freq[k][0] = std::cos(angle) / period;
				freq[k][1] = std::sin(angle) / period;
				phase[k] = rng.uniform(0.0, 2.0 * std::numbers::pi);
			}
			for (int y = 0; y < height; ++y) {
				auto* row = canvas.ptr<double>(y);
				for (int x = 0; x < width; ++x) {
					double v = config.background;
					for (int k = 0; k < 3; ++k) {
						v += config.texture_amplitude / 3.0 *
						     std::sin(2.0 * std::numbers::pi * (freq[k][0] * x + freq[k][1] * y) + phase[k]);
					}
					row[x] = v;
				}
			}

			int serial = 0;
			for (int l = 0; l < config.lines_per_image; ++l) {
				for (int j = 0; j < config.signs_per_line; ++j) {
					double jx = 0.0;
					double jy = 0.0;
					if (config.position_jitter > 0.0) {
						jx = std::clamp(rng.normal(0.0, config.position_jitter), -jitter_cap, jitter_cap);
						jy = std::clamp(rng.normal(0.0, config.position_jitter), -jitter_cap, jitter_cap);
					}
					const double fx = config.margin + j * pitch_x + jx;
					const double fy = config.margin + offset_y + l * pitch_y + slope * (j * pitch_x) + jy;
					const int x0 = std::clamp(static_cast<int>(std::lround(fx)), 0, width - s);
					const int y0 = std::clamp(static_cast<int>(std::lround(fy)), 0, height - s);

					const double u = rng.uniform() * total;
					int cls = static_cast<int>(std::lower_bound(cumulative.begin(), cumulative.end(), u) -
					                           cumulative.begin());
					cls = std::min(cls, config.num_classes - 1);

					const cv::Mat& glyph = alphabet[cls];
					for (int y = 0; y < s; ++y) {
						auto* row = canvas.ptr<double>(y0 + y);
						const auto* m = glyph.ptr<float>(y);
						for (int x = 0; x < s; ++x) {
							row[x0 + x] = row[x0 + x] * (1.0 - m[x]) + config.ink * m[x];
						}
					}
					rec.annotations.push_back({rec.image_id + "-a" + std::to_string(serial++),
					                           {static_cast<double>(x0), static_cast<double>(y0),
					                            static_cast<double>(x0 + s), static_cast<double>(y0 + s)},
					                           cls});
				}
			}

			cv::Mat img(height, width, CV_8U);
			for (int y = 0; y < height; ++y) {
				const auto* src = canvas.ptr<double>(y);
				auto* dst = img.ptr<unsigned char>(y);
				for (int x = 0; x < width; ++x) {
					const double v = src[x] + (config.noise_sigma > 0.0 ? rng.normal(0.0, config.noise_sigma) : 0.0);
					dst[x] = static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
				}
			}
			corpus.dataset.images.push_back(std::move(rec));
			corpus.images.push_back(img);
		}
	}
	return corpus;
}

void write_synthetic(const SynthCorpus& corpus, const std::filesystem::path& dir) {
	std::filesystem::create_directories(dir / "images");
	for (std::size_t i = 0; i < corpus.images.size(); ++i) {
		const auto path = dir / corpus.dataset.images[i].file_name;
		if (!cv::imwrite(path.string(), corpus.images[i])) {
			throw IoError("cannot write " + path.string());
		}
	}
	save_dataset(corpus.dataset, dir / "dataset.json");
}

} // namespace signline
