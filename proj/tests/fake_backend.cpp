// Test helper speaking the line-delimited backend protocol on stdin/stdout.
//
//   fake_backend <predictions.json> [--fail-on ID] [--garbage-on ID] [--exit-after N]
//   fake_backend --stub C
//
// With a predictions file, detect replays the stored boxes and classify
// returns the class scores of the best-overlapping stored box. The stub mode
// answers detect with one fixed box and classify with C scores derived from
// each box's coordinates.
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <string>

#include "json.hpp"
#include "signline/backends.hpp"

using nlohmann::json;
using namespace signline;

namespace {

json reply(const std::string& image_id, json boxes) {
	return {{"images", json::array({{{"image_id", image_id}, {"boxes", std::move(boxes)}}})}};
}

std::vector<double> stub_scores(const BoundingBox& b, std::size_t classes) {
	std::vector<double> s(classes);
	for (std::size_t c = 0; c < classes; ++c) {
		s[c] = std::sin(0.37 * b.x_min + 0.11 * b.y_max + 1.3 * static_cast<double>(c));
	}
	return s;
}

} // namespace

int main(int argc, char** argv) {
	if (argc < 2) {
		std::cerr << "usage: fake_backend <predictions.json> | --stub C\n";
		return 2;
	}
	std::shared_ptr<Detector> detector;
	std::shared_ptr<Classifier> classifier;
	std::size_t stub_classes = 0;
	std::string fail_on, garbage_on;
	long exit_after = -1;
	int i = 1;
	if (std::string(argv[1]) == "--stub") {
		stub_classes = argc > 2 ? std::stoul(argv[2]) : 3;
		i = 3;
	} else {
		BackendPair pair = load_fixture_predictions(argv[1]);
		detector = pair.detector;
		classifier = pair.classifier;
		i = 2;
	}
	for (; i + 1 < argc; i += 2) {
		const std::string flag = argv[i];
		if (flag == "--fail-on") {
			fail_on = argv[i + 1];
		} else if (flag == "--garbage-on") {
			garbage_on = argv[i + 1];
		} else if (flag == "--exit-after") {
			exit_after = std::stol(argv[i + 1]);
		}
	}

	std::string line;
	long served = 0;
	while (std::getline(std::cin, line)) {
		if (exit_after >= 0 && served >= exit_after) {
			return 0;
		}
		++served;
		json out;
		try {
			const json req = json::parse(line);
			const std::string op = req.at("op");
			const std::string image_id = req.at("image_id");
			if (image_id == fail_on) {
				out = {{"error", "cannot process " + image_id}};
			} else if (image_id == garbage_on) {
				std::cout << "{not json\n" << std::flush;
				continue;
			} else if (op == "detect") {
				json boxes = json::array();
				if (stub_classes > 0) {
					boxes.push_back({{"bbox", {1, 2, 11, 12}}, {"score", 0.5}});
				} else {
					for (const auto& b : detector->detect({image_id, req.at("image"), {}}).boxes) {
						json jb{{"bbox", b.bbox}, {"score", b.score}};
						if (!b.source_id.empty()) {
							jb["box_id"] = b.source_id;
						}
						boxes.push_back(jb);
					}
				}
				out = reply(image_id, boxes);
			} else if (op == "classify") {
				std::vector<BoundingBox> query;
				for (const auto& jb : req.at("boxes")) {
					query.push_back(jb.get<BoundingBox>());
				}
				json boxes = json::array();
				if (stub_classes > 0) {
					for (const auto& b : query) {
						boxes.push_back({{"bbox", b}, {"score", 1.0}, {"class_scores", stub_scores(b, stub_classes)}});
					}
				} else {
					const auto scores = classifier->classify({image_id, req.at("image"), {}}, query);
					for (std::size_t k = 0; k < query.size(); ++k) {
						boxes.push_back({{"bbox", query[k]}, {"score", 1.0}, {"class_scores", scores[k].scores}});
					}
				}
				out = reply(image_id, boxes);
			} else {
				out = {{"error", "unknown op " + op}};
			}
		} catch (const std::exception& e) {
			out = {{"error", e.what()}};
		}
		std::cout << out.dump() << '\n' << std::flush;
	}
	return 0;
}
