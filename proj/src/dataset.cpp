#include "signline/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "signline/error.hpp"
#include "signline/random.hpp"

namespace signline {

using nlohmann::json;

std::size_t Dataset::num_annotations() const {
	std::size_t n = 0;
	for (const auto& image : images) {
		n += image.annotations.size();
	}
	return n;
}

std::optional<int> Dataset::class_id_of(const std::string& name) const {
	for (const auto& c : catalog) {
		if (c.name == name) {
			return c.class_id;
		}
	}
	return std::nullopt;
}

const std::string& Dataset::class_name(int class_id) const {
	for (const auto& c : catalog) {
		if (c.class_id == class_id) {
			return c.name;
		}
	}
	throw NotFoundError("unknown class_id " + std::to_string(class_id));
}

const ImageRecord* Dataset::find_image(const std::string& image_id) const {
	for (const auto& image : images) {
		if (image.image_id == image_id) {
			return &image;
		}
	}
	return nullptr;
}

std::vector<std::string> Dataset::tablet_ids() const {
	std::vector<std::string> out;
	std::unordered_set<std::string> seen;
	for (const auto& image : images) {
		if (seen.insert(image.tablet_id).second) {
			out.push_back(image.tablet_id);
		}
	}
	return out;
}

int FoldAssignment::fold_of(const std::string& tablet_id) const {
	const auto it = tablet_to_fold.find(tablet_id);
	if (it == tablet_to_fold.end()) {
		throw NotFoundError("tablet '" + tablet_id + "' has no fold assignment");
	}
	return it->second;
}

std::vector<std::string> FoldAssignment::tablets_in_fold(int fold) const {
	std::vector<std::string> out;
	for (const auto& [tablet, f] : tablet_to_fold) {
		if (f == fold) {
			out.push_back(tablet);
		}
	}
	return out;
}

// Serialization --------------------------------------------------------------

void to_json(json& j, const BoundingBox& b) { j = json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

void from_json(const json& j, BoundingBox& b) {
	if (!j.is_array() || j.size() != 4) {
		throw ParseError("bbox must be an array of 4 numbers");
	}
	for (const auto& v : j) {
		if (!v.is_number()) {
			throw ParseError("bbox must be an array of 4 numbers");
		}
	}
	b = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json dataset_to_json(const Dataset& dataset) {
	json catalog = json::array();
	for (const auto& c : dataset.catalog) {
		catalog.push_back({{"class_id", c.class_id}, {"name", c.name}});
	}
	json images = json::array();
	for (const auto& image : dataset.images) {
		json anns = json::array();
		for (const auto& a : image.annotations) {
			anns.push_back({{"annotation_id", a.annotation_id}, {"bbox", a.bbox}, {"class_id", a.class_id}});
		}
		images.push_back({{"image_id", image.image_id},
		                  {"tablet_id", image.tablet_id},
		                  {"file_name", image.file_name},
		                  {"width", image.width},
		                  {"height", image.height},
		                  {"annotations", std::move(anns)}});
	}
	json out = json::object();
	out["catalog"] = std::move(catalog);
	out["images"] = std::move(images);
	return out;
}

namespace {

template <typename T>
T field(const json& obj, const char* key, const std::string& context) {
	if (!obj.is_object() || !obj.contains(key)) {
		throw ParseError(context + ": missing field '" + key + "'");
	}
	try {
		return obj.at(key).get<T>();
	} catch (const json::exception&) {
		throw ParseError(context + ": field '" + key + "' has the wrong type");
	}
}

} // namespace

Dataset dataset_from_json(const json& j) {
	if (!j.is_object()) {
		throw ParseError("dataset document must be a JSON object");
	}
	Dataset dataset;
	const auto catalog = field<json>(j, "catalog", "dataset");
	const auto images = field<json>(j, "images", "dataset");
	if (!catalog.is_array() || !images.is_array()) {
		throw ParseError("dataset: 'catalog' and 'images' must be arrays");
	}
	for (const auto& c : catalog) {
		dataset.catalog.push_back({field<int>(c, "class_id", "catalog entry"), field<std::string>(c, "name", "catalog entry")});
	}
	for (const auto& im : images) {
		ImageRecord image;
		image.image_id = field<std::string>(im, "image_id", "image");
		const std::string ctx = "image '" + image.image_id + "'";
		image.tablet_id = field<std::string>(im, "tablet_id", ctx);
		image.file_name = field<std::string>(im, "file_name", ctx);
		image.width = field<int>(im, "width", ctx);
		image.height = field<int>(im, "height", ctx);
		const auto anns = field<json>(im, "annotations", ctx);
		if (!anns.is_array()) {
			throw ParseError(ctx + ": 'annotations' must be an array");
		}
		for (const auto& a : anns) {
			Annotation ann;
			ann.annotation_id = field<std::string>(a, "annotation_id", ctx + " annotation");
			const std::string actx = ctx + " annotation '" + ann.annotation_id + "'";
			if (!a.contains("bbox")) {
				throw ParseError(actx + ": missing field 'bbox'");
			}
			try {
				ann.bbox = a.at("bbox").get<BoundingBox>();
			} catch (const ParseError& e) {
				throw ParseError(actx + ": " + e.what());
			}
			ann.class_id = field<int>(a, "class_id", actx);
			image.annotations.push_back(std::move(ann));
		}
		dataset.images.push_back(std::move(image));
	}
	return dataset;
}

void validate_dataset(Dataset& dataset, double overhang_tolerance_px) {
	const auto num_classes = static_cast<int>(dataset.catalog.size());
	std::unordered_set<int> ids;
	std::unordered_set<std::string> names;
	for (const auto& c : dataset.catalog) {
		if (c.class_id < 0 || c.class_id >= num_classes) {
			throw ValidationError("catalog: class_id " + std::to_string(c.class_id) + " outside 0.." +
			                      std::to_string(num_classes - 1));
		}
		if (!ids.insert(c.class_id).second) {
			throw ValidationError("catalog: duplicate class_id " + std::to_string(c.class_id));
		}
		if (c.name.empty()) {
			throw ValidationError("catalog: empty name for class_id " + std::to_string(c.class_id));
		}
		if (!names.insert(c.name).second) {
			throw ValidationError("catalog: duplicate name '" + c.name + "'");
		}
	}

	std::unordered_set<std::string> image_ids;
	for (auto& image : dataset.images) {
		const std::string ctx = "image '" + image.image_id + "'";
		if (image.image_id.empty()) {
			throw ValidationError("image with empty image_id");
		}
		if (!image_ids.insert(image.image_id).second) {
			throw ValidationError(ctx + ": duplicate image_id");
		}
		if (image.tablet_id.empty()) {
			throw ValidationError(ctx + ": empty tablet_id");
		}
		if (image.width <= 0 || image.height <= 0) {
			throw ValidationError(ctx + ": width and height must be positive");
		}
		std::unordered_set<std::string> ann_ids;
		const double w = image.width;
		const double h = image.height;
		for (auto& a : image.annotations) {
			const std::string actx = ctx + " annotation '" + a.annotation_id + "'";
			if (!ann_ids.insert(a.annotation_id).second) {
				throw ValidationError(actx + ": duplicate annotation_id");
			}
			if (a.class_id < 0 || a.class_id >= num_classes) {
				throw ValidationError(actx + ": unknown class_id " + std::to_string(a.class_id));
			}
			auto& b = a.bbox;
			if (!std::isfinite(b.x_min) || !std::isfinite(b.y_min) || !std::isfinite(b.x_max) || !std::isfinite(b.y_max)) {
				throw ValidationError(actx + ": non-finite bbox coordinate");
			}
			if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) {
				throw ValidationError(actx + ": degenerate bbox (requires x_min < x_max and y_min < y_max)");
			}
			const double tol = overhang_tolerance_px;
			if (b.x_min < -tol || b.y_min < -tol || b.x_max > w + tol || b.y_max > h + tol) {
				throw ValidationError(actx + ": bbox lies outside the " + std::to_string(image.width) + "x" +
				                      std::to_string(image.height) + " image");
			}
			b.x_min = std::clamp(b.x_min, 0.0, w);
			b.y_min = std::clamp(b.y_min, 0.0, h);
			b.x_max = std::clamp(b.x_max, 0.0, w);
			b.y_max = std::clamp(b.y_max, 0.0, h);
			if (!(b.x_min < b.x_max) || !(b.y_min < b.y_max)) {
				throw ValidationError(actx + ": bbox is degenerate after clamping to the image");
			}
		}
	}
}

Dataset load_dataset(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open dataset file " + path.string());
	}
	json j;
	try {
		in >> j;
	} catch (const json::parse_error& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	Dataset dataset = dataset_from_json(j);
	validate_dataset(dataset);
	return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) {
		throw IoError("cannot write dataset file " + path.string());
	}
	out << dataset_to_json(dataset).dump(1, '\t') << '\n';
	if (!out) {
		throw IoError("write failed for " + path.string());
	}
}

// Preprocessing --------------------------------------------------------------

CropResult crop_to_annotations(const ImageRecord& image, double margin_frac) {
	if (image.annotations.empty()) {
		throw ValidationError("image '" + image.image_id + "': nothing to crop to (no annotations)");
	}
	if (!(margin_frac >= 0.0)) {
		throw ValidationError("crop margin must be >= 0");
	}
	BoundingBox extent = image.annotations.front().bbox;
	for (const auto& a : image.annotations) {
		extent.x_min = std::min(extent.x_min, a.bbox.x_min);
		extent.y_min = std::min(extent.y_min, a.bbox.y_min);
		extent.x_max = std::max(extent.x_max, a.bbox.x_max);
		extent.y_max = std::max(extent.y_max, a.bbox.y_max);
	}
	const double mx = margin_frac * extent.width();
	const double my = margin_frac * extent.height();

	PixelRect rect;
	rect.x0 = std::clamp(static_cast<int>(std::floor(extent.x_min - mx)), 0, image.width);
	rect.y0 = std::clamp(static_cast<int>(std::floor(extent.y_min - my)), 0, image.height);
	rect.x1 = std::clamp(static_cast<int>(std::ceil(extent.x_max + mx)), 0, image.width);
	rect.y1 = std::clamp(static_cast<int>(std::ceil(extent.y_max + my)), 0, image.height);
	if (rect.width() <= 0 || rect.height() <= 0) {
		throw ValidationError("image '" + image.image_id + "': annotations lie outside the image");
	}

	CropResult result{image, rect};
	result.image.width = rect.width();
	result.image.height = rect.height();
	const double w = rect.width();
	const double h = rect.height();
	for (auto& a : result.image.annotations) {
		auto& b = a.bbox;
		b = b.translated(-rect.x0, -rect.y0);
		b.x_min = std::clamp(b.x_min, 0.0, w);
		b.y_min = std::clamp(b.y_min, 0.0, h);
		b.x_max = std::clamp(b.x_max, 0.0, w);
		b.y_max = std::clamp(b.y_max, 0.0, h);
	}
	return result;
}

std::map<std::string, std::string> default_numeral_mapping() { return {{"1", "DIŠ"}, {"10", "U"}}; }

std::set<std::string> load_label_list(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open label list " + path.string());
	}
	std::set<std::string> labels;
	std::string line;
	while (std::getline(in, line)) {
		const auto hash = line.find('#');
		if (hash != std::string::npos) {
			line.erase(hash);
		}
		const auto first = line.find_first_not_of(" \t\r");
		if (first == std::string::npos) {
			continue;
		}
		const auto last = line.find_last_not_of(" \t\r");
		labels.insert(line.substr(first, last - first + 1));
	}
	return labels;
}

Dataset relabel_numerals(const Dataset& dataset,
                         const std::map<std::string, std::string>& mapping,
                         const std::set<std::string>& drop_set,
                         const RelabelOptions& options) {
	Dataset out = dataset;

	// Resolve source -> target class ids.
	std::unordered_map<int, int> remap;
	for (const auto& [source, target] : mapping) {
		const auto source_id = out.class_id_of(source);
		if (!source_id) {
			continue; // nothing carries this label
		}
		auto target_id = out.class_id_of(target);
		if (!target_id) {
			if (!options.add_missing_targets) {
				throw ValidationError("relabel target '" + target + "' is not in the catalog");
			}
			target_id = static_cast<int>(out.catalog.size());
			out.catalog.push_back({*target_id, target});
		}
		remap[*source_id] = *target_id;
	}
	std::unordered_set<int> dropped;
	for (const auto& label : drop_set) {
		if (const auto id = out.class_id_of(label)) {
			dropped.insert(*id);
		}
	}

	for (auto& image : out.images) {
		std::vector<Annotation> kept;
		kept.reserve(image.annotations.size());
		for (auto& a : image.annotations) {
			if (dropped.contains(a.class_id)) {
				continue;
			}
			if (const auto it = remap.find(a.class_id); it != remap.end()) {
				a.class_id = it->second;
			}
			kept.push_back(std::move(a));
		}
		image.annotations = std::move(kept);
	}

	if (options.prune_empty_classes) {
		std::vector<std::size_t> counts(out.catalog.size(), 0);
		for (const auto& image : out.images) {
			for (const auto& a : image.annotations) {
				++counts[static_cast<std::size_t>(a.class_id)];
			}
		}
		std::vector<SignClass> sorted = out.catalog;
		std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.class_id < b.class_id; });
		std::unordered_map<int, int> repack;
		std::vector<SignClass> catalog;
		for (const auto& c : sorted) {
			if (counts[static_cast<std::size_t>(c.class_id)] == 0) {
				continue;
			}
			const int id = static_cast<int>(catalog.size());
			repack[c.class_id] = id;
			catalog.push_back({id, c.name});
		}
		for (auto& image : out.images) {
			for (auto& a : image.annotations) {
				a.class_id = repack.at(a.class_id);
			}
		}
		out.catalog = std::move(catalog);
	}
	return out;
}

FilterResult filter_quality(const Dataset& dataset, int min_dim, const std::set<std::string>& denylist) {
	FilterResult result;
	result.dataset.catalog = dataset.catalog;
	for (const auto& image : dataset.images) {
		if (denylist.contains(image.image_id)) {
			result.removed.push_back({image.image_id, "denylisted"});
		} else if (std::min(image.width, image.height) < min_dim) {
			result.removed.push_back({image.image_id, "resolution " + std::to_string(image.width) + "x" +
			                                              std::to_string(image.height) + " below " +
			                                              std::to_string(min_dim) + " px"});
		} else {
			result.dataset.images.push_back(image);
		}
	}
	return result;
}

FoldAssignment split_by_tablet(const Dataset& dataset, int k, std::uint64_t seed) {
	if (k < 2) {
		throw ValidationError("fold count must be at least 2");
	}
	// Sorted first so the assignment depends only on the tablet set and seed.
	std::vector<std::string> tablets = dataset.tablet_ids();
	std::sort(tablets.begin(), tablets.end());
	if (tablets.size() < static_cast<std::size_t>(k)) {
		throw ValidationError("cannot split " + std::to_string(tablets.size()) + " tablets into " +
		                      std::to_string(k) + " folds");
	}
	Rng rng(seed);
	rng.shuffle(tablets);
	FoldAssignment folds;
	folds.k = k;
	folds.seed = seed;
	for (std::size_t i = 0; i < tablets.size(); ++i) {
		folds.tablet_to_fold[tablets[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
	}
	return folds;
}

FoldSplit fold_partition(const Dataset& dataset, const FoldAssignment& folds, int test_fold) {
	if (test_fold < 0 || test_fold >= folds.k) {
		throw ValidationError("fold index " + std::to_string(test_fold) + " outside 0.." + std::to_string(folds.k - 1));
	}
	FoldSplit split;
	split.train.catalog = dataset.catalog;
	split.test.catalog = dataset.catalog;
	for (const auto& image : dataset.images) {
		const auto it = folds.tablet_to_fold.find(image.tablet_id);
		if (it == folds.tablet_to_fold.end()) {
			throw ValidationError("image '" + image.image_id + "': tablet '" + image.tablet_id +
			                      "' missing from the fold assignment");
		}
		(it->second == test_fold ? split.test : split.train).images.push_back(image);
	}
	return split;
}

Dataset subsample_training(const Dataset& dataset, double fraction, std::uint64_t seed, SampleUnit unit) {
	if (!(fraction > 0.0 && fraction <= 1.0)) {
		throw ValidationError("subsample fraction must lie in (0, 1]");
	}
	std::vector<std::string> units;
	if (unit == SampleUnit::image) {
		for (const auto& image : dataset.images) {
			units.push_back(image.image_id);
		}
	} else {
		units = dataset.tablet_ids();
	}
	const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(units.size()) - 1e-9));
	std::vector<std::size_t> order(units.size());
	std::iota(order.begin(), order.end(), 0);
	Rng rng(seed);
	rng.shuffle(order);
	std::unordered_set<std::string> chosen;
	for (std::size_t i = 0; i < keep && i < order.size(); ++i) {
		chosen.insert(units[order[i]]);
	}

	Dataset out;
	out.catalog = dataset.catalog;
	for (const auto& image : dataset.images) {
		const auto& key = unit == SampleUnit::image ? image.image_id : image.tablet_id;
		if (chosen.contains(key)) {
			out.images.push_back(image);
		}
	}
	return out;
}

Dataset select_images(const Dataset& dataset, const std::set<std::string>& image_ids) {
	Dataset out;
	out.catalog = dataset.catalog;
	for (const auto& image : dataset.images) {
		if (image_ids.contains(image.image_id)) {
			out.images.push_back(image);
		}
	}
	return out;
}

} // namespace signline
