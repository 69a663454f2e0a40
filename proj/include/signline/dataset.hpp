#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace signline {

/// Axis-aligned box in absolute pixel coordinates. Origin at the image's
/// top-left corner, x grows rightward and y grows downward.
struct BoundingBox {
	double x_min{0.0};
	double y_min{0.0};
	double x_max{0.0};
	double y_max{0.0};

	double width() const { return x_max - x_min; }
	double height() const { return y_max - y_min; }
	double area() const { return width() * height(); }

	/// Non-degenerate and in the non-negative quadrant.
	bool is_valid() const {
		return x_min < x_max && y_min < y_max && x_min >= 0.0 && y_min >= 0.0;
	}

	BoundingBox translated(double dx, double dy) const {
		return {x_min + dx, y_min + dy, x_max + dx, y_max + dy};
	}

	bool operator==(const BoundingBox&) const = default;
};

struct SignClass {
	int class_id{0};
	std::string name;

	bool operator==(const SignClass&) const = default;
};

struct Annotation {
	std::string annotation_id;
	BoundingBox bbox;
	int class_id{0};

	bool operator==(const Annotation&) const = default;
};

/// One photograph of a tablet face. The annotation order is the reference
/// reading sequence used for CER.
struct ImageRecord {
	std::string image_id;
	std::string tablet_id;
	std::string file_name;
	int width{0};
	int height{0};
	std::vector<Annotation> annotations;

	bool operator==(const ImageRecord&) const = default;
};

struct Dataset {
	std::vector<SignClass> catalog;
	std::vector<ImageRecord> images;

	std::size_t num_classes() const { return catalog.size(); }
	std::size_t num_annotations() const;

	/// Class id for a catalog name, if present.
	std::optional<int> class_id_of(const std::string& name) const;
	const std::string& class_name(int class_id) const;

	const ImageRecord* find_image(const std::string& image_id) const;

	/// Distinct tablet ids in first-appearance order.
	std::vector<std::string> tablet_ids() const;

	bool operator==(const Dataset&) const = default;
};

struct FoldAssignment {
	int k{0};
	std::uint64_t seed{0};
	std::map<std::string, int> tablet_to_fold;

	int fold_of(const std::string& tablet_id) const;
	std::vector<std::string> tablets_in_fold(int fold) const;
};

/// Train and test views for one fold of a FoldAssignment.
struct FoldSplit {
	Dataset train;
	Dataset test;
};

// Serialization --------------------------------------------------------------

void to_json(nlohmann::json& j, const BoundingBox& b);
void from_json(const nlohmann::json& j, BoundingBox& b);
nlohmann::json dataset_to_json(const Dataset& dataset);
/// Parses without bounds validation; field and type errors raise ParseError.
Dataset dataset_from_json(const nlohmann::json& j);

/// Checks catalog uniqueness, class references and box geometry. Boxes that
/// overhang the image by at most `overhang_tolerance_px` are clamped in place;
/// anything worse raises ValidationError naming the image and annotation.
void validate_dataset(Dataset& dataset, double overhang_tolerance_px = 2.0);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Preprocessing --------------------------------------------------------------

/// Integer pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
	int x0{0};
	int y0{0};
	int x1{0};
	int y1{0};

	int width() const { return x1 - x0; }
	int height() const { return y1 - y0; }
	bool operator==(const PixelRect&) const = default;
};

struct CropResult {
	ImageRecord image;
	PixelRect crop;
};

inline constexpr double kDefaultCropMargin = 0.02;

/// Crops an image record to the union extent of its annotations, expanded by
/// `margin_frac` of the extent on each side and clamped to the image. The
/// rectangle is snapped outward to whole pixels; annotation boxes are shifted
/// into the new frame and clipped to it.
CropResult crop_to_annotations(const ImageRecord& image, double margin_frac = kDefaultCropMargin);

struct RelabelOptions {
	/// Remove catalog entries left without annotations; ids are re-packed.
	bool prune_empty_classes{false};
	/// Append missing mapping targets to the catalog instead of failing.
	bool add_missing_targets{false};
};

/// "1" -> "DIŠ" and "10" -> "U".
std::map<std::string, std::string> default_numeral_mapping();

/// Reads a label list, one label per line; blank lines and '#' comments are
/// skipped.
std::set<std::string> load_label_list(const std::filesystem::path& path);

Dataset relabel_numerals(const Dataset& dataset,
                         const std::map<std::string, std::string>& mapping,
                         const std::set<std::string>& drop_set,
                         const RelabelOptions& options = {});

struct Removal {
	std::string image_id;
	std::string reason;
};

struct FilterResult {
	Dataset dataset;
	std::vector<Removal> removed;
};

FilterResult filter_quality(const Dataset& dataset, int min_dim, const std::set<std::string>& denylist);

FoldAssignment split_by_tablet(const Dataset& dataset, int k, std::uint64_t seed);

/// Splits a dataset into the training tablets and the held-out tablets of
/// `test_fold`. Images of tablets missing from the assignment raise.
FoldSplit fold_partition(const Dataset& dataset, const FoldAssignment& folds, int test_fold);

enum class SampleUnit { image, tablet };

/// Keeps ceil(fraction * N) units chosen uniformly without replacement.
/// Retained images keep their original relative order.
Dataset subsample_training(const Dataset& dataset, double fraction, std::uint64_t seed,
                           SampleUnit unit = SampleUnit::image);

/// Dataset restricted to the given images (in dataset order), same catalog.
Dataset select_images(const Dataset& dataset, const std::set<std::string>& image_ids);

} // namespace signline
