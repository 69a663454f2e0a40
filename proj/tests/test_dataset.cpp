#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "signline/dataset.hpp"
#include "signline/error.hpp"

using namespace signline;
namespace fs = std::filesystem;

namespace {

fs::path fixture(const std::string& name) { return fs::path(SIGNLINE_FIXTURES) / name; }

fs::path scratch(const std::string& name) {
	const fs::path dir = fs::temp_directory_path() / "signline-test-dataset";
	fs::create_directories(dir);
	return dir / name;
}

ImageRecord two_box_image() {
	ImageRecord img{"I", "T", "I.png", 100, 100, {}};
	img.annotations.push_back({"a", {10, 20, 30, 40}, 0});
	img.annotations.push_back({"b", {50, 60, 70, 80}, 0});
	return img;
}

} // namespace

TEST_CASE("loading the fixtures") {
	SUBCASE("empty image list keeps the catalog") {
		const Dataset d = load_dataset(fixture("empty_images.json"));
		CHECK(d.images.empty());
		CHECK(d.num_classes() == 2);
		CHECK(d.class_name(1) == "KA");
	}
	SUBCASE("one image, two annotations") {
		const Dataset d = load_dataset(fixture("one_image.json"));
		REQUIRE(d.images.size() == 1);
		CHECK(d.images[0].width == 100);
		CHECK(d.images[0].height == 80);
		REQUIRE(d.images[0].annotations.size() == 2);
		CHECK(d.images[0].annotations[0].annotation_id == "P100-obv-7");
		CHECK(d.images[0].annotations[1].annotation_id == "P100-obv-9");
		CHECK(d.images[0].annotations[0].bbox == BoundingBox{10.0, 12.5, 30.0, 40.0});
	}
	SUBCASE("degenerate box names the annotation") {
		try {
			(void)load_dataset(fixture("degenerate_box.json"));
			FAIL("expected a validation error");
		} catch (const ValidationError& e) {
			CHECK(std::string(e.what()).find("flat-2") != std::string::npos);
		}
	}
	SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset(fixture("absent.json")), IoError); }
}

TEST_CASE("load and save are inverse") {
	for (const char* name : {"empty_images.json", "one_image.json", "three_images.json"}) {
		CAPTURE(name);
		const Dataset d = load_dataset(fixture(name));
		const fs::path out = scratch(std::string("rt-") + name);
		save_dataset(d, out);
		CHECK(load_dataset(out) == d);
	}
	const Dataset empty;
	save_dataset(empty, scratch("empty.json"));
	CHECK(load_dataset(scratch("empty.json")) == empty);
	CHECK_THROWS_AS(save_dataset(empty, "/proc/definitely/not/writable.json"), IoError);
}

TEST_CASE("load and save on random datasets") {
	Rng rng(11);
	for (int trial = 0; trial < 50; ++trial) {
		const Dataset d = oracle::random_dataset(rng, 1 + static_cast<int>(rng.index(6)));
		const fs::path out = scratch("random.json");
		save_dataset(d, out);
		REQUIRE(load_dataset(out) == d);
	}
}

TEST_CASE("validation") {
	Dataset d = load_dataset(fixture("one_image.json"));
	SUBCASE("small overhang is clamped") {
		d.images[0].annotations[0].bbox.x_max = 101.5;
		validate_dataset(d);
		CHECK(d.images[0].annotations[0].bbox.x_max == 100.0);
	}
	SUBCASE("large overhang is rejected") {
		d.images[0].annotations[0].bbox.y_max = 90.0;
		CHECK_THROWS_AS(validate_dataset(d), ValidationError);
	}
	SUBCASE("unknown class") {
		d.images[0].annotations[0].class_id = 7;
		CHECK_THROWS_AS(validate_dataset(d), ValidationError);
	}
	SUBCASE("duplicate catalog names") {
		d.catalog[1].name = "AN";
		CHECK_THROWS_AS(validate_dataset(d), ValidationError);
	}
	SUBCASE("malformed bbox") {
		nlohmann::json j = dataset_to_json(d);
		j["images"][0]["annotations"][0]["bbox"] = {1, 2, 3};
		CHECK_THROWS_AS(dataset_from_json(j), ParseError);
	}
}

TEST_CASE("crop arithmetic") {
	SUBCASE("two boxes, no margin") {
		const CropResult r = crop_to_annotations(two_box_image(), 0.0);
		CHECK(r.crop == PixelRect{10, 20, 70, 80});
		CHECK(r.image.width == 60);
		CHECK(r.image.height == 60);
		CHECK(r.image.annotations[0].bbox == BoundingBox{0, 0, 20, 20});
		CHECK(r.image.annotations[1].bbox == BoundingBox{40, 40, 60, 60});
	}
	SUBCASE("whole-image box is the identity") {
		ImageRecord img{"I", "T", "I.png", 40, 30, {{"a", {0, 0, 40, 30}, 0}}};
		const CropResult r = crop_to_annotations(img, 0.0);
		CHECK(r.crop == PixelRect{0, 0, 40, 30});
		CHECK(r.image == img);
	}
	SUBCASE("margin is clamped at the image bounds") {
		ImageRecord img{"I", "T", "I.png", 15, 15, {{"a", {10, 10, 20, 20}, 0}}};
		const CropResult r = crop_to_annotations(img, 0.5);
		// extent 10 wide, margin 5: [5, 25] clamped to [5, 15]
		CHECK(r.crop == PixelRect{5, 5, 15, 15});
		CHECK(r.image.annotations[0].bbox == BoundingBox{5, 5, 10, 10});
	}
	SUBCASE("fractional margin snaps outward") {
		const CropResult r = crop_to_annotations(two_box_image(), 0.02);
		// 0.02 * 60 = 1.2 px each side
		CHECK(r.crop == PixelRect{8, 18, 72, 82});
		CHECK(r.image.annotations[0].bbox == BoundingBox{2, 2, 22, 22});
	}
	SUBCASE("no annotations") {
		ImageRecord img{"I", "T", "I.png", 15, 15, {}};
		CHECK_THROWS_AS(crop_to_annotations(img), ValidationError);
	}
}

TEST_CASE("crop keeps boxes inside the new frame") {
	Rng rng(5);
	for (int trial = 0; trial < 500; ++trial) {
		Dataset d = oracle::random_dataset(rng, 1);
		for (auto& img : d.images) {
			if (img.annotations.empty()) {
				continue;
			}
			const double margin = rng.uniform(0, 0.5);
			const CropResult r = crop_to_annotations(img, margin);
			for (std::size_t i = 0; i < img.annotations.size(); ++i) {
				const auto& b = r.image.annotations[i].bbox;
				CHECK(b.x_min >= 0);
				CHECK(b.y_min >= 0);
				CHECK(b.x_max <= r.image.width);
				CHECK(b.y_max <= r.image.height);
				// translation only, since every box lies within the extent
				CHECK(b.x_min + r.crop.x0 == doctest::Approx(img.annotations[i].bbox.x_min));
				CHECK(b.y_max + r.crop.y0 == doctest::Approx(img.annotations[i].bbox.y_max));
			}
		}
	}
}

TEST_CASE("numeral relabeling") {
	const Dataset d = load_dataset(fixture("three_images.json"));
	const auto drop = load_label_list(fixture("composites.txt"));
	CHECK(drop == std::set<std::string>{"11", "90"});
	const Dataset r = relabel_numerals(d, default_numeral_mapping(), drop);
	const int dis = *r.class_id_of("DIŠ");
	const int u = *r.class_id_of("U");
	const auto& obv = r.images[0].annotations;
	REQUIRE(obv.size() == 2);
	CHECK(obv[0].annotation_id == "a1");
	CHECK(obv[0].class_id == dis);
	CHECK(obv[1].annotation_id == "a2");
	CHECK(obv[1].class_id == u);
	REQUIRE(r.images[1].annotations.size() == 1);
	CHECK(r.images[1].annotations[0].annotation_id == "b1");
	CHECK(r.images[2].annotations[1].class_id == dis);
	CHECK(r.catalog == d.catalog);

	SUBCASE("pruning repacks class ids") {
		Dataset p = relabel_numerals(d, default_numeral_mapping(), drop, {.prune_empty_classes = true});
		REQUIRE(p.num_classes() == 3);
		CHECK(p.catalog[0].name == "DIŠ");
		CHECK(p.catalog[1].name == "U");
		CHECK(p.catalog[2].name == "NA");
		CHECK(p.images[2].annotations[0].class_id == 2);
		CHECK_NOTHROW(validate_dataset(p));
	}
	SUBCASE("missing target") {
		Dataset no_u = d;
		no_u.catalog[4].name = "GAL";
		CHECK_THROWS_AS(relabel_numerals(no_u, default_numeral_mapping(), drop), ValidationError);
		const Dataset added = relabel_numerals(no_u, default_numeral_mapping(), drop, {.add_missing_targets = true});
		CHECK(added.catalog.back().name == "U");
		CHECK(added.images[0].annotations[1].class_id == added.catalog.back().class_id);
	}
}

TEST_CASE("quality filter") {
	const Dataset d = load_dataset(fixture("three_images.json"));
	SUBCASE("identity") {
		const FilterResult r = filter_quality(d, 0, {});
		CHECK(r.dataset == d);
		CHECK(r.removed.empty());
	}
	SUBCASE("thin image") {
		Dataset thin = d;
		thin.images[0].width = 20;
		thin.images[0].height = 800;
		const FilterResult r = filter_quality(thin, 32, {});
		CHECK(r.dataset.images.size() == 2);
		REQUIRE(r.removed.size() == 1);
		CHECK(r.removed[0].image_id == "P200-obv");
	}
	SUBCASE("denylist") {
		Rng rng(3);
		Dataset five = oracle::random_dataset(rng, 5);
		five.images.resize(5);
		const std::set<std::string> deny{five.images[1].image_id, five.images[3].image_id};
		const FilterResult r = filter_quality(five, 0, deny);
		CHECK(r.dataset.images.size() == 3);
		CHECK(r.removed.size() == 2);
	}
}

TEST_CASE("split by tablet") {
	Rng rng(1);
	Dataset ten = oracle::random_dataset(rng, 10);
	const FoldAssignment f = split_by_tablet(ten, 5, 42);
	for (int i = 0; i < 5; ++i) {
		CHECK(f.tablets_in_fold(i).size() == 2);
	}
	const FoldAssignment g = split_by_tablet(ten, 5, 42);
	CHECK(f.tablet_to_fold == g.tablet_to_fold);
	CHECK_THROWS_AS(split_by_tablet(ten, 11, 0), ValidationError);
	CHECK_THROWS_AS(split_by_tablet(ten, 1, 0), ValidationError);
}

TEST_CASE("split never divides a tablet (1000 random datasets)") {
	Rng rng(2024);
	int failures = 0;
	for (int trial = 0; trial < 1000; ++trial) {
		const int tablets = 2 + static_cast<int>(rng.index(40));
		const Dataset d = oracle::random_dataset(rng, tablets);
		const int k = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(std::min(tablets, 10) - 1)));
		const std::uint64_t seed = rng.next();
		const FoldAssignment f = split_by_tablet(d, k, seed);
		bool ok = f.tablet_to_fold.size() == static_cast<std::size_t>(tablets);
		std::vector<int> sizes(static_cast<std::size_t>(k), 0);
		for (const auto& [t, fold] : f.tablet_to_fold) {
			ok = ok && fold >= 0 && fold < k;
			if (fold >= 0 && fold < k) {
				++sizes[static_cast<std::size_t>(fold)];
			}
		}
		ok = ok && *std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1;
		std::size_t covered = 0;
		for (int fold = 0; fold < k && ok; ++fold) {
			const FoldSplit s = fold_partition(d, f, fold);
			std::set<std::string> train_tablets, test_tablets;
			for (const auto& img : s.train.images) {
				train_tablets.insert(img.tablet_id);
			}
			for (const auto& img : s.test.images) {
				test_tablets.insert(img.tablet_id);
				ok = ok && f.tablet_to_fold.at(img.tablet_id) == fold;
			}
			for (const auto& t : test_tablets) {
				ok = ok && !train_tablets.contains(t);
			}
			ok = ok && s.train.images.size() + s.test.images.size() == d.images.size();
			covered += s.test.images.size();
		}
		ok = ok && covered == d.images.size();
		// Reordering images must not change the assignment.
		Dataset shuffled = d;
		rng.shuffle(shuffled.images);
		ok = ok && split_by_tablet(shuffled, k, seed).tablet_to_fold == f.tablet_to_fold;
		failures += ok ? 0 : 1;
	}
	CHECK(failures == 0);
}

TEST_CASE("subsampling") {
	Rng rng(9);
	Dataset d;
	d.catalog = {{0, "A"}};
	for (int i = 0; i < 100; ++i) {
		d.images.push_back({"img" + std::to_string(i), "T" + std::to_string(i / 2), "f.png", 10, 10, {}});
	}
	CHECK(subsample_training(d, 1.0, 3) == d);
	const Dataset half = subsample_training(d, 0.5, 3);
	CHECK(half.images.size() == 50);
	CHECK(subsample_training(d, 0.5, 3) == half);
	CHECK(subsample_training(d, 0.5, 4) != half);
	for (std::size_t i = 1; i < half.images.size(); ++i) {
		CHECK(std::stoi(half.images[i - 1].image_id.substr(3)) < std::stoi(half.images[i].image_id.substr(3)));
	}
	CHECK(subsample_training(d, 0.1, 1, SampleUnit::tablet).images.size() == 10);
	CHECK(subsample_training(d, 0.011, 1).images.size() == 2);
	CHECK_THROWS_AS(subsample_training(d, 0.0, 1), ValidationError);
}
