#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "signline-test-cli";

int run(const std::string& args) {
	const std::string cmd = std::string(SIGNLINE_CLI) + " " + args + " >>" + (kDir / "log.txt").string() + " 2>&1";
	const int status = std::system(cmd.c_str());
	return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& p) {
	std::ifstream in(p);
	REQUIRE(in);
	return json::parse(in);
}

double metric(const json& fold, const std::string& name) {
	for (const auto& m : fold.at("metrics")) {
		if (m.at("name") == name) {
			return m.at("value").get<double>();
		}
	}
	FAIL("missing metric " << name);
	return 0.0;
}

} // namespace

TEST_CASE("command line round trip") {
	fs::remove_all(kDir);
	fs::create_directories(kDir);
	const std::string d = kDir.string();

	REQUIRE(run("--seed 3 --out " + d + "/corpus synth --tablets 6 --classes 6 --lines 3 --signs 4 --with-fixture") ==
	        0);
	const std::string dataset = d + "/corpus/dataset.json";
	const std::string fixture = d + "/corpus/predictions.json";
	CHECK(fs::exists(d + "/corpus/manifest.json"));
	CHECK(read_json(dataset).at("images").size() == 6);

	REQUIRE(run("--seed 1 --out " + d + "/split split --dataset " + dataset + " --k 3") == 0);
	const json folds = read_json(d + "/split/folds.json");
	CHECK(folds.at("k") == 3);
	CHECK(folds.at("tablets").size() == 6);

	const std::string oracle = " --detector fixture --fixture " + fixture + " --classifier oracle";
	REQUIRE(run("--out " + d + "/eval evaluate --dataset " + dataset + " --folds " + d + "/split/folds.json" + oracle) ==
	        0);
	const json report = read_json(d + "/eval/report.json");
	REQUIRE(report.at("folds").size() == 3);
	for (const auto& f : report.at("folds")) {
		CHECK(metric(f, "ap50") == doctest::Approx(1.0));
		CHECK(metric(f, "gt_top1") == 1.0);
		CHECK(metric(f, "cer") == 0.0);
	}
	CHECK(fs::exists(d + "/eval/report.txt"));
	CHECK(fs::exists(d + "/eval/per_class.csv"));
	const json manifest = read_json(d + "/eval/manifest.json");
	CHECK(manifest.at("command") == "evaluate");
	CHECK(manifest.at("input_hashes").size() >= 2);
	CHECK(manifest.at("folds").size() == 3);

	REQUIRE(run("--out " + d + "/tr transliterate --dataset " + dataset + oracle) == 0);
	CHECK(read_json(d + "/tr/transliterations.json").size() == 6);

	REQUIRE(run("--out " + d + "/stats stats --dataset " + dataset) == 0);
	CHECK(fs::exists(d + "/stats/rank_frequency.csv"));

	REQUIRE(run("--out " + d + "/lines lines --dataset " + dataset) == 0);
	CHECK(fs::exists(d + "/lines/lines.json"));

	SUBCASE("invalid configuration exits with 3") {
		std::ofstream(kDir / "bad.json") << R"({"folds": 1})";
		CHECK(run("--config " + d + "/bad.json --out " + d + "/bad evaluate --dataset " + dataset + oracle) == 3);
	}
	SUBCASE("usage errors") {
		CHECK(run("") != 0);
		CHECK(run("evaluate --dataset " + d + "/absent.json") != 0);
		CHECK(run("frobnicate") != 0);
	}
}
