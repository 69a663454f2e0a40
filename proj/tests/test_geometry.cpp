#include <functional>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "signline/error.hpp"
#include "signline/geometry.hpp"

using namespace signline;

namespace {

BoundingBox random_int_box(Rng& rng, int extent) {
	const int x0 = static_cast<int>(rng.index(static_cast<std::size_t>(extent)));
	const int y0 = static_cast<int>(rng.index(static_cast<std::size_t>(extent)));
	return {double(x0), double(y0), double(x0 + 1 + static_cast<int>(rng.index(8))),
	        double(y0 + 1 + static_cast<int>(rng.index(8)))};
}

// Best total IoU over all one-to-one pairings restricted to pairs >= thr.
double best_total(const std::vector<ScoredBox>& preds, const std::vector<BoundingBox>& gts, double thr) {
	std::vector<bool> used(gts.size(), false);
	std::function<double(std::size_t)> rec = [&](std::size_t p) -> double {
		if (p == preds.size()) {
			return 0.0;
		}
		double best = rec(p + 1);
		for (std::size_t g = 0; g < gts.size(); ++g) {
			const double v = iou(preds[p].bbox, gts[g]);
			if (!used[g] && v >= thr) {
				used[g] = true;
				best = std::max(best, v + rec(p + 1));
				used[g] = false;
			}
		}
		return best;
	};
	return rec(0);
}

// Greedy rule spelled out: score order, best still-free gt.
std::vector<std::pair<std::size_t, std::size_t>> greedy_pairs(const std::vector<ScoredBox>& preds,
                                                              const std::vector<BoundingBox>& gts, double thr) {
	std::vector<std::size_t> order(preds.size());
	for (std::size_t i = 0; i < order.size(); ++i) {
		order[i] = i;
	}
	std::stable_sort(order.begin(), order.end(),
	                 [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
	std::vector<bool> used(gts.size(), false);
	std::vector<std::pair<std::size_t, std::size_t>> out;
	for (std::size_t p : order) {
		double best = -1;
		std::size_t bg = 0;
		for (std::size_t g = 0; g < gts.size(); ++g) {
			const double v = iou(preds[p].bbox, gts[g]);
			if (!used[g] && v >= thr && v > best) {
				best = v;
				bg = g;
			}
		}
		if (best >= 0) {
			used[bg] = true;
			out.emplace_back(p, bg);
		}
	}
	std::sort(out.begin(), out.end());
	return out;
}

void check_partition(const MatchResult& m, std::size_t np, std::size_t ng, double thr) {
	std::set<std::size_t> ps, gs;
	for (const auto& pair : m.pairs) {
		CHECK(ps.insert(pair.pred_index).second);
		CHECK(gs.insert(pair.gt_index).second);
		CHECK(pair.iou >= thr);
	}
	for (auto p : m.unmatched_preds) {
		CHECK(ps.insert(p).second);
	}
	for (auto g : m.unmatched_gts) {
		CHECK(gs.insert(g).second);
	}
	CHECK(ps.size() == np);
	CHECK(gs.size() == ng);
}

} // namespace

TEST_CASE("iou examples") {
	const BoundingBox a{0, 0, 2, 2};
	CHECK(iou(a, a) == 1.0);
	CHECK(iou(a, {5, 5, 6, 6}) == 0.0);
	CHECK(iou(a, {2, 0, 4, 2}) == 0.0); // touching edges
	CHECK(std::abs(iou(a, {1, 1, 3, 3}) - 1.0 / 7.0) < 1e-12);
	CHECK(intersection_area(a, {1, 1, 3, 3}) == 1.0);
}

TEST_CASE("iou matches cell counting") {
	Rng rng(77);
	for (int trial = 0; trial < 3000; ++trial) {
		const BoundingBox a = random_int_box(rng, 12);
		const BoundingBox b = random_int_box(rng, 12);
		const double expected = oracle::iou_cells(int(a.x_min), int(a.y_min), int(a.x_max), int(a.y_max),
		                                          int(b.x_min), int(b.y_min), int(b.x_max), int(b.y_max));
		REQUIRE(std::abs(iou(a, b) - expected) < 1e-12);
		REQUIRE(iou(a, b) == iou(b, a));
	}
}

TEST_CASE("centroid") {
	CHECK(centroid({0, 0, 2, 2}) == Point2{1, 1});
	CHECK(centroid({10, 20, 30, 40}) == Point2{20, 30});
	Rng rng(4);
	for (int i = 0; i < 100; ++i) {
		const BoundingBox b = random_int_box(rng, 50);
		const double tx = rng.uniform(-20, 20), ty = rng.uniform(-20, 20);
		const Point2 c = centroid(b), ct = centroid(b.translated(tx, ty));
		CHECK(ct.x == doctest::Approx(c.x + tx));
		CHECK(ct.y == doctest::Approx(c.y + ty));
	}
}

TEST_CASE("greedy matching examples") {
	const std::vector<BoundingBox> gt{{0, 0, 10, 10}};
	SUBCASE("exact") {
		const std::vector<ScoredBox> p{{{0, 0, 10, 10}, 0.9, ""}};
		const MatchResult m = match_greedy(p, gt, 0.5);
		REQUIRE(m.pairs.size() == 1);
		CHECK(m.unmatched_preds.empty());
		CHECK(m.unmatched_gts.empty());
	}
	SUBCASE("higher score wins") {
		const std::vector<ScoredBox> p{{{0, 0, 10, 10}, 0.3, ""}, {{1, 0, 10, 10}, 0.8, ""}};
		const MatchResult m = match_greedy(p, gt, 0.5);
		REQUIRE(m.pairs.size() == 1);
		CHECK(m.pairs[0].pred_index == 1);
		CHECK(m.unmatched_preds == std::vector<std::size_t>{0});
	}
	SUBCASE("below threshold") {
		// IoU 0.4: [0,0,10,10] vs [0,0,4,10]
		const std::vector<ScoredBox> p{{{0, 0, 4, 10}, 1.0, ""}};
		const MatchResult m = match_greedy(p, gt, 0.5);
		CHECK(m.pairs.empty());
		CHECK(m.unmatched_preds.size() == 1);
		CHECK(m.unmatched_gts.size() == 1);
	}
}

TEST_CASE("matchers against brute force") {
	Rng rng(99);
	for (int trial = 0; trial < 2000; ++trial) {
		std::vector<ScoredBox> preds;
		std::vector<BoundingBox> gts;
		const std::size_t np = rng.index(6), ng = rng.index(6);
		for (std::size_t i = 0; i < np; ++i) {
			preds.push_back({random_int_box(rng, 8), std::round(rng.uniform() * 4) / 4, ""});
		}
		for (std::size_t i = 0; i < ng; ++i) {
			gts.push_back(random_int_box(rng, 8));
		}
		const double thr = rng.uniform(0.1, 0.7);
		const MatchResult g = match_greedy(preds, gts, thr);
		check_partition(g, np, ng, thr);
		std::vector<std::pair<std::size_t, std::size_t>> got;
		for (const auto& pair : g.pairs) {
			got.emplace_back(pair.pred_index, pair.gt_index);
		}
		std::sort(got.begin(), got.end());
		REQUIRE(got == greedy_pairs(preds, gts, thr));

		const MatchResult h = match_hungarian(preds, gts, thr);
		check_partition(h, np, ng, thr);
		double total = 0;
		for (const auto& pair : h.pairs) {
			total += pair.iou;
		}
		REQUIRE(total == doctest::Approx(best_total(preds, gts, thr)).epsilon(1e-9));
	}
}

TEST_CASE("label imputation") {
	const std::vector<Annotation> gts{{"g0", {0, 0, 10, 10}, 4}, {"g1", {20, 0, 30, 10}, 7}};
	SUBCASE("perfect") {
		const std::vector<ScoredBox> p{{{20, 0, 30, 10}, 0.9, ""}, {{0, 0, 10, 10}, 0.8, ""}};
		const auto boxes = boxes_of(gts);
		const ImputedLabels r = impute_labels(match_greedy(p, boxes, 0.5), p, gts);
		CHECK(r.boxes[0].class_id == 7);
		CHECK(r.boxes[1].class_id == 4);
		CHECK(r.false_positives == 0);
		CHECK(r.missed_gts == 0);
	}
	SUBCASE("three predictions, two matched") {
		const std::vector<ScoredBox> p{
		    {{0, 0, 10, 10}, 0.9, ""}, {{50, 50, 60, 60}, 0.7, ""}, {{21, 0, 30, 10}, 0.6, ""}};
		const auto boxes = boxes_of(gts);
		const ImputedLabels r = impute_labels(match_greedy(p, boxes, 0.5), p, gts);
		CHECK(r.boxes[0].class_id == 4);
		CHECK(r.boxes[1].false_positive());
		CHECK(r.boxes[2].class_id == 7);
		CHECK(r.false_positives == 1);
	}
	SUBCASE("no predictions") {
		const std::vector<ScoredBox> p;
		const auto boxes = boxes_of(gts);
		const ImputedLabels r = impute_labels(match_greedy(p, boxes, 0.5), p, gts);
		CHECK(r.boxes.empty());
		CHECK(r.missed_gts == 2);
	}
	SUBCASE("mismatched inputs") {
		const std::vector<ScoredBox> p{{{0, 0, 10, 10}, 0.9, ""}};
		const auto boxes = boxes_of(gts);
		const MatchResult m = match_greedy(p, boxes, 0.5);
		CHECK_THROWS_AS(impute_labels(m, {}, gts), ValidationError);
	}
}
