#include "signline/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "signline/error.hpp"

namespace signline {

Point2 centroid(const BoundingBox& b) { return {(b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0}; }

double intersection_area(const BoundingBox& a, const BoundingBox& b) {
	const double w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
	const double h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
	if (w <= 0.0 || h <= 0.0) {
		return 0.0;
	}
	return w * h;
}

double iou(const BoundingBox& a, const BoundingBox& b) {
	const double inter = intersection_area(a, b);
	if (inter <= 0.0) {
		return 0.0;
	}
	const double uni = a.area() + b.area() - inter;
	return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

namespace {

void check_threshold(double iou_threshold) {
	if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
		throw ValidationError("IoU threshold must lie in (0, 1]");
	}
}

void fill_unmatched(MatchResult& result, std::size_t num_preds, std::size_t num_gts) {
	std::vector<bool> pred_used(num_preds, false);
	std::vector<bool> gt_used(num_gts, false);
	for (const auto& p : result.pairs) {
		pred_used[p.pred_index] = true;
		gt_used[p.gt_index] = true;
	}
	for (std::size_t i = 0; i < num_preds; ++i) {
		if (!pred_used[i]) {
			result.unmatched_preds.push_back(i);
		}
	}
	for (std::size_t j = 0; j < num_gts; ++j) {
		if (!gt_used[j]) {
			result.unmatched_gts.push_back(j);
		}
	}
}

} // namespace

MatchResult match_greedy(std::span<const ScoredBox> preds, std::span<const BoundingBox> gts, double iou_threshold) {
	check_threshold(iou_threshold);
	std::vector<std::size_t> order(preds.size());
	std::iota(order.begin(), order.end(), 0);
	std::stable_sort(order.begin(), order.end(),
	                 [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });

	MatchResult result;
	result.iou_threshold = iou_threshold;
	std::vector<bool> gt_used(gts.size(), false);
	for (const std::size_t p : order) {
		double best = -1.0;
		std::size_t best_gt = 0;
		for (std::size_t g = 0; g < gts.size(); ++g) {
			if (gt_used[g]) {
				continue;
			}
			const double v = iou(preds[p].bbox, gts[g]);
			if (v >= iou_threshold && v > best) {
				best = v;
				best_gt = g;
			}
		}
		if (best >= 0.0) {
			gt_used[best_gt] = true;
			result.pairs.push_back({p, best_gt, best});
		}
	}
	fill_unmatched(result, preds.size(), gts.size());
	return result;
}

MatchResult match_hungarian(std::span<const ScoredBox> preds, std::span<const BoundingBox> gts, double iou_threshold) {
	check_threshold(iou_threshold);
	MatchResult result;
	result.iou_threshold = iou_threshold;
	if (preds.empty() || gts.empty()) {
		fill_unmatched(result, preds.size(), gts.size());
		return result;
	}

	// Rows must not outnumber columns; transpose when needed.
	const bool transpose = preds.size() > gts.size();
	const std::size_t n = transpose ? gts.size() : preds.size();
	const std::size_t m = transpose ? preds.size() : gts.size();
	auto weight = [&](std::size_t row, std::size_t col) {
		const auto& p = preds[transpose ? col : row].bbox;
		const auto& g = gts[transpose ? row : col];
		const double v = iou(p, g);
		return v >= iou_threshold ? v : 0.0;
	};

	// Shortest augmenting path with potentials, 1-based, minimising -IoU.
	const double inf = std::numeric_limits<double>::infinity();
	std::vector<double> u(n + 1, 0.0);
	std::vector<double> v(m + 1, 0.0);
	std::vector<std::size_t> owner(m + 1, 0);
	std::vector<std::size_t> way(m + 1, 0);
	for (std::size_t i = 1; i <= n; ++i) {
		owner[0] = i;
		std::size_t j0 = 0;
		std::vector<double> minv(m + 1, inf);
		std::vector<bool> used(m + 1, false);
		do {
			used[j0] = true;
			const std::size_t i0 = owner[j0];
			double delta = inf;
			std::size_t j1 = 0;
			for (std::size_t j = 1; j <= m; ++j) {
				if (used[j]) {
					continue;
				}
				const double cur = -weight(i0 - 1, j - 1) - u[i0] - v[j];
				if (cur < minv[j]) {
					minv[j] = cur;
					way[j] = j0;
				}
				if (minv[j] < delta) {
					delta = minv[j];
					j1 = j;
				}
			}
			for (std::size_t j = 0; j <= m; ++j) {
				if (used[j]) {
					u[owner[j]] += delta;
					v[j] -= delta;
				} else {
					minv[j] -= delta;
				}
			}
			j0 = j1;
		} while (owner[j0] != 0);
		do {
			const std::size_t j1 = way[j0];
			owner[j0] = owner[j1];
			j0 = j1;
		} while (j0 != 0);
	}

	for (std::size_t j = 1; j <= m; ++j) {
		if (owner[j] == 0) {
			continue;
		}
		const std::size_t row = owner[j] - 1;
		const std::size_t col = j - 1;
		const std::size_t p = transpose ? col : row;
		const std::size_t g = transpose ? row : col;
		const double value = iou(preds[p].bbox, gts[g]);
		if (value >= iou_threshold) {
			result.pairs.push_back({p, g, value});
		}
	}
	std::sort(result.pairs.begin(), result.pairs.end(),
	          [](const MatchPair& a, const MatchPair& b) { return a.pred_index < b.pred_index; });
	fill_unmatched(result, preds.size(), gts.size());
	return result;
}

MatchResult match(Matcher matcher, std::span<const ScoredBox> preds, std::span<const BoundingBox> gts,
                  double iou_threshold) {
	return matcher == Matcher::greedy ? match_greedy(preds, gts, iou_threshold)
	                                  : match_hungarian(preds, gts, iou_threshold);
}

ImputedLabels impute_labels(const MatchResult& match, std::span<const ScoredBox> preds, std::span<const Annotation> gts) {
	if (match.pairs.size() + match.unmatched_gts.size() != gts.size() ||
	    match.pairs.size() + match.unmatched_preds.size() != preds.size()) {
		throw ValidationError("match result does not correspond to the given predictions and ground truth");
	}
	ImputedLabels out;
	out.boxes.reserve(preds.size());
	for (const auto& p : preds) {
		out.boxes.push_back({p, std::nullopt, std::nullopt});
	}
	for (const auto& pair : match.pairs) {
		if (pair.pred_index >= preds.size() || pair.gt_index >= gts.size()) {
			throw ValidationError("match result does not correspond to the given predictions and ground truth");
		}
		auto& labeled = out.boxes[pair.pred_index];
		labeled.class_id = gts[pair.gt_index].class_id;
		labeled.gt_index = pair.gt_index;
	}
	for (const auto idx : match.unmatched_gts) {
		if (idx >= gts.size()) {
			throw ValidationError("match result does not correspond to the given ground truth");
		}
	}
	out.false_positives = static_cast<std::size_t>(
	    std::count_if(out.boxes.begin(), out.boxes.end(), [](const LabeledBox& b) { return b.false_positive(); }));
	out.missed_gts = match.unmatched_gts.size();
	return out;
}

std::vector<BoundingBox> boxes_of(std::span<const Annotation> annotations) {
	std::vector<BoundingBox> out;
	out.reserve(annotations.size());
	for (const auto& a : annotations) {
		out.push_back(a.bbox);
	}
	return out;
}

} // namespace signline
