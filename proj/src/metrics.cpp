#include "signline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "signline/error.hpp"

namespace signline {

PRCurve average_precision(std::span<const std::vector<ScoredBox>> preds, std::span<const std::vector<BoundingBox>> gts,
                          double iou_threshold, ApInterpolation interpolation) {
	if (preds.size() != gts.size()) {
		throw ValidationError("average_precision: predictions and ground truth cover different image counts");
	}
	if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
		throw ValidationError("IoU threshold must lie in (0, 1]");
	}
	std::size_t total_gt = 0;
	for (const auto& g : gts) {
		total_gt += g.size();
	}
	if (total_gt == 0) {
		throw ValidationError("average precision is undefined without ground-truth boxes");
	}

	struct Ranked {
		std::size_t image;
		std::size_t index;
		double score;
	};
	std::vector<Ranked> ranked;
	for (std::size_t i = 0; i < preds.size(); ++i) {
		for (std::size_t j = 0; j < preds[i].size(); ++j) {
			ranked.push_back({i, j, preds[i][j].score});
		}
	}
	std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

	std::vector<std::vector<bool>> used(gts.size());
	for (std::size_t i = 0; i < gts.size(); ++i) {
		used[i].assign(gts[i].size(), false);
	}

	PRCurve curve;
	curve.points.reserve(ranked.size());
	std::size_t tp = 0;
	std::size_t fp = 0;
	for (const auto& r : ranked) {
		const auto& box = preds[r.image][r.index].bbox;
		const auto& image_gts = gts[r.image];
		double best = -1.0;
		std::size_t best_gt = 0;
		for (std::size_t g = 0; g < image_gts.size(); ++g) {
			if (used[r.image][g]) {
				continue;
			}
			const double v = iou(box, image_gts[g]);
			if (v >= iou_threshold && v > best) {
				best = v;
				best_gt = g;
			}
		}
		if (best >= 0.0) {
			used[r.image][best_gt] = true;
			++tp;
		} else {
			++fp;
		}
		curve.points.push_back({static_cast<double>(tp) / static_cast<double>(total_gt),
		                        static_cast<double>(tp) / static_cast<double>(tp + fp)});
	}

	// Precision envelope: best precision at this recall or any higher one.
	std::vector<double> envelope(curve.points.size());
	double running = 0.0;
	for (std::size_t i = curve.points.size(); i-- > 0;) {
		running = std::max(running, curve.points[i].precision);
		envelope[i] = running;
	}

	if (interpolation == ApInterpolation::points101) {
		double sum = 0.0;
		std::size_t cursor = 0;
		for (int k = 0; k <= 100; ++k) {
			const double r = static_cast<double>(k) / 100.0;
			while (cursor < curve.points.size() && curve.points[cursor].recall < r) {
				++cursor;
			}
			if (cursor < curve.points.size()) {
				sum += envelope[cursor];
			}
		}
		curve.ap = sum / 101.0;
	} else {
		double area = 0.0;
		double prev_recall = 0.0;
		for (std::size_t i = 0; i < curve.points.size(); ++i) {
			area += (curve.points[i].recall - prev_recall) * envelope[i];
			prev_recall = curve.points[i].recall;
		}
		curve.ap = area;
	}
	curve.ap = std::clamp(curve.ap, 0.0, 1.0);
	return curve;
}

double recall_at(std::span<const std::vector<ScoredBox>> preds, std::span<const std::vector<BoundingBox>> gts,
                 std::span<const std::string> tablet_of, double iou_threshold, double score_threshold) {
	if (preds.size() != gts.size() || tablet_of.size() != gts.size()) {
		throw ValidationError("recall_at: predictions, ground truth and tablet ids are not aligned");
	}
	std::map<std::string, std::pair<std::size_t, std::size_t>> per_tablet; // matched, total
	for (std::size_t i = 0; i < gts.size(); ++i) {
		std::vector<ScoredBox> kept;
		for (const auto& p : preds[i]) {
			if (p.score >= score_threshold) {
				kept.push_back(p);
			}
		}
		const MatchResult m = match_greedy(kept, gts[i], iou_threshold);
		auto& tally = per_tablet[tablet_of[i]];
		tally.first += m.pairs.size();
		tally.second += gts[i].size();
	}
	double sum = 0.0;
	std::size_t tablets = 0;
	for (const auto& [tablet, tally] : per_tablet) {
		if (tally.second == 0) {
			continue;
		}
		sum += static_cast<double>(tally.first) / static_cast<double>(tally.second);
		++tablets;
	}
	if (tablets == 0) {
		throw ValidationError("recall is undefined: no tablet has ground-truth boxes");
	}
	return sum / static_cast<double>(tablets);
}

double topk_accuracy(std::span<const std::vector<int>> rankings, std::span<const int> labels, std::size_t k) {
	if (rankings.empty() || rankings.size() != labels.size()) {
		throw ValidationError("top-k accuracy needs a non-empty set of aligned rankings and labels");
	}
	if (k == 0) {
		throw ValidationError("top-k accuracy needs k >= 1");
	}
	std::size_t hits = 0;
	for (std::size_t i = 0; i < rankings.size(); ++i) {
		const auto& r = rankings[i];
		const auto end = r.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.size()));
		if (std::find(r.begin(), end, labels[i]) != end) {
			++hits;
		}
	}
	return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

void ConfusionTally::add(int truth, int predicted) {
	const auto n = static_cast<int>(matrix.size());
	if (truth < 0 || truth >= n || predicted < 0 || predicted >= n) {
		throw ValidationError("confusion tally: class id out of range");
	}
	++matrix[static_cast<std::size_t>(truth)][static_cast<std::size_t>(predicted)];
}

std::size_t ConfusionTally::support(std::size_t c) const {
	return std::accumulate(matrix[c].begin(), matrix[c].end(), std::size_t{0});
}

std::size_t ConfusionTally::predicted(std::size_t c) const {
	std::size_t sum = 0;
	for (const auto& row : matrix) {
		sum += row[c];
	}
	return sum;
}

double mean_recall(const ConfusionTally& confusion) {
	double sum = 0.0;
	std::size_t classes = 0;
	for (std::size_t c = 0; c < confusion.num_classes(); ++c) {
		const std::size_t support = confusion.support(c);
		if (support == 0) {
			continue;
		}
		sum += static_cast<double>(confusion.matrix[c][c]) / static_cast<double>(support);
		++classes;
	}
	if (classes == 0) {
		throw ValidationError("mean recall is undefined for an empty confusion tally");
	}
	return sum / static_cast<double>(classes);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
	std::vector<std::size_t> order(v.size());
	std::iota(order.begin(), order.end(), 0);
	std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
	std::vector<double> ranks(v.size());
	std::size_t i = 0;
	while (i < order.size()) {
		std::size_t j = i;
		while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) {
			++j;
		}
		const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
		for (std::size_t t = i; t <= j; ++t) {
			ranks[order[t]] = rank;
		}
		i = j + 1;
	}
	return ranks;
}

} // namespace

double spearman_rho(std::span<const double> x, std::span<const double> y) {
	if (x.size() != y.size() || x.size() < 2) {
		throw ValidationError("Spearman correlation needs two equal-length samples of size >= 2");
	}
	const auto rx = average_ranks(x);
	const auto ry = average_ranks(y);
	const double n = static_cast<double>(x.size());
	const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
	const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
	double sxy = 0.0;
	double sxx = 0.0;
	double syy = 0.0;
	for (std::size_t i = 0; i < rx.size(); ++i) {
		sxy += (rx[i] - mx) * (ry[i] - my);
		sxx += (rx[i] - mx) * (rx[i] - mx);
		syy += (ry[i] - my) * (ry[i] - my);
	}
	if (sxx <= 0.0 || syy <= 0.0) {
		throw ValidationError("Spearman correlation is undefined for a constant sample");
	}
	return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::size_t edit_distance(std::span<const int> a, std::span<const int> b) {
	std::vector<std::size_t> prev(b.size() + 1);
	std::vector<std::size_t> cur(b.size() + 1);
	std::iota(prev.begin(), prev.end(), std::size_t{0});
	for (std::size_t i = 1; i <= a.size(); ++i) {
		cur[0] = i;
		for (std::size_t j = 1; j <= b.size(); ++j) {
			const std::size_t substitute = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
			cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, substitute});
		}
		std::swap(prev, cur);
	}
	return prev[b.size()];
}

double cer(std::span<const int> hypothesis, std::span<const int> reference) {
	return static_cast<double>(edit_distance(hypothesis, reference)) /
	       static_cast<double>(std::max<std::size_t>(1, reference.size()));
}

CorpusCer corpus_cer(std::span<const std::vector<int>> hypotheses, std::span<const std::vector<int>> references,
                     std::span<const std::string> group_of) {
	if (hypotheses.size() != references.size() || group_of.size() != references.size()) {
		throw ValidationError("corpus CER: hypotheses, references and groups are not aligned");
	}
	CorpusCer out;
	std::map<std::string, std::pair<std::size_t, std::size_t>> groups;
	for (std::size_t i = 0; i < references.size(); ++i) {
		const std::size_t d = edit_distance(hypotheses[i], references[i]);
		out.edits += d;
		out.reference_tokens += references[i].size();
		auto& g = groups[group_of[i]];
		g.first += d;
		g.second += references[i].size();
	}
	out.micro = static_cast<double>(out.edits) / static_cast<double>(std::max<std::size_t>(1, out.reference_tokens));
	if (!groups.empty()) {
		double sum = 0.0;
		for (const auto& [name, g] : groups) {
			sum += static_cast<double>(g.first) / static_cast<double>(std::max<std::size_t>(1, g.second));
		}
		out.macro = sum / static_cast<double>(groups.size());
	}
	return out;
}

double detector_fpr(const MatchResult& match, std::span<const ScoredBox> preds, double score_threshold) {
	std::vector<bool> matched(preds.size(), false);
	for (const auto& p : match.pairs) {
		if (p.pred_index >= preds.size()) {
			throw ValidationError("detector_fpr: match refers to a missing prediction");
		}
		matched[p.pred_index] = true;
	}
	std::size_t kept = 0;
	std::size_t false_pos = 0;
	for (std::size_t i = 0; i < preds.size(); ++i) {
		if (preds[i].score >= score_threshold) {
			++kept;
			if (!matched[i]) {
				++false_pos;
			}
		}
	}
	return kept == 0 ? 0.0 : static_cast<double>(false_pos) / static_cast<double>(kept);
}

PerClassReport per_class_report(const ConfusionTally& confusion) {
	PerClassReport report;
	for (std::size_t c = 0; c < confusion.num_classes(); ++c) {
		ClassRow row;
		row.class_id = static_cast<int>(c);
		row.train_count = c < confusion.train_count.size() ? confusion.train_count[c] : 0;
		row.support = confusion.support(c);
		row.predicted = confusion.predicted(c);
		const auto diag = static_cast<double>(confusion.matrix[c][c]);
		if (row.predicted > 0) {
			row.precision = diag / static_cast<double>(row.predicted);
		}
		row.recall = row.support > 0 ? diag / static_cast<double>(row.support) : 0.0;
		if (row.support > 0 && row.train_count > 0) {
			report.log_train_vs_recall.emplace_back(std::log(static_cast<double>(row.train_count)), row.recall);
		}
		report.rows.push_back(row);
	}
	return report;
}

} // namespace signline
