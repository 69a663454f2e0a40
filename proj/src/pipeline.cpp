#include "signline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Core>
#include <openssl/evp.h>
#include <opencv2/core/version.hpp>

#include "signline/error.hpp"
#include "signline/random.hpp"

namespace signline {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json backend_to_json(const BackendSpec& s) {
	return {{"kind", s.kind}, {"path", s.path}, {"command", s.command}, {"url", s.url}, {"params", s.params}};
}

BackendSpec backend_from_json(const json& j, BackendSpec fallback) {
	if (j.is_string()) {
		fallback.kind = j.get<std::string>();
		return fallback;
	}
	fallback.kind = j.value("kind", fallback.kind);
	fallback.path = j.value("path", fallback.path);
	fallback.command = j.value("command", fallback.command);
	fallback.url = j.value("url", fallback.url);
	if (j.contains("params")) {
		fallback.params = j.at("params");
	}
	return fallback;
}

std::string percent_name(const std::string& prefix, double threshold) {
	return prefix + std::to_string(std::lround(threshold * 100.0));
}

} // namespace

void PipelineConfig::validate() const {
	lines.validate();
	auto unit = [](double v) { return v > 0.0 && v <= 1.0; };
	if (!unit(score_threshold) || !unit(alignment_iou)) {
		throw ValidationError("score_threshold and alignment_iou must lie in (0, 1]");
	}
	if (iou_thresholds.empty() || !std::all_of(iou_thresholds.begin(), iou_thresholds.end(), unit)) {
		throw ValidationError("iou_thresholds must be non-empty and lie in (0, 1]");
	}
	if (top_k.empty() || std::any_of(top_k.begin(), top_k.end(), [](int k) { return k < 1; })) {
		throw ValidationError("top_k values must be >= 1");
	}
	if (suggestions < 1) {
		throw ValidationError("suggestions must be >= 1");
	}
	if (folds < 2) {
		throw ValidationError("folds must be >= 2");
	}
	static const std::set<std::string> detectors{"baseline", "fixture", "stream", "http"};
	static const std::set<std::string> classifiers{"centroid", "fixture", "oracle", "stream", "http"};
	if (!detectors.contains(detector.kind)) {
		throw ValidationError("unknown detector kind '" + detector.kind + "'");
	}
	if (!classifiers.contains(classifier.kind)) {
		throw ValidationError("unknown classifier kind '" + classifier.kind + "'");
	}
}

json config_to_json(const PipelineConfig& c) {
	return {{"detector", backend_to_json(c.detector)},
	        {"classifier", backend_to_json(c.classifier)},
	        {"lines",
	         {{"residual_threshold", c.lines.residual_threshold},
	          {"ridge_lambda", c.lines.ridge_lambda},
	          {"max_abs_slope", c.lines.max_abs_slope},
	          {"ransac_iterations", c.lines.ransac_iterations},
	          {"min_line_points", c.lines.min_line_points},
	          {"seed", c.lines.seed},
	          {"outlier_distance",
	           c.lines.outlier_distance == OutlierDistance::perpendicular ? "perpendicular" : "nearest_member"}}},
	        {"adaptive_residual", c.adaptive_residual},
	        {"score_threshold", c.score_threshold},
	        {"iou_thresholds", c.iou_thresholds},
	        {"top_k", c.top_k},
	        {"alignment_iou", c.alignment_iou},
	        {"matcher", c.matcher == Matcher::greedy ? "greedy" : "hungarian"},
	        {"suggestions", c.suggestions},
	        {"folds", c.folds},
	        {"seed", c.seed},
	        {"per_line_cer", c.per_line_cer}};
}

PipelineConfig config_from_json(const json& j) {
	PipelineConfig c;
	try {
		if (j.contains("detector")) {
			c.detector = backend_from_json(j.at("detector"), c.detector);
		}
		if (j.contains("classifier")) {
			c.classifier = backend_from_json(j.at("classifier"), c.classifier);
		}
		if (j.contains("lines")) {
			const json& l = j.at("lines");
			c.lines.residual_threshold = l.value("residual_threshold", c.lines.residual_threshold);
			c.lines.ridge_lambda = l.value("ridge_lambda", c.lines.ridge_lambda);
			c.lines.max_abs_slope = l.value("max_abs_slope", c.lines.max_abs_slope);
			c.lines.ransac_iterations = l.value("ransac_iterations", c.lines.ransac_iterations);
			c.lines.min_line_points = l.value("min_line_points", c.lines.min_line_points);
			c.lines.seed = l.value("seed", c.lines.seed);
			const std::string od = l.value("outlier_distance", std::string("perpendicular"));
			if (od == "perpendicular") {
				c.lines.outlier_distance = OutlierDistance::perpendicular;
			} else if (od == "nearest_member") {
				c.lines.outlier_distance = OutlierDistance::nearest_member;
			} else {
				throw ValidationError("unknown outlier_distance '" + od + "'");
			}
		}
		c.adaptive_residual = j.value("adaptive_residual", c.adaptive_residual);
		c.score_threshold = j.value("score_threshold", c.score_threshold);
		c.iou_thresholds = j.value("iou_thresholds", c.iou_thresholds);
		c.top_k = j.value("top_k", c.top_k);
		c.alignment_iou = j.value("alignment_iou", c.alignment_iou);
		const std::string matcher = j.value("matcher", std::string("greedy"));
		if (matcher == "greedy") {
			c.matcher = Matcher::greedy;
		} else if (matcher == "hungarian") {
			c.matcher = Matcher::hungarian;
		} else {
			throw ValidationError("unknown matcher '" + matcher + "'");
		}
		c.suggestions = j.value("suggestions", c.suggestions);
		c.folds = j.value("folds", c.folds);
		c.seed = j.value("seed", c.seed);
		c.per_line_cer = j.value("per_line_cer", c.per_line_cer);
	} catch (const json::exception& e) {
		throw ParseError(std::string("config: ") + e.what());
	}
	c.validate();
	return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open config " + path.string());
	}
	json j;
	try {
		in >> j;
	} catch (const json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
	return config_from_json(j);
}

// Backends ---------------------------------------------------------------------------

std::shared_ptr<Detector> make_detector(const BackendSpec& spec, std::size_t num_classes) {
	if (spec.kind == "baseline") {
		return std::make_shared<BaselineDetector>(detector_params_from_json(spec.params));
	}
	if (spec.kind == "fixture") {
		return load_fixture_predictions(spec.path).detector;
	}
	if (spec.kind == "stream") {
		return std::make_shared<StreamBackend>(spec.command, num_classes);
	}
	if (spec.kind == "http") {
		return std::make_shared<HttpBackend>(spec.url, num_classes);
	}
	throw ValidationError("unknown detector kind '" + spec.kind + "'");
}

ClassifierProvider make_classifier_provider(const BackendSpec& spec, std::shared_ptr<const Dataset> truth,
                                            const ImageStore& images) {
	const std::size_t c = truth ? truth->num_classes() : 0;
	if (spec.kind == "centroid") {
		if (!spec.path.empty()) {
			auto fixed = std::make_shared<CentroidClassifier>(load_centroid_model(spec.path));
			return [fixed](const Dataset&) { return fixed; };
		}
		const int side = spec.params.value("side", kCropSide);
		return [&images, side](const Dataset& train) {
			return std::make_shared<CentroidClassifier>(train_centroid_classifier(train, images, side));
		};
	}
	std::shared_ptr<Classifier> fixed;
	if (spec.kind == "fixture") {
		Predictions p = load_predictions(spec.path);
		std::size_t n = c;
		if (n == 0) {
			n = load_fixture_predictions(spec.path).classifier->num_classes();
		}
		fixed = fixture_backends(std::move(p), n).classifier;
	} else if (spec.kind == "oracle") {
		if (!truth) {
			throw ValidationError("oracle classifier needs ground truth");
		}
		fixed = std::make_shared<OracleClassifier>(truth);
	} else if (spec.kind == "stream") {
		fixed = std::make_shared<StreamBackend>(spec.command, c);
	} else if (spec.kind == "http") {
		fixed = std::make_shared<HttpBackend>(spec.url, c);
	} else {
		throw ValidationError("unknown classifier kind '" + spec.kind + "'");
	}
	return [fixed](const Dataset&) { return fixed; };
}

// Transliteration ----------------------------------------------------------------------

json TransliterationResult::to_json(const Dataset* names) const {
	json signs_j = json::array();
	for (const auto& s : signs) {
		json sug = json::array();
		for (const auto& g : s.suggestions) {
			json e{{"class_id", g.class_id}, {"score", g.score}};
			if (names != nullptr) {
				e["class_name"] = names->class_name(g.class_id);
			}
			sug.push_back(std::move(e));
		}
		json sj{{"bbox", s.bbox}, {"detection_score", s.detection_score}, {"line", s.line}, {"suggestions", sug}};
		if (!s.box_id.empty()) {
			sj["box_id"] = s.box_id;
		}
		signs_j.push_back(std::move(sj));
	}
	json out{{"image_id", image_id}, {"signs", signs_j}, {"lines", lines}, {"sequence", sequence}};
	if (names != nullptr) {
		std::vector<std::vector<std::string>> text;
		for (const auto& line : lines) {
			std::vector<std::string> row;
			for (const int c : line) {
				row.push_back(names->class_name(c));
			}
			text.push_back(std::move(row));
		}
		out["text"] = text;
	}
	return out;
}

LayoutResult layout_boxes(std::span<const BoundingBox> boxes, const PipelineConfig& config) {
	std::vector<Point2> points;
	points.reserve(boxes.size());
	for (const auto& b : boxes) {
		points.push_back(centroid(b));
	}
	LineConfig lc = config.lines;
	if (config.adaptive_residual) {
		lc.residual_threshold = default_residual_threshold(boxes);
	}
	return sequential_ransac(points, lc);
}

namespace {

template <typename F>
auto staged(const char* stage, F&& fn) -> decltype(fn()) {
	try {
		return fn();
	} catch (const std::exception& e) {
		throw BackendError(std::string(stage) + ": " + e.what());
	}
}

std::vector<ScoreVector> classify_checked(Classifier& classifier, const ImageSource& image,
                                          std::span<const BoundingBox> boxes) {
	if (boxes.empty()) {
		return {};
	}
	auto scores = staged("classify", [&] { return classifier.classify(image, boxes); });
	if (scores.size() != boxes.size()) {
		throw BackendError("classify: expected " + std::to_string(boxes.size()) + " score vectors, got " +
		                   std::to_string(scores.size()));
	}
	for (const auto& s : scores) {
		if (s.scores.size() != classifier.num_classes() || s.scores.empty()) {
			throw BackendError("classify: score vector length " + std::to_string(s.scores.size()) +
			                   " does not match the class count " + std::to_string(classifier.num_classes()));
		}
	}
	return scores;
}

std::vector<ScoredBox> above_threshold(const DetectionSet& det, double threshold) {
	std::vector<ScoredBox> out;
	for (const auto& b : det.boxes) {
		if (b.score >= threshold) {
			out.push_back(b);
		}
	}
	return out;
}

TransliterationResult assemble(const std::string& image_id, std::span<const ScoredBox> boxes,
                               std::span<const ScoreVector> scores, const PipelineConfig& config) {
	TransliterationResult r;
	r.image_id = image_id;
	if (boxes.empty()) {
		return r;
	}
	std::vector<BoundingBox> plain;
	plain.reserve(boxes.size());
	for (const auto& b : boxes) {
		plain.push_back(b.bbox);
	}
	const LayoutResult layout = layout_boxes(plain, config);
	for (std::size_t l = 0; l < layout.lines.size(); ++l) {
		std::vector<int> line;
		for (const auto idx : layout.lines[l].members) {
			TransliteratedSign s;
			s.bbox = boxes[idx].bbox;
			s.detection_score = boxes[idx].score;
			s.box_id = boxes[idx].source_id;
			s.line = l;
			const auto ranking = scores[idx].ranking();
			const std::size_t n = std::min(ranking.size(), static_cast<std::size_t>(config.suggestions));
			for (std::size_t k = 0; k < n; ++k) {
				s.suggestions.push_back({ranking[k], scores[idx].scores[static_cast<std::size_t>(ranking[k])]});
			}
			line.push_back(ranking.front());
			r.sequence.push_back(ranking.front());
			r.signs.push_back(std::move(s));
		}
		r.lines.push_back(std::move(line));
	}
	return r;
}

} // namespace

TransliterationResult run_transliterate(const ImageSource& image, Detector& detector, Classifier& classifier,
                                        const PipelineConfig& config) {
	config.validate();
	const DetectionSet det = staged("detect", [&] { return detector.detect(image); });
	const auto kept = above_threshold(det, config.score_threshold);
	std::vector<BoundingBox> plain;
	for (const auto& b : kept) {
		plain.push_back(b.bbox);
	}
	const auto scores = classify_checked(classifier, image, plain);
	return assemble(image.image_id, kept, scores, config);
}

// Evaluation -------------------------------------------------------------------------------

double FoldReport::metric(const std::string& name) const {
	for (const auto& [n, v] : metrics) {
		if (n == name) {
			return v;
		}
	}
	throw NotFoundError("no metric named " + name);
}

namespace {

json class_rows_json(const PerClassReport& report) {
	json rows = json::array();
	for (const auto& r : report.rows) {
		rows.push_back({{"class_id", r.class_id},
		                {"train_count", r.train_count},
		                {"support", r.support},
		                {"predicted", r.predicted},
		                {"precision", r.precision ? json(*r.precision) : json(nullptr)},
		                {"recall", r.recall}});
	}
	return rows;
}

json metric_value(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

json FoldReport::to_json() const {
	json m = json::array();
	for (const auto& [n, v] : metrics) {
		m.push_back({{"name", n}, {"value", metric_value(v)}});
	}
	return {{"fold", fold},
	        {"train_images", train_images},
	        {"test_images", test_images},
	        {"metrics", m},
	        {"per_class", class_rows_json(per_class)}};
}

std::string AggregateRow::formatted() const {
	if (!std::isfinite(mean)) {
		return "n/a";
	}
	std::ostringstream s;
	s << std::fixed << std::setprecision(3) << mean << " (" << std << ")";
	return s.str();
}

json EvalReport::to_json() const {
	json f = json::array();
	for (const auto& fold : folds) {
		f.push_back(fold.to_json());
	}
	json a = json::array();
	for (const auto& row : aggregate) {
		a.push_back({{"name", row.name},
		             {"mean", metric_value(row.mean)},
		             {"std", metric_value(row.std)},
		             {"folds", row.folds},
		             {"formatted", row.formatted()}});
	}
	return {{"folds", f}, {"aggregate", a}};
}

std::string EvalReport::table() const {
	std::ostringstream s;
	s << std::left << std::setw(18) << "metric";
	for (const auto& f : folds) {
		s << std::right << std::setw(9) << ("fold" + std::to_string(f.fold));
	}
	s << "   mean (std)\n";
	for (const auto& row : aggregate) {
		s << std::left << std::setw(18) << row.name;
		for (const auto& f : folds) {
			const double v = f.metric(row.name);
			std::ostringstream cell;
			if (std::isfinite(v)) {
				cell << std::fixed << std::setprecision(3) << v;
			} else {
				cell << "n/a";
			}
			s << std::right << std::setw(9) << cell.str();
		}
		s << "   " << row.formatted() << '\n';
	}
	return s.str();
}

std::string EvalReport::per_class_csv(const Dataset& names) const {
	std::ostringstream s;
	s << "fold,class_id,class_name,train_count,support,predicted,precision,recall\n";
	s << std::setprecision(17);
	for (const auto& f : folds) {
		for (const auto& r : f.per_class.rows) {
			s << f.fold << ',' << r.class_id << ',' << names.class_name(r.class_id) << ',' << r.train_count << ','
			  << r.support << ',' << r.predicted << ',';
			if (r.precision) {
				s << *r.precision;
			}
			s << ',' << r.recall << '\n';
		}
	}
	return s.str();
}

std::vector<AggregateRow> aggregate_folds(std::span<const FoldReport> folds) {
	std::vector<AggregateRow> out;
	if (folds.empty()) {
		return out;
	}
	for (const auto& [name, unused] : folds.front().metrics) {
		(void)unused;
		std::vector<double> values;
		for (const auto& f : folds) {
			const double v = f.metric(name);
			if (std::isfinite(v)) {
				values.push_back(v);
			}
		}
		AggregateRow row{name, kNaN, kNaN, values.size()};
		if (!values.empty()) {
			double sum = 0.0;
			for (const double v : values) {
				sum += v;
			}
			row.mean = sum / static_cast<double>(values.size());
			double ss = 0.0;
			for (const double v : values) {
				ss += (v - row.mean) * (v - row.mean);
			}
			row.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
		}
		out.push_back(row);
	}
	return out;
}

FoldReport evaluate_fold(const Dataset& train, const Dataset& test, Detector& detector, Classifier& classifier,
                         const ImageStore& images, const PipelineConfig& config, int fold) {
	config.validate();
	const auto train_tablets = train.tablet_ids();
	const std::set<std::string> train_set(train_tablets.begin(), train_tablets.end());
	for (const auto& img : test.images) {
		if (train_set.contains(img.tablet_id)) {
			throw ValidationError("tablet " + img.tablet_id + " appears in both the training and the test split");
		}
	}
	if (classifier.num_classes() != test.num_classes()) {
		throw ValidationError("classifier has " + std::to_string(classifier.num_classes()) +
		                      " classes, dataset catalog has " + std::to_string(test.num_classes()));
	}

	FoldReport report;
	report.fold = fold;
	for (const auto& img : train.images) {
		report.train_images.push_back(img.image_id);
	}
	const std::size_t c = test.num_classes();
	ConfusionTally gt_confusion(c);
	ConfusionTally pred_confusion(c);
	for (const auto& img : train.images) {
		for (const auto& a : img.annotations) {
			++gt_confusion.train_count.at(static_cast<std::size_t>(a.class_id));
		}
	}
	pred_confusion.train_count = gt_confusion.train_count;

	std::vector<std::vector<ScoredBox>> all_preds;
	std::vector<std::vector<BoundingBox>> all_gts;
	std::vector<std::string> tablet_of;
	std::vector<std::vector<int>> gt_rankings;
	std::vector<int> gt_labels;
	std::vector<std::vector<int>> pred_rankings;
	std::vector<int> pred_labels;
	std::vector<std::vector<int>> hyps;
	std::vector<std::vector<int>> refs;
	std::vector<std::string> groups;
	std::size_t false_positives = 0;
	std::size_t kept_predictions = 0;

	for (const auto& img : test.images) {
		report.test_images.push_back(img.image_id);
		const ImageSource src = images.source(img);
		const auto gts = boxes_of(img.annotations);
		const DetectionSet det = staged("detect", [&] { return detector.detect(src); });
		all_preds.push_back(det.boxes);
		all_gts.push_back(gts);
		tablet_of.push_back(img.tablet_id);

		const auto gt_scores = classify_checked(classifier, src, gts);
		for (std::size_t k = 0; k < gts.size(); ++k) {
			const auto ranking = gt_scores[k].ranking();
			gt_confusion.add(img.annotations[k].class_id, ranking.front());
			gt_rankings.push_back(ranking);
			gt_labels.push_back(img.annotations[k].class_id);
		}

		const auto kept = above_threshold(det, config.score_threshold);
		std::vector<BoundingBox> kept_plain;
		for (const auto& b : kept) {
			kept_plain.push_back(b.bbox);
		}
		const auto kept_scores = classify_checked(classifier, src, kept_plain);
		const MatchResult m = match(config.matcher, kept, gts, config.alignment_iou);
		const ImputedLabels imputed = impute_labels(m, kept, img.annotations);
		false_positives += imputed.false_positives;
		kept_predictions += kept.size();
		for (std::size_t k = 0; k < kept.size(); ++k) {
			if (imputed.boxes[k].false_positive()) {
				continue;
			}
			const auto ranking = kept_scores[k].ranking();
			pred_confusion.add(*imputed.boxes[k].class_id, ranking.front());
			pred_rankings.push_back(ranking);
			pred_labels.push_back(*imputed.boxes[k].class_id);
		}

		const TransliterationResult tr = assemble(img.image_id, kept, kept_scores, config);
		std::vector<int> reference;
		for (const auto& a : img.annotations) {
			reference.push_back(a.class_id);
		}
		if (!config.per_line_cer) {
			hyps.push_back(tr.sequence);
			refs.push_back(std::move(reference));
			groups.push_back(img.tablet_id);
		} else {
			std::vector<std::vector<int>> ref_lines;
			if (!gts.empty()) {
				const LayoutResult gt_layout = layout_boxes(gts, config);
				for (const auto& line : gt_layout.lines) {
					std::vector<int> row;
					for (const auto idx : line.members) {
						row.push_back(img.annotations[idx].class_id);
					}
					ref_lines.push_back(std::move(row));
				}
			}
			const std::size_t n = std::max(ref_lines.size(), tr.lines.size());
			for (std::size_t l = 0; l < n; ++l) {
				hyps.push_back(l < tr.lines.size() ? tr.lines[l] : std::vector<int>{});
				refs.push_back(l < ref_lines.size() ? ref_lines[l] : std::vector<int>{});
				groups.push_back(img.tablet_id);
			}
		}
	}

	MetricList& out = report.metrics;
	std::size_t total_gt = 0;
	for (const auto& g : all_gts) {
		total_gt += g.size();
	}
	for (const double t : config.iou_thresholds) {
		out.emplace_back(percent_name("ap", t), total_gt > 0 ? average_precision(all_preds, all_gts, t).ap : kNaN);
	}
	for (const double t : config.iou_thresholds) {
		out.emplace_back(percent_name("recall", t), total_gt > 0 ? recall_at(all_preds, all_gts, tablet_of, t,
		                                                                      config.score_threshold)
		                                                         : kNaN);
	}
	for (const int k : config.top_k) {
		out.emplace_back("gt_top" + std::to_string(k),
		                 gt_labels.empty() ? kNaN : topk_accuracy(gt_rankings, gt_labels, static_cast<std::size_t>(k)));
	}
	out.emplace_back("gt_mean_recall", gt_labels.empty() ? kNaN : mean_recall(gt_confusion));
	report.per_class = per_class_report(gt_confusion);
	double rho = kNaN;
	{
		std::vector<double> counts;
		std::vector<double> recalls;
		for (const auto& r : report.per_class.rows) {
			if (r.support > 0) {
				counts.push_back(static_cast<double>(r.train_count));
				recalls.push_back(r.recall);
			}
		}
		if (counts.size() >= 2) {
			try {
				rho = spearman_rho(counts, recalls);
			} catch (const ValidationError&) {
				rho = kNaN; // constant counts or recalls: undefined
			}
		}
	}
	out.emplace_back("gt_spearman", rho);
	for (const int k : config.top_k) {
		out.emplace_back("pred_top" + std::to_string(k), pred_labels.empty() ? kNaN
		                                                                     : topk_accuracy(pred_rankings, pred_labels,
		                                                                                     static_cast<std::size_t>(k)));
	}
	out.emplace_back("pred_mean_recall", pred_labels.empty() ? kNaN : mean_recall(pred_confusion));
	out.emplace_back("detector_fpr", kept_predictions == 0 ? 0.0
	                                                       : static_cast<double>(false_positives) /
	                                                             static_cast<double>(kept_predictions));
	const CorpusCer ce = corpus_cer(hyps, refs, groups);
	out.emplace_back("cer", ce.micro);
	out.emplace_back("cer_macro", ce.macro);
	return report;
}

EvalReport run_evaluate(const Dataset& dataset, const FoldAssignment& folds, const PipelineConfig& config,
                        const ImageStore& images, Detector& detector, const ClassifierProvider& classifier_for) {
	EvalReport report;
	for (int f = 0; f < folds.k; ++f) {
		const FoldSplit split = fold_partition(dataset, folds, f);
		const auto classifier = staged("train", [&] { return classifier_for(split.train); });
		report.folds.push_back(evaluate_fold(split.train, split.test, detector, *classifier, images, config, f));
	}
	report.aggregate = aggregate_folds(report.folds);
	return report;
}

// Ablation -------------------------------------------------------------------------------------

json AblationReport::to_json() const {
	json pts = json::array();
	for (const auto& p : points) {
		json values = json::array();
		for (const double v : p.values) {
			values.push_back(metric_value(v));
		}
		pts.push_back({{"fraction", p.fraction},
		               {"mean", metric_value(p.mean)},
		               {"std", metric_value(p.std)},
		               {"values", values}});
	}
	return {{"metric", metric}, {"test_fold", test_fold}, {"points", pts}};
}

std::string AblationReport::csv() const {
	std::ostringstream s;
	s << "fraction,mean,std\n" << std::setprecision(17);
	for (const auto& p : points) {
		s << p.fraction << ',' << p.mean << ',' << p.std << '\n';
	}
	return s.str();
}

AblationReport run_ablation(const Dataset& dataset, const FoldAssignment& folds, int test_fold,
                            std::span<const double> fractions, int repeats, const std::string& metric,
                            const PipelineConfig& config, const ImageStore& images, Detector& detector,
                            const ClassifierProvider& classifier_for) {
	if (repeats < 1) {
		throw ValidationError("repeats must be >= 1");
	}
	if (fractions.empty()) {
		throw ValidationError("at least one fraction is required");
	}
	for (const double f : fractions) {
		if (!(f > 0.0 && f <= 1.0)) {
			throw ValidationError("fractions must lie in (0, 1]");
		}
	}
	const FoldSplit split = fold_partition(dataset, folds, test_fold);
	if (split.train.images.empty()) {
		throw ValidationError("training split is empty");
	}
	AblationReport report;
	report.metric = metric;
	report.test_fold = test_fold;
	for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
		AblationPoint point;
		point.fraction = fractions[fi];
		std::vector<FoldReport> runs;
		for (int r = 0; r < repeats; ++r) {
			const std::uint64_t seed = derive_seed(config.seed, fi * 1000003ULL + static_cast<std::uint64_t>(r));
			const Dataset sub = subsample_training(split.train, fractions[fi], seed, SampleUnit::image);
			if (sub.images.empty()) {
				throw ValidationError("fraction " + std::to_string(fractions[fi]) + " leaves no training images");
			}
			const auto classifier = staged("train", [&] { return classifier_for(sub); });
			runs.push_back(evaluate_fold(sub, split.test, detector, *classifier, images, config, test_fold));
			point.values.push_back(runs.back().metric(metric));
		}
		std::vector<double> finite;
		for (const double v : point.values) {
			if (std::isfinite(v)) {
				finite.push_back(v);
			}
		}
		point.mean = kNaN;
		point.std = kNaN;
		if (!finite.empty()) {
			double sum = 0.0;
			for (const double v : finite) {
				sum += v;
			}
			point.mean = sum / static_cast<double>(finite.size());
			double ss = 0.0;
			for (const double v : finite) {
				ss += (v - point.mean) * (v - point.mean);
			}
			point.std = finite.size() > 1 ? std::sqrt(ss / static_cast<double>(finite.size() - 1)) : 0.0;
		}
		report.points.push_back(std::move(point));
		report.runs.push_back(std::move(runs));
	}
	return report;
}

// Manifest -----------------------------------------------------------------------------------------

std::string sha256_hex(std::string_view bytes) {
	unsigned char digest[EVP_MAX_MD_SIZE];
	unsigned int len = 0;
	if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
		throw Error("SHA-256 failed");
	}
	std::ostringstream s;
	for (unsigned int i = 0; i < len; ++i) {
		s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
	}
	return s.str();
}

std::string sha256_file(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw IoError("cannot open " + path.string());
	}
	std::ostringstream buf;
	buf << in.rdbuf();
	return sha256_hex(buf.str());
}

namespace {

std::string utc_now() {
	const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
	std::tm tm{};
	gmtime_r(&t, &tm);
	char buf[32];
	std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
	return buf;
}

} // namespace

void RunManifest::add_input(const std::filesystem::path& path) { input_hashes[path.string()] = sha256_file(path); }

json RunManifest::to_json() const {
	return {{"command", command},       {"config", config}, {"input_hashes", input_hashes}, {"seeds", seeds},
	        {"versions", versions},     {"folds", folds},   {"started", started},           {"finished", finished}};
}

RunManifest begin_manifest(const std::string& command, json config) {
	RunManifest m;
	m.command = command;
	m.config = std::move(config);
	m.started = utc_now();
	m.versions["signline"] = kVersion;
	m.versions["opencv"] = CV_VERSION;
	m.versions["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
	                      std::to_string(EIGEN_MINOR_VERSION);
	m.versions["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
	                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
	                              std::to_string(NLOHMANN_JSON_VERSION_PATCH);
	return m;
}

void write_manifest(RunManifest& manifest, const std::filesystem::path& dir) {
	manifest.finished = utc_now();
	std::filesystem::create_directories(dir);
	std::ofstream out(dir / "manifest.json");
	if (!out) {
		throw IoError("cannot write " + (dir / "manifest.json").string());
	}
	out << manifest.to_json().dump(1, '\t') << '\n';
}

} // namespace signline
