// signline command-line front end.
#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "signline/backends.hpp"
#include "signline/baseline.hpp"
#include "signline/corpus_stats.hpp"
#include "signline/dataset.hpp"
#include "signline/embedding.hpp"
#include "signline/error.hpp"
#include "signline/line_layout.hpp"
#include "signline/overlay.hpp"
#include "signline/pipeline.hpp"
#include "signline/random.hpp"
#include "signline/review.hpp"
#include "signline/review_server.hpp"
#include "signline/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace signline;

namespace {

struct Globals {
	std::string config_path;
	std::optional<std::uint64_t> seed;
	std::string out = "out";
};

struct DataArgs {
	std::string dataset;
	std::string images; // defaults to the dataset file's directory
};

struct BackendArgs {
	std::string detector;
	std::string classifier;
	std::string fixture;
	std::string model;
	std::string command;
	std::string url;
};

json read_json(const fs::path& path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open " + path.string());
	}
	try {
		return json::parse(in);
	} catch (const json::exception& e) {
		throw ParseError(path.string() + ": " + e.what());
	}
}

void write_text(const fs::path& path, const std::string& text) {
	fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
	std::ofstream out(path);
	if (!out) {
		throw IoError("cannot write " + path.string());
	}
	out << text;
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(1, '\t') + "\n"); }

json global_json(const Globals& g) { return g.config_path.empty() ? json::object() : read_json(g.config_path); }

PipelineConfig pipeline_config(const Globals& g, const BackendArgs& b) {
	json j = global_json(g);
	PipelineConfig c = config_from_json(j);
	if (g.seed) {
		c.seed = *g.seed;
		c.lines.seed = *g.seed;
	}
	if (!b.detector.empty()) {
		c.detector.kind = b.detector;
	}
	if (!b.classifier.empty()) {
		c.classifier.kind = b.classifier;
	}
	if (!b.fixture.empty()) {
		if (c.detector.kind == "fixture") {
			c.detector.path = b.fixture;
		}
		if (c.classifier.kind == "fixture") {
			c.classifier.path = b.fixture;
		}
	}
	if (!b.model.empty()) {
		c.classifier.path = b.model;
	}
	for (BackendSpec* s : {&c.detector, &c.classifier}) {
		if (!b.command.empty() && s->kind == "stream") {
			s->command = b.command;
		}
		if (!b.url.empty() && s->kind == "http") {
			s->url = b.url;
		}
	}
	c.validate();
	return c;
}

void add_data(CLI::App* cmd, DataArgs& d, bool images = true) {
	cmd->add_option("--dataset", d.dataset, "Dataset JSON")->required()->check(CLI::ExistingFile);
	if (images) {
		cmd->add_option("--images", d.images, "Root directory for image file names (default: dataset directory)");
	}
}

void add_backends(CLI::App* cmd, BackendArgs& b) {
	cmd->add_option("--detector", b.detector, "baseline | fixture | stream | http");
	cmd->add_option("--classifier", b.classifier, "centroid | fixture | oracle | stream | http");
	cmd->add_option("--fixture", b.fixture, "Predictions JSON replayed by fixture backends");
	cmd->add_option("--model", b.model, "Trained centroid model JSON");
	cmd->add_option("--command", b.command, "Command line of a stream backend");
	cmd->add_option("--url", b.url, "URL of an HTTP backend");
}

fs::path image_root(const DataArgs& d) {
	return d.images.empty() ? fs::path(d.dataset).parent_path() : fs::path(d.images);
}

RunManifest manifest_for(const std::string& command, const json& config, const Globals& g) {
	RunManifest m = begin_manifest(command, config);
	if (!g.config_path.empty()) {
		m.add_input(g.config_path);
	}
	return m;
}

FoldAssignment folds_from_json(const json& j) {
	FoldAssignment f;
	try {
		f.k = j.at("k").get<int>();
		f.seed = j.at("seed").get<std::uint64_t>();
		f.tablet_to_fold = j.at("tablets").get<std::map<std::string, int>>();
	} catch (const json::exception& e) {
		throw ParseError(std::string("folds: ") + e.what());
	}
	return f;
}

json folds_to_json(const FoldAssignment& f) { return {{"k", f.k}, {"seed", f.seed}, {"tablets", f.tablet_to_fold}}; }

json fold_ids_json(const EvalReport& report) {
	json folds = json::array();
	for (const auto& f : report.folds) {
		folds.push_back({{"fold", f.fold}, {"train_images", f.train_images}, {"test_images", f.test_images}});
	}
	return folds;
}

std::vector<const ImageRecord*> selected_images(const Dataset& d, const std::vector<std::string>& ids) {
	std::vector<const ImageRecord*> out;
	if (ids.empty()) {
		for (const auto& img : d.images) {
			out.push_back(&img);
		}
		return out;
	}
	for (const auto& id : ids) {
		const ImageRecord* img = d.find_image(id);
		if (img == nullptr) {
			throw NotFoundError("unknown image " + id);
		}
		out.push_back(img);
	}
	return out;
}

} // namespace

int main(int argc, char** argv) {
	CLI::App app{"Sign detection, classification and line layout toolkit for tablet images"};
	app.require_subcommand(1);
	Globals g;
	app.add_option("--config", g.config_path, "JSON configuration file")->check(CLI::ExistingFile);
	app.add_option("--seed", g.seed, "Seed overriding the configuration");
	app.add_option("--out", g.out, "Output directory")->capture_default_str();

	// ingest
	DataArgs ingest_data;
	bool do_crop = false;
	double margin = kDefaultCropMargin;
	bool do_relabel = false;
	std::string drop_list;
	bool prune = false;
	bool add_missing = false;
	int min_dim = 0;
	std::string denylist;
	auto* ingest = app.add_subcommand("ingest", "Validate, crop, relabel and filter a dataset");
	add_data(ingest, ingest_data, false);
	ingest->add_flag("--crop", do_crop, "Crop images to their annotation extent");
	ingest->add_option("--margin", margin, "Crop margin as a fraction of the extent")->capture_default_str();
	ingest->add_flag("--relabel", do_relabel, "Map numeral signs 1 -> DIŠ and 10 -> U");
	ingest->add_option("--drop", drop_list, "Label list of annotations to drop while relabeling")
	    ->check(CLI::ExistingFile);
	ingest->add_flag("--prune", prune, "Remove classes left without annotations");
	ingest->add_flag("--add-missing", add_missing, "Add missing relabel targets to the catalog");
	ingest->add_option("--min-dim", min_dim, "Drop images whose width or height is below this");
	ingest->add_option("--denylist", denylist, "File of image ids to drop")->check(CLI::ExistingFile);

	// stats
	DataArgs stats_data;
	std::vector<int> coverage_n{50};
	auto* stats = app.add_subcommand("stats", "Rank-frequency table and power-law fits");
	add_data(stats, stats_data, false);
	stats->add_option("--coverage", coverage_n, "Top-N coverage values to report")->capture_default_str();

	// split
	DataArgs split_data;
	int k = 5;
	auto* split = app.add_subcommand("split", "Assign tablets to folds");
	add_data(split, split_data, false);
	split->add_option("--k", k, "Number of folds")->capture_default_str();

	// train-baseline
	DataArgs train_data;
	int side = kCropSide;
	auto* train = app.add_subcommand("train-baseline", "Train the centroid classifier");
	add_data(train, train_data);
	train->add_option("--side", side, "Crop side in pixels")->capture_default_str();

	// detect / classify / lines / transliterate
	DataArgs detect_data;
	BackendArgs detect_backends;
	std::vector<std::string> detect_ids;
	auto* detect = app.add_subcommand("detect", "Run the detector; writes predictions.json");
	add_data(detect, detect_data);
	add_backends(detect, detect_backends);
	detect->add_option("--image-id", detect_ids, "Restrict to these images");

	DataArgs classify_data;
	BackendArgs classify_backends;
	std::string classify_boxes;
	std::vector<std::string> classify_ids;
	auto* classify = app.add_subcommand("classify", "Score boxes (ground truth or a predictions file)");
	add_data(classify, classify_data);
	add_backends(classify, classify_backends);
	classify->add_option("--boxes", classify_boxes, "Predictions JSON whose boxes are scored (default: ground truth)")
	    ->check(CLI::ExistingFile);
	classify->add_option("--image-id", classify_ids, "Restrict to these images");

	DataArgs lines_data;
	std::string lines_boxes;
	std::vector<std::string> lines_ids;
	auto* lines = app.add_subcommand("lines", "Line layout of boxes with SVG overlays");
	add_data(lines, lines_data);
	lines->add_option("--boxes", lines_boxes, "Predictions JSON to lay out (default: ground truth)")
	    ->check(CLI::ExistingFile);
	lines->add_option("--image-id", lines_ids, "Restrict to these images");

	DataArgs tr_data;
	BackendArgs tr_backends;
	std::vector<std::string> tr_ids;
	auto* translit = app.add_subcommand("transliterate", "Detect, classify and order signs");
	add_data(translit, tr_data);
	add_backends(translit, tr_backends);
	translit->add_option("--image-id", tr_ids, "Restrict to these images");

	// evaluate / ablate
	DataArgs eval_data;
	BackendArgs eval_backends;
	std::string eval_folds;
	auto* evaluate = app.add_subcommand("evaluate", "Fold-based evaluation");
	add_data(evaluate, eval_data);
	add_backends(evaluate, eval_backends);
	evaluate->add_option("--folds", eval_folds, "Fold assignment from `split` (default: split with config)")
	    ->check(CLI::ExistingFile);

	DataArgs abl_data;
	BackendArgs abl_backends;
	std::string abl_folds;
	std::vector<double> fractions{0.1, 0.25, 0.5, 0.75, 1.0};
	int repeats = 10;
	int test_fold = 0;
	std::string abl_metric = "gt_top1";
	auto* ablate = app.add_subcommand("ablate", "Training-set subsampling curve");
	add_data(ablate, abl_data);
	add_backends(ablate, abl_backends);
	ablate->add_option("--folds", abl_folds, "Fold assignment from `split`")->check(CLI::ExistingFile);
	ablate->add_option("--fractions", fractions, "Training fractions")->delimiter(',')->capture_default_str();
	ablate->add_option("--repeats", repeats, "Subsamples per fraction")->capture_default_str();
	ablate->add_option("--test-fold", test_fold, "Held-out fold")->capture_default_str();
	ablate->add_option("--metric", abl_metric, "Metric to track")->capture_default_str();

	// embed
	DataArgs embed_data;
	BackendArgs embed_backends;
	int dims = 50;
	TSNEConfig tsne_cfg;
	std::size_t purity_k = 10;
	auto* embed = app.add_subcommand("embed", "Logit embeddings, PCA, t-SNE and cluster purity");
	add_data(embed, embed_data);
	add_backends(embed, embed_backends);
	embed->add_option("--dims", dims, "PCA components")->capture_default_str();
	embed->add_option("--perplexity", tsne_cfg.perplexity)->capture_default_str();
	embed->add_option("--iterations", tsne_cfg.iterations)->capture_default_str();
	embed->add_option("--k", purity_k, "Neighbours for purity")->capture_default_str();

	// synth
	SynthConfig synth_cfg;
	bool synth_fixture = false;
	auto* synth = app.add_subcommand("synth", "Generate a synthetic tablet corpus");
	synth->add_option("--tablets", synth_cfg.tablets)->capture_default_str();
	synth->add_option("--classes", synth_cfg.num_classes)->capture_default_str();
	synth->add_option("--lines", synth_cfg.lines_per_image)->capture_default_str();
	synth->add_option("--signs", synth_cfg.signs_per_line)->capture_default_str();
	synth->add_option("--slope-min", synth_cfg.slope_min)->capture_default_str();
	synth->add_option("--slope-max", synth_cfg.slope_max)->capture_default_str();
	synth->add_option("--jitter", synth_cfg.position_jitter)->capture_default_str();
	synth->add_option("--noise", synth_cfg.noise_sigma)->capture_default_str();
	synth->add_option("--zipf", synth_cfg.zipf_exponent)->capture_default_str();
	synth->add_flag("--with-fixture", synth_fixture, "Also write ground truth as predictions.json");

	// serve
	DataArgs serve_data;
	std::string serve_predictions;
	std::string sessions_dir;
	ReviewServerOptions serve_opts;
	std::size_t max_suggestions = 5;
	auto* serve = app.add_subcommand("serve", "Run the review HTTP service");
	add_data(serve, serve_data);
	serve->add_option("--predictions", serve_predictions, "Predictions JSON with class scores")
	    ->required()
	    ->check(CLI::ExistingFile);
	serve->add_option("--sessions", sessions_dir, "Session log directory (default: <out>/sessions)");
	serve->add_option("--host", serve_opts.host)->capture_default_str();
	serve->add_option("--port", serve_opts.port)->capture_default_str();
	serve->add_option("--static", serve_opts.static_dir, "Browser client bundle to serve at /");
	serve->add_option("--suggestions", max_suggestions, "Suggestions kept per hotspot")->capture_default_str();

	CLI11_PARSE(app, argc, argv);

	try {
		const fs::path out = g.out;
		fs::create_directories(out);

		if (*ingest) {
			RunManifest m = manifest_for("ingest", {{"crop", do_crop}, {"margin", margin}, {"relabel", do_relabel},
			                                        {"prune", prune}, {"min_dim", min_dim}},
			                             g);
			m.add_input(ingest_data.dataset);
			Dataset d = load_dataset(ingest_data.dataset);
			if (do_crop) {
				for (auto& img : d.images) {
					img = crop_to_annotations(img, margin).image;
				}
			}
			if (do_relabel) {
				std::set<std::string> drop;
				if (!drop_list.empty()) {
					drop = load_label_list(drop_list);
					m.add_input(drop_list);
				}
				d = relabel_numerals(d, default_numeral_mapping(), drop, {prune, add_missing});
			}
			json removed = json::array();
			if (min_dim > 0 || !denylist.empty()) {
				std::set<std::string> deny;
				if (!denylist.empty()) {
					deny = load_label_list(denylist);
					m.add_input(denylist);
				}
				FilterResult fr = filter_quality(d, min_dim, deny);
				for (const auto& r : fr.removed) {
					removed.push_back({{"image_id", r.image_id}, {"reason", r.reason}});
				}
				d = std::move(fr.dataset);
			}
			save_dataset(d, out / "dataset.json");
			write_json(out / "removed.json", removed);
			write_manifest(m, out);
			std::cout << d.images.size() << " images, " << d.num_annotations() << " annotations, "
			          << d.num_classes() << " classes -> " << (out / "dataset.json").string() << '\n';
		} else if (*stats) {
			RunManifest m = manifest_for("stats", {{"coverage", coverage_n}}, g);
			m.add_input(stats_data.dataset);
			const Dataset d = load_dataset(stats_data.dataset);
			const RankFrequency rf = rank_frequency(d);
			std::ostringstream csv;
			csv << "rank,class_id,class_name,count\n";
			for (std::size_t r = 0; r < rf.entries.size(); ++r) {
				csv << r + 1 << ',' << rf.entries[r].class_id << ',' << d.class_name(rf.entries[r].class_id) << ','
				    << rf.entries[r].count << '\n';
			}
			write_text(out / "rank_frequency.csv", csv.str());
			const PowerLawFit single = fit_power_law(rf);
			const BrokenPowerLawFit broken = fit_broken_power_law(rf);
			json coverage = json::object();
			for (const int n : coverage_n) {
				if (n >= 1 && static_cast<std::size_t>(n) <= rf.entries.size()) {
					coverage[std::to_string(n)] = coverage_topn(rf, static_cast<std::size_t>(n));
				}
			}
			const json report{
			    {"classes", d.num_classes()},
			    {"annotations", d.num_annotations()},
			    {"single", {{"slope", single.slope}, {"intercept", single.intercept}, {"r2", single.r2}}},
			    {"broken",
			     {{"break_rank", broken.break_rank},
			      {"left", {{"slope", broken.left.slope}, {"intercept", broken.left.intercept}}},
			      {"right", {{"slope", broken.right.slope}, {"intercept", broken.right.intercept}}},
			      {"r2", broken.r2_total}}},
			    {"coverage", coverage}};
			write_json(out / "stats.json", report);
			write_manifest(m, out);
			std::cout << report.dump(2) << '\n';
		} else if (*split) {
			const std::uint64_t seed = g.seed.value_or(0);
			RunManifest m = manifest_for("split", {{"k", k}}, g);
			m.seeds["split"] = seed;
			m.add_input(split_data.dataset);
			const Dataset d = load_dataset(split_data.dataset);
			const FoldAssignment f = split_by_tablet(d, k, seed);
			write_json(out / "folds.json", folds_to_json(f));
			write_manifest(m, out);
			for (int i = 0; i < k; ++i) {
				std::cout << "fold " << i << ": " << f.tablets_in_fold(i).size() << " tablets\n";
			}
		} else if (*train) {
			RunManifest m = manifest_for("train-baseline", {{"side", side}}, g);
			m.add_input(train_data.dataset);
			const Dataset d = load_dataset(train_data.dataset);
			const ImageStore store(image_root(train_data));
			const CentroidClassifierModel model = train_centroid_classifier(d, store, side);
			save_centroid_model(model, out / "model.json");
			write_manifest(m, out);
			std::cout << "model -> " << (out / "model.json").string() << '\n';
		} else if (*detect || *classify || *translit) {
			const DataArgs& data = *detect ? detect_data : *classify ? classify_data : tr_data;
			const BackendArgs& backends = *detect ? detect_backends : *classify ? classify_backends : tr_backends;
			const auto& ids = *detect ? detect_ids : *classify ? classify_ids : tr_ids;
			const PipelineConfig cfg = pipeline_config(g, backends);
			const std::string name = *detect ? "detect" : *classify ? "classify" : "transliterate";
			RunManifest m = manifest_for(name, config_to_json(cfg), g);
			m.add_input(data.dataset);
			auto truth = std::make_shared<const Dataset>(load_dataset(data.dataset));
			const ImageStore store(image_root(data));
			std::shared_ptr<Detector> detector;
			std::shared_ptr<Classifier> classifier;
			if (!*classify) {
				detector = make_detector(cfg.detector, truth->num_classes());
			}
			if (!*detect) {
				classifier = make_classifier_provider(cfg.classifier, truth, store)(*truth);
			}
			if (*detect) {
				Predictions p;
				for (const ImageRecord* img : selected_images(*truth, ids)) {
					const DetectionSet det = detector->detect(store.source(*img));
					ImagePredictions ip{img->image_id, {}};
					for (const auto& b : det.boxes) {
						PredictedBox pb{b.bbox, b.score, std::nullopt, std::nullopt};
						if (!b.source_id.empty()) {
							pb.box_id = b.source_id;
						}
						ip.boxes.push_back(std::move(pb));
					}
					p.images.push_back(std::move(ip));
				}
				save_predictions(p, out / "predictions.json");
			} else if (*classify) {
				Predictions boxes = classify_boxes.empty() ? ground_truth_predictions(*truth, false)
				                                           : load_predictions(classify_boxes);
				if (!classify_boxes.empty()) {
					m.add_input(classify_boxes);
				}
				Predictions p;
				for (const ImageRecord* img : selected_images(*truth, ids)) {
					const ImagePredictions* ip = boxes.find(img->image_id);
					if (ip == nullptr) {
						continue;
					}
					std::vector<BoundingBox> plain;
					for (const auto& b : ip->boxes) {
						plain.push_back(b.bbox);
					}
					const auto scores = classifier->classify(store.source(*img), plain);
					ImagePredictions outp = *ip;
					for (std::size_t i = 0; i < outp.boxes.size(); ++i) {
						outp.boxes[i].class_scores = scores.at(i).scores;
					}
					p.images.push_back(std::move(outp));
				}
				save_predictions(p, out / "predictions.json");
			} else {
				json results = json::array();
				for (const ImageRecord* img : selected_images(*truth, ids)) {
					const auto r = run_transliterate(store.source(*img), *detector, *classifier, cfg);
					results.push_back(r.to_json(truth.get()));
					std::cout << img->image_id << ':';
					for (const auto& line : r.lines) {
						std::cout << " |";
						for (const int c : line) {
							std::cout << ' ' << truth->class_name(c);
						}
					}
					std::cout << '\n';
				}
				write_json(out / "transliterations.json", results);
			}
			write_manifest(m, out);
		} else if (*lines) {
			const PipelineConfig cfg = pipeline_config(g, {});
			RunManifest m = manifest_for("lines", config_to_json(cfg), g);
			m.add_input(lines_data.dataset);
			const Dataset d = load_dataset(lines_data.dataset);
			const Predictions boxes =
			    lines_boxes.empty() ? ground_truth_predictions(d, false) : load_predictions(lines_boxes);
			json results = json::array();
			fs::create_directories(out / "overlays");
			for (const ImageRecord* img : selected_images(d, lines_ids)) {
				const ImagePredictions* ip = boxes.find(img->image_id);
				if (ip == nullptr) {
					continue;
				}
				std::vector<BoundingBox> plain;
				for (const auto& b : ip->boxes) {
					plain.push_back(b.bbox);
				}
				const LayoutResult layout = layout_boxes(plain, cfg);
				json jl = json::array();
				for (const auto& line : layout.lines) {
					jl.push_back({{"slope", line.slope}, {"intercept", line.intercept}, {"members", line.members}});
				}
				results.push_back({{"image_id", img->image_id},
				                   {"lines", jl},
				                   {"reading_sequence", layout.reading_sequence}});
				const fs::path href = fs::absolute(image_root(lines_data) / img->file_name);
				write_text(out / "overlays" / (img->image_id + ".svg"),
				           layout_svg(img->width, img->height, plain, layout, "file://" + href.string()));
			}
			write_json(out / "lines.json", results);
			write_manifest(m, out);
		} else if (*evaluate || *ablate) {
			const DataArgs& data = *evaluate ? eval_data : abl_data;
			const PipelineConfig cfg = pipeline_config(g, *evaluate ? eval_backends : abl_backends);
			RunManifest m = manifest_for(*evaluate ? "evaluate" : "ablate", config_to_json(cfg), g);
			m.add_input(data.dataset);
			m.seeds["pipeline"] = cfg.seed;
			auto truth = std::make_shared<const Dataset>(load_dataset(data.dataset));
			const ImageStore store(image_root(data));
			const std::string& folds_path = *evaluate ? eval_folds : abl_folds;
			FoldAssignment folds;
			if (!folds_path.empty()) {
				folds = folds_from_json(read_json(folds_path));
				m.add_input(folds_path);
			} else {
				folds = split_by_tablet(*truth, cfg.folds, cfg.seed);
			}
			m.seeds["split"] = folds.seed;
			const auto detector = make_detector(cfg.detector, truth->num_classes());
			const auto provider = make_classifier_provider(cfg.classifier, truth, store);
			if (*evaluate) {
				const EvalReport report = run_evaluate(*truth, folds, cfg, store, *detector, provider);
				write_json(out / "report.json", report.to_json());
				write_text(out / "report.txt", report.table());
				write_text(out / "per_class.csv", report.per_class_csv(*truth));
				m.folds = fold_ids_json(report);
				std::cout << report.table();
			} else {
				const AblationReport report = run_ablation(*truth, folds, test_fold, fractions, repeats, abl_metric,
				                                           cfg, store, *detector, provider);
				write_json(out / "ablation.json", report.to_json());
				write_text(out / "ablation.csv", report.csv());
				std::cout << report.csv();
			}
			write_manifest(m, out);
		} else if (*embed) {
			const PipelineConfig cfg = pipeline_config(g, embed_backends);
			tsne_cfg.seed = cfg.seed;
			RunManifest m = manifest_for("embed", config_to_json(cfg), g);
			m.add_input(embed_data.dataset);
			m.seeds["tsne"] = tsne_cfg.seed;
			auto truth = std::make_shared<const Dataset>(load_dataset(embed_data.dataset));
			const ImageStore store(image_root(embed_data));
			const auto classifier = make_classifier_provider(cfg.classifier, truth, store)(*truth);
			const EmbeddingMatrix e = embed_logits(*classifier, *truth, store);
			const int d = std::min<int>(dims, static_cast<int>(std::min(e.rows.rows(), e.rows.cols())));
			const PCAResult p = pca(e.rows, d);
			const TSNEResult t = tsne(p.projected, tsne_cfg);
			std::ostringstream csv;
			write_scatter_csv(csv, t.coords, e.labels, *truth);
			write_text(out / "scatter.csv", csv.str());
			json purity = cluster_report_to_json(cluster_report(t.coords, e.labels, purity_k), truth.get());
			purity["kl_initial"] = t.kl_initial;
			purity["kl_final"] = t.kl_final;
			purity["pca_components"] = p.model.components.rows();
			write_json(out / "purity.json", purity);
			write_manifest(m, out);
			std::cout << "mean purity " << purity["mean_purity"] << ", KL " << t.kl_initial << " -> " << t.kl_final
			          << '\n';
		} else if (*synth) {
			const json j = global_json(g);
			if (j.contains("synth")) {
				const SynthConfig from_file = synth_config_from_json(j.at("synth"));
				// Command-line values left at their defaults defer to the file.
				const SynthConfig defaults;
				auto pick = [](auto cli, auto def, auto file) { return cli != def ? cli : file; };
				synth_cfg.tablets = pick(synth_cfg.tablets, defaults.tablets, from_file.tablets);
				synth_cfg.num_classes = pick(synth_cfg.num_classes, defaults.num_classes, from_file.num_classes);
				synth_cfg.lines_per_image =
				    pick(synth_cfg.lines_per_image, defaults.lines_per_image, from_file.lines_per_image);
				synth_cfg.signs_per_line =
				    pick(synth_cfg.signs_per_line, defaults.signs_per_line, from_file.signs_per_line);
				synth_cfg.slope_min = pick(synth_cfg.slope_min, defaults.slope_min, from_file.slope_min);
				synth_cfg.slope_max = pick(synth_cfg.slope_max, defaults.slope_max, from_file.slope_max);
				synth_cfg.position_jitter =
				    pick(synth_cfg.position_jitter, defaults.position_jitter, from_file.position_jitter);
				synth_cfg.noise_sigma = pick(synth_cfg.noise_sigma, defaults.noise_sigma, from_file.noise_sigma);
				synth_cfg.zipf_exponent = pick(synth_cfg.zipf_exponent, defaults.zipf_exponent, from_file.zipf_exponent);
				synth_cfg.images_per_tablet = from_file.images_per_tablet;
				synth_cfg.glyph_size = from_file.glyph_size;
				synth_cfg.sign_pitch = from_file.sign_pitch;
				synth_cfg.line_pitch = from_file.line_pitch;
				synth_cfg.margin = from_file.margin;
				synth_cfg.texture_amplitude = from_file.texture_amplitude;
				synth_cfg.background = from_file.background;
				synth_cfg.ink = from_file.ink;
				synth_cfg.glyph_seed = from_file.glyph_seed;
			}
			synth_cfg.validate();
			const std::uint64_t seed = g.seed.value_or(0);
			RunManifest m = manifest_for("synth", synth_config_to_json(synth_cfg), g);
			m.seeds["synth"] = seed;
			const SynthCorpus corpus = generate_synthetic(synth_cfg, seed);
			write_synthetic(corpus, out);
			if (synth_fixture) {
				save_predictions(ground_truth_predictions(corpus.dataset), out / "predictions.json");
			}
			write_manifest(m, out);
			std::cout << corpus.dataset.images.size() << " images, " << corpus.dataset.num_annotations()
			          << " annotations -> " << out.string() << '\n';
		} else if (*serve) {
			const Dataset d = load_dataset(serve_data.dataset);
			Predictions p = load_predictions(serve_predictions);
			const fs::path sessions = sessions_dir.empty() ? out / "sessions" : fs::path(sessions_dir);
			ReviewService service(d, std::move(p), image_root(serve_data), sessions, serve_data.dataset,
			                      serve_predictions, max_suggestions);
			if (const char* token = std::getenv(kReviewTokenEnv)) {
				serve_opts.token = token;
			}
			ReviewServer server(service, serve_opts);
			const int port = server.bind();
			std::cout << "review service on http://" << serve_opts.host << ':' << port << '\n' << std::flush;
			server.listen();
		}
	} catch (const ValidationError& e) {
		std::cerr << "error: " << e.what() << '\n';
		return 3;
	} catch (const std::exception& e) {
		std::cerr << "error: " << e.what() << '\n';
		return 1;
	}
	return 0;
}
