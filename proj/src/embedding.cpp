#include "signline/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>

#include "signline/error.hpp"
#include "signline/random.hpp"

namespace signline {

EmbeddingMatrix embed_logits(Classifier& classifier, const Dataset& dataset, const ImageStore& images) {
	std::vector<std::vector<double>> rows;
	EmbeddingMatrix out;
	for (const auto& img : dataset.images) {
		if (img.annotations.empty()) {
			continue;
		}
		const auto boxes = boxes_of(img.annotations);
		const auto scores = classifier.classify(images.source(img), boxes);
		if (scores.size() != boxes.size()) {
			throw BackendError("classifier returned " + std::to_string(scores.size()) + " score vectors for " +
			                   std::to_string(boxes.size()) + " boxes");
		}
		for (std::size_t k = 0; k < boxes.size(); ++k) {
			rows.push_back(scores[k].scores);
			out.labels.push_back(img.annotations[k].class_id);
		}
	}
	const std::size_t c = classifier.num_classes();
	out.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(c));
	for (std::size_t i = 0; i < rows.size(); ++i) {
		if (rows[i].size() != c) {
			throw BackendError("score vector length differs from the class count");
		}
		for (std::size_t j = 0; j < c; ++j) {
			out.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
		}
	}
	return out;
}

PCAResult pca(const Eigen::MatrixXd& data, int d) {
	const Eigen::Index n = data.rows();
	const Eigen::Index c = data.cols();
	if (n < 2 || c < 1) {
		throw ValidationError("PCA needs at least 2 rows and 1 column");
	}
	if (d < 1 || d > std::min(n, c)) {
		throw ValidationError("PCA dimension " + std::to_string(d) + " outside [1, min(N, C)]");
	}
	if (!data.allFinite()) {
		throw ValidationError("PCA input has non-finite entries");
	}

	PCAResult result;
	PCAModel& model = result.model;
	model.mean = data.colwise().mean();
	const Eigen::MatrixXd centered = data.rowwise() - model.mean.transpose();

	Eigen::VectorXd values;  // descending
	Eigen::MatrixXd vectors; // columns
	if (c <= 512) {
		const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
		Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
		if (solver.info() != Eigen::Success) {
			throw ValidationError("covariance eigendecomposition failed");
		}
		values = solver.eigenvalues().reverse();
		vectors = solver.eigenvectors().rowwise().reverse();
	} else {
		Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
		values = svd.singularValues().array().square() / static_cast<double>(n - 1);
		vectors = svd.matrixV();
	}
	model.total_variance = centered.squaredNorm() / static_cast<double>(n - 1);

	const double top = std::max(values.size() > 0 ? values(0) : 0.0, 0.0);
	Eigen::Index keep = d;
	for (Eigen::Index k = 0; k < d; ++k) {
		if (!(values(k) > 1e-12 * std::max(top, 1e-300))) {
			keep = k;
			break;
		}
	}
	if (keep == 0) {
		throw ValidationError("PCA input has zero variance");
	}
	if (keep < d) {
		result.rank_deficient = true;
		std::cerr << "warning: data has rank " << keep << " < requested " << d << " components\n";
	}

	model.components.resize(keep, c);
	model.explained_variance.resize(keep);
	for (Eigen::Index k = 0; k < keep; ++k) {
		Eigen::VectorXd v = vectors.col(k);
		Eigen::Index arg = 0;
		v.cwiseAbs().maxCoeff(&arg);
		if (v(arg) < 0.0) {
			v = -v;
		}
		model.components.row(k) = v.transpose();
		model.explained_variance(k) = std::max(values(k), 0.0);
	}
	result.projected = centered * model.components.transpose();
	return result;
}

Eigen::MatrixXd pca_reconstruct(const PCAModel& model, const Eigen::MatrixXd& projected) {
	return (projected * model.components).rowwise() + model.mean.transpose();
}

void TSNEConfig::validate(std::size_t n) const {
	if (n < 2) {
		throw ValidationError("t-SNE needs at least 2 points");
	}
	if (!(perplexity > 0.0) || !(3.0 * perplexity < static_cast<double>(n))) {
		throw ValidationError("t-SNE perplexity must satisfy 0 < 3 * perplexity < N");
	}
	if (iterations < 1) {
		throw ValidationError("t-SNE iterations must be > 0");
	}
	if (!(learning_rate > 0.0) || !(exaggeration >= 1.0) || exaggeration_iterations < 0) {
		throw ValidationError("t-SNE learning rate, exaggeration or schedule out of range");
	}
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
	const Eigen::Index n = x.rows();
	Eigen::MatrixXd d(n, n);
	for (Eigen::Index i = 0; i < n; ++i) {
		d(i, i) = 0.0;
		for (Eigen::Index j = i + 1; j < n; ++j) {
			const double v = (x.row(i) - x.row(j)).squaredNorm();
			d(i, j) = v;
			d(j, i) = v;
		}
	}
	return d;
}

// Row-conditional Gaussian affinities with the bandwidth tuned so each row's
// entropy matches log(perplexity).
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& dist, double perplexity) {
	const Eigen::Index n = dist.rows();
	const double target = std::log(perplexity);
	Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
	std::vector<double> row(static_cast<std::size_t>(n));
	for (Eigen::Index i = 0; i < n; ++i) {
		double beta = 1.0;
		double lo = 0.0;
		double hi = std::numeric_limits<double>::infinity();
		double min_d = std::numeric_limits<double>::infinity();
		for (Eigen::Index j = 0; j < n; ++j) {
			if (j != i) {
				min_d = std::min(min_d, dist(i, j));
			}
		}
		for (int it = 0; it < 200; ++it) {
			double sum = 0.0;
			double weighted = 0.0;
			for (Eigen::Index j = 0; j < n; ++j) {
				if (j == i) {
					row[j] = 0.0;
					continue;
				}
				// Shifting by the nearest distance keeps exp() away from underflow.
				row[j] = std::exp(-beta * (dist(i, j) - min_d));
				sum += row[j];
				weighted += (dist(i, j) - min_d) * row[j];
			}
			const double entropy = std::log(sum) + beta * weighted / sum;
			for (Eigen::Index j = 0; j < n; ++j) {
				p(i, j) = row[j] / sum;
			}
			const double diff = entropy - target;
			if (std::abs(diff) < 1e-5) {
				break;
			}
			if (diff > 0.0) {
				lo = beta;
				beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
			} else {
				hi = beta;
				beta = 0.5 * (beta + lo);
			}
		}
	}
	return p;
}

double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
	const Eigen::Index n = y.rows();
	Eigen::MatrixXd num(n, n);
	double z = 0.0;
	for (Eigen::Index i = 0; i < n; ++i) {
		num(i, i) = 0.0;
		for (Eigen::Index j = 0; j < n; ++j) {
			if (j != i) {
				num(i, j) = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
				z += num(i, j);
			}
		}
	}
	double kl = 0.0;
	for (Eigen::Index i = 0; i < n; ++i) {
		for (Eigen::Index j = 0; j < n; ++j) {
			if (j != i && p(i, j) > 0.0) {
				kl += p(i, j) * std::log(p(i, j) / std::max(num(i, j) / z, 1e-300));
			}
		}
	}
	return kl;
}

} // namespace

TSNEResult tsne(const Eigen::MatrixXd& data, const TSNEConfig& config, std::span<const std::uint64_t> row_keys) {
	const auto n = static_cast<std::size_t>(data.rows());
	config.validate(n);
	if (!row_keys.empty() && row_keys.size() != n) {
		throw ValidationError("t-SNE row_keys must have one key per row");
	}
	if (!data.allFinite()) {
		throw ValidationError("t-SNE input has non-finite entries");
	}
	const Eigen::Index m = data.rows();

	Eigen::MatrixXd p = conditional_affinities(squared_distances(data), config.perplexity);
	p = (p + p.transpose()).eval() / (2.0 * static_cast<double>(n));
	p = p.cwiseMax(1e-12);
	p.diagonal().setZero();

	Eigen::MatrixXd y(m, 2);
	for (Eigen::Index i = 0; i < m; ++i) {
		const std::uint64_t key = row_keys.empty() ? static_cast<std::uint64_t>(i) : row_keys[static_cast<std::size_t>(i)];
		Rng rng(derive_seed(config.seed, key));
		y(i, 0) = rng.normal(0.0, 1e-2);
		y(i, 1) = rng.normal(0.0, 1e-2);
	}

	TSNEResult result;
	result.kl_initial = kl_divergence(p, y);

	Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(m, 2);
	Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(m, 2);
	Eigen::MatrixXd grad(m, 2);
	Eigen::MatrixXd num(m, m);
	for (int it = 0; it < config.iterations; ++it) {
		const double exaggeration = it < config.exaggeration_iterations ? config.exaggeration : 1.0;
		const double momentum = it < 250 ? 0.5 : 0.8;
		double z = 0.0;
		for (Eigen::Index i = 0; i < m; ++i) {
			num(i, i) = 0.0;
			for (Eigen::Index j = i + 1; j < m; ++j) {
				const double dx = y(i, 0) - y(j, 0);
				const double dy = y(i, 1) - y(j, 1);
				const double v = 1.0 / (1.0 + dx * dx + dy * dy);
				num(i, j) = v;
				num(j, i) = v;
				z += 2.0 * v;
			}
		}
		for (Eigen::Index i = 0; i < m; ++i) {
			double gx = 0.0;
			double gy = 0.0;
			for (Eigen::Index j = 0; j < m; ++j) {
				if (j == i) {
					continue;
				}
				const double w = (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
				gx += w * (y(i, 0) - y(j, 0));
				gy += w * (y(i, 1) - y(j, 1));
			}
			grad(i, 0) = 4.0 * gx;
			grad(i, 1) = 4.0 * gy;
		}
		for (Eigen::Index i = 0; i < m; ++i) {
			for (Eigen::Index k = 0; k < 2; ++k) {
				const bool same_sign = (grad(i, k) > 0.0) == (velocity(i, k) > 0.0);
				gains(i, k) = same_sign ? std::max(gains(i, k) * 0.8, 0.01) : gains(i, k) + 0.2;
				velocity(i, k) = momentum * velocity(i, k) - config.learning_rate * gains(i, k) * grad(i, k);
				y(i, k) += velocity(i, k);
			}
		}
		const Eigen::RowVector2d center = y.colwise().mean();
		y.rowwise() -= center;
	}
	result.kl_final = kl_divergence(p, y);
	result.coords = std::move(y);
	return result;
}

namespace {

// Per-point share of same-label neighbours.
std::vector<double> point_purity(const Eigen::MatrixXd& coords, std::span<const int> labels, std::size_t k) {
	const auto n = static_cast<std::size_t>(coords.rows());
	if (n < 2) {
		throw ValidationError("purity needs at least 2 points");
	}
	if (labels.size() != n) {
		throw ValidationError("one label per point required");
	}
	k = std::min(k, n - 1);
	if (k == 0) {
		throw ValidationError("k must be >= 1");
	}
	std::vector<double> out(n);
	std::vector<std::pair<double, std::size_t>> dist;
	dist.reserve(n - 1);
	for (std::size_t i = 0; i < n; ++i) {
		dist.clear();
		for (std::size_t j = 0; j < n; ++j) {
			if (j != i) {
				dist.emplace_back((coords.row(static_cast<Eigen::Index>(i)) - coords.row(static_cast<Eigen::Index>(j)))
				                      .squaredNorm(),
				                  j);
			}
		}
		std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
		std::size_t same = 0;
		for (std::size_t r = 0; r < k; ++r) {
			same += labels[dist[r].second] == labels[i] ? 1 : 0;
		}
		out[i] = static_cast<double>(same) / static_cast<double>(k);
	}
	return out;
}

} // namespace

double knn_purity(const Eigen::MatrixXd& coords, std::span<const int> labels, std::size_t k) {
	const auto per_point = point_purity(coords, labels, k);
	return std::accumulate(per_point.begin(), per_point.end(), 0.0) / static_cast<double>(per_point.size());
}

ClusterReport cluster_report(const Eigen::MatrixXd& coords, std::span<const int> labels, std::size_t k) {
	ClusterReport report;
	const auto per_point = point_purity(coords, labels, k);
	report.k = std::min(k, per_point.size() - 1);
	std::map<int, std::pair<std::size_t, double>> by_class;
	for (std::size_t i = 0; i < per_point.size(); ++i) {
		auto& [count, sum] = by_class[labels[i]];
		++count;
		sum += per_point[i];
	}
	for (const auto& [cls, acc] : by_class) {
		report.classes.push_back({cls, acc.first, acc.second / static_cast<double>(acc.first)});
	}
	report.mean_purity = std::accumulate(per_point.begin(), per_point.end(), 0.0) / static_cast<double>(per_point.size());
	return report;
}

nlohmann::json cluster_report_to_json(const ClusterReport& report, const Dataset* names) {
	nlohmann::json classes = nlohmann::json::array();
	for (const auto& c : report.classes) {
		nlohmann::json row{{"class_id", c.class_id}, {"count", c.count}, {"purity", c.purity}};
		if (names != nullptr) {
			row["class_name"] = names->class_name(c.class_id);
		}
		classes.push_back(std::move(row));
	}
	return {{"k", report.k}, {"mean_purity", report.mean_purity}, {"classes", std::move(classes)}};
}

void write_scatter_csv(std::ostream& out, const Eigen::MatrixXd& coords, std::span<const int> labels,
                       const Dataset& names) {
	if (static_cast<std::size_t>(coords.rows()) != labels.size() || coords.cols() != 2) {
		throw ValidationError("scatter export needs N x 2 coordinates and N labels");
	}
	out << "x,y,class_id,class_name\n";
	out << std::setprecision(17);
	for (std::size_t i = 0; i < labels.size(); ++i) {
		const auto r = static_cast<Eigen::Index>(i);
		std::string name = names.class_name(labels[i]);
		if (name.find_first_of(",\"\n") != std::string::npos) {
			std::string quoted = "\"";
			for (char ch : name) {
				quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
			}
			name = quoted + "\"";
		}
		out << coords(r, 0) << ',' << coords(r, 1) << ',' << labels[i] << ',' << name << '\n';
	}
}

} // namespace signline
