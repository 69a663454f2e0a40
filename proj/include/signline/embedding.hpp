#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "signline/backends.hpp"
#include "signline/dataset.hpp"

namespace signline {

/// One row of classifier scores per crop; labels[i] is the true class of row i.
struct EmbeddingMatrix {
	Eigen::MatrixXd rows;
	std::vector<int> labels;
};

/// Scores every annotation of `dataset` (image order, then annotation order).
EmbeddingMatrix embed_logits(Classifier& classifier, const Dataset& dataset, const ImageStore& images);

struct PCAModel {
	Eigen::VectorXd mean;
	Eigen::MatrixXd components;         // d x C, orthonormal rows
	Eigen::VectorXd explained_variance; // non-increasing
	double total_variance{0.0};         // trace of the sample covariance
};

struct PCAResult {
	PCAModel model;
	Eigen::MatrixXd projected; // N x d
	bool rank_deficient{false};
};

/// Sample-covariance PCA. Each component's largest-magnitude entry is made
/// positive. Components with (numerically) zero variance are dropped and
/// `rank_deficient` is set. Throws ValidationError when d > min(N, C).
PCAResult pca(const Eigen::MatrixXd& data, int d = 50);

/// Maps a projection back to the input space.
Eigen::MatrixXd pca_reconstruct(const PCAModel& model, const Eigen::MatrixXd& projected);

struct TSNEConfig {
	double perplexity{30.0};
	int iterations{1000};
	double exaggeration{12.0};
	int exaggeration_iterations{250};
	double learning_rate{200.0};
	std::uint64_t seed{0};

	void validate(std::size_t n) const;
};

struct TSNEResult {
	Eigen::MatrixXd coords; // N x 2
	double kl_initial{0.0};
	double kl_final{0.0};
};

/// Exact t-SNE. The initial position of row i is drawn from a generator
/// keyed by row_keys[i] (or i when no keys are given), so permuting rows
/// together with their keys permutes the output.
TSNEResult tsne(const Eigen::MatrixXd& data, const TSNEConfig& config, std::span<const std::uint64_t> row_keys = {});

/// Mean share of each point's k nearest neighbours (self excluded, ties by
/// lower index) carrying the point's own label.
double knn_purity(const Eigen::MatrixXd& coords, std::span<const int> labels, std::size_t k);

struct ClassPurity {
	int class_id{0};
	std::size_t count{0};
	double purity{0.0};
};

struct ClusterReport {
	std::size_t k{10};
	std::vector<ClassPurity> classes; // ascending class id, classes present only
	double mean_purity{0.0};          // over points
};

ClusterReport cluster_report(const Eigen::MatrixXd& coords, std::span<const int> labels, std::size_t k = 10);
nlohmann::json cluster_report_to_json(const ClusterReport& report, const Dataset* names = nullptr);

/// CSV with header x,y,class_id,class_name; one row per point.
void write_scatter_csv(std::ostream& out, const Eigen::MatrixXd& coords, std::span<const int> labels,
                       const Dataset& names);

} // namespace signline
