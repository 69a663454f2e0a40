#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "signline/dataset.hpp"

namespace signline {

struct RankEntry {
	int class_id{0};
	double count{0.0};
};

/// Class counts sorted by count descending, ties by class id ascending.
/// Rank r (1-based) is entries[r - 1].
struct RankFrequency {
	std::vector<RankEntry> entries;

	double total() const;
};

struct PowerLawFit {
	double slope{0.0};
	double intercept{0.0};
	double r2{0.0};
};

struct BrokenPowerLawFit {
	std::size_t break_rank{0};
	PowerLawFit left;
	PowerLawFit right;
	double r2_total{0.0};
	bool continuous{true};
};

/// Counts every catalog class (zero-count classes included at the tail).
RankFrequency rank_frequency(const Dataset& dataset);

/// Builds a rank-frequency table from raw per-class counts (index = class id).
RankFrequency rank_frequency_from_counts(const std::vector<double>& counts);

/// Ordinary least squares on (ln rank, ln count) over positive-count ranks.
PowerLawFit fit_power_law(const RankFrequency& rf);

/// Exhaustive scan over break ranks 2..C-1 of a two-segment linear model in
/// log-log space. With `continuous` the segments share the value at the
/// break (3 parameters); otherwise each side is fit independently.
BrokenPowerLawFit fit_broken_power_law(const RankFrequency& rf, bool continuous = true);

/// Share of all annotations covered by the n most frequent classes.
double coverage_topn(const RankFrequency& rf, std::size_t n);

/// 1 - SSE/SST; SST == 0 gives 1 when SSE == 0 and raises otherwise.
double coefficient_of_determination(double sse, double sst);

} // namespace signline
