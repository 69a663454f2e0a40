#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace signline {

/// Seeded random source with platform-independent draws.
///
/// std::mt19937_64 output is fully specified by the standard but the
/// <random> distributions are not, so the draws used for splits, RANSAC
/// sampling, synthesis and t-SNE initialisation are derived here directly
/// from the engine output. That keeps every seeded artifact bit-reproducible
/// across standard library implementations.
class Rng {
public:
	explicit Rng(std::uint64_t seed) : engine_(seed) {}

	std::uint64_t next() { return engine_(); }

	/// Uniform double in [0, 1).
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform integer in [0, n) by rejection sampling; n must be > 0.
	std::size_t index(std::size_t n) {
		const std::uint64_t bound = static_cast<std::uint64_t>(n);
		const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
		std::uint64_t x = engine_();
		while (x >= limit) {
			x = engine_();
		}
		return static_cast<std::size_t>(x % bound);
	}

	/// Standard normal via Box-Muller (one value per call, no caching).
	double normal() {
		double u1 = uniform();
		while (u1 <= 0.0) {
			u1 = uniform();
		}
		const double u2 = uniform();
		return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
	}

	double normal(double mean, double stddev) { return mean + stddev * normal(); }

	/// Fisher-Yates shuffle.
	template <typename T>
	void shuffle(std::vector<T>& values) {
		for (std::size_t i = values.size(); i > 1; --i) {
			const std::size_t j = index(i);
			std::swap(values[i - 1], values[j]);
		}
	}

private:
	std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream key so that independent streams (per
/// tablet, per repeat, per row) never share a sequence.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t key) {
	std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (key + 1);
	z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
	z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
	return z ^ (z >> 31);
}

} // namespace signline
