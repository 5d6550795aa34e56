#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace bvo {

// All randomness in the library flows through explicitly seeded engines.
// Derived streams are produced by mixing a base seed with a short tag so
// that adding a new consumer never perturbs existing streams.

uint64_t mix_seed(uint64_t base, std::string_view tag);
uint64_t mix_seed(uint64_t base, uint64_t salt);

using Rng = std::mt19937_64;

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

double draw_normal(Rng& rng, double mean = 0.0, double stddev = 1.0);
double draw_uniform(Rng& rng, double lo = 0.0, double hi = 1.0);

void fill_normal(Rng& rng, std::vector<double>& out, double mean = 0.0, double stddev = 1.0);

// Gamma(shape, rate) sampler, Marsaglia-Tsang squeeze with the shape<1
// boost. Returns a draw with mean shape/rate.
double draw_gamma(Rng& rng, double shape, double rate);

// Deterministic permutation of 0..n-1.
std::vector<size_t> seeded_permutation(size_t n, uint64_t seed);

}  // namespace bvo
