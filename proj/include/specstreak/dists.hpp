#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace specstreak {

// Token ids are dense [0, vocab). The reserved BOS padding id is `vocab`
// itself; it appears in context keys only, never inside a distribution.
using token_id = int32_t;

// splitmix64 finalizer; bijective on u64.
uint64_t mix64(uint64_t x);

// Deterministic sub-seed for a named stream (grid cell, table row, ...).
// Independent of the order in which streams are drawn.
uint64_t derive_seed(uint64_t master, uint64_t stream);

// Deterministic RNG stream. One owner per decoding run or training run;
// everything that consumes randomness takes it by reference so repeated runs
// with the same seed replay the same draw sequence.
struct rng_state {
    explicit rng_state(uint64_t seed) : seed_(seed), engine_(seed) {}

    uint64_t seed() const { return seed_; }
    uint64_t next_u64() { return engine_(); }

    // uniform double in [0, 1), 53-bit mantissa
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform double in (0, 1]
    double uniform_pos() { return 1.0 - uniform(); }

    // standard normal, polar Marsaglia
    double normal();

    // Gamma(shape, 1), Marsaglia-Tsang; hand-rolled because std::gamma_distribution
    // is implementation-defined and would break cross-platform byte-level runs
    double gamma(double shape);

    // uniform integer in [0, n)
    int below(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
};

// Probability vector over a dense vocabulary. Always normalized on
// construction; entries are finite and non-negative and sum to 1 within 1e-9
// before the final renormalization.
struct categorical {
    categorical() = default;

    // probs must already sum to 1 within 1e-9 (then renormalized exactly)
    explicit categorical(std::vector<double> probs);

    // any non-negative vector with positive mass, normalized by its sum
    static categorical normalized(std::vector<double> weights);

    static categorical uniform(int size);
    static categorical one_hot(int size, token_id hot);

    int size() const { return static_cast<int>(p_.size()); }
    double operator[](token_id t) const { return p_[static_cast<size_t>(t)]; }
    const std::vector<double>& probs() const { return p_; }

    token_id argmax() const;  // ties resolve to the lowest index

private:
    std::vector<double> p_;
};

// Total variation distance, 0.5 * sum |p - q|.
double tv_distance(const categorical& p, const categorical& q);

// Per-position acceptance probability of the standard speculative rule,
// sum_x min(p(x), q(x)) = 1 - tv_distance(p, q). Computed as the complement
// so acceptance_rate + tv_distance == 1 exactly.
double acceptance_rate(const categorical& p, const categorical& q);

// Replacement distribution of the standard rule: max(0, p - q) normalized.
// Throws if p == q elementwise (no residual mass to draw from).
categorical residual_dist(const categorical& p, const categorical& q);

// Replacement distribution of the greedy rule: p with the rejected token
// zeroed, renormalized by 1 - p(rejected). Throws if p(rejected) == 1.
categorical greedy_residual(const categorical& p, token_id rejected);

// Softmax with temperature. Max-subtraction for stability; temperature below
// 1e-6 degenerates to a one-hot at the argmax (lowest index on ties).
categorical apply_temperature(std::span<const double> logits, double temperature);

// Inverse-CDF sample. Never returns a zero-probability token.
token_id sample(const categorical& d, rng_state& rng);

}  // namespace specstreak
