#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "specstreak/select.hpp"

namespace specstreak {

// Acceptance rule driving a decode or an oracle.
enum class rule_kind {
    standard,  // min(1, p/q) acceptance, residual replacement
    greedy,    // p(x) acceptance, renormalized replacement, self-selection capable
};

// Latency units for the simulated cost accounting. One drafter evaluation
// costs c_draft, one batched verifier tree pass costs c_verify plus
// c_verify_per_token per conditioning prefix in the pass, and every
// sequential verifier call (vanilla decoding, post-rejection literal walks)
// costs c_verify_seq.
struct cost_model {
    double c_draft = 1.0;
    double c_verify = 1.0;
    double c_verify_seq = 1.0;
    double c_verify_per_token = 0.0;
};

struct decode_config {
    rule_kind rule = rule_kind::greedy;
    selection_config sel;
};

// Aggregates of one decode run.
//   accepted_mean     mean drafted tokens kept verbatim per window
//   tokens_per_draft  accepted_mean + 1 (replacement or bonus token)
//   alpha_curve       per-position accept frequency conditional on reaching
//                     the position
//   unique_calls      logical verifier prefix evaluations, bonus included
//   mean_selected_tau mean winning-draft score (greedy rule only)
struct run_metrics {
    long total_tokens = 0;
    long drafts = 0;
    long unique_calls = 0;
    double accepted_mean = 0.0;
    double tokens_per_draft = 0.0;
    double sim_speedup = 0.0;
    double mean_selected_tau = 0.0;
    std::vector<double> alpha_curve;
    uint64_t seed = 0;
};

// Block decoding until at least n_tokens are committed. The greedy rule runs
// self-selection with cfg.sel.k candidates; the standard rule requires k = 1.
// sim_speedup compares against sequential verifier decoding of the same
// number of tokens under the same cost model.
run_metrics decode_loop(const verifier& v, const drafter& d, std::span<const token_id> s0,
                        long n_tokens, const decode_config& cfg, const cost_model& cost,
                        rng_state& rng, const accept_hooks& hooks = {});

// Sequential sampling from the verifier; the reference process for
// distribution-preservation runs.
std::vector<token_id> vanilla_loop(const verifier& v, std::span<const token_id> s0,
                                   long n_tokens, rng_state& rng);

struct oracle_result {
    double expected_accepted = 0.0;  // in [0, gamma]
};

// Exact expected accepted-streak length for drafts sampled at prefix s:
// enumerates all draft paths with the recursion
//   f(prefix, j) = sum_x q_j(x) a(x | prefix) (1 + f(prefix+x, j+1)),
// a = min(1, p/q) for the standard rule, p for the greedy rule. Guarded to
// vocab^gamma <= 32768 paths.
oracle_result expected_streak_oracle(const verifier& v, const drafter& d,
                                     std::span<const token_id> s, int gamma, rule_kind rule);

// Closed-form expected streak when every position accepts independently with
// probability alpha: sum_{m=1..gamma} alpha^m. Strictly increasing in alpha.
double expected_streak_at_alpha(double alpha, int gamma);

// Exact marginal distribution of committed tokens 1..count after s0 under
// pure verifier decoding, by evolving the context-state distribution.
std::vector<categorical> exact_position_marginals(const verifier& v,
                                                  std::span<const token_id> s0, int count);

// Per-position empirical token counts over repeated generations.
struct position_counts {
    long n_samples = 0;
    std::vector<std::vector<long>> counts;  // [position][token]
};

struct invariance_config {
    rule_kind rule = rule_kind::standard;
    selection_config sel;
    accept_hooks hooks;
    double base_threshold = 0.02;  // calibrated at 1e5 samples, scaled by sqrt
};

struct invariance_report {
    struct position_row {
        int position = 0;
        double tv_speculative = 0.0;  // speculative empirical vs vanilla empirical
        double tv_exact = 0.0;        // speculative empirical vs exact marginal
    };
    std::vector<position_row> rows;
    long n_samples = 0;
    double max_tv = 0.0;        // max of tv_speculative
    double max_tv_exact = 0.0;  // diagnostic
    double threshold = 0.0;
    bool pass = false;
};

position_counts collect_speculative_counts(const verifier& v, const drafter& d,
                                           const invariance_config& cfg, long n_samples,
                                           int position_count, std::span<const token_id> s0,
                                           rng_state& rng);
position_counts collect_vanilla_counts(const verifier& v, long n_samples, int position_count,
                                       std::span<const token_id> s0, rng_state& rng);
invariance_report compare_position_counts(const position_counts& speculative,
                                          const position_counts& vanilla, const verifier& v,
                                          std::span<const token_id> s0, double base_threshold);

// Statistical losslessness check: n_samples speculative transcripts and
// n_samples vanilla transcripts from s0, compared position by position on
// the first position_count committed tokens. Passes when the max TV stays
// under base_threshold scaled to the sample size.
invariance_report invariance_test(const verifier& v, const drafter& d,
                                  const invariance_config& cfg, long n_samples,
                                  int position_count, std::span<const token_id> s0,
                                  rng_state& rng);

// Empirical per-position acceptance over fresh drafts at fixed prefixes,
// n_samples drafts per prefix, conditional on reaching the position.
std::vector<double> alpha_curve(const verifier& v, const drafter& d,
                                const std::vector<prefix>& s_set, int gamma, long n_samples,
                                rule_kind rule, double temperature, rng_state& rng);

}  // namespace specstreak
