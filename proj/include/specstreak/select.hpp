#pragma once

#include <span>
#include <vector>

#include "specstreak/verify.hpp"

namespace specstreak {

// Knobs for one self-selecting drafted step.
struct selection_config {
    int k = 1;           // candidate drafts per step, all from one drafter evaluation
    int gamma = 4;       // drafted block length
    double temperature = 1.0;  // drafter sampling temperature
    greedy_mode mode = greedy_mode::stop_on_reject;
};

// Expected-streak score of one draft: sum over depths of the running product
// of per-position verifier probabilities,
//   tau = p_1 + p_1 p_2 + ... + p_1 ... p_gamma.
// Evaluated right to left so it costs one multiply-add per position.
double score_draft(std::span<const double> per_pos_p);

// One scored candidate; per_pos_p comes from the shared tree pass.
struct scored_draft {
    draft dr;
    std::vector<double> per_pos_p;
    double tau = 0.0;
};

struct select_result {
    std::vector<scored_draft> candidates;  // in sampling order, duplicates kept
    int selected = 0;                      // argmax tau, lowest index on ties
    verify_outcome outcome;                // greedy verification of the winner
    int unique_calls = 0;                  // tree pass conditioning prefixes
};

// Draft K blocks from a single drafter evaluation, score all of them with one
// deduplicated verifier tree pass, then verify only the top-tau candidate
// under the greedy rule, reusing the tree's cached posteriors. The acceptance
// randomness is drawn after selection, so the committed tokens keep the
// verifier's distribution for any K.
select_result self_select(const verifier& v, const drafter& d, std::span<const token_id> s,
                          const selection_config& cfg, rng_state& rng,
                          const accept_hooks& hooks = {});

}  // namespace specstreak
