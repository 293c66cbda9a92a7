#include "specstreak/select.hpp"

#include <stdexcept>

namespace specstreak {

double score_draft(std::span<const double> per_pos_p) {
    if (per_pos_p.empty()) {
        throw std::invalid_argument("score_draft: empty probability path");
    }
    for (double p : per_pos_p) {
        if (!(p >= 0.0) || p > 1.0) {
            throw std::invalid_argument("score_draft: probabilities must lie in [0, 1]");
        }
    }
    // Horner form of sum_m prod_{j<=m} p_j
    double acc = 0.0;
    for (size_t j = per_pos_p.size(); j-- > 0;) {
        acc = per_pos_p[j] * (1.0 + acc);
    }
    return acc;
}

select_result self_select(const verifier& v, const drafter& d, std::span<const token_id> s,
                          const selection_config& cfg, rng_state& rng,
                          const accept_hooks& hooks) {
    if (cfg.k < 1) {
        throw std::invalid_argument("self_select: k must be at least 1");
    }
    if (cfg.gamma < 1 || cfg.gamma > d.gamma_max) {
        throw std::invalid_argument("self_select: gamma out of the drafter's range");
    }

    // one drafter evaluation feeds all K candidates
    const std::vector<categorical> q = d.marginals_at(s, cfg.gamma, cfg.temperature);
    std::vector<draft> drafts;
    drafts.reserve(static_cast<size_t>(cfg.k));
    for (int k = 0; k < cfg.k; ++k) {
        drafts.push_back(sample_from_marginals(q, rng));
    }

    // duplicates share trie nodes but stay separate candidates
    tree_scores scores = tree_verify(v, s, drafts);

    select_result out;
    out.unique_calls = scores.unique_calls;
    out.candidates.reserve(drafts.size());
    for (size_t k = 0; k < drafts.size(); ++k) {
        scored_draft sd;
        sd.dr = std::move(drafts[k]);
        sd.per_pos_p = scores.token_p[k];
        sd.tau = score_draft(sd.per_pos_p);
        out.candidates.push_back(std::move(sd));
    }
    out.selected = 0;
    for (size_t k = 1; k < out.candidates.size(); ++k) {
        if (out.candidates[k].tau > out.candidates[out.selected].tau) {
            out.selected = static_cast<int>(k);
        }
    }

    const scored_draft& win = out.candidates[static_cast<size_t>(out.selected)];
    const std::vector<categorical> cached = scores.cached_dists(win.dr);
    out.outcome = greedy_verify(v, s, win.dr, &cached, cfg.mode, rng, hooks);
    return out;
}

}  // namespace specstreak
