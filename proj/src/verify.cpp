#include "specstreak/verify.hpp"

#include <algorithm>
#include <stdexcept>

namespace specstreak {

namespace {

void validate_draft_tokens(const draft& dr, int vocab) {
    if (dr.tokens.empty()) {
        throw std::invalid_argument("verify: empty draft");
    }
    for (token_id t : dr.tokens) {
        if (t < 0 || t >= vocab) {
            throw std::invalid_argument("verify: drafted token out of vocab range");
        }
    }
}

}  // namespace

verify_outcome standard_verify(const verifier& v, std::span<const token_id> s, const draft& dr,
                               const std::vector<categorical>& q_marginals, rng_state& rng,
                               const accept_hooks& hooks) {
    validate_draft_tokens(dr, v.vocab);
    const size_t gamma = dr.tokens.size();
    if (dr.q_probs.size() != gamma || q_marginals.size() != gamma) {
        throw std::invalid_argument("standard_verify: draft and marginals must agree on length");
    }

    verify_outcome out;
    std::vector<token_id> work(s.begin(), s.end());
    for (size_t j = 0; j < gamma; ++j) {
        const token_id x = dr.tokens[j];
        const double qx = dr.q_probs[j];
        if (!(qx > 0.0)) {
            throw std::invalid_argument("standard_verify: drafted token outside drafter support");
        }
        const categorical& p_dist = v.next(work);
        ++out.verifier_calls;
        const double px = p_dist[x];
        out.per_pos_p.push_back(px);

        // one uniform per examined position, accepted or not
        const double ratio = std::min(1.0, px / qx);
        if (rng.uniform() < ratio) {
            work.push_back(x);
            out.committed.push_back(x);
            ++out.accepted_len;
            continue;
        }
        ++out.replaced;
        const categorical repl =
            hooks.skip_residual ? p_dist : residual_dist(p_dist, q_marginals[j]);
        const token_id y = sample(repl, rng);
        work.push_back(y);
        out.committed.push_back(y);
        break;  // the standard rule always ends the window at the first rejection
    }

    if (out.replaced == 0) {
        const categorical& bonus_dist = v.next(work);
        ++out.verifier_calls;  // part of the same batched pass, zero extra latency
        out.bonus = sample(bonus_dist, rng);
    }
    return out;
}

verify_outcome greedy_verify(const verifier& v, std::span<const token_id> s, const draft& dr,
                             const std::vector<categorical>* cached_p, greedy_mode mode,
                             rng_state& rng, const accept_hooks& hooks) {
    validate_draft_tokens(dr, v.vocab);
    const size_t gamma = dr.tokens.size();
    if (cached_p && cached_p->size() != gamma) {
        throw std::invalid_argument("greedy_verify: cached posteriors must cover every position");
    }

    verify_outcome out;
    std::vector<token_id> work(s.begin(), s.end());
    bool diverged = false;  // cached posteriors follow the draft path, not replacements
    for (size_t j = 0; j < gamma; ++j) {
        const token_id x = dr.tokens[j];
        const categorical* p_dist;
        if (!diverged && cached_p) {
            p_dist = &(*cached_p)[j];
        } else {
            p_dist = &v.next(work);
            ++out.verifier_calls;
            if (diverged) ++out.post_reject_calls;
        }
        const double px = (*p_dist)[x];
        out.per_pos_p.push_back(px);

        if (rng.uniform() < px) {
            work.push_back(x);
            out.committed.push_back(x);
            ++out.accepted_len;
            continue;
        }
        ++out.replaced;
        const categorical repl = hooks.skip_residual ? *p_dist : greedy_residual(*p_dist, x);
        const token_id y = sample(repl, rng);
        work.push_back(y);
        out.committed.push_back(y);
        diverged = true;
        if (mode == greedy_mode::stop_on_reject) break;
    }

    if (out.replaced == 0) {
        const categorical& bonus_dist = v.next(work);
        ++out.verifier_calls;
        out.bonus = sample(bonus_dist, rng);
    }
    return out;
}

int draft_trie::find_child(int node_idx, token_id t) const {
    const auto& ch = nodes[static_cast<size_t>(node_idx)].children;
    auto it = std::lower_bound(ch.begin(), ch.end(), t,
                               [](const std::pair<token_id, int>& a, token_id b) { return a.first < b; });
    if (it == ch.end() || it->first != t) return -1;
    return it->second;
}

std::vector<int> draft_trie::walk(std::span<const token_id> tokens) const {
    std::vector<int> path;
    path.reserve(tokens.size());
    int cur = 0;
    for (size_t j = 0; j < tokens.size(); ++j) {
        path.push_back(cur);
        if (j + 1 < tokens.size()) {
            cur = find_child(cur, tokens[j]);
            if (cur < 0) {
                throw std::invalid_argument("draft_trie: token path not present");
            }
        }
    }
    return path;
}

std::vector<categorical> tree_scores::cached_dists(const draft& dr) const {
    std::vector<categorical> out;
    for (int idx : trie.walk(dr.tokens)) {
        out.push_back(trie.nodes[static_cast<size_t>(idx)].dist);
    }
    return out;
}

tree_scores tree_verify(const verifier& v, std::span<const token_id> s,
                        const std::vector<draft>& drafts) {
    if (drafts.empty()) {
        throw std::invalid_argument("tree_verify: need at least one draft");
    }
    const size_t gamma = drafts[0].tokens.size();
    for (const draft& dr : drafts) {
        validate_draft_tokens(dr, v.vocab);
        if (dr.tokens.size() != gamma) {
            throw std::invalid_argument("tree_verify: drafts must share one length");
        }
    }

    tree_scores out;
    out.trie.nodes.push_back(
        {-1, -1, 0, v.next(s), {}});  // root conditions position 0 for every draft
    out.token_p.assign(drafts.size(), std::vector<double>(gamma, 0.0));

    std::vector<token_id> work(s.begin(), s.end());
    for (size_t k = 0; k < drafts.size(); ++k) {
        const auto& toks = drafts[k].tokens;
        work.resize(s.size());
        int cur = 0;
        for (size_t j = 0; j < gamma; ++j) {
            const token_id x = toks[j];
            out.token_p[k][j] = out.trie.nodes[static_cast<size_t>(cur)].dist[x];
            work.push_back(x);
            if (j + 1 == gamma) break;  // deeper prefixes condition nothing
            int child = out.trie.find_child(cur, x);
            if (child < 0) {
                child = static_cast<int>(out.trie.nodes.size());
                out.trie.nodes.push_back(
                    {x, cur, static_cast<int>(j) + 1, v.next(work), {}});
                auto& ch = out.trie.nodes[static_cast<size_t>(cur)].children;
                auto it = std::lower_bound(
                    ch.begin(), ch.end(), x,
                    [](const std::pair<token_id, int>& a, token_id b) { return a.first < b; });
                ch.insert(it, {x, child});
            }
            cur = child;
        }
    }
    out.unique_calls = static_cast<int>(out.trie.nodes.size());
    return out;
}

}  // namespace specstreak
