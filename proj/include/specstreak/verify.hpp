#pragma once

#include <optional>
#include <span>
#include <vector>

#include "specstreak/dists.hpp"
#include "specstreak/models.hpp"

namespace specstreak {

// What to do with the rest of the window after a rejection: stop (classic
// speculative decoding) or keep walking the remaining drafted tokens
// literally, re-verifying each against the now-diverged committed prefix.
enum class greedy_mode {
    stop_on_reject,
    continue_literal,
};

// Result of verifying one drafted window.
//   committed      accepted tokens plus replacements, in commit order; the
//                  bonus token is not included
//   accepted_len   drafted tokens kept verbatim
//   replaced       rejection replacements inside the window; at most 1 under
//                  stop_on_reject, up to gamma under continue_literal
//   bonus          verifier sample appended after a clean (zero-rejection)
//                  window; free within the same batched verifier pass
//   verifier_calls fresh conditioning prefixes this verification evaluated,
//                  bonus included; cache hits are not counted
//   post_reject_calls  subset of verifier_calls issued after the first
//                  rejection; these are sequential latency, not batchable
//   per_pos_p      verifier probability of the drafted token at each examined
//                  position, in draft order; shorter than gamma when the walk
//                  stopped early
// Invariant: committed.size() == accepted_len + replaced.
struct verify_outcome {
    std::vector<token_id> committed;
    int accepted_len = 0;
    int replaced = 0;
    std::optional<token_id> bonus;
    int verifier_calls = 0;
    int post_reject_calls = 0;
    std::vector<double> per_pos_p;
};

// Fault injection for distribution-preservation tests. skip_residual draws
// rejection replacements from the full verifier posterior instead of the
// residual; the resulting decode is measurably biased and must fail the
// preservation check.
struct accept_hooks {
    bool skip_residual = false;
};

// Classic speculative rule: accept drafted x with prob min(1, p(x)/q(x)),
// replace from the normalized positive part of p - q, stop the window on the
// first rejection. q_marginals must be the very marginals the draft was
// sampled from; each drafted token needs q > 0.
verify_outcome standard_verify(const verifier& v, std::span<const token_id> s, const draft& dr,
                               const std::vector<categorical>& q_marginals, rng_state& rng,
                               const accept_hooks& hooks = {});

// Greedy-rule verification: accept drafted x with prob p(x) regardless of how
// the draft was produced, replace from p renormalized without x. cached_p,
// when given, supplies the per-position posteriors along the draft's own path
// (from a prior tree pass); they are valid until the first rejection, after
// which continue_literal issues fresh sequential calls. Pass nullptr to
// evaluate everything fresh.
verify_outcome greedy_verify(const verifier& v, std::span<const token_id> s, const draft& dr,
                             const std::vector<categorical>* cached_p, greedy_mode mode,
                             rng_state& rng, const accept_hooks& hooks = {});

// Trie over K same-length drafts; one node per distinct conditioning prefix,
// root = the committed prefix itself. Nodes hold the verifier posterior for
// their prefix, so a later verification pass needs no fresh calls until it
// leaves the trie.
struct draft_trie {
    struct node {
        token_id tok = -1;  // edge token from parent; -1 at the root
        int parent = -1;
        int depth = 0;  // root is 0
        categorical dist;
        std::vector<std::pair<token_id, int>> children;  // sorted by token
    };
    std::vector<node> nodes;  // nodes[0] is the root

    int find_child(int node_idx, token_id t) const;
    // path of node indices conditioning positions 0..len-1 of a draft
    std::vector<int> walk(std::span<const token_id> tokens) const;
};

// One batched verifier evaluation over K drafts.
//   token_p[k][j]   P(draft k token j | prefix, draft k tokens < j)
//   unique_calls    distinct conditioning prefixes evaluated, root included
//   trie            the shared structure, for cache reuse during verification
struct tree_scores {
    std::vector<std::vector<double>> token_p;
    int unique_calls = 0;
    draft_trie trie;

    // per-position posteriors along draft k's own path
    std::vector<categorical> cached_dists(const draft& dr) const;
};

tree_scores tree_verify(const verifier& v, std::span<const token_id> s,
                        const std::vector<draft>& drafts);

}  // namespace specstreak
