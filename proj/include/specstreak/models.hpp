#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "specstreak/dists.hpp"

namespace specstreak {

// Growing left context of committed tokens. Entries are in [0, vocab);
// BOS padding is implicit (context keys pad with the reserved id = vocab).
using prefix = std::vector<token_id>;

// Number of distinct conditioning contexts for an order-m model: (vocab+1)^m,
// the +1 being the reserved BOS id.
size_t context_count(int vocab, int order);

// Last `order` tokens of s, left-padded with BOS when s is shorter. Length is
// exactly `order`.
std::vector<token_id> context_key(std::span<const token_id> s, int vocab, int order);

// Dense row index of the context key, base (vocab+1), oldest token most
// significant. Order 0 collapses to a single row.
size_t context_index(std::span<const token_id> s, int vocab, int order);

// Target model: an order-m Markov chain over [0, vocab) whose rows are drawn
// from a symmetric Dirichlet(beta). Deterministic function of
// (vocab, order, beta, seed); rows are seeded independently so the table does
// not depend on construction order.
struct verifier {
    int vocab = 0;
    int order = 1;
    double beta = 0.5;
    uint64_t seed = 0;

    static verifier dirichlet(int vocab, int order, double beta, uint64_t seed);
    // hand-built rows for fixtures; rows.size() must equal context_count
    static verifier from_rows(int vocab, int order, std::vector<categorical> rows);

    // next-token posterior for the context ending s; pure, returns a stable ref
    const categorical& next(std::span<const token_id> s) const;
    const categorical& row(size_t ctx) const;
    size_t rows() const { return table_.size(); }

private:
    std::vector<categorical> table_;
};

// One proposed block plus the proposal probabilities of each drawn token
// (q_probs[j] = marginal prob of tokens[j] at position j). q_probs is what the
// standard acceptance rule divides by.
struct draft {
    std::vector<token_id> tokens;
    std::vector<double> q_probs;
};

// Drafting model: a table of logits per (context row, block position), turned
// into position-wise marginals by a temperature softmax. The block positions
// are conditionally independent given the context: all gamma marginals come
// from one evaluation, the single-denoising-step analogue.
struct drafter {
    int vocab = 0;
    int order = 1;
    int gamma_max = 4;
    double temperature = 1.0;
    uint64_t seed = 0;

    static drafter uniform_init(int vocab, int order, int gamma_max, double temperature);
    static drafter random_init(int vocab, int order, int gamma_max, double temperature,
                               double scale, uint64_t seed);

    // position-wise marginals for a gamma-token block after s, one logical
    // model evaluation regardless of how many drafts are later sampled from it
    std::vector<categorical> marginals(std::span<const token_id> s, int gamma) const;
    // same, at an explicit temperature (decode-time sweeps)
    std::vector<categorical> marginals_at(std::span<const token_id> s, int gamma,
                                          double temperature) const;

    // block sampled from one marginals() evaluation
    draft sample_block(std::span<const token_id> s, int gamma, rng_state& rng) const;

    uint64_t marginal_evals() const { return evals_; }
    void reset_marginal_evals() { evals_ = 0; }

    size_t contexts() const;
    std::span<double> logits(size_t ctx, int pos);
    std::span<const double> logits(size_t ctx, int pos) const;
    std::vector<double>& theta() { return theta_; }
    const std::vector<double>& theta() const { return theta_; }

private:
    std::vector<double> theta_;  // [context][position][vocab], dense
    mutable uint64_t evals_ = 0;  // single-thread accounting; copy per worker
};

// Sample a block from precomputed marginals; lets K drafts share one
// drafter evaluation.
draft sample_from_marginals(const std::vector<categorical>& marginals, rng_state& rng);

// Masking rate schedule for denoiser pretraining. Each training window draws
// t ~ U(0,1] and masks every block position independently with probability t
// (keep probability 1 - t). fixed() pins t for schedule-sensitivity tests.
struct mask_schedule {
    static mask_schedule uniform();
    static mask_schedule fixed(double t);

    double sample_rate(rng_state& rng) const;

    bool is_fixed = false;
    double fixed_t = 1.0;
};

// Training sequences for pretraining, typically rolled out from the verifier.
struct corpus {
    std::vector<std::vector<token_id>> seqs;
};

corpus rollout_corpus(const verifier& v, int n_seqs, int seq_len, rng_state& rng);

struct pretrain_trace_entry {
    int step = 0;
    double ce = 0.0;  // mean masked cross-entropy of the step's window
};

// Masked denoiser pretraining: per step, cut a random (context, block) window
// from the corpus, mask block positions per the schedule, and take one SGD
// step on the cross-entropy of each masked position's marginal against the
// corpus token. Softmax at temperature 1 regardless of d.temperature.
// ce_trace, when given, gains one entry per step that masked at least one
// position.
void pretrain_mdm(drafter& d, const corpus& c, const mask_schedule& sched, int steps,
                  double lr, rng_state& rng,
                  std::vector<pretrain_trace_entry>* ce_trace = nullptr);

// gamma-token continuation sampled from the verifier, extending s token by
// token. Consumes exactly gamma draws.
std::vector<token_id> teacher_path(const verifier& v, std::span<const token_id> s, int gamma,
                                   rng_state& rng);

// JSON persistence. Probabilities and logits round-trip bit-exactly; writing
// the same model twice produces byte-identical files.
void save_verifier(const verifier& v, const std::string& path);
verifier load_verifier(const std::string& path);
void save_drafter(const drafter& d, const std::string& path);
drafter load_drafter(const std::string& path);

}  // namespace specstreak
