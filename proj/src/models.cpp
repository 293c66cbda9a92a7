#include "specstreak/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "specstreak/errors.hpp"

namespace specstreak {

using nlohmann::json;

namespace {

constexpr size_t k_max_contexts = size_t(1) << 24;

void validate_shape(int vocab, int order) {
    if (vocab < 2) {
        throw std::invalid_argument("model: vocab must be at least 2");
    }
    if (order < 0) {
        throw std::invalid_argument("model: order must be non-negative");
    }
    size_t n = 1;
    for (int i = 0; i < order; ++i) {
        n *= static_cast<size_t>(vocab) + 1;
        if (n > k_max_contexts) {
            throw std::invalid_argument("model: context table too large, lower order or vocab");
        }
    }
}

}  // namespace

size_t context_count(int vocab, int order) {
    validate_shape(vocab, order);
    size_t n = 1;
    for (int i = 0; i < order; ++i) n *= static_cast<size_t>(vocab) + 1;
    return n;
}

std::vector<token_id> context_key(std::span<const token_id> s, int vocab, int order) {
    const token_id bos = static_cast<token_id>(vocab);
    std::vector<token_id> key(static_cast<size_t>(order), bos);
    for (int i = 0; i < order; ++i) {
        // key[order-1] is the most recent token
        size_t back = static_cast<size_t>(i);
        if (back < s.size()) {
            key[static_cast<size_t>(order - 1 - i)] = s[s.size() - 1 - back];
        }
    }
    return key;
}

size_t context_index(std::span<const token_id> s, int vocab, int order) {
    const size_t base = static_cast<size_t>(vocab) + 1;
    size_t idx = 0;
    for (token_id t : context_key(s, vocab, order)) {
        if (t < 0 || static_cast<size_t>(t) >= base) {
            throw std::invalid_argument("context_index: token out of range");
        }
        idx = idx * base + static_cast<size_t>(t);
    }
    return idx;
}

verifier verifier::dirichlet(int vocab, int order, double beta, uint64_t seed) {
    validate_shape(vocab, order);
    if (!(beta > 0.0)) {
        throw std::invalid_argument("verifier: beta must be positive");
    }
    verifier v;
    v.vocab = vocab;
    v.order = order;
    v.beta = beta;
    v.seed = seed;
    const size_t n = context_count(vocab, order);
    v.table_.reserve(n);
    for (size_t row = 0; row < n; ++row) {
        // per-row stream, so rows are independent of enumeration order
        rng_state rng(derive_seed(seed, row));
        std::vector<double> w(static_cast<size_t>(vocab));
        for (double& x : w) x = rng.gamma(beta);
        v.table_.push_back(categorical::normalized(std::move(w)));
    }
    return v;
}

verifier verifier::from_rows(int vocab, int order, std::vector<categorical> rows) {
    validate_shape(vocab, order);
    if (rows.size() != context_count(vocab, order)) {
        throw std::invalid_argument("verifier: row count mismatch");
    }
    for (const auto& r : rows) {
        if (r.size() != vocab) {
            throw std::invalid_argument("verifier: row size mismatch");
        }
    }
    verifier v;
    v.vocab = vocab;
    v.order = order;
    v.beta = 0.0;
    v.seed = 0;
    v.table_ = std::move(rows);
    return v;
}

const categorical& verifier::next(std::span<const token_id> s) const {
    return table_[context_index(s, vocab, order)];
}

const categorical& verifier::row(size_t ctx) const {
    if (ctx >= table_.size()) {
        throw std::invalid_argument("verifier: row index out of range");
    }
    return table_[ctx];
}

static void validate_drafter_shape(int vocab, int order, int gamma_max) {
    validate_shape(vocab, order);
    if (gamma_max < 1) {
        throw std::invalid_argument("drafter: gamma_max must be at least 1");
    }
}

drafter drafter::uniform_init(int vocab, int order, int gamma_max, double temperature) {
    validate_drafter_shape(vocab, order, gamma_max);
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("drafter: temperature must be positive");
    }
    drafter d;
    d.vocab = vocab;
    d.order = order;
    d.gamma_max = gamma_max;
    d.temperature = temperature;
    d.seed = 0;
    d.theta_.assign(context_count(vocab, order) * static_cast<size_t>(gamma_max) *
                        static_cast<size_t>(vocab),
                    0.0);
    return d;
}

drafter drafter::random_init(int vocab, int order, int gamma_max, double temperature,
                             double scale, uint64_t seed) {
    drafter d = uniform_init(vocab, order, gamma_max, temperature);
    d.seed = seed;
    rng_state rng(derive_seed(seed, 0x7e7a));
    for (double& x : d.theta_) x = scale * rng.normal();
    return d;
}

size_t drafter::contexts() const {
    return theta_.size() / (static_cast<size_t>(gamma_max) * static_cast<size_t>(vocab));
}

std::span<double> drafter::logits(size_t ctx, int pos) {
    if (pos < 0 || pos >= gamma_max || ctx >= contexts()) {
        throw std::invalid_argument("drafter: logits index out of range");
    }
    size_t off = (ctx * static_cast<size_t>(gamma_max) + static_cast<size_t>(pos)) *
                 static_cast<size_t>(vocab);
    return {theta_.data() + off, static_cast<size_t>(vocab)};
}

std::span<const double> drafter::logits(size_t ctx, int pos) const {
    return const_cast<drafter*>(this)->logits(ctx, pos);
}

std::vector<categorical> drafter::marginals_at(std::span<const token_id> s, int gamma,
                                               double temperature) const {
    if (gamma < 1 || gamma > gamma_max) {
        throw std::invalid_argument("drafter: gamma out of range");
    }
    ++evals_;
    const size_t ctx = context_index(s, vocab, order);
    std::vector<categorical> out;
    out.reserve(static_cast<size_t>(gamma));
    for (int j = 0; j < gamma; ++j) {
        out.push_back(apply_temperature(logits(ctx, j), temperature));
    }
    return out;
}

std::vector<categorical> drafter::marginals(std::span<const token_id> s, int gamma) const {
    return marginals_at(s, gamma, temperature);
}

draft drafter::sample_block(std::span<const token_id> s, int gamma, rng_state& rng) const {
    return sample_from_marginals(marginals(s, gamma), rng);
}

draft sample_from_marginals(const std::vector<categorical>& marginals, rng_state& rng) {
    draft out;
    out.tokens.reserve(marginals.size());
    out.q_probs.reserve(marginals.size());
    for (const categorical& m : marginals) {
        token_id t = sample(m, rng);
        out.tokens.push_back(t);
        out.q_probs.push_back(m[t]);
    }
    return out;
}

mask_schedule mask_schedule::uniform() { return {}; }

mask_schedule mask_schedule::fixed(double t) {
    if (!(t > 0.0) || t > 1.0) {
        throw std::invalid_argument("mask_schedule: fixed rate must be in (0, 1]");
    }
    mask_schedule s;
    s.is_fixed = true;
    s.fixed_t = t;
    return s;
}

double mask_schedule::sample_rate(rng_state& rng) const {
    return is_fixed ? fixed_t : rng.uniform_pos();
}

corpus rollout_corpus(const verifier& v, int n_seqs, int seq_len, rng_state& rng) {
    if (n_seqs < 1 || seq_len < 1) {
        throw std::invalid_argument("rollout_corpus: need at least one sequence and token");
    }
    corpus c;
    c.seqs.reserve(static_cast<size_t>(n_seqs));
    for (int i = 0; i < n_seqs; ++i) {
        std::vector<token_id> s;
        s.reserve(static_cast<size_t>(seq_len));
        for (int t = 0; t < seq_len; ++t) {
            s.push_back(sample(v.next(s), rng));
        }
        c.seqs.push_back(std::move(s));
    }
    return c;
}

void pretrain_mdm(drafter& d, const corpus& c, const mask_schedule& sched, int steps,
                  double lr, rng_state& rng, std::vector<pretrain_trace_entry>* ce_trace) {
    if (c.seqs.empty()) {
        throw std::invalid_argument("pretrain_mdm: empty corpus");
    }
    for (const auto& s : c.seqs) {
        if (static_cast<int>(s.size()) < d.order + d.gamma_max) {
            throw std::invalid_argument(
                "pretrain_mdm: sequences must cover a context plus a draft block");
        }
        for (token_id t : s) {
            if (t < 0 || t >= d.vocab) {
                throw std::invalid_argument("pretrain_mdm: corpus token out of range");
            }
        }
    }
    if (steps < 0 || !(lr > 0.0)) {
        throw std::invalid_argument("pretrain_mdm: bad steps or learning rate");
    }
    if (ce_trace) ce_trace->clear();

    for (int step = 0; step < steps; ++step) {
        const auto& seq = c.seqs[static_cast<size_t>(rng.below(static_cast<int>(c.seqs.size())))];
        // block start; tokens before it form the context (BOS-padded when short)
        const int start = rng.below(static_cast<int>(seq.size()) - d.gamma_max + 1);
        const size_t ctx = context_index(
            std::span<const token_id>(seq.data(), static_cast<size_t>(start)), d.vocab, d.order);
        const double t = sched.sample_rate(rng);

        double ce_sum = 0.0;
        int masked = 0;
        for (int j = 0; j < d.gamma_max; ++j) {
            if (rng.uniform() >= t) continue;  // position stays visible, no loss
            ++masked;
            const token_id target = seq[static_cast<size_t>(start + j)];
            categorical q = apply_temperature(d.logits(ctx, j), 1.0);
            ce_sum += -std::log(q[target]);
            auto th = d.logits(ctx, j);
            for (int y = 0; y < d.vocab; ++y) {
                double g = q[y] - (y == target ? 1.0 : 0.0);
                th[static_cast<size_t>(y)] -= lr * g;
            }
        }
        if (ce_trace && masked > 0) {
            ce_trace->push_back({step, ce_sum / masked});
        }
    }
}

std::vector<token_id> teacher_path(const verifier& v, std::span<const token_id> s, int gamma,
                                   rng_state& rng) {
    if (gamma < 0) {
        throw std::invalid_argument("teacher_path: gamma must be non-negative");
    }
    std::vector<token_id> full(s.begin(), s.end());
    std::vector<token_id> out;
    out.reserve(static_cast<size_t>(gamma));
    for (int j = 0; j < gamma; ++j) {
        token_id t = sample(v.next(full), rng);
        out.push_back(t);
        full.push_back(t);
    }
    return out;
}

namespace {

json load_model_json(const std::string& path, const char* kind) {
    std::ifstream in(path);
    if (!in) {
        throw io_error("cannot open model file: " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw io_error("malformed model file " + path + ": " + e.what());
    }
    if (!j.is_object() || j.value("kind", "") != kind) {
        throw io_error("model file " + path + " is not a " + kind);
    }
    return j;
}

void write_text_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw io_error("cannot write file: " + path);
    }
    out << body;
    if (!out) {
        throw io_error("short write: " + path);
    }
}

}  // namespace

void save_verifier(const verifier& v, const std::string& path) {
    json rows = json::array();
    for (size_t r = 0; r < v.rows(); ++r) {
        rows.push_back(v.row(r).probs());
    }
    json j{{"kind", "verifier"}, {"vocab", v.vocab},   {"order", v.order},
           {"beta", v.beta},     {"seed", v.seed},     {"rows", std::move(rows)}};
    write_text_file(path, j.dump(2) + "\n");
}

verifier load_verifier(const std::string& path) {
    json j = load_model_json(path, "verifier");
    try {
        std::vector<categorical> rows;
        for (const auto& r : j.at("rows")) {
            rows.push_back(categorical(r.get<std::vector<double>>()));
        }
        verifier v = verifier::from_rows(j.at("vocab").get<int>(), j.at("order").get<int>(),
                                         std::move(rows));
        v.beta = j.at("beta").get<double>();
        v.seed = j.at("seed").get<uint64_t>();
        return v;
    } catch (const json::exception& e) {
        throw io_error("malformed verifier file " + path + ": " + e.what());
    }
}

void save_drafter(const drafter& d, const std::string& path) {
    json theta = json::array();
    for (size_t c = 0; c < d.contexts(); ++c) {
        json per_pos = json::array();
        for (int p = 0; p < d.gamma_max; ++p) {
            auto row = d.logits(c, p);
            per_pos.push_back(std::vector<double>(row.begin(), row.end()));
        }
        theta.push_back(std::move(per_pos));
    }
    json j{{"kind", "drafter"},
           {"vocab", d.vocab},
           {"order", d.order},
           {"gamma_max", d.gamma_max},
           {"temperature", d.temperature},
           {"seed", d.seed},
           {"theta", std::move(theta)}};
    write_text_file(path, j.dump(2) + "\n");
}

drafter load_drafter(const std::string& path) {
    json j = load_model_json(path, "drafter");
    try {
        drafter d = drafter::uniform_init(j.at("vocab").get<int>(), j.at("order").get<int>(),
                                          j.at("gamma_max").get<int>(),
                                          j.at("temperature").get<double>());
        d.seed = j.at("seed").get<uint64_t>();
        const auto& theta = j.at("theta");
        if (theta.size() != d.contexts()) {
            throw io_error("drafter file " + path + ": theta context count mismatch");
        }
        for (size_t c = 0; c < d.contexts(); ++c) {
            const auto& per_pos = theta.at(c);
            if (static_cast<int>(per_pos.size()) != d.gamma_max) {
                throw io_error("drafter file " + path + ": theta position count mismatch");
            }
            for (int p = 0; p < d.gamma_max; ++p) {
                auto row = per_pos.at(static_cast<size_t>(p)).get<std::vector<double>>();
                if (static_cast<int>(row.size()) != d.vocab) {
                    throw io_error("drafter file " + path + ": theta row size mismatch");
                }
                auto dst = d.logits(c, p);
                std::copy(row.begin(), row.end(), dst.begin());
            }
        }
        return d;
    } catch (const json::exception& e) {
        throw io_error("malformed drafter file " + path + ": " + e.what());
    }
}

}  // namespace specstreak
