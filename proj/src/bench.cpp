#include "specstreak/bench.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace specstreak {

namespace {

// Accept/reject tally per position. Replacements never equal the drafted
// token (residuals zero it out), so committed-vs-drafted comparison recovers
// the per-position accept flags under either rule and mode.
void accumulate_alpha(const verify_outcome& out, const std::vector<token_id>& drafted,
                      std::vector<long>& reached, std::vector<long>& accepted) {
    const size_t examined = out.per_pos_p.size();
    for (size_t j = 0; j < examined; ++j) {
        ++reached[j];
        if (out.committed[j] == drafted[j]) ++accepted[j];
    }
}

std::vector<double> alpha_from_tallies(const std::vector<long>& reached,
                                       const std::vector<long>& accepted) {
    std::vector<double> curve(reached.size(), 0.0);
    for (size_t j = 0; j < reached.size(); ++j) {
        curve[j] = reached[j] > 0 ? static_cast<double>(accepted[j]) / reached[j] : 0.0;
    }
    return curve;
}

}  // namespace

run_metrics decode_loop(const verifier& v, const drafter& d, std::span<const token_id> s0,
                        long n_tokens, const decode_config& cfg, const cost_model& cost,
                        rng_state& rng, const accept_hooks& hooks) {
    if (n_tokens < 1) {
        throw std::invalid_argument("decode_loop: n_tokens must be at least 1");
    }
    if (cost.c_draft < 0 || cost.c_verify < 0 || cost.c_verify_seq < 0 ||
        cost.c_verify_per_token < 0) {
        throw std::invalid_argument("decode_loop: cost model entries must be non-negative");
    }
    if (cfg.rule == rule_kind::standard && cfg.sel.k != 1) {
        throw std::invalid_argument("decode_loop: the standard rule verifies a single draft");
    }
    const int gamma = cfg.sel.gamma;
    if (gamma < 1 || gamma > d.gamma_max) {
        throw std::invalid_argument("decode_loop: gamma out of the drafter's range");
    }

    run_metrics m;
    m.seed = rng.seed();
    std::vector<long> reached(static_cast<size_t>(gamma), 0);
    std::vector<long> accepted(static_cast<size_t>(gamma), 0);
    std::vector<token_id> s(s0.begin(), s0.end());
    long accepted_total = 0;
    double spent = 0.0;
    double tau_sum = 0.0;

    while (m.total_tokens < n_tokens) {
        ++m.drafts;
        verify_outcome out;
        long step_calls = 0;
        if (cfg.rule == rule_kind::standard) {
            const auto q = d.marginals_at(s, gamma, cfg.sel.temperature);
            const draft dr = sample_from_marginals(q, rng);
            out = standard_verify(v, s, dr, q, rng, hooks);
            step_calls = out.verifier_calls;
            accumulate_alpha(out, dr.tokens, reached, accepted);
        } else {
            select_result sel = self_select(v, d, s, cfg.sel, rng, hooks);
            out = std::move(sel.outcome);
            step_calls = sel.unique_calls + out.verifier_calls;
            tau_sum += sel.candidates[static_cast<size_t>(sel.selected)].tau;
            accumulate_alpha(out, sel.candidates[static_cast<size_t>(sel.selected)].dr.tokens,
                             reached, accepted);
        }
        accepted_total += out.accepted_len;
        m.unique_calls += step_calls;
        for (token_id t : out.committed) s.push_back(t);
        m.total_tokens += static_cast<long>(out.committed.size());
        if (out.bonus) {
            s.push_back(*out.bonus);
            ++m.total_tokens;
        }
        spent += cost.c_draft + cost.c_verify + cost.c_verify_per_token * step_calls +
                 cost.c_verify_seq * out.post_reject_calls;
    }

    m.accepted_mean = static_cast<double>(accepted_total) / m.drafts;
    m.tokens_per_draft = m.accepted_mean + 1.0;
    m.alpha_curve = alpha_from_tallies(reached, accepted);
    m.sim_speedup = spent > 0.0 ? static_cast<double>(m.total_tokens) * cost.c_verify_seq / spent
                                : 0.0;
    if (cfg.rule == rule_kind::greedy) {
        m.mean_selected_tau = tau_sum / m.drafts;
    }
    return m;
}

std::vector<token_id> vanilla_loop(const verifier& v, std::span<const token_id> s0,
                                   long n_tokens, rng_state& rng) {
    if (n_tokens < 0) {
        throw std::invalid_argument("vanilla_loop: n_tokens must be non-negative");
    }
    std::vector<token_id> s(s0.begin(), s0.end());
    s.reserve(s.size() + static_cast<size_t>(n_tokens));
    for (long i = 0; i < n_tokens; ++i) {
        s.push_back(sample(v.next(s), rng));
    }
    return {s.begin() + static_cast<long>(s0.size()), s.end()};
}

oracle_result expected_streak_oracle(const verifier& v, const drafter& d,
                                     std::span<const token_id> s, int gamma, rule_kind rule) {
    if (gamma < 1 || gamma > d.gamma_max) {
        throw std::invalid_argument("expected_streak_oracle: gamma out of range");
    }
    double paths = 1.0;
    for (int j = 0; j < gamma; ++j) paths *= v.vocab;
    if (paths > 32768.0) {
        throw std::invalid_argument("expected_streak_oracle: vocab^gamma exceeds 32768");
    }

    const auto q = d.marginals(s, gamma);
    std::vector<token_id> work(s.begin(), s.end());
    // f(work, j): expected further accepts standing at position j
    auto rec = [&](auto&& self, int j) -> double {
        if (j == gamma) return 0.0;
        double acc = 0.0;
        const categorical& p_dist = v.next(work);
        for (token_id x = 0; x < v.vocab; ++x) {
            const double qx = q[static_cast<size_t>(j)][x];
            if (qx <= 0.0) continue;
            const double a =
                rule == rule_kind::standard ? std::min(1.0, p_dist[x] / qx) : p_dist[x];
            if (a <= 0.0) continue;
            work.push_back(x);
            acc += qx * a * (1.0 + self(self, j + 1));
            work.pop_back();
        }
        return acc;
    };
    return {rec(rec, 0)};
}

double expected_streak_at_alpha(double alpha, int gamma) {
    if (alpha < 0.0 || alpha > 1.0 || gamma < 1) {
        throw std::invalid_argument("expected_streak_at_alpha: need alpha in [0,1], gamma >= 1");
    }
    double acc = 0.0;
    for (int m = gamma; m-- > 0;) acc = alpha * (1.0 + acc);
    return acc;
}

std::vector<categorical> exact_position_marginals(const verifier& v,
                                                  std::span<const token_id> s0, int count) {
    if (count < 1) {
        throw std::invalid_argument("exact_position_marginals: count must be at least 1");
    }
    const size_t base = static_cast<size_t>(v.vocab) + 1;
    size_t period = 1;  // base^order, for dropping the oldest context token
    for (int i = 0; i < v.order; ++i) period *= base;

    std::vector<double> state(period, 0.0);
    state[context_index(s0, v.vocab, v.order)] = 1.0;
    std::vector<categorical> out;
    out.reserve(static_cast<size_t>(count));
    for (int t = 0; t < count; ++t) {
        std::vector<double> marginal(static_cast<size_t>(v.vocab), 0.0);
        std::vector<double> next_state(period, 0.0);
        for (size_t ctx = 0; ctx < period; ++ctx) {
            const double w = state[ctx];
            if (w <= 0.0) continue;
            const categorical& row = v.row(ctx);
            for (token_id x = 0; x < v.vocab; ++x) {
                const double px = w * row[x];
                if (px <= 0.0) continue;
                marginal[static_cast<size_t>(x)] += px;
                const size_t nxt = v.order == 0 ? 0
                                                : (ctx * base + static_cast<size_t>(x)) % period;
                next_state[nxt] += px;
            }
        }
        out.push_back(categorical::normalized(std::move(marginal)));
        state = std::move(next_state);
    }
    return out;
}

position_counts collect_speculative_counts(const verifier& v, const drafter& d,
                                           const invariance_config& cfg, long n_samples,
                                           int position_count, std::span<const token_id> s0,
                                           rng_state& rng) {
    if (n_samples < 1 || position_count < 1) {
        throw std::invalid_argument("invariance: need at least one sample and position");
    }
    position_counts pc;
    pc.n_samples = n_samples;
    pc.counts.assign(static_cast<size_t>(position_count),
                     std::vector<long>(static_cast<size_t>(v.vocab), 0));

    std::vector<token_id> s;
    for (long i = 0; i < n_samples; ++i) {
        s.assign(s0.begin(), s0.end());
        long produced = 0;
        while (produced < position_count) {
            verify_outcome out;
            if (cfg.rule == rule_kind::standard) {
                const auto q = d.marginals_at(s, cfg.sel.gamma, cfg.sel.temperature);
                const draft dr = sample_from_marginals(q, rng);
                out = standard_verify(v, s, dr, q, rng, cfg.hooks);
            } else {
                out = self_select(v, d, s, cfg.sel, rng, cfg.hooks).outcome;
            }
            for (token_id t : out.committed) s.push_back(t);
            if (out.bonus) s.push_back(*out.bonus);
            produced = static_cast<long>(s.size() - s0.size());
        }
        for (int t = 0; t < position_count; ++t) {
            ++pc.counts[static_cast<size_t>(t)]
                       [static_cast<size_t>(s[s0.size() + static_cast<size_t>(t)])];
        }
    }
    return pc;
}

position_counts collect_vanilla_counts(const verifier& v, long n_samples, int position_count,
                                       std::span<const token_id> s0, rng_state& rng) {
    if (n_samples < 1 || position_count < 1) {
        throw std::invalid_argument("invariance: need at least one sample and position");
    }
    position_counts pc;
    pc.n_samples = n_samples;
    pc.counts.assign(static_cast<size_t>(position_count),
                     std::vector<long>(static_cast<size_t>(v.vocab), 0));
    for (long i = 0; i < n_samples; ++i) {
        const auto toks = vanilla_loop(v, s0, position_count, rng);
        for (int t = 0; t < position_count; ++t) {
            ++pc.counts[static_cast<size_t>(t)][static_cast<size_t>(toks[static_cast<size_t>(t)])];
        }
    }
    return pc;
}

invariance_report compare_position_counts(const position_counts& speculative,
                                          const position_counts& vanilla, const verifier& v,
                                          std::span<const token_id> s0, double base_threshold) {
    if (speculative.counts.size() != vanilla.counts.size()) {
        throw std::invalid_argument("invariance: position count mismatch");
    }
    const int positions = static_cast<int>(speculative.counts.size());
    const auto exact = exact_position_marginals(v, s0, positions);

    invariance_report rep;
    rep.n_samples = speculative.n_samples;
    // threshold calibrated for 1e5 samples; binomial noise scales as 1/sqrt(n)
    rep.threshold = base_threshold * std::sqrt(1e5 / static_cast<double>(speculative.n_samples));
    for (int t = 0; t < positions; ++t) {
        std::vector<double> emp_s(static_cast<size_t>(v.vocab), 0.0);
        std::vector<double> emp_v(static_cast<size_t>(v.vocab), 0.0);
        for (int x = 0; x < v.vocab; ++x) {
            emp_s[static_cast<size_t>(x)] =
                static_cast<double>(speculative.counts[static_cast<size_t>(t)][static_cast<size_t>(x)]) /
                speculative.n_samples;
            emp_v[static_cast<size_t>(x)] =
                static_cast<double>(vanilla.counts[static_cast<size_t>(t)][static_cast<size_t>(x)]) /
                vanilla.n_samples;
        }
        double tv_sv = 0.0;
        double tv_se = 0.0;
        for (int x = 0; x < v.vocab; ++x) {
            tv_sv += std::abs(emp_s[static_cast<size_t>(x)] - emp_v[static_cast<size_t>(x)]);
            tv_se += std::abs(emp_s[static_cast<size_t>(x)] - exact[static_cast<size_t>(t)][x]);
        }
        tv_sv *= 0.5;
        tv_se *= 0.5;
        rep.rows.push_back({t, tv_sv, tv_se});
        rep.max_tv = std::max(rep.max_tv, tv_sv);
        rep.max_tv_exact = std::max(rep.max_tv_exact, tv_se);
    }
    rep.pass = rep.max_tv <= rep.threshold;
    return rep;
}

invariance_report invariance_test(const verifier& v, const drafter& d,
                                  const invariance_config& cfg, long n_samples,
                                  int position_count, std::span<const token_id> s0,
                                  rng_state& rng) {
    const position_counts spec_counts =
        collect_speculative_counts(v, d, cfg, n_samples, position_count, s0, rng);
    const position_counts van_counts =
        collect_vanilla_counts(v, n_samples, position_count, s0, rng);
    return compare_position_counts(spec_counts, van_counts, v, s0, cfg.base_threshold);
}

std::vector<double> alpha_curve(const verifier& v, const drafter& d,
                                const std::vector<prefix>& s_set, int gamma, long n_samples,
                                rule_kind rule, double temperature, rng_state& rng) {
    if (s_set.empty() || n_samples < 1) {
        throw std::invalid_argument("alpha_curve: need prefixes and samples");
    }
    if (gamma < 1 || gamma > d.gamma_max) {
        throw std::invalid_argument("alpha_curve: gamma out of range");
    }
    std::vector<long> reached(static_cast<size_t>(gamma), 0);
    std::vector<long> accepted(static_cast<size_t>(gamma), 0);
    for (const prefix& s : s_set) {
        const auto q = d.marginals_at(s, gamma, temperature);
        for (long i = 0; i < n_samples; ++i) {
            const draft dr = sample_from_marginals(q, rng);
            verify_outcome out;
            if (rule == rule_kind::standard) {
                out = standard_verify(v, s, dr, q, rng);
            } else {
                out = greedy_verify(v, s, dr, nullptr, greedy_mode::stop_on_reject, rng);
            }
            accumulate_alpha(out, dr.tokens, reached, accepted);
        }
    }
    return alpha_from_tallies(reached, accepted);
}

}  // namespace specstreak
