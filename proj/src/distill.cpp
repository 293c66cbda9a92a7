#include "specstreak/distill.hpp"

#include <cmath>
#include <stdexcept>

#include "specstreak/bench.hpp"

namespace specstreak {

namespace {

void validate_batch(const drafter& d, const teacher_batch& batch, int gamma) {
    if (batch.empty()) {
        throw std::invalid_argument("distill: empty teacher batch");
    }
    if (gamma < 1 || gamma > d.gamma_max) {
        throw std::invalid_argument("distill: gamma out of the drafter's range");
    }
    for (const auto& ex : batch) {
        if (static_cast<int>(ex.path.size()) != gamma) {
            throw std::invalid_argument("distill: teacher path length mismatch");
        }
        for (token_id t : ex.path) {
            if (t < 0 || t >= d.vocab) {
                throw std::invalid_argument("distill: teacher token out of range");
            }
        }
    }
}

// training marginals are always temperature-1 softmax rows
std::vector<categorical> train_marginals(const drafter& d, const teacher_example& ex, int gamma,
                                         size_t* ctx_out) {
    const size_t ctx = context_index(ex.ctx, d.vocab, d.order);
    if (ctx_out) *ctx_out = ctx;
    std::vector<categorical> q;
    q.reserve(static_cast<size_t>(gamma));
    for (int j = 0; j < gamma; ++j) {
        q.push_back(apply_temperature(d.logits(ctx, j), 1.0));
    }
    return q;
}

double path_streak(const std::vector<categorical>& q, const std::vector<token_id>& path) {
    double run = 1.0;
    double acc = 0.0;
    for (size_t j = 0; j < path.size(); ++j) {
        run *= q[j][path[j]];
        acc += run;
    }
    return acc;
}

}  // namespace

teacher_batch sample_teacher_batch(const verifier& v, int batch_size, int gamma,
                                   int prefix_rollout_len, rng_state& rng) {
    if (batch_size < 1 || gamma < 1 || prefix_rollout_len < 0) {
        throw std::invalid_argument("sample_teacher_batch: bad sizes");
    }
    teacher_batch batch;
    batch.reserve(static_cast<size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        teacher_example ex;
        ex.ctx = teacher_path(v, {}, prefix_rollout_len, rng);
        ex.path = teacher_path(v, ex.ctx, gamma, rng);
        batch.push_back(std::move(ex));
    }
    return batch;
}

double streak_objective(const drafter& d, const teacher_batch& batch, int gamma) {
    validate_batch(d, batch, gamma);
    double total = 0.0;
    for (const auto& ex : batch) {
        total += path_streak(train_marginals(d, ex, gamma, nullptr), ex.path);
    }
    return total / static_cast<double>(batch.size());
}

objective_grad streak_grad(const drafter& d, const teacher_batch& batch, int gamma) {
    validate_batch(d, batch, gamma);
    objective_grad out;
    out.grad.assign(d.theta().size(), 0.0);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    for (const auto& ex : batch) {
        size_t ctx = 0;
        const auto q = train_marginals(d, ex, gamma, &ctx);
        std::vector<double> u(static_cast<size_t>(gamma));
        for (int j = 0; j < gamma; ++j) u[static_cast<size_t>(j)] = q[static_cast<size_t>(j)][ex.path[static_cast<size_t>(j)]];

        // head_j = prod_{j' < j} u_j',  tail_j = 1 + u_{j+1} (1 + u_{j+2} (...))
        // d(streak)/d(u_j) = head_j * tail_j
        std::vector<double> tail(static_cast<size_t>(gamma), 1.0);
        for (int j = gamma - 2; j >= 0; --j) {
            tail[static_cast<size_t>(j)] =
                1.0 + u[static_cast<size_t>(j + 1)] * tail[static_cast<size_t>(j + 1)];
        }
        double head = 1.0;
        double streak = 0.0;
        double run = 1.0;
        for (int j = 0; j < gamma; ++j) {
            run *= u[static_cast<size_t>(j)];
            streak += run;
        }
        out.value += streak * inv_b;

        for (int j = 0; j < gamma; ++j) {
            const double coeff = head * tail[static_cast<size_t>(j)] * inv_b;
            const double uj = u[static_cast<size_t>(j)];
            // chain rule through the softmax row: du/dtheta_y = u (1[y=x] - q(y))
            const size_t off =
                (ctx * static_cast<size_t>(d.gamma_max) + static_cast<size_t>(j)) *
                static_cast<size_t>(d.vocab);
            const auto& qj = q[static_cast<size_t>(j)];
            for (int y = 0; y < d.vocab; ++y) {
                const double ind = y == ex.path[static_cast<size_t>(j)] ? 1.0 : 0.0;
                out.grad[off + static_cast<size_t>(y)] += coeff * uj * (ind - qj[y]);
            }
            head *= uj;
        }
    }

    double sq = 0.0;
    for (double g : out.grad) sq += g * g;
    out.grad_norm = std::sqrt(sq);
    return out;
}

double baseline_objective(const drafter& d, const teacher_batch& batch, int gamma,
                          objective_kind kind) {
    validate_batch(d, batch, gamma);
    if (kind == objective_kind::streak) {
        throw std::invalid_argument("baseline_objective: use streak_objective");
    }
    const int span = kind == objective_kind::ar_window1 ? 1 : gamma;
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto q = train_marginals(d, ex, gamma, nullptr);
        double ce = 0.0;
        for (int j = 0; j < span; ++j) {
            ce += -std::log(q[static_cast<size_t>(j)][ex.path[static_cast<size_t>(j)]]);
        }
        total += ce / span;
    }
    return total / static_cast<double>(batch.size());
}

objective_grad baseline_grad(const drafter& d, const teacher_batch& batch, int gamma,
                             objective_kind kind) {
    validate_batch(d, batch, gamma);
    if (kind == objective_kind::streak) {
        throw std::invalid_argument("baseline_grad: use streak_grad");
    }
    const int span = kind == objective_kind::ar_window1 ? 1 : gamma;
    objective_grad out;
    out.grad.assign(d.theta().size(), 0.0);
    const double w = 1.0 / (static_cast<double>(batch.size()) * span);

    for (const auto& ex : batch) {
        size_t ctx = 0;
        const auto q = train_marginals(d, ex, gamma, &ctx);
        for (int j = 0; j < span; ++j) {
            const auto& qj = q[static_cast<size_t>(j)];
            out.value += -std::log(qj[ex.path[static_cast<size_t>(j)]]) * w;
            const size_t off =
                (ctx * static_cast<size_t>(d.gamma_max) + static_cast<size_t>(j)) *
                static_cast<size_t>(d.vocab);
            for (int y = 0; y < d.vocab; ++y) {
                const double ind = y == ex.path[static_cast<size_t>(j)] ? 1.0 : 0.0;
                out.grad[off + static_cast<size_t>(y)] += w * (qj[y] - ind);
            }
        }
    }

    double sq = 0.0;
    for (double g : out.grad) sq += g * g;
    out.grad_norm = std::sqrt(sq);
    return out;
}

double objective_value(const drafter& d, const teacher_batch& batch, int gamma,
                       objective_kind kind) {
    return kind == objective_kind::streak ? streak_objective(d, batch, gamma)
                                          : baseline_objective(d, batch, gamma, kind);
}

objective_grad objective_gradient(const drafter& d, const teacher_batch& batch, int gamma,
                                  objective_kind kind) {
    return kind == objective_kind::streak ? streak_grad(d, batch, gamma)
                                          : baseline_grad(d, batch, gamma, kind);
}

trace_entry distill_step(drafter& d, const verifier& v, const trainer_config& cfg, int step,
                         rng_state& rng, const teacher_batch* fixed_batch) {
    teacher_batch scratch;
    const teacher_batch* batch = fixed_batch;
    if (!batch) {
        scratch = sample_teacher_batch(v, cfg.batch_size, cfg.gamma, cfg.prefix_rollout_len, rng);
        batch = &scratch;
    }
    const objective_grad og = objective_gradient(d, *batch, cfg.gamma, cfg.objective);
    // ascend the reward, descend the losses
    const double sign = cfg.objective == objective_kind::streak ? 1.0 : -1.0;
    auto& theta = d.theta();
    for (size_t i = 0; i < theta.size(); ++i) {
        theta[i] += sign * cfg.lr * og.grad[i];
    }
    return {step, og.value, og.grad_norm, std::nullopt};
}

std::vector<trace_entry> distill_run(drafter& d, const verifier& v, const trainer_config& cfg) {
    if (cfg.steps < 1 || !(cfg.lr > 0.0)) {
        throw std::invalid_argument("distill_run: bad steps or learning rate");
    }
    rng_state rng(derive_seed(cfg.seed, 0xd1571ull));
    teacher_batch fixed;
    if (cfg.fixed_batch) {
        fixed = sample_teacher_batch(v, cfg.batch_size, cfg.gamma, cfg.prefix_rollout_len, rng);
    }

    std::vector<trace_entry> trace;
    trace.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        trace_entry e = distill_step(d, v, cfg, step, rng, cfg.fixed_batch ? &fixed : nullptr);
        if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
            // separate stream so eval cadence cannot disturb training draws
            rng_state eval_rng(derive_seed(cfg.seed, 0xe7a1ull + static_cast<uint64_t>(step)));
            decode_config dc;
            dc.rule = rule_kind::greedy;
            dc.sel = {1, cfg.gamma, 1.0, greedy_mode::stop_on_reject};
            const run_metrics rm =
                decode_loop(v, d, {}, cfg.eval_tokens, dc, cost_model{}, eval_rng);
            e.eval_tokens_per_draft = rm.tokens_per_draft;
        }
        trace.push_back(e);
    }
    return trace;
}

}  // namespace specstreak
