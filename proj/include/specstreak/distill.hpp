#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "specstreak/models.hpp"

namespace specstreak {

// Training objective for draft distillation.
//   streak           maximize the expected accepted streak proxy
//                    E[sum_m prod_{j<=m} q_j(x_j)] against teacher paths
//   ar_window1       minimize CE of the first position only
//   naive_window_avg minimize the position-averaged CE
enum class objective_kind {
    streak,
    ar_window1,
    naive_window_avg,
};

struct trainer_config {
    objective_kind objective = objective_kind::streak;
    int gamma = 4;
    int steps = 1000;
    int batch_size = 32;
    double lr = 0.1;
    int prefix_rollout_len = 8;  // verifier rollout length for batch prefixes
    uint64_t seed = 0;
    bool fixed_batch = false;  // reuse the first sampled batch every step
    int eval_every = 0;        // decode-eval checkpoint period; 0 disables
    long eval_tokens = 4000;   // tokens per decode-eval checkpoint
};

// One teacher example: a rolled-out prefix and a gamma-token verifier
// continuation of it.
struct teacher_example {
    std::vector<token_id> ctx;
    std::vector<token_id> path;
};
using teacher_batch = std::vector<teacher_example>;

// Batch of fresh teacher paths; prefixes are independent verifier rollouts
// from the start symbol.
teacher_batch sample_teacher_batch(const verifier& v, int batch_size, int gamma,
                                   int prefix_rollout_len, rng_state& rng);

// Objective value plus the full dense gradient (same layout as theta).
// `value` follows the objective's own sign convention: streak is a reward,
// the CE baselines are losses. `grad` is always d(value)/d(theta).
struct objective_grad {
    double value = 0.0;
    std::vector<double> grad;
    double grad_norm = 0.0;  // l2
};

// Batch-mean expected-streak reward at temperature 1; in [0, gamma].
double streak_objective(const drafter& d, const teacher_batch& batch, int gamma);
objective_grad streak_grad(const drafter& d, const teacher_batch& batch, int gamma);

// Batch-mean CE losses: first position only, or averaged over the window.
double baseline_objective(const drafter& d, const teacher_batch& batch, int gamma,
                          objective_kind kind);
objective_grad baseline_grad(const drafter& d, const teacher_batch& batch, int gamma,
                             objective_kind kind);

// Objective and gradient for any of the three kinds.
double objective_value(const drafter& d, const teacher_batch& batch, int gamma,
                       objective_kind kind);
objective_grad objective_gradient(const drafter& d, const teacher_batch& batch, int gamma,
                                  objective_kind kind);

struct trace_entry {
    int step = 0;
    double objective = 0.0;    // value before the step's update
    double grad_norm = 0.0;
    std::optional<double> eval_tokens_per_draft;  // set on eval checkpoints
};

// One SGD step: sample (or reuse) a batch, evaluate objective and gradient,
// ascend the streak reward or descend the baseline loss. Returns the step's
// trace row, without the eval field.
trace_entry distill_step(drafter& d, const verifier& v, const trainer_config& cfg, int step,
                         rng_state& rng, const teacher_batch* fixed_batch = nullptr);

// Full run; owns batch sampling, the fixed-batch mode, and periodic decode
// evals (greedy rule, k=1, the trainer's gamma).
std::vector<trace_entry> distill_run(drafter& d, const verifier& v, const trainer_config& cfg);

}  // namespace specstreak
