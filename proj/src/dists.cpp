#include "specstreak/dists.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace specstreak {

uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return mix64(master ^ mix64(stream));
}

double rng_state::normal() {
    // polar method; consumes a variable number of u64s
    for (;;) {
        double u = 2.0 * uniform() - 1.0;
        double v = 2.0 * uniform() - 1.0;
        double s = u * u + v * v;
        if (s > 0.0 && s < 1.0) {
            return u * std::sqrt(-2.0 * std::log(s) / s);
        }
    }
}

double rng_state::gamma(double shape) {
    if (!(shape > 0.0)) {
        throw std::invalid_argument("gamma: shape must be positive");
    }
    if (shape < 1.0) {
        // boost: Gamma(a) = Gamma(a + 1) * U^(1/a)
        double g = gamma(shape + 1.0);
        double u = uniform_pos();
        return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = normal();
        double v = 1.0 + c * x;
        if (v <= 0.0) {
            continue;
        }
        v = v * v * v;
        double u = uniform_pos();
        double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) {
            return d * v;
        }
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) {
            return d * v;
        }
    }
}

static void validate_weights(const std::vector<double>& w) {
    if (w.size() < 2) {
        throw std::invalid_argument("categorical: need at least 2 entries");
    }
    for (double x : w) {
        if (!std::isfinite(x) || x < 0.0) {
            throw std::invalid_argument("categorical: entries must be finite and non-negative");
        }
    }
}

categorical::categorical(std::vector<double> probs) {
    validate_weights(probs);
    double sum = 0.0;
    for (double x : probs) sum += x;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("categorical: probs sum to " + std::to_string(sum) +
                                    ", expected 1 within 1e-9");
    }
    for (double& x : probs) x /= sum;
    p_ = std::move(probs);
}

categorical categorical::normalized(std::vector<double> weights) {
    validate_weights(weights);
    double sum = 0.0;
    for (double x : weights) sum += x;
    if (sum <= 0.0) {
        throw std::invalid_argument("categorical: total mass must be positive");
    }
    for (double& x : weights) x /= sum;
    categorical c;
    c.p_ = std::move(weights);
    return c;
}

categorical categorical::uniform(int size) {
    if (size < 2) {
        throw std::invalid_argument("categorical: need at least 2 entries");
    }
    categorical c;
    c.p_.assign(static_cast<size_t>(size), 1.0 / size);
    return c;
}

categorical categorical::one_hot(int size, token_id hot) {
    if (size < 2) {
        throw std::invalid_argument("categorical: need at least 2 entries");
    }
    if (hot < 0 || hot >= size) {
        throw std::invalid_argument("categorical: one_hot index out of range");
    }
    categorical c;
    c.p_.assign(static_cast<size_t>(size), 0.0);
    c.p_[static_cast<size_t>(hot)] = 1.0;
    return c;
}

token_id categorical::argmax() const {
    size_t best = 0;
    for (size_t i = 1; i < p_.size(); ++i) {
        if (p_[i] > p_[best]) best = i;
    }
    return static_cast<token_id>(best);
}

static void check_same_size(const categorical& p, const categorical& q, const char* op) {
    if (p.size() != q.size()) {
        throw std::invalid_argument(std::string(op) + ": size mismatch");
    }
    if (p.size() == 0) {
        throw std::invalid_argument(std::string(op) + ": empty distribution");
    }
}

double tv_distance(const categorical& p, const categorical& q) {
    check_same_size(p, q, "tv_distance");
    double acc = 0.0;
    for (int i = 0; i < p.size(); ++i) {
        acc += std::abs(p[i] - q[i]);
    }
    return 0.5 * acc;
}

double acceptance_rate(const categorical& p, const categorical& q) {
    return 1.0 - tv_distance(p, q);
}

categorical residual_dist(const categorical& p, const categorical& q) {
    check_same_size(p, q, "residual_dist");
    std::vector<double> r(static_cast<size_t>(p.size()), 0.0);
    double mass = 0.0;
    for (int i = 0; i < p.size(); ++i) {
        double d = p[i] - q[i];
        if (d > 0.0) {
            r[static_cast<size_t>(i)] = d;
            mass += d;
        }
    }
    if (mass <= 0.0) {
        throw std::runtime_error("residual_dist: p == q, no residual mass");
    }
    for (double& x : r) x /= mass;
    categorical out;
    out = categorical::normalized(std::move(r));
    return out;
}

categorical greedy_residual(const categorical& p, token_id rejected) {
    if (rejected < 0 || rejected >= p.size()) {
        throw std::invalid_argument("greedy_residual: rejected token out of range");
    }
    double keep = 1.0 - p[rejected];
    if (keep <= 0.0) {
        throw std::runtime_error("greedy_residual: rejected token carries all mass");
    }
    std::vector<double> r(p.probs());
    r[static_cast<size_t>(rejected)] = 0.0;
    return categorical::normalized(std::move(r));
}

categorical apply_temperature(std::span<const double> logits, double temperature) {
    if (logits.size() < 2) {
        throw std::invalid_argument("apply_temperature: need at least 2 logits");
    }
    for (double x : logits) {
        if (!std::isfinite(x)) {
            throw std::invalid_argument("apply_temperature: non-finite logit");
        }
    }
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
        throw std::invalid_argument("apply_temperature: temperature must be non-negative");
    }
    const int n = static_cast<int>(logits.size());
    if (temperature < 1e-6) {
        int best = 0;
        for (int i = 1; i < n; ++i) {
            if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
        }
        return categorical::one_hot(n, best);
    }
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    std::vector<double> e(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        e[static_cast<size_t>(i)] = std::exp((logits[static_cast<size_t>(i)] - mx) / temperature);
    }
    return categorical::normalized(std::move(e));
}

token_id sample(const categorical& d, rng_state& rng) {
    double u = rng.uniform();
    double cum = 0.0;
    int last_positive = -1;
    for (int i = 0; i < d.size(); ++i) {
        double pi = d[i];
        if (pi > 0.0) last_positive = i;
        cum += pi;
        if (u < cum) {
            return pi > 0.0 ? i : last_positive;
        }
    }
    // u landed in the rounding gap above the final cumulative value
    return last_positive;
}

}  // namespace specstreak
