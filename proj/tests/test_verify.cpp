#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "specstreak/models.hpp"
#include "specstreak/verify.hpp"

using namespace specstreak;

namespace {

draft make_draft(std::vector<token_id> toks, std::vector<double> qp = {}) {
    draft d;
    d.tokens = std::move(toks);
    d.q_probs = std::move(qp);
    return d;
}

// every outcome must satisfy the structural contract regardless of rule
void check_outcome_shape(const verify_outcome& o, size_t gamma) {
    CHECK(o.committed.size() == static_cast<size_t>(o.accepted_len + o.replaced));
    CHECK(o.bonus.has_value() == (o.replaced == 0));
    CHECK(o.per_pos_p.size() <= gamma);
    CHECK(o.accepted_len >= 0);
    CHECK(o.replaced >= 0);
}

// exact joint probability of a token path under the verifier
double path_prob(const verifier& v, std::vector<token_id> s, std::span<const token_id> path) {
    double acc = 1.0;
    for (token_id t : path) {
        acc *= v.next(s)[t];
        s.push_back(t);
    }
    return acc;
}

}  // namespace

TEST_SUITE("verify") {

TEST_CASE("standard rule accepts everything when drafter equals verifier") {
    // q == p makes every ratio exactly 1; the window always runs clean
    const categorical row({0.15, 0.25, 0.6});
    const verifier v = verifier::from_rows(3, 0, {row});
    const int gamma = 4;
    rng_state rng(101);
    for (int it = 0; it < 300; ++it) {
        std::vector<token_id> toks;
        std::vector<double> qp;
        std::vector<categorical> qm;
        for (int j = 0; j < gamma; ++j) {
            const token_id x = sample(row, rng);
            toks.push_back(x);
            qp.push_back(row[x]);
            qm.push_back(row);
        }
        const verify_outcome o = standard_verify(v, {}, make_draft(toks, qp), qm, rng);
        check_outcome_shape(o, gamma);
        CHECK(o.accepted_len == gamma);
        CHECK(o.replaced == 0);
        CHECK(o.committed == toks);
        CHECK(o.bonus.has_value());
        CHECK(o.verifier_calls == gamma + 1);  // one per position plus the bonus
        CHECK(o.post_reject_calls == 0);
        CHECK(o.per_pos_p.size() == static_cast<size_t>(gamma));
    }
}

TEST_CASE("standard rule accepts with probability min(1, p/q)") {
    // p(x)=0.4 against q(x)=0.8 accepts half the time
    const categorical p({0.4, 0.6});
    const categorical q({0.8, 0.2});
    const verifier v = verifier::from_rows(2, 0, {p});
    rng_state rng(102);
    const int n = 100000;
    int accepted = 0;
    for (int it = 0; it < n; ++it) {
        const verify_outcome o = standard_verify(v, {}, make_draft({0}, {q[0]}), {q}, rng);
        check_outcome_shape(o, 1);
        if (o.accepted_len == 1) ++accepted;
        // the only positive residual component is token 1
        if (o.replaced == 1) CHECK(o.committed[0] == 1);
        CHECK(o.per_pos_p[0] == 0.4);
    }
    const double rate = static_cast<double>(accepted) / n;
    const double sigma = std::sqrt(0.5 * 0.5 / n);
    CHECK(std::abs(rate - 0.5) < 3.0 * sigma);
}

TEST_CASE("standard rule always accepts when q(x) <= p(x)") {
    const categorical p({0.4, 0.6});
    const categorical q({0.8, 0.2});
    const verifier v = verifier::from_rows(2, 0, {p});
    rng_state rng(103);
    for (int it = 0; it < 2000; ++it) {
        // token 1: q=0.2 <= p=0.6, ratio clips to exactly 1
        const verify_outcome o = standard_verify(v, {}, make_draft({1}, {q[1]}), {q}, rng);
        CHECK(o.accepted_len == 1);
        CHECK(o.replaced == 0);
    }
}

TEST_CASE("standard rule first-position committed tokens are distributed as p") {
    const categorical p({0.4, 0.6});
    const categorical q({0.8, 0.2});
    const verifier v = verifier::from_rows(2, 0, {p});
    rng_state rng(104);
    const int n = 100000;
    std::vector<double> counts(2, 0.0);
    for (int it = 0; it < n; ++it) {
        const token_id x = sample(q, rng);
        const verify_outcome o = standard_verify(v, {}, make_draft({x}, {q[x]}), {q}, rng);
        counts[o.committed[0]] += 1.0;
    }
    for (double& c : counts) c /= n;
    CHECK(tv_distance(categorical(counts), p) < 0.02);
}

TEST_CASE("skipping the residual visibly biases the standard rule") {
    // negative control: replacements from full p instead of the residual must
    // leave a detectable gap at the first position
    const categorical p({0.9, 0.1});
    const categorical q({0.1, 0.9});
    const verifier v = verifier::from_rows(2, 0, {p});
    accept_hooks hooks;
    hooks.skip_residual = true;
    rng_state rng(105);
    const int n = 100000;
    std::vector<double> counts(2, 0.0);
    for (int it = 0; it < n; ++it) {
        const token_id x = sample(q, rng);
        const verify_outcome o = standard_verify(v, {}, make_draft({x}, {q[x]}), {q}, rng, hooks);
        counts[o.committed[0]] += 1.0;
    }
    for (double& c : counts) c /= n;
    // exact biased mixture: accept mass 0.2, the rest replaced from p itself
    // -> P(commit 0) = 0.1*1 + 0.8*0.9 = 0.82 vs true 0.9
    CHECK(tv_distance(categorical(counts), p) > 0.05);
    CHECK(std::abs(counts[0] - 0.82) < 0.01);
}

TEST_CASE("standard rule stops the window at the first rejection") {
    // one-hot rows make accept/reject deterministic: draft disagrees at j=1
    const verifier v = verifier::from_rows(
        3, 1, {categorical({0.0, 1.0, 0.0}), categorical({0.0, 0.0, 1.0}),
               categorical({1.0, 0.0, 0.0}),
               categorical({1.0 / 3, 1.0 / 3, 1.0 / 3})});  // unused start-context row
    // from context 0 the correct chain is 1, 2, 0; draft goes wrong at j=1
    const std::vector<token_id> s{0};
    const categorical qflat({1.0 / 3, 1.0 / 3, 1.0 / 3});
    rng_state rng(106);
    const verify_outcome o = standard_verify(
        v, s, make_draft({1, 0, 0}, {qflat[1], qflat[0], qflat[0]}), {qflat, qflat, qflat}, rng);
    check_outcome_shape(o, 3);
    CHECK(o.accepted_len == 1);
    CHECK(o.replaced == 1);
    // residual of one-hot p minus flat q is one-hot at the true successor
    CHECK(o.committed == std::vector<token_id>{1, 2});
    CHECK(!o.bonus.has_value());
    CHECK(o.verifier_calls == 2);  // positions 0 and 1 only, no bonus
    CHECK(o.post_reject_calls == 0);
    CHECK(o.per_pos_p == std::vector<double>{1.0, 0.0});
}

TEST_CASE("standard rule validates its inputs") {
    const categorical p({0.4, 0.6});
    const verifier v = verifier::from_rows(2, 0, {p});
    rng_state rng(107);
    const categorical q({0.8, 0.2});
    // zero drafter probability on the drafted token
    CHECK_THROWS_AS(standard_verify(v, {}, make_draft({0}, {0.0}), {q}, rng),
                    std::invalid_argument);
    // length mismatches
    CHECK_THROWS_AS(standard_verify(v, {}, make_draft({0, 1}, {0.5}), {q, q}, rng),
                    std::invalid_argument);
    CHECK_THROWS_AS(standard_verify(v, {}, make_draft({0}, {0.5}), {q, q}, rng),
                    std::invalid_argument);
    // empty draft and out-of-range token
    CHECK_THROWS_AS(standard_verify(v, {}, make_draft({}, {}), {}, rng), std::invalid_argument);
    CHECK_THROWS_AS(standard_verify(v, {}, make_draft({7}, {0.5}), {q}, rng),
                    std::invalid_argument);
}

TEST_CASE("greedy rule accepts a draft that matches one-hot verifier rows") {
    const verifier v = verifier::from_rows(
        3, 1, {categorical({0.0, 1.0, 0.0}), categorical({0.0, 0.0, 1.0}),
               categorical({1.0, 0.0, 0.0}),
               categorical({1.0 / 3, 1.0 / 3, 1.0 / 3})});  // unused start-context row
    const std::vector<token_id> s{0};
    rng_state rng(108);
    const verify_outcome o =
        greedy_verify(v, s, make_draft({1, 2, 0}), nullptr, greedy_mode::stop_on_reject, rng);
    check_outcome_shape(o, 3);
    CHECK(o.accepted_len == 3);
    CHECK(o.replaced == 0);
    CHECK(o.committed == std::vector<token_id>{1, 2, 0});
    CHECK(o.bonus.has_value());
    CHECK(*o.bonus == 1);  // deterministic successor of token 0
    CHECK(o.verifier_calls == 4);
    CHECK(o.post_reject_calls == 0);
}

TEST_CASE("greedy rule rejects a zero-probability token and replaces from p exactly") {
    const categorical p({0.0, 1.0});
    const verifier v = verifier::from_rows(2, 0, {p});
    rng_state rng(109);
    for (int it = 0; it < 500; ++it) {
        const verify_outcome o =
            greedy_verify(v, {}, make_draft({0, 0}), nullptr, greedy_mode::stop_on_reject, rng);
        check_outcome_shape(o, 2);
        CHECK(o.accepted_len == 0);
        CHECK(o.replaced == 1);
        CHECK(o.committed == std::vector<token_id>{1});
        CHECK(!o.bonus.has_value());
        CHECK(o.per_pos_p == std::vector<double>{0.0});
    }
}

TEST_CASE("greedy modes differ only after the first rejection") {
    const verifier v = verifier::from_rows(
        3, 1, {categorical({0.0, 1.0, 0.0}), categorical({0.0, 0.0, 1.0}),
               categorical({1.0, 0.0, 0.0}),
               categorical({1.0 / 3, 1.0 / 3, 1.0 / 3})});  // unused start-context row
    const std::vector<token_id> s{0};
    // draft wrong at j=1; under continue_literal the literal token at j=2
    // happens to match the replaced transcript's successor
    const draft dr = make_draft({1, 0, 0});

    rng_state rng_stop(110);
    const verify_outcome stop =
        greedy_verify(v, s, dr, nullptr, greedy_mode::stop_on_reject, rng_stop);
    check_outcome_shape(stop, 3);
    CHECK(stop.committed == std::vector<token_id>{1, 2});
    CHECK(stop.accepted_len == 1);
    CHECK(stop.replaced == 1);
    CHECK(stop.verifier_calls == 2);
    CHECK(stop.post_reject_calls == 0);

    rng_state rng_cont(110);
    const verify_outcome cont =
        greedy_verify(v, s, dr, nullptr, greedy_mode::continue_literal, rng_cont);
    check_outcome_shape(cont, 3);
    CHECK(cont.committed == std::vector<token_id>{1, 2, 0});
    CHECK(cont.accepted_len == 2);  // j=0 and the literal j=2
    CHECK(cont.replaced == 1);
    CHECK(!cont.bonus.has_value());  // the window was not clean
    CHECK(cont.verifier_calls == 3);
    CHECK(cont.post_reject_calls == 1);  // the j=2 call ran after the rejection
    CHECK(cont.per_pos_p == std::vector<double>{1.0, 0.0, 1.0});
}

TEST_CASE("greedy rule first-position committed tokens are distributed as p") {
    const verifier v = verifier::dirichlet(2, 1, 0.8, 111);
    const std::vector<token_id> s{0};
    const categorical& p = v.next(s);
    const categorical q({0.85, 0.15});  // deliberately mismatched drafter
    rng_state rng(112);
    const int n = 100000;
    std::vector<double> counts(2, 0.0);
    for (int it = 0; it < n; ++it) {
        const token_id x = sample(q, rng);
        const verify_outcome o =
            greedy_verify(v, s, make_draft({x}), nullptr, greedy_mode::stop_on_reject, rng);
        counts[o.committed[0]] += 1.0;
    }
    for (double& c : counts) c /= n;
    CHECK(tv_distance(categorical(counts), p) < 0.02);
}

TEST_CASE("greedy continue_literal full-window joint matches the verifier joint") {
    // all gamma positions commit every run, so the window joint must equal
    // the exact path product including replacement positions
    const int vocab = 2;
    const int gamma = 3;
    const verifier v = verifier::dirichlet(vocab, 1, 0.8, 113);
    const std::vector<token_id> s{1};
    const categorical q({0.75, 0.25});
    rng_state rng(114);
    const int n = 100000;
    std::map<std::vector<token_id>, double> freq;
    for (int it = 0; it < n; ++it) {
        std::vector<token_id> toks;
        for (int j = 0; j < gamma; ++j) toks.push_back(sample(q, rng));
        const verify_outcome o =
            greedy_verify(v, s, make_draft(toks), nullptr, greedy_mode::continue_literal, rng);
        check_outcome_shape(o, gamma);
        REQUIRE(o.committed.size() == static_cast<size_t>(gamma));
        freq[o.committed] += 1.0;
    }
    double tv = 0.0;
    for (token_id a = 0; a < vocab; ++a) {
        for (token_id b = 0; b < vocab; ++b) {
            for (token_id c = 0; c < vocab; ++c) {
                const std::vector<token_id> path{a, b, c};
                const double emp = freq.count(path) ? freq[path] / n : 0.0;
                tv += std::abs(emp - path_prob(v, s, path));
            }
        }
    }
    tv *= 0.5;
    CHECK(tv < 0.02);
}

TEST_CASE("greedy stop_on_reject conditionals match the verifier row for every prefix") {
    // bucket committed tokens by the exact committed prefix that conditioned
    // them; each bucket must reproduce the verifier row, replacements included
    const int vocab = 2;
    const int gamma = 3;
    const verifier v = verifier::dirichlet(vocab, 1, 0.8, 115);
    const std::vector<token_id> s{0};
    const categorical q({0.3, 0.7});
    rng_state rng(116);
    const int n = 100000;
    std::map<std::vector<token_id>, std::vector<double>> buckets;
    for (int it = 0; it < n; ++it) {
        std::vector<token_id> toks;
        for (int j = 0; j < gamma; ++j) toks.push_back(sample(q, rng));
        const verify_outcome o =
            greedy_verify(v, s, make_draft(toks), nullptr, greedy_mode::stop_on_reject, rng);
        check_outcome_shape(o, gamma);
        std::vector<token_id> prefix;
        for (token_id t : o.committed) {
            auto& cell = buckets[prefix];
            if (cell.empty()) cell.assign(vocab, 0.0);
            cell[t] += 1.0;
            prefix.push_back(t);
        }
    }
    int tested = 0;
    for (auto& [prefix, cell] : buckets) {
        double total = 0.0;
        for (double c : cell) total += c;
        if (total < 2000.0) continue;
        for (double& c : cell) c /= total;
        std::vector<token_id> ctx(s);
        ctx.insert(ctx.end(), prefix.begin(), prefix.end());
        CHECK(tv_distance(categorical(cell), v.next(ctx)) < 0.05);
        ++tested;
    }
    CHECK(tested >= 4);  // root plus both depth-1 prefixes at minimum
}

TEST_CASE("cached posteriors reproduce the fresh walk bitwise") {
    const verifier v = verifier::dirichlet(4, 1, 0.5, 117);
    const std::vector<token_id> s{2};
    rng_state draft_rng(118);
    for (int it = 0; it < 100; ++it) {
        std::vector<token_id> toks;
        for (int j = 0; j < 3; ++j) toks.push_back(static_cast<token_id>(draft_rng.below(4)));
        const draft dr = make_draft(toks);
        // per-position posteriors along the draft's own path
        std::vector<categorical> cache;
        std::vector<token_id> work(s);
        for (token_id t : toks) {
            cache.push_back(v.next(work));
            work.push_back(t);
        }
        for (greedy_mode mode : {greedy_mode::stop_on_reject, greedy_mode::continue_literal}) {
            rng_state r1(1000 + it), r2(1000 + it);
            const verify_outcome fresh = greedy_verify(v, s, dr, nullptr, mode, r1);
            const verify_outcome cached = greedy_verify(v, s, dr, &cache, mode, r2);
            CHECK(fresh.committed == cached.committed);
            CHECK(fresh.accepted_len == cached.accepted_len);
            CHECK(fresh.replaced == cached.replaced);
            CHECK(fresh.bonus == cached.bonus);
            CHECK(fresh.per_pos_p == cached.per_pos_p);
            CHECK(fresh.post_reject_calls == cached.post_reject_calls);
            // cache hits are free; only post-divergence and bonus calls remain
            CHECK(cached.verifier_calls ==
                  cached.post_reject_calls + (cached.replaced == 0 ? 1 : 0));
        }
    }
}

TEST_CASE("greedy_verify rejects a cached posterior vector of the wrong length") {
    const verifier v = verifier::dirichlet(3, 0, 0.5, 119);
    rng_state rng(120);
    std::vector<categorical> cache{v.next({})};
    CHECK_THROWS_AS(
        greedy_verify(v, {}, make_draft({0, 1}), &cache, greedy_mode::stop_on_reject, rng),
        std::invalid_argument);
}

TEST_CASE("verification replays identically from the same seed") {
    const verifier v = verifier::dirichlet(5, 1, 0.7, 121);
    const std::vector<token_id> s{3};
    const drafter d = drafter::random_init(5, 1, 4, 1.0, 0.8, 122);
    rng_state sample_rng(123);
    const std::vector<categorical> qm = [](const drafter& dd, const std::vector<token_id>& ss) {
        drafter copy = dd;
        return copy.marginals(ss, 4);
    }(d, s);
    const draft dr = sample_from_marginals(qm, sample_rng);

    rng_state a1(7), a2(7);
    const verify_outcome s1 = standard_verify(v, s, dr, qm, a1);
    const verify_outcome s2 = standard_verify(v, s, dr, qm, a2);
    CHECK(s1.committed == s2.committed);
    CHECK(s1.bonus == s2.bonus);
    CHECK(s1.per_pos_p == s2.per_pos_p);

    rng_state b1(9), b2(9);
    const verify_outcome g1 = greedy_verify(v, s, dr, nullptr, greedy_mode::continue_literal, b1);
    const verify_outcome g2 = greedy_verify(v, s, dr, nullptr, greedy_mode::continue_literal, b2);
    CHECK(g1.committed == g2.committed);
    CHECK(g1.bonus == g2.bonus);
    CHECK(g1.per_pos_p == g2.per_pos_p);
}

TEST_CASE("tree_verify dedupes identical drafts into a single chain") {
    const verifier v = verifier::dirichlet(4, 1, 0.5, 124);
    const std::vector<token_id> s{1};
    const int gamma = 5;
    const draft dr = make_draft({0, 2, 1, 3, 2});
    const std::vector<draft> drafts(6, dr);
    const tree_scores ts = tree_verify(v, s, drafts);
    CHECK(ts.unique_calls == gamma);  // root plus the gamma-1 proper prefixes
    for (size_t k = 1; k < drafts.size(); ++k) {
        CHECK(ts.token_p[k] == ts.token_p[0]);
    }
}

TEST_CASE("tree_verify with drafts disjoint from position one shares only the root") {
    const int gamma = 4;
    const verifier v = verifier::dirichlet(4, 1, 0.5, 125);
    const std::vector<token_id> s{0};
    std::vector<draft> drafts;
    for (token_id first = 0; first < 4; ++first) {
        drafts.push_back(make_draft({first, 0, 0, 0}));
    }
    const tree_scores ts = tree_verify(v, s, drafts);
    CHECK(ts.unique_calls == 1 + 4 * (gamma - 1));
}

TEST_CASE("tree_verify matches naive evaluation bitwise and counts distinct prefixes") {
    const int vocab = 2;
    const int gamma = 3;
    const int k = 4;
    const verifier v = verifier::dirichlet(vocab, 1, 0.6, 126);
    const std::vector<token_id> s{1};
    rng_state rng(127);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<draft> drafts;
        for (int i = 0; i < k; ++i) {
            std::vector<token_id> toks;
            for (int j = 0; j < gamma; ++j) toks.push_back(static_cast<token_id>(rng.below(vocab)));
            drafts.push_back(make_draft(toks));
        }
        const tree_scores ts = tree_verify(v, s, drafts);

        // independent prefix census: one conditioning prefix per proper prefix
        std::set<std::vector<token_id>> prefixes;
        for (const draft& dr : drafts) {
            for (size_t len = 0; len < dr.tokens.size(); ++len) {
                prefixes.insert(std::vector<token_id>(dr.tokens.begin(),
                                                      dr.tokens.begin() + static_cast<long>(len)));
            }
        }
        CHECK(ts.unique_calls == static_cast<int>(prefixes.size()));
        CHECK(ts.unique_calls <= k * gamma + 1);

        // naive per-draft walk must agree bitwise
        for (int i = 0; i < k; ++i) {
            std::vector<token_id> work(s);
            for (int j = 0; j < gamma; ++j) {
                const double naive = v.next(work)[drafts[i].tokens[j]];
                CHECK(ts.token_p[i][j] == naive);
                work.push_back(drafts[i].tokens[j]);
            }
        }
    }
}

TEST_CASE("tree_verify scores do not depend on draft insertion order") {
    const verifier v = verifier::dirichlet(3, 1, 0.5, 128);
    const std::vector<token_id> s{2};
    const std::vector<draft> drafts{
        make_draft({0, 1, 2}), make_draft({0, 1, 0}), make_draft({1, 1, 2}),
        make_draft({0, 2, 2}),
    };
    std::vector<draft> reversed(drafts.rbegin(), drafts.rend());
    const tree_scores a = tree_verify(v, s, drafts);
    const tree_scores b = tree_verify(v, s, reversed);
    CHECK(a.unique_calls == b.unique_calls);
    for (size_t i = 0; i < drafts.size(); ++i) {
        CHECK(a.token_p[i] == b.token_p[drafts.size() - 1 - i]);
    }
}

TEST_CASE("tree_verify cached_dists walks a draft's own posteriors") {
    const verifier v = verifier::dirichlet(4, 1, 0.5, 129);
    const std::vector<token_id> s{3};
    const std::vector<draft> drafts{make_draft({1, 2, 0}), make_draft({1, 0, 3})};
    const tree_scores ts = tree_verify(v, s, drafts);
    for (const draft& dr : drafts) {
        const std::vector<categorical> cache = ts.cached_dists(dr);
        REQUIRE(cache.size() == dr.tokens.size());
        std::vector<token_id> work(s);
        for (size_t j = 0; j < dr.tokens.size(); ++j) {
            const categorical& fresh = v.next(work);
            for (token_id t = 0; t < 4; ++t) CHECK(cache[j][t] == fresh[t]);
            work.push_back(dr.tokens[j]);
        }
    }
}

TEST_CASE("tree_verify validates its inputs") {
    const verifier v = verifier::dirichlet(3, 1, 0.5, 130);
    CHECK_THROWS_AS(tree_verify(v, {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(tree_verify(v, {}, {make_draft({0, 1}), make_draft({0})}),
                    std::invalid_argument);
    CHECK_THROWS_AS(tree_verify(v, {}, {make_draft({0, 9})}), std::invalid_argument);
}

}  // TEST_SUITE
