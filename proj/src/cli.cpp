#include "specstreak/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "specstreak/bench.hpp"
#include "specstreak/distill.hpp"
#include "specstreak/errors.hpp"
#include "specstreak/models.hpp"

namespace specstreak::cli {

namespace fs = std::filesystem;

json default_config() {
    return json{
        {"seed", 42},
        {"model", {{"vocab", 8}, {"order", 1}, {"beta", 0.5}, {"verifier_seed", 1}}},
        {"drafter",
         {{"gamma_max", 4},
          {"temperature", 1.0},
          {"init", "random"},
          {"init_scale", 0.5},
          {"load_path", ""}}},
        {"pretrain",
         {{"steps", 2000},
          {"lr", 0.1},
          {"corpus_seqs", 64},
          {"corpus_len", 64},
          {"corpus_tokens", json::array()},
          {"mask_rate", 0.0}}},
        {"distill",
         {{"objective", "streak"},
          {"gamma", 4},
          {"steps", 1000},
          {"batch_size", 32},
          {"lr", 0.1},
          {"prefix_rollout_len", 8},
          {"fixed_batch", false},
          {"eval_every", 0},
          {"eval_tokens", 4000}}},
        {"bench",
         {{"rule", "greedy"},
          {"k", json::array({1})},
          {"temperature", json::array({1.0})},
          {"gamma", json::array({4})},
          {"mode", "stop_on_reject"},
          {"n_tokens", 10000},
          {"prefix", json::array()},
          {"cost",
           {{"c_draft", 1.0},
            {"c_verify", 1.0},
            {"c_verify_seq", 1.0},
            {"c_verify_per_token", 0.0}}}}},
        {"invariance",
         {{"rules", json::array({"standard", "greedy"})},
          {"k", json::array({1, 8})},
          {"modes", json::array({"stop_on_reject", "continue_literal"})},
          {"n_samples", 100000},
          {"positions", 6},
          {"gamma", 4},
          {"temperature", 1.0},
          {"skip_residual", false},
          {"threshold", 0.02},
          {"prefix", json::array()}}},
        {"oracle",
         {{"rules", json::array({"standard", "greedy"})},
          {"gamma", json::array({1, 2, 3, 4})},
          {"prefix", json::array()}}},
    };
}

namespace {

json merge_checked(const json& defaults, const json& user, const std::string& path) {
    if (defaults.is_object()) {
        if (!user.is_object()) {
            throw config_error("config: " + (path.empty() ? "root" : path) + " must be an object");
        }
        json out = defaults;
        for (const auto& [key, val] : user.items()) {
            if (!defaults.contains(key)) {
                throw config_error("config: unknown key " + path + key);
            }
            out[key] = merge_checked(defaults.at(key), val, path + key + ".");
        }
        return out;
    }
    const std::string where = path.empty() ? "root" : path.substr(0, path.size() - 1);
    if (defaults.is_array()) {
        if (!user.is_array()) throw config_error("config: " + where + " must be an array");
        return user;
    }
    if (defaults.is_string() && !user.is_string()) {
        throw config_error("config: " + where + " must be a string");
    }
    if (defaults.is_boolean() && !user.is_boolean()) {
        throw config_error("config: " + where + " must be a boolean");
    }
    if (defaults.is_number() && !user.is_number()) {
        throw config_error("config: " + where + " must be a number");
    }
    return user;
}

uint64_t master_seed(const json& cfg) { return cfg.at("seed").get<uint64_t>(); }

verifier build_verifier(const json& cfg) {
    const json& m = cfg.at("model");
    return verifier::dirichlet(m.at("vocab").get<int>(), m.at("order").get<int>(),
                               m.at("beta").get<double>(),
                               m.at("verifier_seed").get<uint64_t>());
}

drafter build_drafter(const json& cfg, const verifier& v) {
    const json& dj = cfg.at("drafter");
    const std::string load_path = dj.at("load_path").get<std::string>();
    drafter d = [&] {
        if (!load_path.empty()) {
            return load_drafter(load_path);
        }
        const json& m = cfg.at("model");
        const std::string init = dj.at("init").get<std::string>();
        if (init == "uniform") {
            return drafter::uniform_init(m.at("vocab").get<int>(), m.at("order").get<int>(),
                                         dj.at("gamma_max").get<int>(),
                                         dj.at("temperature").get<double>());
        }
        if (init == "random") {
            return drafter::random_init(m.at("vocab").get<int>(), m.at("order").get<int>(),
                                        dj.at("gamma_max").get<int>(),
                                        dj.at("temperature").get<double>(),
                                        dj.at("init_scale").get<double>(),
                                        derive_seed(master_seed(cfg), 0xd7a));
        }
        throw config_error("config: drafter.init must be \"uniform\" or \"random\"");
    }();
    if (d.vocab != v.vocab || d.order != v.order) {
        throw config_error("config: drafter shape does not match the model");
    }
    return d;
}

prefix read_prefix(const json& arr, int vocab) {
    prefix s;
    for (const auto& t : arr) {
        if (!t.is_number_integer()) throw config_error("config: prefix tokens must be integers");
        const auto tok = t.get<int>();
        if (tok < 0 || tok >= vocab) throw config_error("config: prefix token out of range");
        s.push_back(tok);
    }
    return s;
}

rule_kind parse_rule(const std::string& s) {
    if (s == "standard") return rule_kind::standard;
    if (s == "greedy") return rule_kind::greedy;
    throw config_error("config: rule must be \"standard\" or \"greedy\"");
}

greedy_mode parse_mode(const std::string& s) {
    if (s == "stop_on_reject") return greedy_mode::stop_on_reject;
    if (s == "continue_literal") return greedy_mode::continue_literal;
    throw config_error("config: mode must be \"stop_on_reject\" or \"continue_literal\"");
}

objective_kind parse_objective(const std::string& s) {
    if (s == "streak") return objective_kind::streak;
    if (s == "ar_window1") return objective_kind::ar_window1;
    if (s == "naive_window_avg") return objective_kind::naive_window_avg;
    throw config_error(
        "config: objective must be \"streak\", \"ar_window1\" or \"naive_window_avg\"");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw io_error("cannot create output directory " + dir + ": " + ec.message());
    }
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw io_error("cannot write file: " + path);
    }
    return out;
}

json base_record(const std::string& hash, uint64_t seed) {
    return json{{"config_hash", hash}, {"seed", seed}, {"version", k_version}};
}

void write_config_echo(const command_io& io, const std::string& hash) {
    json echo{{"config", io.config}, {"config_hash", hash}, {"version", k_version}};
    open_out(io.out_dir + "/config.json") << echo.dump(2) << "\n";
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    auto out = open_out(path);
    for (const auto& l : lines) out << l << "\n";
    if (!out) throw io_error("short write: " + path);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

// bounded pool over independent cells; rethrows the first worker exception
void run_cells(int workers, int n_cells, const std::function<void(int)>& fn) {
    if (workers <= 1 || n_cells <= 1) {
        for (int i = 0; i < n_cells; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex err_mu;
    std::exception_ptr first_error;
    auto body = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n_cells) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int count = std::min(workers, n_cells);
    pool.reserve(static_cast<size_t>(count));
    for (int w = 0; w < count; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// context rows a teacher prefix can end in: BOS digits appear only when the
// rollout is shorter than the model order
std::vector<size_t> teacher_context_rows(const verifier& v, int rollout_len) {
    const size_t base = static_cast<size_t>(v.vocab) + 1;
    std::vector<size_t> rows;
    for (size_t ctx = 0; ctx < v.rows(); ++ctx) {
        int bos_digits = 0;
        size_t rest = ctx;
        for (int i = 0; i < v.order; ++i) {
            if (rest % base == static_cast<size_t>(v.vocab)) ++bos_digits;
            rest /= base;
        }
        if (rollout_len >= v.order && bos_digits > 0) continue;
        rows.push_back(ctx);
    }
    return rows;
}

}  // namespace

json materialize(const json& user) { return merge_checked(default_config(), user, ""); }

json load_config(const std::string& path) {
    if (path.empty()) {
        return materialize(json::object());
    }
    std::ifstream in(path);
    if (!in) {
        throw io_error("cannot open config file: " + path);
    }
    json user;
    try {
        in >> user;
    } catch (const json::exception& e) {
        throw config_error("config: malformed JSON in " + path + ": " + e.what());
    }
    return materialize(user);
}

std::string config_hash(const json& materialized) {
    const std::string body = materialized.dump();
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : body) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string format_double(double x) { return json(x).dump(); }

std::string strip_volatile(const std::string& jsonl_line) {
    json j = json::parse(jsonl_line);
    j.erase("wall_ms");
    return j.dump();
}

int resolve_workers(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("SPECSTREAK_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

int cmd_pretrain(const command_io& io) {
    const json& cfg = io.config;
    const std::string hash = config_hash(cfg);
    ensure_dir(io.out_dir);
    write_config_echo(io, hash);

    const verifier v = build_verifier(cfg);
    drafter d = build_drafter(cfg, v);
    const json& pj = cfg.at("pretrain");

    corpus c;
    if (!pj.at("corpus_tokens").empty()) {
        for (const auto& seq : pj.at("corpus_tokens")) {
            c.seqs.push_back(read_prefix(seq, v.vocab));
        }
    } else {
        rng_state corpus_rng(derive_seed(master_seed(cfg), 0xc0f));
        c = rollout_corpus(v, pj.at("corpus_seqs").get<int>(), pj.at("corpus_len").get<int>(),
                           corpus_rng);
    }

    const double mask_rate = pj.at("mask_rate").get<double>();
    const mask_schedule sched =
        mask_rate > 0.0 ? mask_schedule::fixed(mask_rate) : mask_schedule::uniform();

    rng_state train_rng(derive_seed(master_seed(cfg), 0x917));
    std::vector<pretrain_trace_entry> trace;
    pretrain_mdm(d, c, sched, pj.at("steps").get<int>(), pj.at("lr").get<double>(), train_rng,
                 &trace);
    save_drafter(d, io.out_dir + "/drafter_pretrained.json");

    std::vector<std::string> lines;
    lines.reserve(trace.size());
    for (const auto& e : trace) {
        json rec = base_record(hash, master_seed(cfg));
        rec["step"] = e.step;
        rec["objective"] = e.ce;
        lines.push_back(rec.dump());
    }
    write_lines(io.out_dir + "/pretrain_trace.jsonl", lines);
    return k_exit_ok;
}

int cmd_distill(const command_io& io) {
    const json& cfg = io.config;
    const std::string hash = config_hash(cfg);
    ensure_dir(io.out_dir);
    write_config_echo(io, hash);

    const verifier v = build_verifier(cfg);
    drafter d = build_drafter(cfg, v);
    const json& tj = cfg.at("distill");

    trainer_config tc;
    tc.objective = parse_objective(tj.at("objective").get<std::string>());
    tc.gamma = tj.at("gamma").get<int>();
    tc.steps = tj.at("steps").get<int>();
    tc.batch_size = tj.at("batch_size").get<int>();
    tc.lr = tj.at("lr").get<double>();
    tc.prefix_rollout_len = tj.at("prefix_rollout_len").get<int>();
    tc.fixed_batch = tj.at("fixed_batch").get<bool>();
    tc.eval_every = tj.at("eval_every").get<int>();
    tc.eval_tokens = tj.at("eval_tokens").get<long>();
    tc.seed = derive_seed(master_seed(cfg), 0x4d1);

    std::vector<trace_entry> trace;
    if (tc.lr > 0.0) {
        trace = distill_run(d, v, tc);
    } else {
        // lr = 0 is a frozen evaluation run: theta must come out unchanged, so
        // step manually (the full run rejects zero learning rates). Same batch
        // stream as distill_run, so a frozen trace is the lr -> 0 limit.
        rng_state rng(derive_seed(tc.seed, 0xd1571ull));
        teacher_batch fixed;
        if (tc.fixed_batch) {
            fixed = sample_teacher_batch(v, tc.batch_size, tc.gamma, tc.prefix_rollout_len, rng);
        }
        trace.reserve(static_cast<size_t>(tc.steps));
        for (int step = 0; step < tc.steps; ++step) {
            trace.push_back(distill_step(d, v, tc, step, rng, tc.fixed_batch ? &fixed : nullptr));
        }
    }
    save_drafter(d, io.out_dir + "/drafter_distilled.json");

    std::vector<std::string> lines;
    std::vector<std::string> csv;
    lines.reserve(trace.size());
    csv.reserve(trace.size() + 1);
    csv.push_back("step,objective");
    for (const auto& e : trace) {
        json rec = base_record(hash, master_seed(cfg));
        rec["step"] = e.step;
        rec["objective"] = e.objective;
        rec["grad_norm"] = e.grad_norm;
        if (e.eval_tokens_per_draft) {
            rec["eval_tokens_per_draft"] = *e.eval_tokens_per_draft;
        }
        lines.push_back(rec.dump());
        csv.push_back(std::to_string(e.step) + "," + format_double(e.objective));
    }
    write_lines(io.out_dir + "/distill_trace.jsonl", lines);
    write_lines(io.out_dir + "/objective_curve.csv", csv);

    // first-position fit vs the verifier over reachable teacher contexts;
    // covers the single-position-limit reports
    long matched = 0;
    double min_top = 1.0;
    double max_tv = 0.0;
    const auto rows = teacher_context_rows(v, tc.prefix_rollout_len);
    for (size_t ctx : rows) {
        const categorical q = apply_temperature(d.logits(ctx, 0), 1.0);
        const categorical& p = v.row(ctx);
        if (q.argmax() == p.argmax()) ++matched;
        min_top = std::min(min_top, q[q.argmax()]);
        max_tv = std::max(max_tv, tv_distance(q, p));
    }
    json summary = base_record(hash, master_seed(cfg));
    summary["argmax_match_frac"] = static_cast<double>(matched) / rows.size();
    summary["min_top_mass"] = min_top;
    summary["max_tv_vs_verifier"] = max_tv;
    summary["final_objective"] = trace.empty() ? 0.0 : trace.back().objective;
    open_out(io.out_dir + "/distill_summary.json") << summary.dump(2) << "\n";
    return k_exit_ok;
}

int cmd_bench(const command_io& io) {
    const json& cfg = io.config;
    const std::string hash = config_hash(cfg);
    ensure_dir(io.out_dir);
    write_config_echo(io, hash);

    const verifier v = build_verifier(cfg);
    const drafter base_d = build_drafter(cfg, v);
    const json& bj = cfg.at("bench");

    const rule_kind rule = parse_rule(bj.at("rule").get<std::string>());
    const greedy_mode mode = parse_mode(bj.at("mode").get<std::string>());
    const prefix s0 = read_prefix(bj.at("prefix"), v.vocab);
    const long n_tokens = bj.at("n_tokens").get<long>();
    const json& cj = bj.at("cost");
    cost_model cost{cj.at("c_draft").get<double>(), cj.at("c_verify").get<double>(),
                    cj.at("c_verify_seq").get<double>(),
                    cj.at("c_verify_per_token").get<double>()};

    struct cell {
        int gamma;
        double temperature;
        int k;
    };
    std::vector<cell> cells;
    for (const auto& g : bj.at("gamma")) {
        for (const auto& t : bj.at("temperature")) {
            for (const auto& k : bj.at("k")) {
                cells.push_back({g.get<int>(), t.get<double>(), k.get<int>()});
            }
        }
    }
    if (cells.empty()) {
        throw config_error("config: bench grid is empty");
    }
    if (rule == rule_kind::standard) {
        for (const cell& c : cells) {
            if (c.k != 1) {
                throw config_error("config: the standard rule supports k = 1 only");
            }
        }
    }

    std::vector<std::string> records(cells.size());
    std::vector<std::vector<std::string>> csv_rows(cells.size());
    run_cells(io.workers, static_cast<int>(cells.size()), [&](int i) {
        const cell& c = cells[static_cast<size_t>(i)];
        const uint64_t cell_seed = derive_seed(master_seed(cfg), static_cast<uint64_t>(i));
        drafter d = base_d;  // private copy keeps the eval counter per cell
        rng_state rng(cell_seed);
        decode_config dc;
        dc.rule = rule;
        dc.sel = {c.k, c.gamma, c.temperature, mode};
        const auto t0 = std::chrono::steady_clock::now();
        const run_metrics m = decode_loop(v, d, s0, n_tokens, dc, cost, rng);
        const double wall = elapsed_ms(t0);

        const std::string run_id = "g" + std::to_string(c.gamma) + "_t" +
                                   format_double(c.temperature) + "_k" + std::to_string(c.k);
        json rec = base_record(hash, cell_seed);
        rec["run_id"] = run_id;
        rec["rule"] = bj.at("rule");
        rec["gamma"] = c.gamma;
        rec["temperature"] = c.temperature;
        rec["k"] = c.k;
        rec["tokens_per_draft"] = m.tokens_per_draft;
        rec["accepted_mean"] = m.accepted_mean;
        rec["sim_speedup"] = m.sim_speedup;
        rec["alpha_curve"] = m.alpha_curve;
        rec["unique_calls"] = m.unique_calls;
        rec["total_tokens"] = m.total_tokens;
        rec["drafts"] = m.drafts;
        rec["mean_selected_tau"] = m.mean_selected_tau;
        rec["wall_ms"] = wall;
        records[static_cast<size_t>(i)] = rec.dump();

        auto& rows = csv_rows[static_cast<size_t>(i)];
        for (size_t j = 0; j < m.alpha_curve.size(); ++j) {
            rows.push_back(run_id + "," + std::to_string(j + 1) + "," +
                           format_double(m.alpha_curve[j]));
        }
    });

    write_lines(io.out_dir + "/bench.jsonl", records);
    std::vector<std::string> csv{"run_id,position,alpha"};
    for (const auto& rows : csv_rows) csv.insert(csv.end(), rows.begin(), rows.end());
    write_lines(io.out_dir + "/alpha_curve.csv", csv);
    return k_exit_ok;
}

int cmd_invariance(const command_io& io) {
    const json& cfg = io.config;
    const std::string hash = config_hash(cfg);
    ensure_dir(io.out_dir);
    write_config_echo(io, hash);

    const verifier v = build_verifier(cfg);
    const drafter base_d = build_drafter(cfg, v);
    const json& ij = cfg.at("invariance");

    const prefix s0 = read_prefix(ij.at("prefix"), v.vocab);
    const long n_samples = ij.at("n_samples").get<long>();
    const int positions = ij.at("positions").get<int>();
    const int gamma = ij.at("gamma").get<int>();
    const double temperature = ij.at("temperature").get<double>();
    const double threshold = ij.at("threshold").get<double>();
    accept_hooks hooks;
    hooks.skip_residual = ij.at("skip_residual").get<bool>();

    struct cell {
        rule_kind rule;
        int k;
        greedy_mode mode;
        std::string rule_name, mode_name;
    };
    std::vector<cell> cells;
    for (const auto& rj : ij.at("rules")) {
        const std::string rname = rj.get<std::string>();
        const rule_kind rule = parse_rule(rname);
        if (rule == rule_kind::standard) {
            cells.push_back({rule, 1, greedy_mode::stop_on_reject, rname, "-"});
            continue;
        }
        for (const auto& kj : ij.at("k")) {
            for (const auto& mj : ij.at("modes")) {
                const std::string mname = mj.get<std::string>();
                cells.push_back({rule, kj.get<int>(), parse_mode(mname), rname, mname});
            }
        }
    }
    if (cells.empty()) {
        throw config_error("config: invariance grid is empty");
    }

    // the vanilla baseline depends only on the verifier; share it across cells
    rng_state vanilla_rng(derive_seed(master_seed(cfg), 0x7a11));
    const position_counts vanilla =
        collect_vanilla_counts(v, n_samples, positions, s0, vanilla_rng);

    std::vector<std::string> records(cells.size());
    std::vector<char> passed(cells.size(), 0);
    run_cells(io.workers, static_cast<int>(cells.size()), [&](int i) {
        const cell& c = cells[static_cast<size_t>(i)];
        const uint64_t cell_seed = derive_seed(master_seed(cfg), 0x100 + static_cast<uint64_t>(i));
        drafter d = base_d;
        rng_state rng(cell_seed);
        invariance_config ic;
        ic.rule = c.rule;
        ic.sel = {c.k, gamma, temperature, c.mode};
        ic.hooks = hooks;
        ic.base_threshold = threshold;
        const position_counts spec_counts =
            collect_speculative_counts(v, d, ic, n_samples, positions, s0, rng);
        const invariance_report rep =
            compare_position_counts(spec_counts, vanilla, v, s0, threshold);

        json rows = json::array();
        for (const auto& r : rep.rows) {
            rows.push_back({{"position", r.position},
                            {"tv", r.tv_speculative},
                            {"tv_exact", r.tv_exact}});
        }
        json rec = base_record(hash, cell_seed);
        rec["rule"] = c.rule_name;
        rec["k"] = c.k;
        rec["mode"] = c.mode_name;
        rec["n_samples"] = rep.n_samples;
        rec["max_tv"] = rep.max_tv;
        rec["max_tv_exact"] = rep.max_tv_exact;
        rec["threshold"] = rep.threshold;
        rec["pass"] = rep.pass;
        rec["rows"] = std::move(rows);
        records[static_cast<size_t>(i)] = rec.dump();
        passed[static_cast<size_t>(i)] = rep.pass ? 1 : 0;
    });

    write_lines(io.out_dir + "/invariance.jsonl", records);
    for (char p : passed) {
        if (!p) return k_exit_check_failed;
    }
    return k_exit_ok;
}

int cmd_oracle(const command_io& io) {
    const json& cfg = io.config;
    const std::string hash = config_hash(cfg);
    ensure_dir(io.out_dir);
    write_config_echo(io, hash);

    const verifier v = build_verifier(cfg);
    const drafter d = build_drafter(cfg, v);
    const json& oj = cfg.at("oracle");
    const prefix s0 = read_prefix(oj.at("prefix"), v.vocab);

    std::vector<std::string> lines;
    for (const auto& rj : oj.at("rules")) {
        const rule_kind rule = parse_rule(rj.get<std::string>());
        for (const auto& gj : oj.at("gamma")) {
            const int gamma = gj.get<int>();
            const oracle_result res = expected_streak_oracle(v, d, s0, gamma, rule);
            json rec = base_record(hash, master_seed(cfg));
            rec["rule"] = rj;
            rec["gamma"] = gamma;
            rec["expected_accepted"] = res.expected_accepted;
            rec["expected_tokens_per_draft"] = res.expected_accepted + 1.0;
            lines.push_back(rec.dump());
        }
    }
    write_lines(io.out_dir + "/oracle.jsonl", lines);
    return k_exit_ok;
}

}  // namespace specstreak::cli
