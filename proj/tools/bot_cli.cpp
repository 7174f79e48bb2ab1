// Command-line front end: run, sweep, verify, baseline.
#include "bot/bandit.hpp"
#include "bot/basis.hpp"
#include "bot/env.hpp"
#include "bot/errors.hpp"
#include "bot/harness.hpp"
#include "bot/transport.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

struct VerifyFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw bot::ConfigError("cannot open config '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw bot::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

// "agent.lambda" -> /agent/lambda; a leading '/' is taken as a JSON pointer.
nlohmann::json::json_pointer param_pointer(const std::string& name) {
    if (!name.empty() && name.front() == '/') return nlohmann::json::json_pointer(name);
    std::string p;
    for (const auto& part : [&] {
             std::vector<std::string> parts;
             std::stringstream ss(name);
             std::string s;
             while (std::getline(ss, s, '.')) parts.push_back(s);
             return parts;
         }()) {
        p += "/" + part;
    }
    return nlohmann::json::json_pointer(p);
}

nlohmann::json parse_value(const std::string& v) {
    try {
        return nlohmann::json::parse(v);
    } catch (const nlohmann::json::parse_error&) {
        return v;
    }
}

struct Common {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int reps = 0;
    std::vector<std::string> formats{"csv"};
};

nlohmann::json apply_overrides(nlohmann::json j, const Common& c) {
    if (c.seed_set) j["seed"] = c.seed;
    if (c.reps > 0) j["reps"] = c.reps;
    if (!c.out.empty()) j["out"] = c.out;
    return j;
}

void write_outputs(const std::vector<bot::RunRecord>& records, const bot::ExperimentConfig& cfg,
                   const std::string& dir, const std::vector<std::string>& formats) {
    fs::create_directories(dir);
    const bot::BanditEnv env = bot::env_from_spec(cfg.env);
    for (const std::string& f : formats) {
        if (f == "csv") {
            for (const auto& rec : records) {
                std::ofstream os(fs::path(dir) / ("run_" + std::to_string(rec.rep) + ".csv"));
                bot::write_csv(os, {rec});
            }
        } else if (f == "json") {
            nlohmann::json meta = {{"config", bot::to_json(cfg)},
                                   {"config_hash", bot::config_hash(cfg)},
                                   {"env_hash", env.hash()},
                                   {"master_seed", cfg.seed},
                                   {"version", "0.1.0"}};
            std::ofstream os(fs::path(dir) / "records.json");
            os << bot::records_to_json(records, meta).dump(1) << '\n';
        } else if (f == "svg") {
            if (records.empty()) continue;
            const auto bound = bot::theorem_bound(records.front(), cfg, env.lipschitz());
            std::ofstream os(fs::path(dir) / "regret.svg");
            os << bot::render_svg(records, bound, "cumulative " + bound.kind + " pseudo-regret");
        } else {
            throw bot::ConfigError("unknown format '" + f + "'");
        }
    }
}

nlohmann::json summarize(const std::vector<bot::RunRecord>& records, const bot::ExperimentConfig& cfg) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& r : records) {
        reps.push_back({{"rep", r.rep},
                        {"seed", r.seed},
                        {"failed", r.failed},
                        {"error", r.error},
                        {"final_kant", r.final_kant()},
                        {"final_ent", r.final_ent()},
                        {"noisy_regret", r.noisy_regret},
                        {"covered", r.all_in_set()},
                        {"wall_seconds", r.wall_seconds}});
    }
    return {{"config_hash", bot::config_hash(cfg)}, {"T", cfg.horizon}, {"reps", reps}};
}

int cmd_run(const Common& c) {
    nlohmann::json j = apply_overrides(read_json(c.config), c);
    const bot::ExperimentConfig cfg = bot::config_from_json(j);
    const auto records = bot::run_experiment(cfg);
    if (!cfg.out_dir.empty()) write_outputs(records, cfg, cfg.out_dir, c.formats);
    std::cout << summarize(records, cfg).dump(1) << '\n';
    const bool any_failed =
        std::any_of(records.begin(), records.end(), [](const auto& r) { return r.failed; });
    return any_failed ? kExitRuntime : kExitOk;
}

int cmd_sweep(const Common& c, const std::string& param, const std::string& values) {
    const nlohmann::json base = apply_overrides(read_json(c.config), c);
    const auto list = split_csv(values);
    if (param.empty() || list.empty()) throw bot::ConfigError("sweep needs --param and --values");
    nlohmann::json out = nlohmann::json::array();
    bool any_failed = false;
    for (const std::string& v : list) {
        nlohmann::json j = base;
        j[param_pointer(param)] = parse_value(v);
        bot::ExperimentConfig cfg = bot::config_from_json(j);
        if (!cfg.out_dir.empty()) cfg.out_dir = (fs::path(cfg.out_dir) / (param + "=" + v)).string();
        const auto records = bot::run_experiment(cfg);
        if (!cfg.out_dir.empty()) write_outputs(records, cfg, cfg.out_dir, c.formats);
        nlohmann::json s = summarize(records, cfg);
        s["param"] = param;
        s["value"] = parse_value(v);
        out.push_back(s);
        for (const auto& r : records) any_failed = any_failed || r.failed;
    }
    std::cout << out.dump(1) << '\n';
    return any_failed ? kExitRuntime : kExitOk;
}

int cmd_baseline(const Common& c, const std::string& eps_list) {
    nlohmann::json j = read_json(c.config);
    const nlohmann::json spec = j.contains("env") ? j.at("env") : j;
    const bot::BanditEnv env = bot::env_from_spec(spec);
    nlohmann::json ent = nlohmann::json::array();
    for (const std::string& e : split_csv(eps_list)) {
        const double eps = std::stod(e);
        const bot::EntropicValue v = env.entropic(eps);
        ent.push_back({{"epsilon", eps}, {"value", v.value}, {"dual", v.dual}, {"gap", v.gap}});
    }
    nlohmann::json out = {{"env_hash", env.hash()},
                          {"L", env.lipschitz()},
                          {"C", env.scale_bound()},
                          {"kantorovich", bot::to_json(env.kantorovich())},
                          {"entropic", ent}};
    std::cout << out.dump(1) << '\n';
    return kExitOk;
}

// Invariant suite on seeded random instances; prints one line per check.
int cmd_verify(const Common& c) {
    std::mt19937_64 rng(c.seed_set ? c.seed : 20240607ULL);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int failures = 0;
    auto report = [&](const std::string& name, bool ok, const std::string& detail) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "  " << detail << '\n';
        failures += ok ? 0 : 1;
    };
    auto random_measure = [&](int k) {
        bot::Vector w(k);
        for (int i = 0; i < k; ++i) w[i] = 0.1 + unif(rng);
        w /= w.sum();
        bot::Matrix pts(k, 1);
        for (int i = 0; i < k; ++i) pts(i, 0) = i;
        return bot::DiscreteMeasure(pts, w);
    };

    double worst_gap = 0.0, worst_feas = 0.0, worst_lp = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int k = 2 + trial % 4, kp = 2 + (trial / 4) % 4;
        const auto mu = random_measure(k), nu = random_measure(kp);
        bot::Matrix cm(k, kp);
        for (int i = 0; i < k; ++i)
            for (int jj = 0; jj < kp; ++jj) cm(i, jj) = unif(rng);
        const bot::CostTable cost(cm);
        const auto res = bot::sinkhorn_annealed(cost, mu, nu, 0.05, {});
        const auto feas = bot::check_coupling(res.plan, mu, nu, 1e-12);
        worst_gap = std::min(worst_gap, res.gap);
        worst_feas = std::max({worst_feas, feas.row_error, feas.col_error});
        const auto lp = bot::kantorovich_exact(cost, mu, nu);
        worst_lp = std::max(worst_lp, lp.upper - lp.lower);
    }
    report("sinkhorn duality gap >= -1e-9", worst_gap >= -1e-9, "min gap " + std::to_string(worst_gap));
    report("rounded plans feasible at 1e-12", worst_feas <= 1e-12, "max error " + std::to_string(worst_feas));
    report("exact LP certificate width <= 1e-8", worst_lp <= 1e-8, "max width " + std::to_string(worst_lp));

    {
        const auto mu = bot::DiscreteMeasure::uniform_grid(4), nu = bot::DiscreteMeasure::uniform_grid(5);
        const auto basis = bot::cosine_basis(mu, nu, 20);
        const double err = (basis.gram() - bot::Matrix::Identity(20, 20)).cwiseAbs().maxCoeff();
        report("cosine basis Gram = I (1e-10)", err <= 1e-10, "max error " + std::to_string(err));
    }
    {
        bool ok = true;
        for (double a = 0.1; a < 0.95; a += 0.1)
            for (int T : {10, 100, 1000, 10000}) ok = ok && bot::epsilon_sum_direct(T, a, 1.0) <= bot::epsilon_sum_bound(T, a, 1.0);
        report("epsilon sum closed form dominates direct sums", ok, "");
    }
    if (!c.config.empty()) {
        const bot::ExperimentConfig cfg = bot::config_from_json(apply_overrides(read_json(c.config), c));
        const auto records = bot::run_experiment(cfg);
        double worst_prefix = 0.0;
        bool all_ok = true;
        for (const auto& r : records) {
            all_ok = all_ok && !r.failed;
            double s = 0.0;
            for (const auto& row : r.rows) {
                s += row.kant_hi;
                worst_prefix = std::max(worst_prefix, std::abs(s - row.cum_kant_hi));
            }
        }
        report("config runs complete", all_ok, std::to_string(records.size()) + " repetitions");
        report("cumulative columns are prefix sums (1e-9)", worst_prefix <= 1e-9,
               "max deviation " + std::to_string(worst_prefix));
        const auto cov = bot::coverage_from_records(records, cfg.agent.delta);
        report("confidence coverage >= 1 - delta (Wilson upper end)", cov.wilson.hi >= cov.target,
               std::to_string(cov.covered) + "/" + std::to_string(cov.runs));
    }
    return failures == 0 ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bandit optimal transport experiments"};
    app.require_subcommand(1);
    Common common;
    std::string param, values, eps_list = "0.5,0.1,0.05,0.02";

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("--config", common.config, "Experiment or environment config (JSON)");
        if (config_required) opt->required();
        sub->add_option("--out", common.out, "Output directory");
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](const std::uint64_t& s) { common.seed = s; common.seed_set = true; },
            "Master seed");
        sub->add_option("--reps", common.reps, "Repetitions")->check(CLI::PositiveNumber);
        sub->add_option("--format", common.formats, "Output formats: csv, json, svg")
            ->check(CLI::IsMember({"csv", "json", "svg"}))
            ->delimiter(',');
    };

    auto* run = app.add_subcommand("run", "Run one configuration");
    add_common(run, true);
    auto* sweep = app.add_subcommand("sweep", "Vary one parameter over a list of values");
    add_common(sweep, true);
    sweep->add_option("--param", param, "Parameter path, e.g. agent.lambda or env.q")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    auto* verify = app.add_subcommand("verify", "Run the invariant suites");
    add_common(verify, false);
    auto* baseline = app.add_subcommand("baseline", "Kantorovich and entropic values for an environment");
    add_common(baseline, true);
    baseline->add_option("--eps", eps_list, "Comma-separated regularization levels");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*run) return cmd_run(common);
        if (*sweep) return cmd_sweep(common, param, values);
        if (*verify) return cmd_verify(common);
        if (*baseline) return cmd_baseline(common, eps_list);
    } catch (const bot::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitRuntime;
}
