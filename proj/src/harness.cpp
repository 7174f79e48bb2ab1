#include "bot/harness.hpp"

#include "bot/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <sstream>

namespace bot {

void ExperimentConfig::validate() const {
    if (horizon < 1) throw ConfigError("T must be at least 1");
    if (reps < 1) throw ConfigError("reps must be at least 1");
    agent.validate();
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
    try {
        ExperimentConfig c;
        c.env = j.at("env");
        const BanditEnv env = env_from_spec(c.env);
        nlohmann::json agent = j.value("agent", nlohmann::json::object());
        if (!agent.contains("C")) agent["C"] = env.scale_bound();
        if (!agent.contains("sigma")) agent["sigma"] = env.noise().sigma();
        if (!agent.contains("order")) {
            agent["order"] = {{"kind", "fixed"}, {"n", env.basis()->n_max()}};
        }
        c.agent = entucb_config_from_json(agent);
        c.horizon = j.value("T", c.horizon);
        c.reps = j.value("reps", c.reps);
        c.seed = j.value("seed", c.seed);
        if (j.contains("diagnostics")) {
            c.diagnostics.entropic = j["diagnostics"].value("entropic", true);
            c.diagnostics.coverage = j["diagnostics"].value("coverage", true);
        }
        c.out_dir = j.value("out", std::string{});
        c.validate();
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"env", c.env},
            {"agent", to_json(c.agent)},
            {"T", c.horizon},
            {"reps", c.reps},
            {"seed", c.seed},
            {"diagnostics",
             {{"entropic", c.diagnostics.entropic}, {"coverage", c.diagnostics.coverage}}},
            {"out", c.out_dir}};
}

std::string config_hash(const ExperimentConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(to_json(c).dump())));
    return buf;
}

bool RunRecord::all_in_set() const {
    return !failed && std::all_of(rows.begin(), rows.end(), [](const RoundRow& r) { return r.in_set; });
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, int rep) {
    return splitmix64(splitmix64(master) + static_cast<std::uint64_t>(rep));
}

RunRecord run_once(const BanditEnv& env, const ExperimentConfig& config, int rep) {
    RunRecord rec;
    rec.rep = rep;
    rec.seed = derive_seed(config.seed, rep);
    const auto start = std::chrono::steady_clock::now();
    try {
        std::mt19937_64 rng(rec.seed);
        EntUcbAgent agent(config.agent, env.basis(), env.mu(), env.nu());
        const double kant = env.kantorovich().value;
        const double width_scale = 1.0 / (2.0 * config.agent.lambda * config.agent.scale_bound);
        double cum_lo = 0.0, cum_hi = 0.0, cum_ent = 0.0;
        rec.rows.reserve(static_cast<size_t>(config.horizon));
        for (int t = 0; t <= config.horizon; ++t) {
            RoundPlan plan = agent.propose();
            const double reward = env.pull(plan.plan, rng);
            agent.observe(plan.plan, reward);
            if (t == 0) continue;

            RoundRow row;
            row.t = t;
            row.eps = plan.epsilon;
            row.order = plan.order;
            row.reward = reward;
            const RegretTerms terms =
                env.regret_terms(plan.plan, config.diagnostics.entropic ? plan.epsilon : 0.0);
            row.kant_lo = terms.kant_lo;
            row.kant_hi = terms.kant_hi;
            row.ent = config.diagnostics.entropic ? terms.ent : 0.0;
            cum_lo += row.kant_lo;
            cum_hi += row.kant_hi;
            cum_ent += row.ent;
            row.cum_kant_lo = cum_lo;
            row.cum_kant_hi = cum_hi;
            row.cum_ent = cum_ent;
            row.beta = plan.ellipsoid->radius;
            row.theta_norm = features(plan.plan, *env.basis(), plan.order).norm();
            row.optimism_value = plan.optimism_value;
            if (config.diagnostics.coverage) {
                row.in_set = plan.ellipsoid->contains(env.true_coeffs().head(plan.order));
            }
            row.logdet_width = agent.state().log_det_gram(width_scale);
            rec.noisy_regret += reward - kant;
            rec.rows.push_back(row);
        }
    } catch (const Error& e) {
        rec.failed = true;
        rec.error = e.what();
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

std::vector<RunRecord> run_experiment(const ExperimentConfig& config) {
    config.validate();
    const BanditEnv env = env_from_spec(config.env);
    std::vector<RunRecord> out;
    out.reserve(static_cast<size_t>(config.reps));
    for (int rep = 0; rep < config.reps; ++rep) out.push_back(run_once(env, config, rep));
    return out;
}

double noise_term(double T, double delta, double sigma) {
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("noise_term: delta must lie in (0,1)");
    return sigma * std::sqrt(2.0 * T * std::log(2.0 / delta));
}

double epsilon_sum_bound(double T, double alpha, double kappa) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("epsilon_sum_bound: alpha in (0,1)");
    return kappa * (alpha / (1.0 - alpha) * std::pow(T, 1.0 - alpha) * std::log(T) +
                    alpha / std::pow(2.0, alpha) * std::log(6.0));
}

double epsilon_sum_direct(int T, double alpha, double kappa) {
    double s = 0.0;
    for (int u = 2; u <= T; ++u) s += alpha * std::pow(u, -alpha) * std::log(static_cast<double>(u));
    return kappa * s;
}

double entropic_regret_bound(double T, double delta, double sigma, double C, double beta_T,
                             double logdet_width) {
    return noise_term(T, delta, sigma) + 2.0 * C * beta_T * std::sqrt(T * std::max(logdet_width, 0.0));
}

double logdet_surrogate(double t, int n, double lambda, double C) {
    return std::log(1.0 / lambda + t * C * C / n);
}

double fixed_order_bound(double T, int n, double delta, double sigma, double lambda, double C,
                         double tail) {
    return noise_term(T, delta, sigma) + 2.0 * C * std::sqrt(n * T) * logdet_surrogate(T, n, lambda, C) +
           2.0 * T * tail;
}

double finite_basis_bound(double T, int N, double delta, double sigma, double lambda, double C,
                          std::optional<double> kappa) {
    double b = noise_term(T, delta, sigma) + 2.0 * C * std::sqrt(N * T) * std::log(1.0 / lambda + T * C * C / N);
    if (kappa) b += *kappa * (1.0 + std::sqrt(T) * std::log(T));
    return b;
}

double varying_order_bound(double T, double q, double delta, double sigma, double lambda,
                           double C, std::optional<double> kappa) {
    const double rate = std::pow(T, (q + 1.0) / (2.0 * q + 1.0));
    const double grow = std::pow(T, 2.0 * q / (2.0 * q + 1.0));
    double b = noise_term(T, delta, sigma);
    b += C * (1.0 + q * rate / (2.0 * q + 1.0));
    b += 2.0 * C * sigma * rate *
         (std::sqrt(2.0 * std::log((1.0 / lambda + 2.0 * grow * C * C) / delta)) + std::sqrt(lambda) * C) *
         std::sqrt(std::log(1.0 + 2.0 * grow / (C * C)));
    if (kappa) b += *kappa * (1.0 + std::sqrt(T) * std::log(T));
    return b;
}

BoundReport theorem_bound(const RunRecord& record, const ExperimentConfig& config, double kappa) {
    const EntUcbConfig& a = config.agent;
    const bool kant = a.eps.kind == EpsilonSchedule::Kind::Power;
    BoundReport rep;
    rep.kind = kant ? "kantorovich" : "entropic";
    for (const RoundRow& row : record.rows) {
        BoundTerms b;
        b.T = row.t;
        b.noise = noise_term(b.T, a.delta, a.sigma);
        const double beta = a.radius_multiplier > 0.0 ? row.beta / a.radius_multiplier : row.beta;
        b.width = 2.0 * a.scale_bound * beta * std::sqrt(b.T * std::max(row.logdet_width, 0.0));
        if (kant) b.epsilon_sum = epsilon_sum_bound(b.T, a.eps.value, kappa);
        b.total = b.noise + b.width + b.epsilon_sum;
        rep.terms.push_back(b);
    }
    return rep;
}

WilsonInterval wilson_interval(int successes, int trials, double z) {
    if (trials <= 0) return {0.0, 1.0};
    const double n = trials, p = successes / n, z2 = z * z;
    const double centre = (p + z2 / (2 * n)) / (1 + z2 / n);
    const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

CoverageReport coverage_from_records(const std::vector<RunRecord>& records, double delta) {
    CoverageReport r;
    r.runs = static_cast<int>(records.size());
    for (const RunRecord& rec : records) r.covered += rec.all_in_set() ? 1 : 0;
    r.frequency = r.runs > 0 ? static_cast<double>(r.covered) / r.runs : 0.0;
    r.wilson = wilson_interval(r.covered, r.runs);
    r.target = 1.0 - delta;
    return r;
}

CoverageReport coverage_study(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    c.diagnostics.coverage = true;
    c.diagnostics.entropic = false;
    return coverage_from_records(run_experiment(c), c.agent.delta);
}

double loglog_slope(const std::vector<double>& t, const std::vector<double>& y, double t_lo,
                    double t_hi) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = 0;
    for (size_t i = 0; i < t.size() && i < y.size(); ++i) {
        if (t[i] < t_lo || t[i] > t_hi || !(y[i] > 0.0)) continue;
        const double lx = std::log(t[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++n;
    }
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void write_csv(std::ostream& os, const std::vector<RunRecord>& records) {
    os << kCsvHeader << '\n';
    char buf[512];
    for (const RunRecord& rec : records) {
        for (const RoundRow& r : rec.rows) {
            std::snprintf(buf, sizeof buf,
                          "%d,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                          r.t, r.eps, r.order, r.reward, r.kant_hi, r.ent, r.cum_kant_lo,
                          r.cum_kant_hi, r.cum_ent, r.beta, r.theta_norm, r.optimism_value,
                          r.in_set ? 1 : 0);
            os << buf;
        }
    }
}

namespace {

nlohmann::json row_to_json(const RoundRow& r) {
    return {{"t", r.t},
            {"eps_t", r.eps},
            {"n_t", r.order},
            {"reward", r.reward},
            {"pseudo_regret_kant_lo", r.kant_lo},
            {"pseudo_regret_kant", r.kant_hi},
            {"pseudo_regret_ent", r.ent},
            {"cum_kant_lo", r.cum_kant_lo},
            {"cum_kant_hi", r.cum_kant_hi},
            {"cum_ent", r.cum_ent},
            {"beta_t", r.beta},
            {"theta_norm", r.theta_norm},
            {"optimism_value", r.optimism_value},
            {"in_confidence_set", r.in_set},
            {"logdet_width", r.logdet_width}};
}

RoundRow row_from_json(const nlohmann::json& j) {
    RoundRow r;
    r.t = j.at("t").get<int>();
    r.eps = j.at("eps_t").get<double>();
    r.order = j.at("n_t").get<int>();
    r.reward = j.at("reward").get<double>();
    r.kant_lo = j.at("pseudo_regret_kant_lo").get<double>();
    r.kant_hi = j.at("pseudo_regret_kant").get<double>();
    r.ent = j.at("pseudo_regret_ent").get<double>();
    r.cum_kant_lo = j.at("cum_kant_lo").get<double>();
    r.cum_kant_hi = j.at("cum_kant_hi").get<double>();
    r.cum_ent = j.at("cum_ent").get<double>();
    r.beta = j.at("beta_t").get<double>();
    r.theta_norm = j.at("theta_norm").get<double>();
    r.optimism_value = j.at("optimism_value").get<double>();
    r.in_set = j.at("in_confidence_set").get<bool>();
    r.logdet_width = j.at("logdet_width").get<double>();
    return r;
}

}  // namespace

nlohmann::json records_to_json(const std::vector<RunRecord>& records, const nlohmann::json& meta) {
    nlohmann::json arr = nlohmann::json::array();
    for (const RunRecord& rec : records) {
        nlohmann::json rows = nlohmann::json::array();
        for (const RoundRow& r : rec.rows) rows.push_back(row_to_json(r));
        arr.push_back({{"rep", rec.rep},
                       {"seed", rec.seed},
                       {"noisy_regret", rec.noisy_regret},
                       {"wall_seconds", rec.wall_seconds},
                       {"failed", rec.failed},
                       {"error", rec.error},
                       {"rows", rows}});
    }
    return {{"meta", meta}, {"records", arr}};
}

std::vector<RunRecord> records_from_json(const nlohmann::json& j) {
    std::vector<RunRecord> out;
    for (const auto& r : j.at("records")) {
        RunRecord rec;
        rec.rep = r.at("rep").get<int>();
        rec.seed = r.at("seed").get<std::uint64_t>();
        rec.noisy_regret = r.at("noisy_regret").get<double>();
        rec.wall_seconds = r.at("wall_seconds").get<double>();
        rec.failed = r.at("failed").get<bool>();
        rec.error = r.at("error").get<std::string>();
        for (const auto& row : r.at("rows")) rec.rows.push_back(row_from_json(row));
        out.push_back(std::move(rec));
    }
    return out;
}

std::string render_svg(const std::vector<RunRecord>& records, const BoundReport& bound,
                       const std::string& title) {
    constexpr double W = 640, H = 400, pad = 50;
    const bool kant = bound.kind == "kantorovich";
    auto value = [&](const RoundRow& r) { return kant ? r.cum_kant_hi : r.cum_ent; };
    double t_max = 1, y_max = 1e-12;
    for (const RunRecord& rec : records)
        for (const RoundRow& r : rec.rows) {
            t_max = std::max(t_max, static_cast<double>(r.t));
            y_max = std::max(y_max, value(r));
        }
    for (const BoundTerms& b : bound.terms) y_max = std::max(y_max, b.total);
    auto sx = [&](double t) { return pad + (W - 2 * pad) * t / t_max; };
    auto sy = [&](double y) { return H - pad - (H - 2 * pad) * std::max(y, 0.0) / y_max; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
       << "</text>\n";
    os << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\""
       << H - pad << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << W - pad << "\" y=\"" << H - pad + 20 << "\" text-anchor=\"end\" font-size=\"11\">t = "
       << t_max << "</text>\n";
    os << "<text x=\"" << pad << "\" y=\"" << pad - 8 << "\" font-size=\"11\">" << y_max << "</text>\n";
    auto polyline = [&](const std::vector<std::pair<double, double>>& pts, const char* style) {
        os << "<polyline fill=\"none\" " << style << " points=\"";
        // Thin long runs to at most ~1000 vertices.
        const size_t step = std::max<size_t>(1, pts.size() / 1000);
        for (size_t i = 0; i < pts.size(); i += step) os << sx(pts[i].first) << ',' << sy(pts[i].second) << ' ';
        if (!pts.empty()) os << sx(pts.back().first) << ',' << sy(pts.back().second);
        os << "\"/>\n";
    };
    for (const RunRecord& rec : records) {
        std::vector<std::pair<double, double>> pts;
        for (const RoundRow& r : rec.rows) pts.emplace_back(r.t, value(r));
        polyline(pts, "stroke=\"steelblue\" stroke-opacity=\"0.6\"");
    }
    std::vector<std::pair<double, double>> bpts;
    for (const BoundTerms& b : bound.terms) bpts.emplace_back(b.T, b.total);
    polyline(bpts, "stroke=\"firebrick\" stroke-dasharray=\"6,4\"");
    os << "</svg>\n";
    return os.str();
}

}  // namespace bot
