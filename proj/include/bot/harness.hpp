#pragma once

#include "bot/bandit.hpp"
#include "bot/env.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace bot {

struct Diagnostics {
    bool entropic = true;   // per-round entropic excess at eps_t
    bool coverage = true;   // per-round membership of gamma*|n_t in the ellipsoid
};

struct ExperimentConfig {
    nlohmann::json env;  // environment spec
    EntUcbConfig agent;
    int horizon = 100;
    int reps = 1;
    std::uint64_t seed = 0;
    Diagnostics diagnostics;
    std::string out_dir;

    void validate() const;
};

/// Parses the config JSON. Agent fields absent from the JSON default to the
/// environment: C to the declared scale bound, sigma to the noise level, and
/// the order to the full basis size.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);

struct RoundRow {
    int t = 0;
    double eps = 0.0;
    int order = 0;
    double reward = 0.0;
    double kant_lo = 0.0;  // instant Kantorovich pseudo-regret, lower end
    double kant_hi = 0.0;  // upper end; exported as pseudo_regret_kant
    double ent = 0.0;
    double cum_kant_lo = 0.0;
    double cum_kant_hi = 0.0;
    double cum_ent = 0.0;
    double beta = 0.0;
    double theta_norm = 0.0;
    double optimism_value = 0.0;
    bool in_set = false;
    // log det(I + (2 lambda C)^{-1} sum theta theta^T) after this round's update
    double logdet_width = 0.0;
};

struct RunRecord {
    int rep = 0;
    std::uint64_t seed = 0;
    std::vector<RoundRow> rows;
    double noisy_regret = 0.0;  // sum_t (R_t - Kant)
    double wall_seconds = 0.0;
    bool failed = false;
    std::string error;

    bool all_in_set() const;
    double final_kant() const { return rows.empty() ? 0.0 : rows.back().cum_kant_hi; }
    double final_ent() const { return rows.empty() ? 0.0 : rows.back().cum_ent; }
};

/// Per-repetition seed: splitmix64(splitmix64(master) + rep).
std::uint64_t derive_seed(std::uint64_t master, int rep);

/// One repetition: rounds t = 0..T, rows for t = 1..T.
RunRecord run_once(const BanditEnv& env, const ExperimentConfig& config, int rep);
/// M repetitions against the environment built from config.env.
std::vector<RunRecord> run_experiment(const ExperimentConfig& config);

// Bound expressions.
double noise_term(double T, double delta, double sigma);
/// kappa ((alpha / (1 - alpha)) T^{1-alpha} log T + (alpha / 2^alpha) log 6).
double epsilon_sum_bound(double T, double alpha, double kappa);
/// kappa sum_{u <= T} alpha u^{-alpha} log u.
double epsilon_sum_direct(int T, double alpha, double kappa);
/// noise_term + 2 C beta_T sqrt(T logdet(I + (2 lambda C)^{-1} sum theta theta^T)).
double entropic_regret_bound(double T, double delta, double sigma, double C, double beta_T,
                             double logdet_width);
/// Closed form for a fixed order n with M = 1 (the log M terms vanish) plus 2 T tail.
double fixed_order_bound(double T, int n, double delta, double sigma, double lambda, double C,
                         double tail);
/// Finite basis with N nonzero coefficients; Kantorovich variant adds kappa (1 + sqrt(T) log T).
double finite_basis_bound(double T, int N, double delta, double sigma, double lambda, double C,
                          std::optional<double> kappa = std::nullopt);
/// Growing order n_t = ceil(t^{1/(2q+1)}) under zeta(n) = 1 - n^{-q}.
double varying_order_bound(double T, double q, double delta, double sigma, double lambda,
                           double C, std::optional<double> kappa = std::nullopt);
/// log(1/lambda + t C^2 / n) + n log M with M = 1, as stated for the design determinant.
double logdet_surrogate(double t, int n, double lambda, double C);

struct BoundTerms {
    double T = 0.0;
    double noise = 0.0;
    double width = 0.0;        // 2 C beta_T sqrt(T logdet)
    double epsilon_sum = 0.0;  // Kantorovich schedule only
    double total = 0.0;
};

struct BoundReport {
    std::string kind;  // "entropic" or "kantorovich"
    std::vector<BoundTerms> terms;
};

/// Realized-design bound at every logged round of a run (empty for an empty run).
BoundReport theorem_bound(const RunRecord& record, const ExperimentConfig& config,
                          double kappa);

struct WilsonInterval {
    double lo = 0.0;
    double hi = 0.0;
};

WilsonInterval wilson_interval(int successes, int trials, double z = 1.959963984540054);

struct CoverageReport {
    int runs = 0;
    int covered = 0;
    double frequency = 0.0;
    WilsonInterval wilson;
    double target = 0.0;  // 1 - delta
};

/// Fraction of runs where gamma*|n_t lies in the ellipsoid at every round.
CoverageReport coverage_study(const ExperimentConfig& config);
CoverageReport coverage_from_records(const std::vector<RunRecord>& records, double delta);

/// Least-squares slope of log y against log t over rows with t in [t_lo, t_hi].
double loglog_slope(const std::vector<double>& t, const std::vector<double>& y, double t_lo,
                    double t_hi);

// Export.
inline constexpr const char* kCsvHeader =
    "t,eps_t,n_t,reward,pseudo_regret_kant,pseudo_regret_ent,cum_kant_lo,cum_kant_hi,cum_ent,"
    "beta_t,theta_norm,optimism_value,in_confidence_set";

void write_csv(std::ostream& os, const std::vector<RunRecord>& records);
nlohmann::json records_to_json(const std::vector<RunRecord>& records, const nlohmann::json& meta);
std::vector<RunRecord> records_from_json(const nlohmann::json& j);
/// Cumulative regret per repetition against the bound curve of the first record.
std::string render_svg(const std::vector<RunRecord>& records, const BoundReport& bound,
                       const std::string& title);

std::string config_hash(const ExperimentConfig& c);

}  // namespace bot
