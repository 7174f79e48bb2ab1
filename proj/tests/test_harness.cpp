#include <doctest.h>

#include "bot/errors.hpp"
#include "bot/harness.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

using namespace bot;

namespace {

ExperimentConfig small_config(int T, int reps, double sigma = 0.1) {
    nlohmann::json j = {{"env", {{"kind", "matching"}, {"K", 2}, {"Kp", 2}, {"cost_gen", "random-uniform"},
                                 {"sigma", sigma}, {"seed", 3}}},
                        {"agent", {{"delta", 0.1}, {"lambda", 1.0}, {"eps", {{"kind", "fixed"}, {"value", 0.05}}}}},
                        {"T", T},
                        {"reps", reps},
                        {"seed", 17}};
    return config_from_json(j);
}

int csv_columns(const std::string& line) {
    return static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
}

}  // namespace

TEST_CASE("config parsing fills agent defaults from the environment") {
    auto c = small_config(20, 2);
    const BanditEnv env = env_from_spec(c.env);
    CHECK(c.agent.scale_bound == env.scale_bound());
    CHECK(c.agent.sigma == 0.1);
    CHECK(c.agent.order.kind == OrderSchedule::Kind::Fixed);
    CHECK(c.agent.order.n == 4);
    CHECK(c.horizon == 20);

    auto back = config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));

    nlohmann::json bad = to_json(c);
    bad["T"] = 0;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    bad = to_json(c);
    bad["agent"]["lambda"] = -1.0;
    CHECK_THROWS_AS(config_from_json(bad), ConfigError);
    CHECK_THROWS_AS(config_from_json(nlohmann::json::object()), ConfigError);
}

TEST_CASE("derived seeds differ per repetition") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) == derive_seed(1, 0));
    CHECK(derive_seed(1, 1) != derive_seed(2, 0));
}

TEST_CASE("singleton environment has zero pseudo-regret") {
    nlohmann::json j = {{"env", {{"kind", "matching"}, {"K", 1}, {"Kp", 1}, {"sigma", 0.3}}}, {"T", 40}};
    auto recs = run_experiment(config_from_json(j));
    REQUIRE(recs.size() == 1);
    REQUIRE_FALSE(recs[0].failed);
    CHECK(recs[0].rows.size() == 40);
    for (const auto& r : recs[0].rows) {
        CHECK(std::abs(r.cum_kant_hi) < 1e-12);
        CHECK(std::abs(r.cum_kant_lo) < 1e-12);
    }
}

TEST_CASE("runs are deterministic and cumulative columns are prefix sums") {
    auto c = small_config(60, 2);
    auto a = run_experiment(c), b = run_experiment(c);
    REQUIRE(a.size() == 2);
    for (size_t r = 0; r < a.size(); ++r) {
        REQUIRE_FALSE(a[r].failed);
        CHECK(a[r].seed == derive_seed(c.seed, static_cast<int>(r)));
        double lo = 0, hi = 0, ent = 0;
        for (size_t s = 0; s < a[r].rows.size(); ++s) {
            const RoundRow& x = a[r].rows[s];
            const RoundRow& y = b[r].rows[s];
            CHECK(x.t == static_cast<int>(s) + 1);
            CHECK(x.reward == y.reward);
            CHECK(x.cum_ent == y.cum_ent);
            lo += x.kant_lo;
            hi += x.kant_hi;
            ent += x.ent;
            CHECK(std::abs(x.cum_kant_lo - lo) <= 1e-9);
            CHECK(std::abs(x.cum_kant_hi - hi) <= 1e-9);
            CHECK(std::abs(x.cum_ent - ent) <= 1e-9);
        }
    }
    CHECK(a[0].rows.back().reward != a[1].rows.back().reward);
}

TEST_CASE("noiseless regret grows sub-linearly") {
    auto c50 = small_config(50, 1, 0.0);
    auto c500 = small_config(500, 1, 0.0);
    const double r50 = run_experiment(c50)[0].final_kant();
    const double r500 = run_experiment(c500)[0].final_kant();
    CHECK(r500 < 10.0 * r50);
}

TEST_CASE("noise term") {
    const double sigma = 0.7;
    CHECK(noise_term(1, 2.0 / std::exp(2.0), sigma) == doctest::Approx(2.0 * sigma));
    CHECK(noise_term(400, 0.1, sigma) == doctest::Approx(2.0 * noise_term(100, 0.1, sigma)));
    CHECK(noise_term(9, 0.5, sigma) == doctest::Approx(sigma * std::sqrt(18.0 * std::log(4.0))));
    CHECK_THROWS(noise_term(1, 1.5, sigma));
}

TEST_CASE("epsilon sum bound") {
    for (double T : {10.0, 1000.0, 1e4}) {
        CHECK(epsilon_sum_bound(T, 0.5, 1.3) ==
              doctest::Approx(1.3 * (std::sqrt(T) * std::log(T) + std::log(6.0) / (2.0 * std::numbers::sqrt2))));
    }
    // independent direct summation
    double direct = 0.0;
    for (int u = 1; u <= 1000; ++u) direct += 0.5 / std::sqrt(u) * std::log(u);
    CHECK(std::abs(epsilon_sum_direct(1000, 0.5, 1.0) - direct) < 1e-9);
    CHECK(direct <= epsilon_sum_bound(1000, 0.5, 1.0));
    CHECK(epsilon_sum_direct(1, 0.5, 1.0) == 0.0);
    CHECK(epsilon_sum_bound(1, 0.5, 1.0) >= 0.0);
    for (int a = 1; a <= 9; ++a)
        for (int T : {10, 100, 1000, 10000})
            CHECK(epsilon_sum_direct(T, a / 10.0, 1.0) <= epsilon_sum_bound(T, a / 10.0, 1.0));
}

TEST_CASE("closed-form bounds are finite, nonnegative and nondecreasing in T") {
    double prev[4] = {0, 0, 0, 0};
    for (double T = 1; T <= 1e5; T *= 3) {
        const double v[4] = {fixed_order_bound(T, 4, 0.1, 0.1, 1.0, 1.0, 0.01),
                             finite_basis_bound(T, 16, 0.1, 0.1, 1.0, 1.0, 1.4),
                             varying_order_bound(T, 1.0, 0.1, 0.1, 1.0, 1.0),
                             varying_order_bound(T, 0.5, 0.1, 0.1, 1.0, 1.0, 1.4)};
        for (int k = 0; k < 4; ++k) {
            CHECK(std::isfinite(v[k]));
            CHECK(v[k] >= 0.0);
            CHECK(v[k] >= prev[k]);
            prev[k] = v[k];
        }
    }
    CHECK(finite_basis_bound(100, 4, 0.1, 0.1, 1.0, 1.0, 2.0) - finite_basis_bound(100, 4, 0.1, 0.1, 1.0, 1.0) ==
          doctest::Approx(2.0 * (1.0 + 10.0 * std::log(100.0))));
}

TEST_CASE("theorem bound on a run") {
    ExperimentConfig empty_cfg = small_config(5, 1);
    CHECK(theorem_bound(RunRecord{}, empty_cfg, 1.0).terms.empty());

    auto c = small_config(200, 1);
    auto rec = run_experiment(c)[0];
    auto rep = theorem_bound(rec, c, 1.0);
    CHECK(rep.kind == "entropic");
    REQUIRE(rep.terms.size() == rec.rows.size());
    // round 0 plays mu x nu, whose full-basis feature vector has norm ||1||_rho = 1
    double sum_theta2 = 1.0;
    for (size_t s = 0; s < rep.terms.size(); ++s) {
        const auto& b = rep.terms[s];
        CHECK(std::isfinite(b.total));
        CHECK(b.noise >= 0.0);
        CHECK(b.width >= 0.0);
        CHECK(b.epsilon_sum == 0.0);
        if (s > 0) {
            CHECK(b.noise >= rep.terms[s - 1].noise);
            CHECK(b.width >= rep.terms[s - 1].width - 1e-12);
        }
        // determinant-trace inequality: logdet(I + A) <= n log(1 + tr A / n)
        const RoundRow& row = rec.rows[s];
        sum_theta2 += row.theta_norm * row.theta_norm;
        const double scale = 1.0 / (2.0 * c.agent.lambda * c.agent.scale_bound);
        CHECK(row.logdet_width <= row.order * std::log(1.0 + scale * sum_theta2 / row.order) + 1e-9);
    }
    CHECK(rec.rows.back().beta > 0.0);

    auto k = c;
    k.agent.eps = EpsilonSchedule::power(0.5);
    auto krec = run_experiment(k)[0];
    auto krep = theorem_bound(krec, k, 1.5);
    CHECK(krep.kind == "kantorovich");
    CHECK(krep.terms.back().epsilon_sum == doctest::Approx(epsilon_sum_bound(200, 0.5, 1.5)));
}

TEST_CASE("wilson interval") {
    auto w = wilson_interval(8, 10);
    CHECK(w.lo == doctest::Approx(0.4902).epsilon(1e-3));
    CHECK(w.hi == doctest::Approx(0.9433).epsilon(1e-3));
    auto all = wilson_interval(300, 300);
    CHECK(all.hi == doctest::Approx(1.0));
    CHECK(all.lo < 1.0);
    auto none = wilson_interval(0, 50);
    CHECK(none.lo == doctest::Approx(0.0));
}

TEST_CASE("coverage extremes") {
    auto c = small_config(40, 8, 0.3);
    c.agent.radius_multiplier = 10.0;
    auto wide = coverage_study(c);
    CHECK(wide.runs == 8);
    CHECK(wide.frequency == 1.0);

    c.agent.radius_multiplier = 0.0;
    auto zero = coverage_study(c);
    CHECK(zero.frequency == 0.0);
    CHECK(zero.target == doctest::Approx(0.9));
}

TEST_CASE("loglog slope recovers power laws") {
    std::vector<double> t, y;
    for (int i = 1; i <= 1000; ++i) {
        t.push_back(i);
        y.push_back(3.0 * std::pow(i, 0.6));
    }
    CHECK(loglog_slope(t, y, 500, 1000) == doctest::Approx(0.6));
    CHECK(std::isnan(loglog_slope(t, y, 2000, 3000)));
}

TEST_CASE("csv and json export") {
    std::ostringstream empty;
    write_csv(empty, {});
    CHECK(empty.str() == std::string(kCsvHeader) + "\n");
    CHECK(csv_columns(kCsvHeader) == 13);

    auto c = small_config(15, 2);
    auto recs = run_experiment(c);
    std::ostringstream os;
    write_csv(os, recs);
    std::istringstream in(os.str());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        CHECK(csv_columns(line) == 13);
        ++lines;
    }
    CHECK(lines == 1 + 2 * 15);

    nlohmann::json meta = {{"config_hash", config_hash(c)}};
    auto j = records_to_json(recs, meta);
    auto back = records_from_json(nlohmann::json::parse(j.dump()));
    REQUIRE(back.size() == recs.size());
    CHECK(records_to_json(back, meta) == j);
    CHECK(j.at("meta").at("config_hash") == config_hash(c));

    auto svg = render_svg(recs, theorem_bound(recs[0], c, 1.0), "regret");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("polyline") != std::string::npos);
}
