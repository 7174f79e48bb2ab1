#include "bot/env.hpp"

#include "bot/errors.hpp"

#include <cmath>
#include <cstdio>

namespace bot {

NoiseModel NoiseModel::gaussian(double sigma) {
    if (!(sigma >= 0.0)) throw InvalidArgument("NoiseModel: sigma must be nonnegative");
    return {Kind::Gaussian, sigma};
}

NoiseModel NoiseModel::uniform(double bound) {
    if (!(bound >= 0.0)) throw InvalidArgument("NoiseModel: bound must be nonnegative");
    return {Kind::Uniform, bound};
}

double NoiseModel::sigma() const {
    return kind == Kind::Gaussian ? param : param / std::sqrt(3.0);
}

double NoiseModel::draw(std::mt19937_64& rng) const {
    if (param == 0.0) return 0.0;
    if (kind == Kind::Gaussian) return std::normal_distribution<double>(0.0, param)(rng);
    return std::uniform_real_distribution<double>(-param, param)(rng);
}

nlohmann::json to_json(const NoiseModel& n) {
    if (n.kind == NoiseModel::Kind::Gaussian) return {{"kind", "gaussian"}, {"sigma", n.param}};
    return {{"kind", "uniform"}, {"b", n.param}};
}

NoiseModel noise_from_json(const nlohmann::json& j) {
    const std::string kind = j.value("kind", "gaussian");
    if (kind == "gaussian") return NoiseModel::gaussian(j.at("sigma").get<double>());
    if (kind == "uniform") return NoiseModel::uniform(j.at("b").get<double>());
    throw ConfigError("unknown noise kind '" + kind + "'");
}

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

BanditEnv::BanditEnv(DiscreteMeasure mu, DiscreteMeasure nu,
                     std::shared_ptr<const OrthonormalBasis> basis, CoefficientVector true_coeffs,
                     NoiseModel noise, double scale_bound, std::uint64_t seed, nlohmann::json spec)
    : mu_(std::move(mu)), nu_(std::move(nu)), basis_(std::move(basis)),
      coeffs_(std::move(true_coeffs)), cost_(synthesize(coeffs_, *basis_)), noise_(noise),
      scale_bound_(scale_bound), seed_(seed), spec_(std::move(spec)),
      memo_(std::make_shared<Memo>()) {
    if (basis_->rows() != mu_.size() || basis_->cols() != nu_.size()) {
        throw ShapeMismatch("BanditEnv: basis grid does not match the marginals");
    }
    lipschitz_ = lipschitz_constant(cost_.values(), mu_, nu_);
    cost_.lipschitz = lipschitz_;
    cost_.scale = scale_bound_;
}

std::string BanditEnv::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(spec_.dump())));
    return buf;
}

double BanditEnv::pull(const Coupling& pi, std::mt19937_64& rng) const {
    const FeasibilityReport rep = check_coupling(pi, mu_, nu_, kFeasibilityTol);
    if (!rep.feasible) {
        throw InfeasibleAction("pull: action is not a coupling of (mu, nu) (row error " +
                               std::to_string(rep.row_error) + ", column error " +
                               std::to_string(rep.col_error) + ", min entry " +
                               std::to_string(rep.min_entry) + ")");
    }
    return pairing(cost_, pi) + noise_.draw(rng);
}

const KantorovichBaseline& BanditEnv::kantorovich() const {
    std::lock_guard<std::mutex> guard(memo_->lock);
    if (!memo_->kant) {
        memo_->kant = std::make_unique<KantorovichBaseline>(kantorovich_baseline(cost_, mu_, nu_));
    }
    return *memo_->kant;
}

EntropicValue BanditEnv::entropic(double epsilon) const {
    {
        std::lock_guard<std::mutex> guard(memo_->lock);
        auto it = memo_->ent.find(epsilon);
        if (it != memo_->ent.end()) return it->second;
    }
    const EntropicValue v = entropic_value(cost_, mu_, nu_, epsilon);
    std::lock_guard<std::mutex> guard(memo_->lock);
    memo_->ent.emplace(epsilon, v);
    return v;
}

RegretTerms BanditEnv::regret_terms(const Coupling& pi, double epsilon) const {
    const double p = pairing(cost_, pi);
    const KantorovichBaseline& kant = kantorovich();
    RegretTerms out;
    out.kant_lo = p - kant.upper;
    out.kant_hi = p - kant.lower;
    if (epsilon > 0.0) {
        const Matrix rho = mu_.weights() * nu_.weights().transpose();
        out.ent = p + epsilon * relative_entropy(pi.mass, rho) - entropic(epsilon).dual;
    } else {
        out.ent = out.kant_hi;
    }
    return out;
}

namespace {

nlohmann::json with_common(nlohmann::json spec, const NoiseModel& noise, std::uint64_t seed) {
    spec["noise"] = to_json(noise);
    spec["seed"] = seed;
    return spec;
}

double coeff_norm(const CoefficientVector& g) { return g.norm(); }

DiscreteMeasure uniform_on(int k) {
    if (k < 1) throw InvalidArgument("environment: grid sizes must be positive");
    return DiscreteMeasure::uniform_grid(k);
}

}  // namespace

BanditEnv make_matching_env(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                            const Matrix& cost, const NoiseModel& noise, std::uint64_t seed) {
    auto basis = std::make_shared<const OrthonormalBasis>(loci_indicator_basis(mu, nu));
    const CoefficientVector gamma = analyze(CostTable(cost), *basis);
    nlohmann::json spec = {{"kind", "matching"}, {"mu", mu}, {"nu", nu},
                           {"cost", table_to_json(cost)}};
    return BanditEnv(mu, nu, basis, gamma, noise, coeff_norm(gamma), seed,
                     with_common(std::move(spec), noise, seed));
}

BanditEnv make_matching_env(int k, int kp, const std::string& cost_gen, double sigma,
                            std::uint64_t seed) {
    const DiscreteMeasure mu = uniform_on(k), nu = uniform_on(kp);
    Matrix cost(k, kp);
    if (cost_gen == "random-uniform") {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < kp; ++j) cost(i, j) = unif(rng);
    } else if (cost_gen == "structured") {
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < kp; ++j) {
                const double x = k > 1 ? static_cast<double>(i) / (k - 1) : 0.0;
                const double y = kp > 1 ? static_cast<double>(j) / (kp - 1) : 0.0;
                cost(i, j) = std::abs(x - y);
            }
    } else {
        throw ConfigError("unknown cost generator '" + cost_gen + "'");
    }
    const NoiseModel noise = NoiseModel::gaussian(sigma);
    auto basis = std::make_shared<const OrthonormalBasis>(loci_indicator_basis(mu, nu));
    const CoefficientVector gamma = analyze(CostTable(cost), *basis);
    nlohmann::json spec = {{"kind", "matching"}, {"K", k}, {"Kp", kp}, {"cost_gen", cost_gen}};
    return BanditEnv(mu, nu, basis, gamma, noise, coeff_norm(gamma), seed,
                     with_common(std::move(spec), noise, seed));
}

BanditEnv make_parametric_env(const std::vector<Matrix>& embeddings, const Vector& theta,
                              double sigma, std::uint64_t seed) {
    if (embeddings.empty()) throw InvalidArgument("make_parametric_env: no embeddings");
    if (theta.size() != static_cast<Eigen::Index>(embeddings.size())) {
        throw ShapeMismatch("make_parametric_env: theta length does not match the embeddings");
    }
    const int k = static_cast<int>(embeddings.front().rows());
    const int kp = static_cast<int>(embeddings.front().cols());
    const DiscreteMeasure mu = uniform_on(k), nu = uniform_on(kp);
    ProductMeasure rho = product_measure(mu, nu);
    auto basis = std::make_shared<const OrthonormalBasis>(gram_schmidt(embeddings, rho));
    Matrix cost = Matrix::Zero(k, kp);
    for (size_t i = 0; i < embeddings.size(); ++i) cost += theta[static_cast<Eigen::Index>(i)] * embeddings[i];
    const CoefficientVector gamma = analyze(CostTable(cost), *basis);
    nlohmann::json tables = nlohmann::json::array();
    for (const Matrix& e : embeddings) tables.push_back(table_to_json(e));
    nlohmann::json spec = {{"kind", "parametric"},
                           {"embeddings", tables},
                           {"theta", std::vector<double>(theta.data(), theta.data() + theta.size())}};
    const NoiseModel noise = NoiseModel::gaussian(sigma);
    return BanditEnv(mu, nu, basis, gamma, noise, coeff_norm(gamma), seed,
                     with_common(std::move(spec), noise, seed));
}

BanditEnv make_smooth_env(int k, int kp, double q, double scale, double sigma, std::uint64_t seed) {
    const DiscreteMeasure mu = uniform_on(k), nu = uniform_on(kp);
    auto basis = std::make_shared<const OrthonormalBasis>(cosine_basis(mu, nu, k * kp));
    DecayCost dc = decay_cost(*basis, DecayProfile::power(q), scale, seed);
    nlohmann::json spec = {{"kind", "smooth"}, {"K", k}, {"Kp", kp}, {"q", q}, {"C", scale}};
    const NoiseModel noise = NoiseModel::gaussian(sigma);
    return BanditEnv(mu, nu, basis, dc.coeffs, noise, scale, seed,
                     with_common(std::move(spec), noise, seed));
}

BanditEnv env_from_spec(const nlohmann::json& spec) {
    try {
        const std::string kind = spec.at("kind").get<std::string>();
        const std::uint64_t seed = spec.value("seed", std::uint64_t{0});
        NoiseModel noise = NoiseModel::gaussian(spec.value("sigma", 0.1));
        if (spec.contains("noise")) noise = noise_from_json(spec.at("noise"));

        auto finish = [&](BanditEnv env) {
            if (noise.kind == NoiseModel::Kind::Gaussian && noise.param == env.noise().param) {
                return env;
            }
            nlohmann::json s = env.spec();
            s["noise"] = to_json(noise);
            return BanditEnv(env.mu(), env.nu(), env.basis(), env.true_coeffs(), noise,
                             env.scale_bound(), env.seed(), std::move(s));
        };

        if (kind == "matching") {
            if (spec.contains("cost")) {
                const Matrix cost = table_from_json(spec.at("cost"));
                const DiscreteMeasure mu = spec.contains("mu") ? measure_from_json(spec.at("mu"))
                                                               : uniform_on(static_cast<int>(cost.rows()));
                const DiscreteMeasure nu = spec.contains("nu") ? measure_from_json(spec.at("nu"))
                                                               : uniform_on(static_cast<int>(cost.cols()));
                return make_matching_env(mu, nu, cost, noise, seed);
            }
            return finish(make_matching_env(spec.at("K").get<int>(), spec.at("Kp").get<int>(),
                                            spec.value("cost_gen", "random-uniform"), noise.sigma(),
                                            seed));
        }
        if (kind == "parametric") {
            std::vector<Matrix> emb;
            for (const auto& t : spec.at("embeddings")) emb.push_back(table_from_json(t));
            const auto theta = spec.at("theta").get<std::vector<double>>();
            return finish(make_parametric_env(
                emb, Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size())),
                noise.sigma(), seed));
        }
        if (kind == "smooth") {
            return finish(make_smooth_env(spec.at("K").get<int>(), spec.at("Kp").get<int>(),
                                          spec.at("q").get<double>(), spec.value("C", 1.0),
                                          noise.sigma(), seed));
        }
        throw ConfigError("unknown environment kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("environment spec: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw ConfigError(std::string("environment spec: ") + e.what());
    }
}

nlohmann::json to_json(const BanditEnv& env) {
    return {{"spec", env.spec()},
            {"hash", env.hash()},
            {"true_coeffs", coefficients_to_json(env.true_coeffs())},
            {"cost", table_to_json(env.true_cost().values())},
            {"C", env.scale_bound()},
            {"L", env.lipschitz()},
            {"sigma", env.noise().sigma()}};
}

}  // namespace bot
