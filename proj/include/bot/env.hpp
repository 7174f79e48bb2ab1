#pragma once

#include "bot/basis.hpp"
#include "bot/measures.hpp"
#include "bot/transport.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

namespace bot {

/// Reward noise: gaussian(sigma) or uniform on [-b, b] (declared sigma^2 = b^2 / 3).
struct NoiseModel {
    enum class Kind { Gaussian, Uniform };
    Kind kind = Kind::Gaussian;
    double param = 0.0;  // sigma for Gaussian, b for Uniform

    static NoiseModel gaussian(double sigma);
    static NoiseModel uniform(double bound);

    double sigma() const;
    double draw(std::mt19937_64& rng) const;
};

nlohmann::json to_json(const NoiseModel& n);
NoiseModel noise_from_json(const nlohmann::json& j);

struct RegretTerms {
    double kant_lo = 0.0;  // pairing - Kant upper bound
    double kant_hi = 0.0;  // pairing - Kant lower bound
    double ent = 0.0;      // pairing + eps H(pi | rho) - certified lower bound on Ent(eps)
};

/// Synthetic environment: known marginals, hidden cost c* = sum gamma*_k phi_k,
/// noisy linear rewards. Baselines are computed lazily and memoized; the memo
/// is shared between copies and guarded by a mutex.
class BanditEnv {
public:
    BanditEnv(DiscreteMeasure mu, DiscreteMeasure nu, std::shared_ptr<const OrthonormalBasis> basis,
              CoefficientVector true_coeffs, NoiseModel noise, double scale_bound,
              std::uint64_t seed, nlohmann::json spec);

    const DiscreteMeasure& mu() const noexcept { return mu_; }
    const DiscreteMeasure& nu() const noexcept { return nu_; }
    const CostTable& true_cost() const noexcept { return cost_; }
    const CoefficientVector& true_coeffs() const noexcept { return coeffs_; }
    std::shared_ptr<const OrthonormalBasis> basis() const noexcept { return basis_; }
    const NoiseModel& noise() const noexcept { return noise_; }
    /// Declared C with ||true_coeffs||_2 <= C.
    double scale_bound() const noexcept { return scale_bound_; }
    std::uint64_t seed() const noexcept { return seed_; }
    /// Max discrete Lipschitz ratio of the cost over grid-cell pairs.
    double lipschitz() const noexcept { return lipschitz_; }
    const nlohmann::json& spec() const noexcept { return spec_; }
    /// FNV-1a of the canonical spec, as 16 hex digits.
    std::string hash() const;

    /// <c*, pi> + xi. Throws InfeasibleAction when pi misses Pi(mu, nu) at 1e-10.
    double pull(const Coupling& pi, std::mt19937_64& rng) const;

    const KantorovichBaseline& kantorovich() const;
    EntropicValue entropic(double epsilon) const;
    RegretTerms regret_terms(const Coupling& pi, double epsilon) const;

private:
    struct Memo {
        std::mutex lock;
        std::unique_ptr<KantorovichBaseline> kant;
        std::map<double, EntropicValue> ent;
    };

    DiscreteMeasure mu_;
    DiscreteMeasure nu_;
    std::shared_ptr<const OrthonormalBasis> basis_;
    CoefficientVector coeffs_;
    CostTable cost_;
    NoiseModel noise_;
    double scale_bound_;
    std::uint64_t seed_;
    double lipschitz_ = 0.0;
    nlohmann::json spec_;
    std::shared_ptr<Memo> memo_;
};

inline constexpr double kFeasibilityTol = 1e-10;

/// Uniform marginals on K and K' loci (points 0..K-1), loci basis. cost_gen is
/// "random-uniform" (c_ij ~ U[0, 1]) or "structured" (c_ij = |i/(K-1) - j/(K'-1)|).
BanditEnv make_matching_env(int k, int kp, const std::string& cost_gen, double sigma,
                            std::uint64_t seed);
/// Matching environment with supplied marginals and cost.
BanditEnv make_matching_env(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                            const Matrix& cost, const NoiseModel& noise, std::uint64_t seed);

/// Uniform marginals on the embedding grid, basis = gram_schmidt(embeddings), c* = sum theta_i Phi_i.
BanditEnv make_parametric_env(const std::vector<Matrix>& embeddings, const Vector& theta,
                              double sigma, std::uint64_t seed);

/// Uniform marginals, full cosine basis, coefficients from decay_cost(power(q), C).
BanditEnv make_smooth_env(int k, int kp, double q, double scale, double sigma, std::uint64_t seed);

/// Builds any of the above from an environment spec JSON.
BanditEnv env_from_spec(const nlohmann::json& spec);
nlohmann::json to_json(const BanditEnv& env);

std::uint64_t fnv1a(const std::string& bytes);

}  // namespace bot
