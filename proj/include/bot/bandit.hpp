#pragma once

#include "bot/basis.hpp"
#include "bot/measures.hpp"
#include "bot/transport.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace bot {

/// Regularized least squares at order n with regularizer lambda/2 ||gamma||^2.
///
/// design = lambda I + sum_s theta_s theta_s^T, moment = sum_s theta_s R_s and
/// the estimate solves design * gamma = moment. Plans passed to the
/// coupling overload of `update` are kept so the state can be rebuilt at a
/// larger order.
class RlsState {
public:
    RlsState(int order, double lambda);

    int order() const noexcept { return order_; }
    double lambda() const noexcept { return lambda_; }
    int rounds() const noexcept { return rounds_; }
    const Matrix& design() const noexcept { return design_; }
    const Vector& moment() const noexcept { return moment_; }
    const CoefficientVector& estimate() const noexcept { return estimate_; }
    bool has_history() const noexcept { return history_complete_; }
    const std::vector<Vector>& history_plans() const noexcept { return plans_; }
    const std::vector<double>& history_rewards() const noexcept { return rewards_; }

    /// Rank-one update with a precomputed feature vector (history is not kept).
    void update(const CoefficientVector& theta, double reward);
    /// Update with the features of `played` at the current order; records history.
    void update(const Coupling& played, double reward, const OrthonormalBasis& basis);

    /// Rebuilds design and moment at `new_order` from the stored plans.
    /// Throws HistoryUnavailable if any update bypassed the history.
    RlsState rebase(int new_order, const OrthonormalBasis& basis) const;

    /// log det(I + lambda^{-1} sum_s theta_s theta_s^T) = log det(design / lambda).
    double log_det_ratio() const;
    /// log det(I + scale * sum_s theta_s theta_s^T).
    double log_det_gram(double scale) const;
    /// ||design * estimate - moment||_2.
    double normal_residual() const;

    nlohmann::json to_json() const;
    static RlsState from_json(const nlohmann::json& j);

private:
    void add_observation(const CoefficientVector& theta, double reward);
    void solve();

    int order_;
    double lambda_;
    int rounds_ = 0;
    Matrix design_;
    Vector moment_;
    CoefficientVector estimate_;
    bool history_complete_ = true;
    std::vector<Vector> plans_;  // flattened played plans
    std::vector<double> rewards_;
};

/// sigma sqrt(log(4 det(I + lambda^{-1} sum theta theta^T) / delta^2)) + sqrt(lambda) C.
double beta_width(const RlsState& state, double delta, double scale_bound, double sigma);

/// {gamma : ||gamma - center||_metric <= radius}.
struct ConfidenceEllipsoid {
    CoefficientVector center;
    Matrix metric;
    double radius = 0.0;
    double delta = 0.0;

    /// sqrt((gamma - center)^T metric (gamma - center)).
    double distance(const CoefficientVector& gamma) const;
    bool contains(const CoefficientVector& gamma) const { return distance(gamma) <= radius; }
};

ConfidenceEllipsoid make_ellipsoid(const RlsState& state, double delta, double scale_bound,
                                   double sigma);

/// argmin over the ellipsoid of <gamma, theta>: center - radius metric^{-1} theta / ||theta||_{metric^{-1}}.
CoefficientVector optimistic_belief(const ConfidenceEllipsoid& ellipsoid,
                                    const CoefficientVector& theta);

/// eps_t: fixed(eps) or power(alpha) with eps_t = alpha t^{-alpha}.
struct EpsilonSchedule {
    enum class Kind { Fixed, Power };
    Kind kind = Kind::Fixed;
    double value = 0.05;  // eps for Fixed, alpha for Power

    static EpsilonSchedule fixed(double eps);
    static EpsilonSchedule power(double alpha);
    double at(int t) const;
};

/// n_t: fixed(N) or growing(q) with n_t = ceil(t^{1/(2q+1)}), capped at the basis size.
struct OrderSchedule {
    enum class Kind { Fixed, Growing };
    Kind kind = Kind::Fixed;
    int n = 1;
    double q = 1.0;

    static OrderSchedule fixed(int n);
    static OrderSchedule growing(double q);
    int at(int t, int n_max) const;
};

struct EntUcbConfig {
    double delta = 0.1;
    double lambda = 1.0;
    double sigma = 0.1;
    double scale_bound = 1.0;  // C >= ||gamma*||_2
    EpsilonSchedule eps = EpsilonSchedule::fixed(0.05);
    OrderSchedule order = OrderSchedule::fixed(1);
    double alt_tol = 1e-8;
    int alt_max_rounds = 50;
    int alt_axis_starts = 2;    // extra alternation starts at both ends of this many longest axes
    int alt_random_starts = 4;  // extra starts at random points of the ellipsoid boundary
    double sinkhorn_tol = 1e-9;
    int sinkhorn_max_iter = 200000;
    bool sinkhorn_newton = true;  // Newton finish for stalled Sinkhorn runs
    double radius_multiplier = 1.0;  // diagnostic knob; 1 reproduces the width formula

    void validate() const;
};

nlohmann::json to_json(const EntUcbConfig& c);
EntUcbConfig entucb_config_from_json(const nlohmann::json& j);

struct OptimismResult {
    Coupling plan;
    CoefficientVector belief;
    double value = 0.0;       // <belief, theta(plan)> + eps H(plan | rho)
    int rounds = 0;
    std::vector<double> trace;  // value after each belief step
    DualPotentials potentials;
};

/// Joint minimization over (plan, belief) by alternating exact minimizations:
/// Sinkhorn (then rounding) for the plan given the belief, and the closed-form
/// optimistic belief given the plan. Starts from the ellipsoid center and from
/// both end points of its `alt_axis_starts` longest axes, plus `alt_random_starts`
/// boundary points drawn from `start_seed`; the best pair found is returned.
/// `trace` follows the center start.
OptimismResult optimism_step(const ConfidenceEllipsoid& ellipsoid, const OrthonormalBasis& basis,
                             int order, double epsilon, const DiscreteMeasure& mu,
                             const DiscreteMeasure& nu, const EntUcbConfig& config,
                             const DualPotentials* warm_start = nullptr,
                             std::uint64_t start_seed = 0);

struct RoundPlan {
    int t = 0;
    double epsilon = 0.0;  // 0 at the initial round
    int order = 0;
    Coupling plan;
    std::optional<ConfidenceEllipsoid> ellipsoid;  // absent at the initial round
    double optimism_value = 0.0;
    CoefficientVector belief;
    int alt_rounds = 0;
};

/// EntUCB with basis truncation. Round 0 plays mu x nu; round t >= 1 sets
/// (n_t, eps_t), rebases the least-squares state when n_t grows, builds the
/// confidence ellipsoid and plays the optimistic plan.
class EntUcbAgent {
public:
    EntUcbAgent(EntUcbConfig config, std::shared_ptr<const OrthonormalBasis> basis,
                DiscreteMeasure mu, DiscreteMeasure nu);

    int round() const noexcept { return t_; }
    const RlsState& state() const noexcept { return state_; }
    const EntUcbConfig& config() const noexcept { return config_; }
    const OrthonormalBasis& basis() const noexcept { return *basis_; }

    /// Plan for the current round; rebases the state if the order grew.
    RoundPlan propose();
    /// Feeds back the reward of the plan returned by the last `propose`.
    void observe(const Coupling& played, double reward);

    nlohmann::json checkpoint() const;
    static EntUcbAgent restore(const nlohmann::json& j, std::shared_ptr<const OrthonormalBasis> basis,
                               DiscreteMeasure mu, DiscreteMeasure nu);

private:
    EntUcbConfig config_;
    std::shared_ptr<const OrthonormalBasis> basis_;
    DiscreteMeasure mu_;
    DiscreteMeasure nu_;
    RlsState state_;
    int t_ = 0;
    std::optional<DualPotentials> warm_;
};

struct RoundOutcome {
    RoundPlan plan;
    double reward = 0.0;
};

/// One propose / pull / observe cycle.
RoundOutcome entucb_round(EntUcbAgent& agent, const std::function<double(const Coupling&)>& pull);

}  // namespace bot
