#include "bot/bandit.hpp"

#include "bot/errors.hpp"

#include <cmath>
#include <limits>
#include <random>

namespace bot {

namespace {

std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector from_vec(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

RlsState::RlsState(int order, double lambda)
    : order_(order), lambda_(lambda), design_(lambda * Matrix::Identity(order, order)),
      moment_(Vector::Zero(order)), estimate_(Vector::Zero(order)) {
    if (order < 0) throw InvalidArgument("RlsState: negative order");
    if (!(lambda > 0.0)) throw InvalidArgument("RlsState: lambda must be positive");
}

void RlsState::add_observation(const CoefficientVector& theta, double reward) {
    if (theta.size() != order_) {
        throw ShapeMismatch("rls_update: feature length " + std::to_string(theta.size()) +
                            " does not match order " + std::to_string(order_));
    }
    design_.selfadjointView<Eigen::Lower>().rankUpdate(theta);
    design_.triangularView<Eigen::StrictlyUpper>() = design_.transpose();
    moment_ += reward * theta;
    ++rounds_;
}

void RlsState::solve() {
    if (order_ == 0) return;
    Eigen::LLT<Matrix> llt(design_);
    estimate_ = llt.solve(moment_);
}

void RlsState::update(const CoefficientVector& theta, double reward) {
    add_observation(theta, reward);
    history_complete_ = false;
    solve();
}

void RlsState::update(const Coupling& played, double reward, const OrthonormalBasis& basis) {
    add_observation(features(played, basis, order_), reward);
    plans_.push_back(flatten(played.mass));
    rewards_.push_back(reward);
    solve();
}

RlsState RlsState::rebase(int new_order, const OrthonormalBasis& basis) const {
    if (new_order < order_) throw InvalidArgument("rebase: order cannot decrease");
    if (new_order > basis.n_max()) throw InvalidArgument("rebase: order exceeds basis size");
    if (new_order == order_) return *this;
    if (!history_complete_) {
        throw HistoryUnavailable("rebase: state was updated without recorded plans");
    }
    RlsState out(new_order, lambda_);
    const Matrix top = basis.eval().topRows(new_order);
    for (size_t s = 0; s < plans_.size(); ++s) {
        out.add_observation(top * plans_[s], rewards_[s]);
    }
    out.plans_ = plans_;
    out.rewards_ = rewards_;
    out.solve();
    return out;
}

double RlsState::log_det_ratio() const {
    if (order_ == 0) return 0.0;
    Eigen::LLT<Matrix> llt(design_ / lambda_);
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double RlsState::log_det_gram(double scale) const {
    if (order_ == 0) return 0.0;
    const Matrix gram = design_ - lambda_ * Matrix::Identity(order_, order_);
    Eigen::LLT<Matrix> llt(Matrix::Identity(order_, order_) + scale * gram);
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

double RlsState::normal_residual() const { return (design_ * estimate_ - moment_).norm(); }

nlohmann::json RlsState::to_json() const {
    nlohmann::json design = nlohmann::json::array();
    for (int i = 0; i < order_; ++i) design.push_back(to_vec(design_.row(i).transpose()));
    nlohmann::json plans = nlohmann::json::array();
    for (const Vector& p : plans_) plans.push_back(to_vec(p));
    return {{"order", order_},     {"lambda", lambda_},
            {"rounds", rounds_},   {"design", design},
            {"moment", to_vec(moment_)},
            {"history_complete", history_complete_},
            {"plans", plans},      {"rewards", rewards_}};
}

RlsState RlsState::from_json(const nlohmann::json& j) {
    RlsState s(j.at("order").get<int>(), j.at("lambda").get<double>());
    s.rounds_ = j.at("rounds").get<int>();
    const auto rows = j.at("design").get<std::vector<std::vector<double>>>();
    for (int i = 0; i < s.order_; ++i) s.design_.row(i) = from_vec(rows.at(static_cast<size_t>(i))).transpose();
    s.moment_ = from_vec(j.at("moment").get<std::vector<double>>());
    s.history_complete_ = j.at("history_complete").get<bool>();
    for (const auto& p : j.at("plans")) s.plans_.push_back(from_vec(p.get<std::vector<double>>()));
    s.rewards_ = j.at("rewards").get<std::vector<double>>();
    s.solve();
    return s;
}

double beta_width(const RlsState& state, double delta, double scale_bound, double sigma) {
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("beta_width: delta must lie in (0,1)");
    const double log_term = std::log(4.0 / (delta * delta)) + state.log_det_ratio();
    return sigma * std::sqrt(log_term) + std::sqrt(state.lambda()) * scale_bound;
}

double ConfidenceEllipsoid::distance(const CoefficientVector& gamma) const {
    const Vector d = gamma - center;
    return std::sqrt(std::max(d.dot(metric * d), 0.0));
}

ConfidenceEllipsoid make_ellipsoid(const RlsState& state, double delta, double scale_bound,
                                   double sigma) {
    return ConfidenceEllipsoid{state.estimate(), state.design(),
                               beta_width(state, delta, scale_bound, sigma), delta};
}

CoefficientVector optimistic_belief(const ConfidenceEllipsoid& ellipsoid,
                                    const CoefficientVector& theta) {
    if (theta.size() != ellipsoid.center.size()) {
        throw ShapeMismatch("optimistic_belief: feature length does not match the ellipsoid");
    }
    if (ellipsoid.radius <= 0.0 || theta.squaredNorm() == 0.0) return ellipsoid.center;
    Eigen::LLT<Matrix> llt(ellipsoid.metric);
    const Vector direction = llt.solve(theta);
    const double norm = std::sqrt(theta.dot(direction));
    if (!(norm > 0.0)) return ellipsoid.center;
    return ellipsoid.center - ellipsoid.radius * direction / norm;
}

EpsilonSchedule EpsilonSchedule::fixed(double eps) {
    if (!(eps > 0.0)) throw InvalidArgument("EpsilonSchedule: eps must be positive");
    return {Kind::Fixed, eps};
}

EpsilonSchedule EpsilonSchedule::power(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("EpsilonSchedule: alpha in (0,1)");
    return {Kind::Power, alpha};
}

double EpsilonSchedule::at(int t) const {
    if (kind == Kind::Fixed) return value;
    if (t < 1) throw InvalidArgument("EpsilonSchedule: power schedule starts at t = 1");
    return value * std::pow(static_cast<double>(t), -value);
}

OrderSchedule OrderSchedule::fixed(int n) {
    if (n < 1) throw InvalidArgument("OrderSchedule: order must be positive");
    OrderSchedule s;
    s.kind = Kind::Fixed;
    s.n = n;
    return s;
}

OrderSchedule OrderSchedule::growing(double q) {
    if (!(q > 0.0)) throw InvalidArgument("OrderSchedule: q must be positive");
    OrderSchedule s;
    s.kind = Kind::Growing;
    s.q = q;
    return s;
}

int OrderSchedule::at(int t, int n_max) const {
    int order = n;
    if (kind == Kind::Growing) {
        const double raw = std::pow(static_cast<double>(std::max(t, 1)), 1.0 / (2.0 * q + 1.0));
        // Guard against pow returning k + 1e-15 for exact integer powers.
        order = static_cast<int>(std::ceil(raw - 1e-12));
    }
    return std::clamp(order, 1, n_max);
}

void EntUcbConfig::validate() const {
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0,1)");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be nonnegative");
    if (!(scale_bound >= 0.0)) throw ConfigError("scale bound C must be nonnegative");
    if (!(alt_tol >= 0.0) || alt_max_rounds < 1 || alt_axis_starts < 0 ||
        alt_random_starts < 0) {
        throw ConfigError("invalid alternation limits");
    }
    if (!(sinkhorn_tol > 0.0) || sinkhorn_max_iter < 1) throw ConfigError("invalid Sinkhorn limits");
    if (!(radius_multiplier >= 0.0)) throw ConfigError("radius multiplier must be nonnegative");
}

nlohmann::json to_json(const EntUcbConfig& c) {
    nlohmann::json eps = c.eps.kind == EpsilonSchedule::Kind::Fixed
                             ? nlohmann::json{{"kind", "fixed"}, {"value", c.eps.value}}
                             : nlohmann::json{{"kind", "power"}, {"alpha", c.eps.value}};
    nlohmann::json order = c.order.kind == OrderSchedule::Kind::Fixed
                               ? nlohmann::json{{"kind", "fixed"}, {"n", c.order.n}}
                               : nlohmann::json{{"kind", "growing"}, {"q", c.order.q}};
    return {{"delta", c.delta},
            {"lambda", c.lambda},
            {"sigma", c.sigma},
            {"C", c.scale_bound},
            {"eps", eps},
            {"order", order},
            {"alt_tol", c.alt_tol},
            {"alt_max_rounds", c.alt_max_rounds},
            {"alt_axis_starts", c.alt_axis_starts},
            {"alt_random_starts", c.alt_random_starts},
            {"sinkhorn_tol", c.sinkhorn_tol},
            {"sinkhorn_max_iter", c.sinkhorn_max_iter},
            {"sinkhorn_newton", c.sinkhorn_newton},
            {"radius_multiplier", c.radius_multiplier}};
}

EntUcbConfig entucb_config_from_json(const nlohmann::json& j) {
    EntUcbConfig c;
    c.delta = j.value("delta", c.delta);
    c.lambda = j.value("lambda", c.lambda);
    c.sigma = j.value("sigma", c.sigma);
    c.scale_bound = j.value("C", c.scale_bound);
    if (j.contains("eps")) {
        const auto& e = j.at("eps");
        const std::string kind = e.value("kind", "fixed");
        if (kind == "fixed") {
            c.eps = EpsilonSchedule::fixed(e.at("value").get<double>());
        } else if (kind == "power") {
            c.eps = EpsilonSchedule::power(e.at("alpha").get<double>());
        } else {
            throw ConfigError("unknown eps schedule '" + kind + "'");
        }
    }
    if (j.contains("order")) {
        const auto& o = j.at("order");
        const std::string kind = o.value("kind", "fixed");
        if (kind == "fixed") {
            c.order = OrderSchedule::fixed(o.at("n").get<int>());
        } else if (kind == "growing") {
            c.order = OrderSchedule::growing(o.at("q").get<double>());
        } else {
            throw ConfigError("unknown order schedule '" + kind + "'");
        }
    }
    c.alt_tol = j.value("alt_tol", c.alt_tol);
    c.alt_max_rounds = j.value("alt_max_rounds", c.alt_max_rounds);
    c.alt_axis_starts = j.value("alt_axis_starts", c.alt_axis_starts);
    c.alt_random_starts = j.value("alt_random_starts", c.alt_random_starts);
    c.sinkhorn_tol = j.value("sinkhorn_tol", c.sinkhorn_tol);
    c.sinkhorn_max_iter = j.value("sinkhorn_max_iter", c.sinkhorn_max_iter);
    c.sinkhorn_newton = j.value("sinkhorn_newton", c.sinkhorn_newton);
    c.radius_multiplier = j.value("radius_multiplier", c.radius_multiplier);
    c.validate();
    return c;
}

OptimismResult optimism_step(const ConfidenceEllipsoid& ellipsoid, const OrthonormalBasis& basis,
                             int order, double epsilon, const DiscreteMeasure& mu,
                             const DiscreteMeasure& nu, const EntUcbConfig& config,
                             const DualPotentials* warm_start, std::uint64_t start_seed) {
    if (!(epsilon > 0.0)) throw InvalidEpsilon("optimism_step: epsilon must be positive");
    const Matrix rho = mu.weights() * nu.weights().transpose();

    OptimismResult best;
    best.value = std::numeric_limits<double>::infinity();

    SinkhornOptions opts;
    opts.tol = config.sinkhorn_tol;
    opts.max_iter = config.sinkhorn_max_iter;
    opts.newton = config.sinkhorn_newton;
    auto alternate = [&](CoefficientVector belief, bool record) {
        std::optional<DualPotentials> warm;
        if (warm_start != nullptr && record) warm = *warm_start;
        double previous = std::numeric_limits<double>::infinity();
        for (int round = 0; round < config.alt_max_rounds; ++round) {
            const CostTable cost = synthesize(belief, basis);
            opts.warm_start = warm ? &*warm : nullptr;
            const SinkhornResult solved = warm ? sinkhorn(cost, mu, nu, epsilon, opts)
                                               : sinkhorn_annealed(cost, mu, nu, epsilon, opts);
            warm = solved.potentials;

            const CoefficientVector theta = features(solved.plan, basis, order);
            const CoefficientVector next = optimistic_belief(ellipsoid, theta);
            const double value =
                next.dot(theta) + epsilon * relative_entropy(solved.plan.mass, rho);
            if (record) best.trace.push_back(value);
            ++best.rounds;
            if (value < best.value) {
                best.value = value;
                best.plan = solved.plan;
                best.belief = next;
                best.potentials = solved.potentials;
            }
            if (!(previous - value >= config.alt_tol)) break;
            previous = value;
            belief = next;
        }
    };
    alternate(ellipsoid.center, true);
    const int axes = std::min(config.alt_axis_starts, order);
    if (axes > 0 && ellipsoid.radius > 0.0) {
        // The center start settles on the greedy plan. The ellipsoid's long axes
        // are the least explored directions; start from their end points as well.
        Eigen::SelfAdjointEigenSolver<Matrix> eig(ellipsoid.metric);
        for (int a = 0; a < axes; ++a) {
            const Vector axis = eig.eigenvectors().col(a) *
                                (ellipsoid.radius / std::sqrt(std::max(eig.eigenvalues()[a], 1e-300)));
            alternate(ellipsoid.center + axis, false);
            alternate(ellipsoid.center - axis, false);
        }
    }
    if (config.alt_random_starts > 0 && ellipsoid.radius > 0.0) {
        // Unexplored directions share one eigenvalue, so the axes above are an
        // arbitrary pick among them; random boundary points cover the rest.
        const Eigen::LLT<Matrix> llt(ellipsoid.metric);
        std::mt19937_64 rng(start_seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (int r = 0; r < config.alt_random_starts; ++r) {
            Vector z(order);
            for (auto& x : z) x = gauss(rng);
            // metric = L L^T, so L^-T z / |z| lies on the unit metric sphere
            const Vector u = llt.matrixU().solve(z / z.norm());
            alternate(ellipsoid.center + ellipsoid.radius * u, false);
        }
    }
    return best;
}

EntUcbAgent::EntUcbAgent(EntUcbConfig config, std::shared_ptr<const OrthonormalBasis> basis,
                         DiscreteMeasure mu, DiscreteMeasure nu)
    : config_(std::move(config)), basis_(std::move(basis)), mu_(std::move(mu)),
      nu_(std::move(nu)), state_(1, config_.lambda) {
    config_.validate();
    if (!basis_) throw InvalidArgument("EntUcbAgent: basis required");
    if (basis_->rows() != mu_.size() || basis_->cols() != nu_.size()) {
        throw ShapeMismatch("EntUcbAgent: basis grid does not match the marginals");
    }
    state_ = RlsState(config_.order.at(1, basis_->n_max()), config_.lambda);
}

RoundPlan EntUcbAgent::propose() {
    RoundPlan out;
    out.t = t_;
    if (t_ == 0) {
        out.order = state_.order();
        out.plan = Coupling{mu_.weights() * nu_.weights().transpose()};
        return out;
    }
    out.order = config_.order.at(t_, basis_->n_max());
    if (out.order > state_.order()) state_ = state_.rebase(out.order, *basis_);
    out.epsilon = config_.eps.at(t_);
    ConfidenceEllipsoid ellipsoid =
        make_ellipsoid(state_, config_.delta, config_.scale_bound, config_.sigma);
    ellipsoid.radius *= config_.radius_multiplier;
    OptimismResult opt = optimism_step(ellipsoid, *basis_, out.order, out.epsilon, mu_, nu_,
                                       config_, warm_ ? &*warm_ : nullptr,
                                       static_cast<std::uint64_t>(t_));
    warm_ = opt.potentials;
    out.plan = std::move(opt.plan);
    out.belief = std::move(opt.belief);
    out.optimism_value = opt.value;
    out.alt_rounds = opt.rounds;
    out.ellipsoid = std::move(ellipsoid);
    return out;
}

void EntUcbAgent::observe(const Coupling& played, double reward) {
    state_.update(played, reward, *basis_);
    ++t_;
}

nlohmann::json EntUcbAgent::checkpoint() const {
    nlohmann::json j = {{"t", t_}, {"config", to_json(config_)}, {"state", state_.to_json()}};
    if (warm_) j["warm"] = {{"phi", to_vec(warm_->phi)}, {"psi", to_vec(warm_->psi)}};
    return j;
}

EntUcbAgent EntUcbAgent::restore(const nlohmann::json& j,
                                 std::shared_ptr<const OrthonormalBasis> basis, DiscreteMeasure mu,
                                 DiscreteMeasure nu) {
    EntUcbAgent agent(entucb_config_from_json(j.at("config")), std::move(basis), std::move(mu),
                      std::move(nu));
    agent.t_ = j.at("t").get<int>();
    agent.state_ = RlsState::from_json(j.at("state"));
    if (j.contains("warm")) {
        agent.warm_ = DualPotentials{from_vec(j.at("warm").at("phi").get<std::vector<double>>()),
                                     from_vec(j.at("warm").at("psi").get<std::vector<double>>())};
    }
    return agent;
}

RoundOutcome entucb_round(EntUcbAgent& agent, const std::function<double(const Coupling&)>& pull) {
    RoundOutcome out;
    out.plan = agent.propose();
    out.reward = pull(out.plan.plan);
    agent.observe(out.plan.plan, out.reward);
    return out;
}

}  // namespace bot
