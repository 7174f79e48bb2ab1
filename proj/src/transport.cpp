#include "bot/transport.hpp"

#include "bot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace bot {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Vector safe_log(const Vector& w) {
    Vector out(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) out[i] = w[i] > 0.0 ? std::log(w[i]) : kNegInf;
    return out;
}

double marginal_error(const Matrix& p, const Vector& mu, const Vector& nu) {
    return (p.rowwise().sum() - mu).lpNorm<1>() + (p.colwise().sum().transpose() - nu).lpNorm<1>();
}

// Shared state of one Sinkhorn solve; keeps the log-sum-exp kernels in one place.
struct LogSinkhorn {
    const Matrix& cost;
    double eps;
    Vector log_mu;
    Vector log_nu;
    Vector phi;
    Vector psi;
    Vector row_lse;

    LogSinkhorn(const Matrix& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu, double e)
        : cost(c), eps(e), log_mu(safe_log(mu.weights())), log_nu(safe_log(nu.weights())),
          phi(Vector::Zero(c.rows())), psi(Vector::Zero(c.cols())), row_lse(c.rows()) {}

    // psi_j = -eps log sum_i mu_i exp((phi_i - c_ij)/eps)
    void update_psi() {
        const Eigen::Index k = cost.rows();
        for (Eigen::Index j = 0; j < cost.cols(); ++j) {
            double m = kNegInf;
            for (Eigen::Index i = 0; i < k; ++i) {
                if (log_mu[i] == kNegInf) continue;
                m = std::max(m, log_mu[i] + (phi[i] - cost(i, j)) / eps);
            }
            double s = 0.0;
            for (Eigen::Index i = 0; i < k; ++i) {
                if (log_mu[i] == kNegInf) continue;
                s += std::exp(log_mu[i] + (phi[i] - cost(i, j)) / eps - m);
            }
            psi[j] = -eps * (m + std::log(s));
        }
    }

    // row_lse_i = log sum_j nu_j exp((psi_j - c_ij)/eps)
    void compute_row_lse() {
        const Eigen::Index kp = cost.cols();
        for (Eigen::Index i = 0; i < cost.rows(); ++i) {
            double m = kNegInf;
            for (Eigen::Index j = 0; j < kp; ++j) {
                if (log_nu[j] == kNegInf) continue;
                m = std::max(m, log_nu[j] + (psi[j] - cost(i, j)) / eps);
            }
            double s = 0.0;
            for (Eigen::Index j = 0; j < kp; ++j) {
                if (log_nu[j] == kNegInf) continue;
                s += std::exp(log_nu[j] + (psi[j] - cost(i, j)) / eps - m);
            }
            row_lse[i] = m + std::log(s);
        }
    }

    // l1 distance between the implied row marginal and mu; needs compute_row_lse first.
    double row_violation() const {
        double v = 0.0;
        for (Eigen::Index i = 0; i < cost.rows(); ++i) {
            if (log_mu[i] == kNegInf) continue;
            const double mu_i = std::exp(log_mu[i]);
            v += std::abs(std::exp(log_mu[i] + phi[i] / eps + row_lse[i]) - mu_i);
        }
        return v;
    }

    void update_phi_from_lse() { phi = -eps * row_lse; }

    // rho_ij exp((phi_i + psi_j - c_ij)/eps) for strictly positive weights.
    Matrix plan() const {
        Matrix p(cost.rows(), cost.cols());
        for (Eigen::Index j = 0; j < cost.cols(); ++j)
            for (Eigen::Index i = 0; i < cost.rows(); ++i)
                p(i, j) = std::exp(log_mu[i] + log_nu[j] + (phi[i] + psi[j] - cost(i, j)) / eps);
        return p;
    }

    double dual(const Matrix& p) const {
        return phi.dot(log_mu.array().exp().matrix()) + psi.dot(log_nu.array().exp().matrix()) -
               eps * p.sum() + eps;
    }

    // Damped Newton ascent on the dual with psi_{K'-1} held fixed (the dual is
    // invariant under phi + a, psi - a). Ends with a psi update so columns are
    // exact; returns true when the row violation then meets `tol`.
    bool newton(double tol, int max_steps) {
        const Eigen::Index k = cost.rows(), kp = cost.cols(), m = k + kp - 1;
        const Vector mu = log_mu.array().exp().matrix(), nu = log_nu.array().exp().matrix();
        Matrix p = plan();
        double f = dual(p);
        for (int step = 0; step < max_steps; ++step) {
            const Vector r = p.rowwise().sum(), col = p.colwise().sum().transpose();
            Vector g(m);
            g.head(k) = mu - r;
            g.tail(kp - 1) = (nu - col).head(kp - 1);
            if (g.lpNorm<1>() + std::abs(nu[kp - 1] - col[kp - 1]) <= 0.1 * tol) break;
            Matrix h = Matrix::Zero(m, m);
            h.topLeftCorner(k, k).diagonal() = r / eps;
            h.bottomRightCorner(kp - 1, kp - 1).diagonal() = col.head(kp - 1) / eps;
            h.topRightCorner(k, kp - 1) = p.leftCols(kp - 1) / eps;
            h.bottomLeftCorner(kp - 1, k) = p.leftCols(kp - 1).transpose() / eps;
            Eigen::LDLT<Matrix> ldlt(h);
            if (ldlt.info() != Eigen::Success) {
                // nearly disconnected support at small eps; a tiny shift restores a factorization
                h.diagonal().array() += 1e-14 * h.diagonal().maxCoeff();
                ldlt.compute(h);
                if (ldlt.info() != Eigen::Success) return false;
            }
            const Vector d = ldlt.solve(g);
            if (!d.allFinite()) return false;
            const double slope = g.dot(d);
            if (!(slope > 0.0)) break;
            const Vector phi0 = phi, psi0 = psi;
            const double viol = marginal_error(p, mu, nu);
            double t = 1.0;
            bool accepted = false;
            for (int ls = 0; ls < 40; ++ls) {
                phi = phi0 + t * d.head(k);
                psi.head(kp - 1) = psi0.head(kp - 1) + t * d.tail(kp - 1);
                const Matrix pt = plan();
                const double ft = pt.allFinite() ? dual(pt) : kNegInf;
                // Near the optimum the predicted increase drops below the rounding
                // error of the objective; fall back to a decrease in marginal error.
                const bool flat = std::abs(t * slope) <= 1e-12 * (1.0 + std::abs(f));
                if (ft >= f + 1e-4 * t * slope ||
                    (flat && std::isfinite(ft) && marginal_error(pt, mu, nu) < 0.5 * viol)) {
                    p = pt;
                    f = ft;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if (!accepted) {
                phi = phi0;
                psi = psi0;
                break;
            }
        }
        update_psi();
        compute_row_lse();
        return row_violation() <= tol;
    }
};

void validate_inputs(const CostTable& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                     double epsilon) {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
        throw InvalidEpsilon("sinkhorn: epsilon must be positive and finite");
    }
    if (c.rows() != mu.size() || c.cols() != nu.size()) {
        throw ShapeMismatch("sinkhorn: cost shape does not match marginals");
    }
}

void finalize(SinkhornResult& r, const CostTable& c, const DiscreteMeasure& mu,
              const DiscreteMeasure& nu) {
    const ProductMeasure rho = product_measure(mu, nu);
    r.raw_plan = recover_primal(r.potentials, c, r.epsilon, rho);
    r.plan = round_to_feasible(r.raw_plan, mu, nu);
    r.primal_value =
        pairing(c, r.plan) + r.epsilon * relative_entropy(r.plan.mass, rho.weight_table);
    r.dual_value = entropic_dual_objective(r.potentials, c, r.epsilon, rho);
    r.gap = r.primal_value - r.dual_value;
}

}  // namespace

SinkhornResult sinkhorn(const CostTable& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                        double epsilon, const SinkhornOptions& options) {
    validate_inputs(c, mu, nu, epsilon);
    if (!(options.tol > 0.0)) throw InvalidArgument("sinkhorn: tol must be positive");

    LogSinkhorn s(c.values(), mu, nu, epsilon);
    if (options.warm_start != nullptr && options.warm_start->phi.size() == c.rows() &&
        options.warm_start->psi.size() == c.cols()) {
        s.phi = options.warm_start->phi;
    }
    s.update_psi();

    SinkhornResult r;
    r.epsilon = epsilon;
    const bool newton_ok =
        options.newton && (mu.weights().array() > 0.0).all() && (nu.weights().array() > 0.0).all();
    int newton_at = options.newton_after;
    int it = 0;
    while (true) {
        if (newton_ok && it >= newton_at) {
            newton_at = 2 * std::max(newton_at, 1);  // retry at doubling iteration counts
            const Vector phi0 = s.phi, psi0 = s.psi;
            if (!s.newton(options.tol, 50)) {
                s.phi = phi0;
                s.psi = psi0;
            }
        }
        s.compute_row_lse();
        const double v = s.row_violation();
        if (options.record_violations) r.violation_trace.push_back(v);
        r.violation = v;
        if (v <= options.tol) {
            r.converged = true;
            break;
        }
        if (it >= options.max_iter) break;
        s.update_phi_from_lse();
        s.update_psi();
        ++it;
    }
    r.iterations = it;
    r.potentials = DualPotentials{s.phi, s.psi};
    finalize(r, c, mu, nu);
    return r;
}

SinkhornResult sinkhorn_annealed(const CostTable& c, const DiscreteMeasure& mu,
                                 const DiscreteMeasure& nu, double epsilon,
                                 const SinkhornOptions& options) {
    validate_inputs(c, mu, nu, epsilon);
    const double range = c.values().maxCoeff() - c.values().minCoeff();
    double eps_k = std::max(epsilon, range);
    DualPotentials warm;
    bool have_warm = false;
    if (options.warm_start != nullptr) {
        warm = *options.warm_start;
        have_warm = true;
    }
    int total_iters = 0;
    while (eps_k > epsilon) {
        SinkhornOptions stage;
        stage.tol = std::max(options.tol, 1e-6);
        stage.max_iter = options.max_iter;
        stage.warm_start = have_warm ? &warm : nullptr;
        stage.newton = options.newton;
        stage.newton_after = options.newton_after;
        SinkhornResult partial = sinkhorn(c, mu, nu, eps_k, stage);
        total_iters += partial.iterations;
        warm = partial.potentials;
        have_warm = true;
        eps_k = std::max(epsilon, eps_k / 4.0);
    }
    SinkhornOptions last = options;
    last.warm_start = have_warm ? &warm : nullptr;
    SinkhornResult r = sinkhorn(c, mu, nu, epsilon, last);
    r.iterations += total_iters;
    return r;
}

Matrix recover_primal(const DualPotentials& potentials, const CostTable& c, double epsilon,
                      const ProductMeasure& rho) {
    if (!(epsilon > 0.0)) throw InvalidEpsilon("recover_primal: epsilon must be positive");
    const Matrix& cost = c.values();
    Matrix plan(cost.rows(), cost.cols());
    for (Eigen::Index j = 0; j < cost.cols(); ++j) {
        for (Eigen::Index i = 0; i < cost.rows(); ++i) {
            const double r = rho.weight_table(i, j);
            plan(i, j) = r > 0.0 ? std::exp(std::log(r) + (potentials.phi[i] + potentials.psi[j] -
                                                          cost(i, j)) / epsilon)
                                 : 0.0;
        }
    }
    return plan;
}

double entropic_dual_objective(const DualPotentials& potentials, const CostTable& c,
                               double epsilon, const ProductMeasure& rho) {
    const Matrix plan = recover_primal(potentials, c, epsilon, rho);
    return potentials.phi.dot(rho.row_measure.weights()) +
           potentials.psi.dot(rho.col_measure.weights()) - epsilon * plan.sum() + epsilon;
}

Coupling round_to_feasible(const Matrix& raw, const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    if (raw.rows() != mu.size() || raw.cols() != nu.size()) {
        throw ShapeMismatch("round_to_feasible: table shape does not match marginals");
    }
    if (raw.minCoeff() < 0.0) throw InvalidArgument("round_to_feasible: negative entry");
    if (raw.maxCoeff() <= 0.0) throw DegenerateInput("round_to_feasible: all-zero table");

    Matrix x = raw;
    const Vector rows = x.rowwise().sum();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (rows[i] > mu.weights()[i]) x.row(i) *= mu.weights()[i] / rows[i];
    }
    const Vector cols = x.colwise().sum().transpose();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        if (cols[j] > nu.weights()[j]) x.col(j) *= nu.weights()[j] / cols[j];
    }
    const Vector row_deficit = (mu.weights() - x.rowwise().sum()).cwiseMax(0.0);
    const Vector col_deficit = (nu.weights() - x.colwise().sum().transpose()).cwiseMax(0.0);
    const double total = col_deficit.sum();
    if (total > 0.0) x.noalias() += row_deficit * col_deficit.transpose() / total;
    return Coupling{std::move(x)};
}

EntropicValue entropic_value(const CostTable& c, const DiscreteMeasure& mu,
                             const DiscreteMeasure& nu, double epsilon, double tol) {
    SinkhornOptions opts;
    opts.tol = tol;
    opts.newton = true;
    const SinkhornResult r = sinkhorn_annealed(c, mu, nu, epsilon, opts);
    return EntropicValue{r.primal_value, r.dual_value, r.gap};
}

std::string to_string(BaselineMethod m) {
    return m == BaselineMethod::ExactLp ? "exact-LP" : "certified-interval";
}

namespace {

// Transportation simplex over the spanning-tree basis of the K x K' bipartite graph.
class TransportationSimplex {
public:
    TransportationSimplex(const Matrix& cost, const Vector& supply, const Vector& demand)
        : c_(cost), a_(supply), b_(demand), m_(static_cast<int>(cost.rows())),
          n_(static_cast<int>(cost.cols())), x_(Matrix::Zero(m_, n_)),
          basic_(m_ * n_, false), u_(m_), v_(n_) {}

    void north_west_corner() {
        Vector a = a_, b = b_;
        int i = 0, j = 0;
        while (i < m_ && j < n_) {
            const double q = std::min(a[i], b[j]);
            x_(i, j) = q;
            basic_[index(i, j)] = true;
            a[i] -= q;
            b[j] -= q;
            if (i == m_ - 1) {
                ++j;
            } else if (j == n_ - 1) {
                ++i;
            } else if (a[i] <= b[j]) {
                ++i;
            } else {
                ++j;
            }
        }
    }

    // Returns the number of pivots performed.
    int solve(int max_pivots) {
        const double tol = 1e-12 * (1.0 + c_.cwiseAbs().maxCoeff());
        int pivots = 0;
        while (pivots < max_pivots) {
            compute_duals();
            int entering = -1;
            for (int k = 0; k < m_ * n_; ++k) {
                if (basic_[k]) continue;
                const int i = k / n_, j = k % n_;
                if (c_(i, j) - u_[i] - v_[j] < -tol) {
                    entering = k;  // Bland: lowest index with negative reduced cost
                    break;
                }
            }
            if (entering < 0) return pivots;
            pivot(entering);
            ++pivots;
        }
        throw Error("kantorovich_exact: pivot limit reached");
    }

    const Matrix& plan() const { return x_; }
    const Vector& u() const { return u_; }
    const Vector& v() const { return v_; }

private:
    int index(int i, int j) const { return i * n_ + j; }

    // Node ids: rows 0..m-1, columns m..m+n-1.
    std::vector<std::vector<int>> adjacency() const {
        std::vector<std::vector<int>> adj(static_cast<size_t>(m_ + n_));
        for (int k = 0; k < m_ * n_; ++k) {
            if (!basic_[k]) continue;
            const int i = k / n_, j = k % n_;
            adj[static_cast<size_t>(i)].push_back(m_ + j);
            adj[static_cast<size_t>(m_ + j)].push_back(i);
        }
        return adj;
    }

    void compute_duals() {
        const auto adj = adjacency();
        std::vector<bool> seen(static_cast<size_t>(m_ + n_), false);
        std::queue<int> q;
        u_[0] = 0.0;
        seen[0] = true;
        q.push(0);
        while (!q.empty()) {
            const int node = q.front();
            q.pop();
            for (int nb : adj[static_cast<size_t>(node)]) {
                if (seen[static_cast<size_t>(nb)]) continue;
                seen[static_cast<size_t>(nb)] = true;
                if (node < m_) {
                    v_[nb - m_] = c_(node, nb - m_) - u_[node];
                } else {
                    u_[nb] = c_(nb, node - m_) - v_[node - m_];
                }
                q.push(nb);
            }
        }
    }

    void pivot(int entering) {
        const int ei = entering / n_, ej = entering % n_;
        // Tree path from row node ei to column node m+ej.
        const auto adj = adjacency();
        std::vector<int> parent(static_cast<size_t>(m_ + n_), -2);
        std::queue<int> q;
        parent[static_cast<size_t>(ei)] = -1;
        q.push(ei);
        const int target = m_ + ej;
        while (!q.empty() && parent[static_cast<size_t>(target)] == -2) {
            const int node = q.front();
            q.pop();
            for (int nb : adj[static_cast<size_t>(node)]) {
                if (parent[static_cast<size_t>(nb)] != -2) continue;
                parent[static_cast<size_t>(nb)] = node;
                q.push(nb);
            }
        }
        // Walk back from the column node; the first edge loses mass, signs alternate.
        std::vector<int> cells;
        for (int node = target; parent[static_cast<size_t>(node)] != -1;
             node = parent[static_cast<size_t>(node)]) {
            const int prev = parent[static_cast<size_t>(node)];
            const int i = node < m_ ? node : prev;
            const int j = node < m_ ? prev - m_ : node - m_;
            cells.push_back(index(i, j));
        }
        double theta = std::numeric_limits<double>::infinity();
        int leaving = -1;
        for (size_t p = 0; p < cells.size(); p += 2) {
            const int k = cells[p];
            const double val = x_(k / n_, k % n_);
            if (val < theta || (val == theta && k < leaving)) {
                theta = val;
                leaving = k;
            }
        }
        for (size_t p = 0; p < cells.size(); ++p) {
            const int k = cells[p];
            x_(k / n_, k % n_) += (p % 2 == 0) ? -theta : theta;
        }
        x_(ei, ej) = theta;
        basic_[entering] = true;
        basic_[leaving] = false;
        x_(leaving / n_, leaving % n_) = 0.0;
    }

    const Matrix& c_;
    Vector a_;
    Vector b_;
    int m_;
    int n_;
    Matrix x_;
    std::vector<bool> basic_;
    Vector u_;
    Vector v_;
};

// Lower bound <phi,mu> + <psi,nu> + sum_i mu_i min(0, min_j (c_ij - phi_i - psi_j)), valid for any potentials.
double certified_lower_bound(const Matrix& cost, const Vector& phi, const Vector& psi,
                             const Vector& mu, const Vector& nu) {
    double lb = phi.dot(mu) + psi.dot(nu);
    for (Eigen::Index i = 0; i < cost.rows(); ++i) {
        double worst = 0.0;
        for (Eigen::Index j = 0; j < cost.cols(); ++j) {
            worst = std::min(worst, cost(i, j) - phi[i] - psi[j]);
        }
        lb += mu[i] * worst;
    }
    return lb;
}

}  // namespace

KantorovichBaseline kantorovich_exact(const CostTable& c, const DiscreteMeasure& mu,
                                      const DiscreteMeasure& nu, long size_cap) {
    if (c.rows() != mu.size() || c.cols() != nu.size()) {
        throw ShapeMismatch("kantorovich_exact: cost shape does not match marginals");
    }
    const long cells = static_cast<long>(c.rows()) * c.cols();
    if (cells > size_cap) {
        throw SizeCapExceeded("kantorovich_exact: " + std::to_string(cells) +
                              " cells exceed the LP size cap " + std::to_string(size_cap));
    }
    TransportationSimplex lp(c.values(), mu.weights(), nu.weights());
    lp.north_west_corner();
    KantorovichBaseline b;
    b.pivots = lp.solve(static_cast<int>(std::max<long>(100000, 50 * cells)));
    b.method = BaselineMethod::ExactLp;
    b.optimizer = Coupling{lp.plan()};
    b.upper = pairing(c, b.optimizer);
    b.lower = certified_lower_bound(c.values(), lp.u(), lp.v(), mu.weights(), nu.weights());
    b.lower = std::min(b.lower, b.upper);
    b.value = b.upper;
    return b;
}

KantorovichBaseline kantorovich_certified(const CostTable& c, const DiscreteMeasure& mu,
                                          const DiscreteMeasure& nu, double epsilon) {
    SinkhornOptions opts;
    opts.tol = 1e-10;
    opts.newton = true;
    const SinkhornResult r = sinkhorn_annealed(c, mu, nu, epsilon, opts);
    KantorovichBaseline b;
    b.method = BaselineMethod::CertifiedInterval;
    b.optimizer = r.plan;
    b.upper = pairing(c, r.plan);
    b.lower = std::min(b.upper, certified_lower_bound(c.values(), r.potentials.phi,
                                                      r.potentials.psi, mu.weights(),
                                                      nu.weights()));
    b.value = b.upper;
    b.pivots = 0;
    return b;
}

KantorovichBaseline kantorovich_baseline(const CostTable& c, const DiscreteMeasure& mu,
                                         const DiscreteMeasure& nu, long size_cap) {
    try {
        return kantorovich_exact(c, mu, nu, size_cap);
    } catch (const SizeCapExceeded&) {
        return kantorovich_certified(c, mu, nu);
    }
}

GapReport entropic_gap_check(const CostTable& c, const DiscreteMeasure& mu,
                             const DiscreteMeasure& nu, double lipschitz,
                             const std::vector<double>& eps_list) {
    const KantorovichBaseline kant = kantorovich_baseline(c, mu, nu);
    GapReport report;
    for (double eps : eps_list) {
        const EntropicValue ent = entropic_value(c, mu, nu, eps);
        GapEntry e;
        e.epsilon = eps;
        e.entropic = ent.value;
        e.kantorovich = kant.value;
        e.gap = ent.value - kant.value;
        e.bound = eps * lipschitz;  // d_H = 0 for finitely supported marginals
        e.slack = 2.0 * std::max(ent.gap, 0.0);
        e.margin = e.bound + e.slack - e.gap;
        e.holds = e.margin >= 0.0;
        report.all_hold = report.all_hold && e.holds;
        report.entries.push_back(e);
    }
    return report;
}

nlohmann::json to_json(const SinkhornResult& r) {
    return {{"epsilon", r.epsilon},
            {"iterations", r.iterations},
            {"converged", r.converged},
            {"violation", r.violation},
            {"primal_value", r.primal_value},
            {"dual_value", r.dual_value},
            {"gap", r.gap},
            {"phi", std::vector<double>(r.potentials.phi.data(),
                                        r.potentials.phi.data() + r.potentials.phi.size())},
            {"psi", std::vector<double>(r.potentials.psi.data(),
                                        r.potentials.psi.data() + r.potentials.psi.size())},
            {"plan", table_to_json(r.plan.mass)}};
}

nlohmann::json to_json(const KantorovichBaseline& b) {
    return {{"value", b.value},
            {"lower", b.lower},
            {"upper", b.upper},
            {"method", to_string(b.method)},
            {"pivots", b.pivots},
            {"optimizer", table_to_json(b.optimizer.mass)}};
}

nlohmann::json to_json(const GapReport& r) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries) {
        entries.push_back({{"epsilon", e.epsilon},
                           {"entropic", e.entropic},
                           {"kantorovich", e.kantorovich},
                           {"gap", e.gap},
                           {"bound", e.bound},
                           {"slack", e.slack},
                           {"margin", e.margin},
                           {"holds", e.holds}});
    }
    return {{"entries", entries}, {"all_hold", r.all_hold}};
}

}  // namespace bot
