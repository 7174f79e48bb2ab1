#pragma once

#include "bot/measures.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace bot {

struct DualPotentials {
    Vector phi;  // one per row (mu) support point
    Vector psi;  // one per column (nu) support point
};

struct SinkhornOptions {
    double tol = 1e-9;           // l1 marginal violation of the implied plan
    int max_iter = 200000;
    const DualPotentials* warm_start = nullptr;
    bool record_violations = false;
    // After `newton_after` plain iterations without convergence, try damped
    // Newton steps on the gauge-fixed dual (strictly positive weights only);
    // retried at doubling iteration counts.
    bool newton = false;
    int newton_after = 20;
};

struct SinkhornResult {
    DualPotentials potentials;
    Coupling plan;     // rounded, exactly feasible
    Matrix raw_plan;   // plan implied by the potentials, before rounding
    double primal_value = 0.0;  // <c, plan> + eps H(plan | rho)
    double dual_value = 0.0;
    double gap = 0.0;           // primal_value - dual_value
    int iterations = 0;
    double epsilon = 0.0;
    double violation = 0.0;     // final l1 marginal violation of raw_plan
    bool converged = false;     // false means max_iter was hit (NonConvergence)
    std::vector<double> violation_trace;
};

/// Log-domain Sinkhorn for Ent(mu, nu, c, eps) with reference mu x nu.
///
/// Alternates phi_i = -eps log sum_j nu_j exp((psi_j - c_ij)/eps) and
/// psi_j = -eps log sum_i mu_i exp((phi_i - c_ij)/eps) until the row l1
/// violation of the implied plan is below `tol` (columns are exact after
/// each psi update). A non-converged result is still returned, with
/// `converged == false`. Throws InvalidEpsilon for eps <= 0.
/// With `options.newton`, stalled runs are finished by Newton's method on the
/// same dual; the stopping rule and the returned fields are unchanged.
SinkhornResult sinkhorn(const CostTable& c, const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                        double epsilon, const SinkhornOptions& options = {});

/// Sinkhorn warm-started along eps_k = max(eps, eps_0 / 4^k), eps_0 tied to the cost range.
/// Same fixed point as `sinkhorn`, far fewer iterations at small eps.
SinkhornResult sinkhorn_annealed(const CostTable& c, const DiscreteMeasure& mu,
                                 const DiscreteMeasure& nu, double epsilon,
                                 const SinkhornOptions& options = {});

/// rho_ij exp((phi_i + psi_j - c_ij) / eps), evaluated in log space.
Matrix recover_primal(const DualPotentials& potentials, const CostTable& c, double epsilon,
                      const ProductMeasure& rho);

/// Entropic dual objective: <phi,mu> + <psi,nu> - eps sum rho e^{(phi+psi-c)/eps} + eps.
double entropic_dual_objective(const DualPotentials& potentials, const CostTable& c,
                               double epsilon, const ProductMeasure& rho);

/// Scale rows down to mu, columns down to nu, then add the rank-one residual
/// (row deficit)(col deficit)^T / total deficit. Throws DegenerateInput on an all-zero table.
Coupling round_to_feasible(const Matrix& raw, const DiscreteMeasure& mu, const DiscreteMeasure& nu);

struct EntropicValue {
    double value = 0.0;  // <c, plan> + eps H(plan | rho) at the rounded plan
    double dual = 0.0;   // certified lower bound on Ent
    double gap = 0.0;
};

EntropicValue entropic_value(const CostTable& c, const DiscreteMeasure& mu,
                             const DiscreteMeasure& nu, double epsilon, double tol = 1e-10);

enum class BaselineMethod { ExactLp, CertifiedInterval };

std::string to_string(BaselineMethod m);

struct KantorovichBaseline {
    double value = 0.0;
    Coupling optimizer;
    BaselineMethod method = BaselineMethod::ExactLp;
    double lower = 0.0;
    double upper = 0.0;
    int pivots = 0;
};

inline constexpr long kDefaultLpSizeCap = 10000;

/// Transportation simplex: north-west-corner start, Bland's rule pivoting.
/// Throws SizeCapExceeded when K * K' exceeds `size_cap`.
KantorovichBaseline kantorovich_exact(const CostTable& c, const DiscreteMeasure& mu,
                                      const DiscreteMeasure& nu, long size_cap = kDefaultLpSizeCap);

/// Interval [dual lower bound, rounded-plan upper bound] from small-eps Sinkhorn.
KantorovichBaseline kantorovich_certified(const CostTable& c, const DiscreteMeasure& mu,
                                          const DiscreteMeasure& nu, double epsilon = 1e-3);

/// Exact LP when it fits under the cap, certified interval otherwise.
KantorovichBaseline kantorovich_baseline(const CostTable& c, const DiscreteMeasure& mu,
                                         const DiscreteMeasure& nu,
                                         long size_cap = kDefaultLpSizeCap);

struct GapEntry {
    double epsilon = 0.0;
    double entropic = 0.0;
    double kantorovich = 0.0;
    double gap = 0.0;     // Ent(eps) - Kant
    double bound = 0.0;   // eps * (d_H log(1/eps) + L) with d_H = 0
    double slack = 0.0;   // 2 * solver gap
    double margin = 0.0;  // bound + slack - gap
    bool holds = false;
};

struct GapReport {
    std::vector<GapEntry> entries;
    bool all_hold = true;
};

/// Checks Ent(eps) - Kant <= eps L + 2 * solver gap for each eps (finite support, d_H = 0).
GapReport entropic_gap_check(const CostTable& c, const DiscreteMeasure& mu,
                             const DiscreteMeasure& nu, double lipschitz,
                             const std::vector<double>& eps_list);

nlohmann::json to_json(const SinkhornResult& r);
nlohmann::json to_json(const KantorovichBaseline& b);
nlohmann::json to_json(const GapReport& r);

}  // namespace bot
