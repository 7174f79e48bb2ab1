#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace bot {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Finitely supported probability measure on R^d.
///
/// `points` is K x d (one support point per row). Weights are validated to
/// sum to one within 1e-12 and then renormalized exactly.
class DiscreteMeasure {
public:
    DiscreteMeasure(Matrix points, Vector weights);

    /// K uniformly weighted points 0, 1, ..., K-1 on the real line.
    static DiscreteMeasure uniform_grid(int k);
    /// Unit mass at the single point `x`.
    static DiscreteMeasure dirac(const Vector& x);

    int size() const noexcept { return static_cast<int>(weights_.size()); }
    int dim() const noexcept { return static_cast<int>(points_.cols()); }
    const Matrix& points() const noexcept { return points_; }
    const Vector& weights() const noexcept { return weights_; }

private:
    Matrix points_;
    Vector weights_;
};

/// The independent coupling of two marginals, used as entropy reference.
struct ProductMeasure {
    DiscreteMeasure row_measure;
    DiscreteMeasure col_measure;
    Matrix weight_table;

    int rows() const noexcept { return static_cast<int>(weight_table.rows()); }
    int cols() const noexcept { return static_cast<int>(weight_table.cols()); }
};

/// K x K' table of transported mass. Feasibility is checked separately by
/// check_coupling, so infeasible tables can still be represented and rejected.
struct Coupling {
    Matrix mass;

    int rows() const noexcept { return static_cast<int>(mass.rows()); }
    int cols() const noexcept { return static_cast<int>(mass.cols()); }
};

/// Cost on the support grid. `lipschitz` and `scale` are stored when known.
class CostTable {
public:
    explicit CostTable(Matrix values);

    const Matrix& values() const noexcept { return values_; }
    int rows() const noexcept { return static_cast<int>(values_.rows()); }
    int cols() const noexcept { return static_cast<int>(values_.cols()); }
    double sup_norm() const { return values_.cwiseAbs().maxCoeff(); }

    std::optional<double> lipschitz;
    std::optional<double> scale;

private:
    Matrix values_;
};

struct FeasibilityReport {
    double row_error = 0.0;  // max_i |sum_j pi_ij - mu_i|
    double col_error = 0.0;  // max_j |sum_i pi_ij - nu_j|
    double min_entry = 0.0;
    bool feasible = false;
};

ProductMeasure product_measure(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

/// sum_ij c_ij pi_ij. Throws ShapeMismatch.
double pairing(const CostTable& c, const Coupling& pi);
double pairing(const Matrix& c, const Matrix& pi);

/// KL(pi | rho) with 0 log 0 = 0; +infinity when pi charges a rho-null cell.
double relative_entropy(const Coupling& pi, const ProductMeasure& rho);
double relative_entropy(const Matrix& pi, const Matrix& rho);

FeasibilityReport check_coupling(const Coupling& pi, const DiscreteMeasure& mu,
                                 const DiscreteMeasure& nu, double tol = 1e-10);

/// Largest |c(p) - c(p')| / |p - p'| over distinct grid cells p = (x_i, y_j).
double lipschitz_constant(const Matrix& cost, const DiscreteMeasure& mu,
                          const DiscreteMeasure& nu);

/// Row-major K x K' table <-> {"shape": [K, K'], "values": [...]}.
nlohmann::json table_to_json(const Matrix& m);
Matrix table_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const DiscreteMeasure& m);
DiscreteMeasure measure_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const Coupling& c);
Coupling coupling_from_json(const nlohmann::json& j);
void to_json(nlohmann::json& j, const CostTable& c);
CostTable cost_from_json(const nlohmann::json& j);

}  // namespace bot
