#pragma once

#include "bot/measures.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace bot {

/// Coefficients against an orthonormal basis (cost coefficients or action features).
using CoefficientVector = Vector;

/// Row-major flattening of a K x K' table: cell (i, j) -> i * K' + j.
Vector flatten(const Matrix& table);
Matrix unflatten(const Vector& flat, int rows, int cols);

/// Orthonormal functions of L2(rho) tabulated on the K x K' support grid.
///
/// Row k of `eval()` holds basis function k on the flattened grid, so that
/// sum_ij phi_k(i,j) phi_l(i,j) rho_ij = [k == l].
class OrthonormalBasis {
public:
    OrthonormalBasis(Matrix eval, ProductMeasure rho, std::string kind);

    int n_max() const noexcept { return static_cast<int>(eval_.rows()); }
    int rows() const noexcept { return rho_.rows(); }
    int cols() const noexcept { return rho_.cols(); }
    const Matrix& eval() const noexcept { return eval_; }
    const ProductMeasure& rho() const noexcept { return rho_; }
    const std::string& kind() const noexcept { return kind_; }

    /// Basis function k as a K x K' table.
    Matrix function(int k) const;
    /// G_kl = <phi_k, phi_l>_{L2(rho)}.
    Matrix gram() const;

private:
    Matrix eval_;
    ProductMeasure rho_;
    std::string kind_;
};

/// phi_(i,j) = 1_{(i,j)} / sqrt(rho_ij), index i * K' + j. Throws ZeroReferenceMass.
OrthonormalBasis loci_indicator_basis(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

/// Modified Gram-Schmidt (two passes) of the embeddings in L2(rho); when
/// n_max exceeds the number of embeddings, the basis is completed with
/// orthogonalized cell indicators. Throws RankDeficient with the failing index.
OrthonormalBasis gram_schmidt(const std::vector<Matrix>& embeddings, const ProductMeasure& rho,
                              int n_max = 0);

/// Separable cosine products cos(pi a (i + 1/2) / K) cos(pi b (j + 1/2) / K'),
/// ordered by a + b then a, re-orthonormalized against rho.
OrthonormalBasis cosine_basis(const DiscreteMeasure& mu, const DiscreteMeasure& nu, int n_max);

/// The pair of frequencies (a, b) of the k-th cosine product in basis order.
std::vector<std::pair<int, int>> cosine_frequencies(int rows, int cols);

/// zeta(n): fraction of l1 coefficient mass carried by the first n coefficients.
struct DecayProfile {
    enum class Kind { FiniteN, PowerQ };
    Kind kind = Kind::PowerQ;
    int n = 1;       // FiniteN
    double q = 1.0;  // PowerQ

    static DecayProfile finite(int n_nonzero);
    static DecayProfile power(double q);

    double zeta(double n) const;
};

struct DecayCost {
    CostTable cost;
    CoefficientVector coeffs;
};

/// Coefficients with |gamma_i| = C (zeta(i) - zeta(i-1)) and seeded random signs.
/// The last basis coefficient carries the remaining mass C (1 - zeta(n_max - 1)),
/// so sum_{i>n} |gamma_i| = C (1 - zeta(n)) holds exactly on the finite basis.
DecayCost decay_cost(const OrthonormalBasis& basis, const DecayProfile& profile, double scale,
                     std::uint64_t seed);

/// theta_k = sum_ij phi_k(i,j) pi_ij for k < n.
CoefficientVector features(const Coupling& pi, const OrthonormalBasis& basis, int n);
CoefficientVector features(const Matrix& mass, const OrthonormalBasis& basis, int n);

/// sum_k gamma_k phi_k on the grid.
CostTable synthesize(const CoefficientVector& gamma, const OrthonormalBasis& basis);

/// Coefficients <c, phi_k>_{L2(rho)} for all k < n_max.
CoefficientVector analyze(const CostTable& c, const OrthonormalBasis& basis);

/// ||f||_{L2(rho)}.
double l2_norm(const Matrix& f, const ProductMeasure& rho);

/// sum_{k > n} |gamma_k| (1-based order n).
double tail_bound(const CoefficientVector& gamma_full, int n);

nlohmann::json to_json(const OrthonormalBasis& b);
nlohmann::json coefficients_to_json(const CoefficientVector& c);
CoefficientVector coefficients_from_json(const nlohmann::json& j);

}  // namespace bot
