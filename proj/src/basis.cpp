#include "bot/basis.hpp"

#include "bot/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace bot {

namespace {

constexpr double kPivotTol = 1e-10;
// Completion candidates with a smaller residual lie (numerically) in the current span.
constexpr double kCompletionTol = 1e-8;

double weighted_dot(const Vector& f, const Vector& g, const Vector& w) {
    return (f.array() * g.array() * w.array()).sum();
}

// Orthogonalizes v against the rows of q (two passes) and returns the residual norm.
double orthogonalize(Vector& v, const std::vector<Vector>& q, const Vector& w) {
    for (int pass = 0; pass < 2; ++pass) {
        for (const Vector& u : q) v -= weighted_dot(v, u, w) * u;
    }
    return std::sqrt(std::max(weighted_dot(v, v, w), 0.0));
}

Matrix stack(const std::vector<Vector>& rows, Eigen::Index width) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), width);
    for (size_t k = 0; k < rows.size(); ++k) m.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
    return m;
}

OrthonormalBasis orthonormalize(const std::vector<Vector>& candidates, const ProductMeasure& rho,
                                int n_max, std::string kind) {
    const Vector w = flatten(rho.weight_table);
    std::vector<Vector> q;
    q.reserve(static_cast<size_t>(n_max));
    for (size_t k = 0; k < candidates.size() && static_cast<int>(q.size()) < n_max; ++k) {
        Vector v = candidates[k];
        const double norm = orthogonalize(v, q, w);
        if (norm < kPivotTol) {
            throw RankDeficient("gram_schmidt: embedding " + std::to_string(k) +
                                    " is linearly dependent on its predecessors",
                                static_cast<int>(k));
        }
        q.push_back(v / norm);
    }
    for (Eigen::Index cell = 0; cell < w.size() && static_cast<int>(q.size()) < n_max; ++cell) {
        if (w[cell] <= 0.0) continue;
        Vector v = Vector::Zero(w.size());
        v[cell] = 1.0 / std::sqrt(w[cell]);
        const double norm = orthogonalize(v, q, w);
        if (norm < kCompletionTol) continue;
        q.push_back(v / norm);
    }
    if (static_cast<int>(q.size()) < n_max) {
        throw RankDeficient("gram_schmidt: L2(rho) has dimension " + std::to_string(q.size()) +
                                ", fewer than the requested " + std::to_string(n_max),
                            static_cast<int>(q.size()));
    }
    return OrthonormalBasis(stack(q, w.size()), rho, std::move(kind));
}

}  // namespace

Vector flatten(const Matrix& table) {
    Vector flat(table.size());
    const Eigen::Index kp = table.cols();
    for (Eigen::Index i = 0; i < table.rows(); ++i)
        for (Eigen::Index j = 0; j < kp; ++j) flat[i * kp + j] = table(i, j);
    return flat;
}

Matrix unflatten(const Vector& flat, int rows, int cols) {
    if (flat.size() != static_cast<Eigen::Index>(rows) * cols) {
        throw ShapeMismatch("unflatten: length does not match shape");
    }
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = flat[i * cols + j];
    return m;
}

OrthonormalBasis::OrthonormalBasis(Matrix eval, ProductMeasure rho, std::string kind)
    : eval_(std::move(eval)), rho_(std::move(rho)), kind_(std::move(kind)) {
    if (eval_.cols() != rho_.weight_table.size()) {
        throw ShapeMismatch("OrthonormalBasis: tabulation width does not match the grid");
    }
}

Matrix OrthonormalBasis::function(int k) const {
    return unflatten(eval_.row(k).transpose(), rows(), cols());
}

Matrix OrthonormalBasis::gram() const {
    const Vector w = flatten(rho_.weight_table);
    return eval_ * w.asDiagonal() * eval_.transpose();
}

OrthonormalBasis loci_indicator_basis(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    ProductMeasure rho = product_measure(mu, nu);
    const Vector w = flatten(rho.weight_table);
    Matrix eval = Matrix::Zero(w.size(), w.size());
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        if (w[k] <= 0.0) {
            throw ZeroReferenceMass("loci_indicator_basis: grid cell " + std::to_string(k) +
                                    " has zero reference mass");
        }
        eval(k, k) = 1.0 / std::sqrt(w[k]);
    }
    return OrthonormalBasis(std::move(eval), std::move(rho), "loci");
}

OrthonormalBasis gram_schmidt(const std::vector<Matrix>& embeddings, const ProductMeasure& rho,
                              int n_max) {
    if (embeddings.empty()) throw InvalidArgument("gram_schmidt: no embeddings");
    std::vector<Vector> candidates;
    for (const Matrix& e : embeddings) {
        if (e.rows() != rho.rows() || e.cols() != rho.cols()) {
            throw ShapeMismatch("gram_schmidt: embedding shape does not match the grid");
        }
        candidates.push_back(flatten(e));
    }
    const int target = n_max > 0 ? n_max : static_cast<int>(embeddings.size());
    if (target < static_cast<int>(embeddings.size())) {
        throw InvalidArgument("gram_schmidt: n_max smaller than the number of embeddings");
    }
    return orthonormalize(candidates, rho, target, "gram-schmidt");
}

std::vector<std::pair<int, int>> cosine_frequencies(int rows, int cols) {
    std::vector<std::pair<int, int>> freqs;
    for (int a = 0; a < rows; ++a)
        for (int b = 0; b < cols; ++b) freqs.emplace_back(a, b);
    std::stable_sort(freqs.begin(), freqs.end(), [](const auto& x, const auto& y) {
        const int sx = x.first + x.second, sy = y.first + y.second;
        return sx != sy ? sx < sy : x.first < y.first;
    });
    return freqs;
}

OrthonormalBasis cosine_basis(const DiscreteMeasure& mu, const DiscreteMeasure& nu, int n_max) {
    const int k = mu.size(), kp = nu.size();
    if (n_max < 1 || n_max > k * kp) {
        throw InvalidArgument("cosine_basis: n_max must lie in [1, K K']");
    }
    ProductMeasure rho = product_measure(mu, nu);
    std::vector<Vector> candidates;
    const auto freqs = cosine_frequencies(k, kp);
    for (int idx = 0; idx < n_max; ++idx) {
        const auto [a, b] = freqs[static_cast<size_t>(idx)];
        Matrix f(k, kp);
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < kp; ++j)
                f(i, j) = std::cos(std::numbers::pi * a * (i + 0.5) / k) *
                          std::cos(std::numbers::pi * b * (j + 0.5) / kp);
        candidates.push_back(flatten(f));
    }
    return orthonormalize(candidates, rho, n_max, "cosine");
}

DecayProfile DecayProfile::finite(int n_nonzero) {
    if (n_nonzero < 1) throw InvalidArgument("DecayProfile: N must be positive");
    DecayProfile p;
    p.kind = Kind::FiniteN;
    p.n = n_nonzero;
    return p;
}

DecayProfile DecayProfile::power(double q) {
    if (!(q > 0.0)) throw InvalidArgument("DecayProfile: q must be positive");
    DecayProfile p;
    p.kind = Kind::PowerQ;
    p.q = q;
    return p;
}

double DecayProfile::zeta(double count) const {
    if (count <= 0.0) return 0.0;
    if (kind == Kind::FiniteN) return std::min(count, static_cast<double>(n)) / n;
    return 1.0 - std::pow(count, -q);
}

DecayCost decay_cost(const OrthonormalBasis& basis, const DecayProfile& profile, double scale,
                     std::uint64_t seed) {
    if (!(scale >= 0.0)) throw InvalidArgument("decay_cost: scale must be nonnegative");
    const int n_max = basis.n_max();
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    CoefficientVector gamma(n_max);
    for (int i = 1; i <= n_max; ++i) {
        const double upper = i == n_max ? 1.0 : profile.zeta(i);
        const double magnitude = scale * (upper - profile.zeta(i - 1));
        gamma[i - 1] = coin(rng) ? magnitude : -magnitude;
    }
    CostTable cost = synthesize(gamma, basis);
    cost.scale = scale;
    return DecayCost{std::move(cost), std::move(gamma)};
}

CoefficientVector features(const Matrix& mass, const OrthonormalBasis& basis, int n) {
    if (n < 0 || n > basis.n_max()) throw InvalidArgument("features: order exceeds n_max");
    if (mass.rows() != basis.rows() || mass.cols() != basis.cols()) {
        throw ShapeMismatch("features: plan shape does not match the basis grid");
    }
    return basis.eval().topRows(n) * flatten(mass);
}

CoefficientVector features(const Coupling& pi, const OrthonormalBasis& basis, int n) {
    return features(pi.mass, basis, n);
}

CostTable synthesize(const CoefficientVector& gamma, const OrthonormalBasis& basis) {
    if (gamma.size() > basis.n_max()) {
        throw InvalidArgument("synthesize: more coefficients than basis functions");
    }
    const Vector flat = basis.eval().topRows(gamma.size()).transpose() * gamma;
    return CostTable(unflatten(flat, basis.rows(), basis.cols()));
}

CoefficientVector analyze(const CostTable& c, const OrthonormalBasis& basis) {
    const Vector w = flatten(basis.rho().weight_table);
    return basis.eval() * flatten(c.values()).cwiseProduct(w);
}

double l2_norm(const Matrix& f, const ProductMeasure& rho) {
    return std::sqrt(f.array().square().cwiseProduct(rho.weight_table.array()).sum());
}

double tail_bound(const CoefficientVector& gamma_full, int n) {
    if (n >= gamma_full.size()) return 0.0;
    const int start = std::max(n, 0);
    return gamma_full.tail(gamma_full.size() - start).cwiseAbs().sum();
}

nlohmann::json to_json(const OrthonormalBasis& b) {
    nlohmann::json rows = nlohmann::json::array();
    for (int k = 0; k < b.n_max(); ++k) {
        const Vector r = b.eval().row(k).transpose();
        rows.push_back(std::vector<double>(r.data(), r.data() + r.size()));
    }
    return {{"kind", b.kind()},
            {"n_max", b.n_max()},
            {"shape", {b.rows(), b.cols()}},
            {"eval", rows},
            {"rho", table_to_json(b.rho().weight_table)}};
}

nlohmann::json coefficients_to_json(const CoefficientVector& c) {
    return std::vector<double>(c.data(), c.data() + c.size());
}

CoefficientVector coefficients_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace bot
