#include "bot/measures.hpp"

#include "bot/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace bot {

namespace {

constexpr double kWeightTol = 1e-12;

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeMismatch(std::string(what) + ": shape " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                            "x" + std::to_string(b.cols()));
    }
}

}  // namespace

DiscreteMeasure::DiscreteMeasure(Matrix points, Vector weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
    if (weights_.size() == 0) throw InvalidArgument("DiscreteMeasure: empty support");
    if (points_.rows() != weights_.size()) {
        throw ShapeMismatch("DiscreteMeasure: points and weights disagree in length");
    }
    if (!points_.allFinite() || !weights_.allFinite()) {
        throw InvalidArgument("DiscreteMeasure: non-finite entry");
    }
    if (weights_.minCoeff() < 0.0) throw InvalidArgument("DiscreteMeasure: negative weight");
    const double total = weights_.sum();
    if (std::abs(total - 1.0) > kWeightTol) {
        throw InvalidArgument("DiscreteMeasure: weights sum to " + std::to_string(total));
    }
    weights_ /= total;
    for (Eigen::Index a = 0; a < points_.rows(); ++a) {
        for (Eigen::Index b = a + 1; b < points_.rows(); ++b) {
            if ((points_.row(a) - points_.row(b)).squaredNorm() == 0.0) {
                throw InvalidArgument("DiscreteMeasure: repeated support point " +
                                      std::to_string(a));
            }
        }
    }
}

DiscreteMeasure DiscreteMeasure::uniform_grid(int k) {
    if (k < 1) throw InvalidArgument("uniform_grid: k must be positive");
    Matrix pts(k, 1);
    for (int i = 0; i < k; ++i) pts(i, 0) = i;
    return DiscreteMeasure(std::move(pts), Vector::Constant(k, 1.0 / k));
}

DiscreteMeasure DiscreteMeasure::dirac(const Vector& x) {
    return DiscreteMeasure(x.transpose(), Vector::Ones(1));
}

CostTable::CostTable(Matrix values) : values_(std::move(values)) {
    if (!values_.allFinite()) throw InvalidArgument("CostTable: non-finite entry");
}

ProductMeasure product_measure(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
    Matrix table = mu.weights() * nu.weights().transpose();
    return ProductMeasure{mu, nu, std::move(table)};
}

double pairing(const Matrix& c, const Matrix& pi) {
    require_same_shape(c, pi, "pairing");
    return c.cwiseProduct(pi).sum();
}

double pairing(const CostTable& c, const Coupling& pi) { return pairing(c.values(), pi.mass); }

double relative_entropy(const Matrix& pi, const Matrix& rho) {
    require_same_shape(pi, rho, "relative_entropy");
    double h = 0.0;
    for (Eigen::Index j = 0; j < pi.cols(); ++j) {
        for (Eigen::Index i = 0; i < pi.rows(); ++i) {
            const double p = pi(i, j);
            if (p <= 0.0) continue;
            if (rho(i, j) <= 0.0) return std::numeric_limits<double>::infinity();
            h += p * std::log(p / rho(i, j));
        }
    }
    return h;
}

double relative_entropy(const Coupling& pi, const ProductMeasure& rho) {
    return relative_entropy(pi.mass, rho.weight_table);
}

FeasibilityReport check_coupling(const Coupling& pi, const DiscreteMeasure& mu,
                                 const DiscreteMeasure& nu, double tol) {
    if (pi.rows() != mu.size() || pi.cols() != nu.size()) {
        throw ShapeMismatch("check_coupling: plan shape does not match marginals");
    }
    FeasibilityReport r;
    r.row_error = (pi.mass.rowwise().sum() - mu.weights()).cwiseAbs().maxCoeff();
    r.col_error = (pi.mass.colwise().sum().transpose() - nu.weights()).cwiseAbs().maxCoeff();
    r.min_entry = pi.mass.minCoeff();
    r.feasible = pi.mass.allFinite() && r.row_error <= tol && r.col_error <= tol &&
                 r.min_entry >= -tol;
    return r;
}

double lipschitz_constant(const Matrix& cost, const DiscreteMeasure& mu,
                          const DiscreteMeasure& nu) {
    const int k = mu.size();
    const int kp = nu.size();
    double best = 0.0;
    for (int a = 0; a < k * kp; ++a) {
        const int i = a / kp, j = a % kp;
        for (int b = a + 1; b < k * kp; ++b) {
            const int i2 = b / kp, j2 = b % kp;
            const double dist = std::sqrt((mu.points().row(i) - mu.points().row(i2)).squaredNorm() +
                                          (nu.points().row(j) - nu.points().row(j2)).squaredNorm());
            best = std::max(best, std::abs(cost(i, j) - cost(i2, j2)) / dist);
        }
    }
    return best;
}

nlohmann::json table_to_json(const Matrix& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
    return {{"shape", {m.rows(), m.cols()}}, {"values", flat}};
}

Matrix table_from_json(const nlohmann::json& j) {
    const auto shape = j.at("shape").get<std::vector<long>>();
    const auto flat = j.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0 ||
        static_cast<size_t>(shape[0] * shape[1]) != flat.size()) {
        throw ShapeMismatch("table_from_json: shape does not match value count");
    }
    Matrix m(shape[0], shape[1]);
    for (long i = 0; i < shape[0]; ++i)
        for (long c = 0; c < shape[1]; ++c) m(i, c) = flat[static_cast<size_t>(i * shape[1] + c)];
    return m;
}

void to_json(nlohmann::json& j, const DiscreteMeasure& m) {
    j = {{"points", table_to_json(m.points())},
         {"weights", std::vector<double>(m.weights().data(), m.weights().data() + m.size())}};
}

DiscreteMeasure measure_from_json(const nlohmann::json& j) {
    const auto w = j.at("weights").get<std::vector<double>>();
    Vector weights = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    Matrix points;
    if (j.contains("points")) {
        points = table_from_json(j.at("points"));
    } else {
        points.resize(weights.size(), 1);
        for (Eigen::Index i = 0; i < weights.size(); ++i) points(i, 0) = static_cast<double>(i);
    }
    return DiscreteMeasure(std::move(points), std::move(weights));
}

void to_json(nlohmann::json& j, const Coupling& c) { j = {{"mass", table_to_json(c.mass)}}; }

Coupling coupling_from_json(const nlohmann::json& j) {
    return Coupling{table_from_json(j.at("mass"))};
}

void to_json(nlohmann::json& j, const CostTable& c) {
    j = {{"values", table_to_json(c.values())}};
    if (c.lipschitz) j["lipschitz"] = *c.lipschitz;
    if (c.scale) j["scale"] = *c.scale;
}

CostTable cost_from_json(const nlohmann::json& j) {
    CostTable c(table_from_json(j.at("values")));
    if (j.contains("lipschitz")) c.lipschitz = j.at("lipschitz").get<double>();
    if (j.contains("scale")) c.scale = j.at("scale").get<double>();
    return c;
}

}  // namespace bot
