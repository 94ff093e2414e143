#include "mfl/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace mfl::geometry {

double EmbeddedManifold::constraint_residual(const Vec& p) const {
    if (whole_space()) return 0.0;
    return constraint(p).norm();
}

Vec EmbeddedManifold::reproject(const Vec& p, int steps) const {
    if (whole_space()) return p;
    Vec q = p;
    for (int k = 0; k < steps; ++k) {
        Vec c = constraint(q);
        Mat Jc = constraint_jacobian(q);
        Vec lam = (Jc * Jc.transpose()).ldlt().solve(c);
        q -= Jc.transpose() * lam;
    }
    return q;
}

Vec EmbeddedManifold::project_fully(const Vec& p) const {
    if (whole_space()) return p;
    Vec q = p;
    for (int k = 0; k < 30 && constraint_residual(q) > 1e-15; ++k) q = reproject(q, 1);
    return q;
}

EmbeddedManifold euclidean_space(int m) {
    EmbeddedManifold M;
    M.ambient_dim = m;
    M.intrinsic_dim = m;
    M.tangent_projector = [m](const Vec&) -> Mat { return Mat::Identity(m, m); };
    return M;
}

EmbeddedManifold unit_sphere(int m) {
    EmbeddedManifold M;
    M.ambient_dim = m;
    M.intrinsic_dim = m - 1;
    M.constraint = [](const Vec& p) -> Vec { return Vec::Constant(1, 0.5 * (p.squaredNorm() - 1.0)); };
    M.constraint_jacobian = [](const Vec& p) -> Mat { return p.transpose(); };
    M.tangent_projector = [m](const Vec& p) -> Mat {
        return Mat::Identity(m, m) - p * p.transpose() / p.squaredNorm();
    };
    return M;
}

Vec finite_difference_gradient(const ScalarField& f, const Vec& p) {
    const double h = kGradientStep * (1.0 + p.norm());
    Vec g(p.size());
    for (int i = 0; i < p.size(); ++i) {
        Vec a = p, b = p;
        a(i) += h;
        b(i) -= h;
        g(i) = (f.value(a) - f.value(b)) / (2.0 * h);
    }
    return g;
}

Vec ambient_gradient(const ScalarField& f, const Vec& p) {
    return f.gradient ? f.gradient(p) : finite_difference_gradient(f, p);
}

Vec riemannian_gradient(const EmbeddedManifold& M, const ScalarField& f, const Vec& p, double tol) {
    if (p.size() != M.ambient_dim) throw DomainError("point has wrong ambient dimension");
    if (M.constraint_residual(p) > tol) throw DomainError("point is off the manifold");
    return M.tangent_projector(p) * ambient_gradient(f, p);
}

Vec gradient_field(const EmbeddedManifold& M, const ScalarField& f, const Vec& p) {
    return M.tangent_projector(p) * ambient_gradient(f, p);
}

Mat tangent_frame(const EmbeddedManifold& M, const Vec& p) {
    Mat P = M.tangent_projector(p);
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (P + P.transpose()));
    // eigenvalues ascending; the tangent directions carry eigenvalue 1
    return es.eigenvectors().rightCols(M.intrinsic_dim);
}

TangentHessian tangent_hessian(const EmbeddedManifold& M, const ScalarField& f, const Vec& p,
                               const std::optional<Mat>& frame, double critical_tol) {
    if (riemannian_gradient(M, f, p).norm() > critical_tol)
        throw DomainError("tangent Hessian requested at a non-critical point");
    TangentHessian out;
    out.frame = frame ? *frame : tangent_frame(M, p);
    const int d = static_cast<int>(out.frame.cols());
    const double h = kHessianStep * (1.0 + p.norm());
    auto f_at = [&](const Vec& q) { return f.value(M.project_fully(q)); };
    out.matrix.resize(d, d);
    const double f0 = f_at(p);
    for (int i = 0; i < d; ++i) {
        const Vec ei = out.frame.col(i);
        out.matrix(i, i) = (f_at(p + h * ei) - 2.0 * f0 + f_at(p - h * ei)) / (h * h);
        for (int j = i + 1; j < d; ++j) {
            const Vec ej = out.frame.col(j);
            const double v = (f_at(p + h * ei + h * ej) - f_at(p + h * ei - h * ej) -
                              f_at(p - h * ei + h * ej) + f_at(p - h * ei - h * ej)) /
                             (4.0 * h * h);
            out.matrix(i, j) = v;
            out.matrix(j, i) = v;
        }
    }
    out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
    return out;
}

int kernel_dimension(const Mat& A, double rel_tol, double abs_tol) {
    if (A.size() == 0) return 0;
    Eigen::JacobiSVD<Mat> svd(A);
    const Vec& s = svd.singularValues();
    const double smax = s.size() ? s(0) : 0.0;
    if (smax == 0.0) return static_cast<int>(A.cols());
    const double cut = std::max(rel_tol * smax, abs_tol);
    int k = static_cast<int>(A.cols() - s.size());
    for (int i = 0; i < s.size(); ++i)
        if (s(i) < cut) ++k;
    return k;
}

double coarse_distance(const Vec& p, const Vec& q) { return (p - q).norm(); }

CoarseMetric chordal_metric() { return [](const Vec& p, const Vec& q) { return coarse_distance(p, q); }; }

namespace fields {

ScalarField height(int m) {
    ScalarField f;
    f.value = [m](const Vec& p) { return p(m - 1); };
    f.gradient = [m](const Vec&) -> Vec { return Vec::Unit(m, m - 1); };
    return f;
}

ScalarField circle_well() {
    ScalarField f;
    f.value = [](const Vec& p) {
        const double r = std::hypot(p(0), p(1));
        return -((r - 1.0) * (r - 1.0) + p(2) * p(2));
    };
    f.gradient = [](const Vec& p) -> Vec {
        const double r = std::hypot(p(0), p(1));
        Vec g(3);
        g << -2.0 * (r - 1.0) * p(0) / r, -2.0 * (r - 1.0) * p(1) / r, -2.0 * p(2);
        return g;
    };
    return f;
}

ScalarField half_square(double sign) {
    ScalarField f;
    f.value = [sign](const Vec& p) { return 0.5 * sign * p(0) * p(0); };
    f.gradient = [sign](const Vec& p) -> Vec { return Vec::Constant(1, sign * p(0)); };
    f.hessian = [sign](const Vec&) -> Mat { return Mat::Constant(1, 1, sign); };
    return f;
}

ScalarField negative_quartic() {
    ScalarField f;
    f.value = [](const Vec& p) { return -std::pow(p(0), 4); };
    f.gradient = [](const Vec& p) -> Vec { return Vec::Constant(1, -4.0 * std::pow(p(0), 3)); };
    return f;
}

}  // namespace fields

}  // namespace mfl::geometry
