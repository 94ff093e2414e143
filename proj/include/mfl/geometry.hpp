#pragma once

#include "mfl/common.hpp"

#include <functional>
#include <optional>

namespace mfl::geometry {

// Level set {constraint = 0} in R^m with the induced Euclidean metric.
// An empty constraint means the whole ambient space.
struct EmbeddedManifold {
    int ambient_dim = 0;
    int intrinsic_dim = 0;
    std::function<Vec(const Vec&)> constraint;
    std::function<Mat(const Vec&)> constraint_jacobian;
    std::function<Mat(const Vec&)> tangent_projector;

    bool whole_space() const { return !constraint; }
    double constraint_residual(const Vec& p) const;
    // Newton steps along the normal space towards the constraint set.
    Vec reproject(const Vec& p, int steps = 1) const;
    Vec project_fully(const Vec& p) const;
};

EmbeddedManifold euclidean_space(int m);
EmbeddedManifold unit_sphere(int m);

struct ScalarField {
    std::function<double(const Vec&)> value;
    std::function<Vec(const Vec&)> gradient;  // optional
    std::function<Mat(const Vec&)> hessian;   // optional
};

using CoarseMetric = std::function<double(const Vec&, const Vec&)>;

constexpr double kGradientStep = 1e-5;
constexpr double kHessianStep = 1e-4;
constexpr double kKernelTol = 1e-6;
constexpr double kOnManifoldTol = 1e-8;

Vec finite_difference_gradient(const ScalarField& f, const Vec& p);
Vec ambient_gradient(const ScalarField& f, const Vec& p);

// P(p) * grad f(p); throws DomainError off the manifold.
Vec riemannian_gradient(const EmbeddedManifold& M, const ScalarField& f, const Vec& p,
                        double tol = kOnManifoldTol);
// Same vector field extended to a neighbourhood, used inside integrators.
Vec gradient_field(const EmbeddedManifold& M, const ScalarField& f, const Vec& p);

// Orthonormal basis of the tangent space as columns (m x d_M).
Mat tangent_frame(const EmbeddedManifold& M, const Vec& p);

struct TangentHessian {
    Mat matrix;  // d_M x d_M, in the given frame
    Mat frame;   // m x d_M
};

TangentHessian tangent_hessian(const EmbeddedManifold& M, const ScalarField& f, const Vec& p,
                               const std::optional<Mat>& frame = std::nullopt,
                               double critical_tol = 1e-6);

// Number of singular values below max(rel_tol * sigma_max, abs_tol); all of them if the matrix vanishes.
int kernel_dimension(const Mat& A, double rel_tol = kKernelTol, double abs_tol = 0.0);

double coarse_distance(const Vec& p, const Vec& q);
CoarseMetric chordal_metric();

namespace fields {

ScalarField height(int m);                 // last coordinate
ScalarField circle_well();                 // -((sqrt(x^2+y^2)-1)^2 + z^2) on R^3
ScalarField half_square(double sign);      // sign * x^2 / 2 on R
ScalarField negative_quartic();            // -x^4 on R

}  // namespace fields

}  // namespace mfl::geometry
