#pragma once

#include "mfl/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mfl::loopfield {

// Loop sampled at t_j = j/N; flattened node-major: index j*dim + c.
// Coordinates are (theta, z', z'') with z'' the last dim - d entries.
struct LoopGrid {
    int n_points = 0;
    int dim = 0;
    Mat values;  // n_points x dim

    LoopGrid() = default;
    LoopGrid(int n, int d) : n_points(n), dim(d), values(Mat::Zero(n, d)) {}

    double t(int j) const { return static_cast<double>(j) / n_points; }
    Vec flatten() const;
    static LoopGrid unflatten(const Vec& v, int n, int dim);
    static LoopGrid constant(int n, const Vec& value);
    static LoopGrid sample(int n, int dim, const std::function<Vec(double)>& fn);
};

struct LoopOperator {
    Mat matrix;
    std::string label;

    Vec apply(const Vec& x) const { return matrix * x; }
    LoopGrid apply(const LoopGrid& X) const;
};

enum class Scheme { Spectral, FourthOrder };

// Periodic derivative on N nodes of [0,1). Odd N avoids the alternating null mode.
Mat derivative_1d(int N, Scheme scheme = Scheme::Spectral);
LoopOperator derivative_matrix(int N, int dim, Scheme scheme = Scheme::Spectral);

using MetricFamily = std::vector<Mat>;  // g_t at each node

MetricFamily constant_metric(int N, const Mat& g);
void require_spd(const MetricFamily& g);
// Gram matrix of the discrete H^k pairing (k = 0 is L^2, rectangle rule).
Mat gram_matrix(const MetricFamily& g, int k, Scheme scheme = Scheme::Spectral);
double loop_inner_product(const LoopGrid& X, const LoopGrid& Y, const MetricFamily& g, int k,
                          Scheme scheme = Scheme::Spectral);

// Norm of A from (R^n, from_gram) to (R^n, to_gram).
double operator_norm(const Mat& A, const Mat& from_gram, const Mat& to_gram);

// First-order operator X -> R_t dX/dt + S_t X with pointwise coefficients.
struct CoefficientPair {
    std::vector<Mat> R;
    std::vector<Mat> S;
};

LoopOperator assemble(const CoefficientPair& c, Scheme scheme = Scheme::Spectral);
// Adjoint in L^2(g) through a g-orthonormal frame: coefficient-level formula.
CoefficientPair adjoint_coefficients(const CoefficientPair& c, const MetricFamily& g,
                                     Scheme scheme = Scheme::Spectral);
LoopOperator adjoint_operator(const CoefficientPair& c, const MetricFamily& g, Scheme scheme = Scheme::Spectral);
// Matrix adjoint G^{-1} A^T G of the discrete operator.
LoopOperator discrete_adjoint(const Mat& A, const MetricFamily& g);

// Pointwise data that determines the linearized operator along a loop.
class CoefficientModel {
public:
    virtual ~CoefficientModel() = default;
    virtual int dim() const = 0;
    virtual int orbit_dim() const = 0;
    virtual bool in_chart(const Vec& q) const = 0;
    virtual Mat complex_structure(double t, const Vec& q) const = 0;  // dim x dim
    virtual Mat defect_factor(double t, const Vec& q) const = 0;      // dim x (dim - d)
    virtual Mat metric(double t, const Vec& q) const = 0;             // omega(., J .)
};

// Sigma^+: theta += t at node t.
LoopGrid shift_plus(const LoopGrid& x);

// -J(Sigma^+ x)(D + S(Sigma^+ x) z''); throws DomainError outside the chart.
LoopOperator build_operator_A(const LoopGrid& x, const CoefficientModel& model, Scheme scheme = Scheme::Spectral);
CoefficientPair operator_A_coefficients(const LoopGrid& x, const CoefficientModel& model);
MetricFamily metric_along(const LoopGrid& x, const CoefficientModel& model);

struct SpectralSplit {
    Vec eigenvalues;        // ascending
    Mat eigenvectors;       // g-orthonormal columns
    Mat kernel_raw;         // kernel eigenvectors before snapping
    Mat kernel_basis;       // snapped to constant loops and re-orthonormalized
    std::vector<int> kernel_index;
    Mat P, Q;
    Mat gram;               // discrete L^2(g) Gram matrix
    double c0 = 0.0;
    double kernel_tol = 0.0;
    int n_points = 0;
    int dim = 0;

    Mat negative_modes() const;  // eigenvectors with lambda < -kernel_tol
    Mat positive_modes() const;
};

SpectralSplit spectral_split(const LoopOperator& A0, const MetricFamily& g, double asymmetry_tol = 1e-6);

struct FactsReport {
    double a0_norm = 0.0;
    double self_adjoint_residual = 0.0;  // max |<A X,Y> - <X,A Y>| / (|X||Y|)
    double range_residual = 0.0;         // ||Q A0 - A0||
    double kernel_residual = 0.0;        // max_x ||A_x Q - A_x||
    double derivative_residual = 0.0;    // ||D Q - D||
    double coercivity_min_ratio = 0.0;   // min ||A0 Q X||^2 / ||Q X||^2
    double coercivity_h1_ratio = 0.0;    // same against the discrete H^1 norm
    int coercivity_violations = 0;
    bool pass = false;
};

FactsReport check_operator_facts(const SpectralSplit& split, const LoopOperator& A0,
                                 const std::vector<LoopOperator>& A_samples, const LoopOperator& D, CounterRng& rng,
                                 int samples = 100, Scheme scheme = Scheme::Spectral);

// Nodes and weights of the 32-point Gauss-Legendre rule mapped to [0,1].
const std::vector<std::pair<double, double>>& gauss_legendre_unit();

// S(q) with F(q) = S(q) z''(q), columns int_0^1 dF/dz''_i(theta, z', r z'') dr.
Mat hadamard_factor(const std::function<Vec(const Vec&)>& F, const Vec& q, int d);

}  // namespace mfl::loopfield
