#pragma once

#include "mfl/jet.hpp"
#include "mfl/loopfield.hpp"
#include "mfl/morsebott.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mfl::floerlab {

using loopfield::CoefficientPair;
using loopfield::LoopGrid;
using loopfield::LoopOperator;
using loopfield::MetricFamily;
using loopfield::Scheme;
using loopfield::SpectralSplit;

template <class T>
using VecT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// h(rho) = quadratic*rho^2 + linear*rho
struct RadialProfile {
    double quadratic = 3.14159265358979323846;
    double linear = 0.0;

    template <class T>
    T value(const T& rho) const {
        return quadratic * rho * rho + linear * rho;
    }
    template <class T>
    T slope(const T& rho) const {
        return 2.0 * quadratic * rho + T(linear);
    }
    template <class T>
    T curvature(const T&) const {
        return T(2.0 * quadratic);
    }
};

// H = sum_i h_i(rho_i) on R^{2n}, rho_i = (x_i^2 + y_i^2)/2, standard omega and J.
// Orbit manifold: the torus rho_i = level_i.
class RadialHamiltonian {
public:
    explicit RadialHamiltonian(std::vector<RadialProfile> factors = {RadialProfile{}}, std::vector<double> levels = {});

    int dim() const { return 2 * static_cast<int>(factors_.size()); }
    int orbit_dim() const { return static_cast<int>(factors_.size()); }
    const std::vector<RadialProfile>& factors() const { return factors_; }
    const std::vector<double>& levels() const { return levels_; }

    double hamiltonian(const Vec& p) const;
    Vec gradient(const Vec& p) const;

    // omega(., X) = dH
    template <class T>
    VecT<T> vector_field(const VecT<T>& p) const {
        VecT<T> X(p.size());
        for (std::size_t i = 0; i < factors_.size(); ++i) {
            const T& x = p(2 * i);
            const T& y = p(2 * i + 1);
            const T rho = 0.5 * (x * x + y * y);
            const T w = factors_[i].slope(rho);
            X(2 * i) = -w * y;
            X(2 * i + 1) = w * x;
        }
        return X;
    }

    Mat omega() const;           // dx^dy blocks
    Mat complex_structure() const;  // omega(., J .) = identity
    Vec flow(double time, const Vec& p, int steps = 2000) const;
    std::vector<Vec> orbit_samples(int per_factor) const;

private:
    std::vector<RadialProfile> factors_;
    std::vector<double> levels_;
};

struct MonodromyReport {
    std::vector<int> fixed_dims;  // nullity of (monodromy - I) per sample
    std::vector<double> return_errors;
    int expected_dim = 0;
    bool pass = false;
};

// Nullity via singular values of (M - I) below tol.
MonodromyReport mb_condition_check(const RadialHamiltonian& system, const std::vector<Vec>& samples,
                                   double fd_step = 1e-5, double tol = 1e-4, int steps = 2000);
Mat monodromy(const RadialHamiltonian& system, const Vec& p, double fd_step = 1e-5, int steps = 2000);

// Chart-side data of a Floer model: everything the loop operators need, in double and in 3-jets.
class FloerModel : public loopfield::CoefficientModel {
public:
    double chart_radius = 0.3;
    double newton_radius = 0.05;

    // R = -J, S = -J [0 | defect]
    virtual void coefficients(const VecT<Jet3>& q, MatT<Jet3>& R, MatT<Jet3>& S) const = 0;
    void coefficients(const Vec& q, Mat& R, Mat& S) const;

    virtual Vec chart_inverse(const Vec& q) const = 0;  // chart -> ambient
    virtual Vec chart_forward(const Vec& p) const = 0;  // ambient -> chart
    virtual Vec defect(const Vec& q) const = 0;         // d/dtheta - X_H in chart coordinates
    virtual Vec chart_vector_field(const Vec& q) const = 0;
};

// W = R^2 with H = h(rho); chart (theta, z) = (angle/2pi, rho - level).
class RadialFloerModel final : public FloerModel {
public:
    explicit RadialFloerModel(RadialProfile h = {}, double level = 1.0, bool zero_defect = false);

    int dim() const override { return 2; }
    int orbit_dim() const override { return 1; }
    bool in_chart(const Vec& q) const override;
    Mat complex_structure(double t, const Vec& q) const override;
    Mat defect_factor(double t, const Vec& q) const override;
    Mat metric(double t, const Vec& q) const override;
    void coefficients(const VecT<Jet3>& q, MatT<Jet3>& R, MatT<Jet3>& S) const override;
    using FloerModel::coefficients;

    Vec chart_inverse(const Vec& q) const override;
    Vec chart_forward(const Vec& p) const override;
    Vec defect(const Vec& q) const override;
    Vec chart_vector_field(const Vec& q) const override;

    Mat chart_omega() const;
    RadialHamiltonian ambient() const { return RadialHamiltonian({h_}, {level_}); }
    const RadialProfile& profile() const { return h_; }

private:
    template <class T>
    MatT<T> j_matrix(const T& z) const;
    template <class T>
    MatT<T> defect_matrix(const T& z) const;

    RadialProfile h_;
    double level_;
    bool zero_defect_;
};

// (Sigma^{+-} x)(t) = x(t) +- (t, 0)
LoopGrid shift_loops(const LoopGrid& x, int sign);

// Loop-space derivatives of x -> A_x.
enum class ProbeMode { Taylor, FiniteDifference };

struct ProbeOptions {
    ProbeMode mode = ProbeMode::Taylor;
    double step = 1e-5;   // first differences, relative to 1 + |x|_inf
    double step2 = 1e-4;  // second differences
    double step3 = 1e-3;  // third differences, Richardson-extrapolated
    Scheme scheme = Scheme::Spectral;
};

Mat operator_A(const FloerModel& model, const LoopGrid& x, Scheme scheme = Scheme::Spectral);
Vec apply_A(const FloerModel& model, const LoopGrid& x, const Vec& X, Scheme scheme = Scheme::Spectral);
// k-th derivative D^k A[V, ..., V], k = 1..3
Mat derivative_A(const FloerModel& model, const LoopGrid& x, const Vec& V, int k, const ProbeOptions& opt = {});
// D^2 A[U, V] by polarization
Mat second_derivative_A(const FloerModel& model, const LoopGrid& x, const Vec& U, const Vec& V,
                        const ProbeOptions& opt = {});

Mat build_B(const FloerModel& model, const LoopGrid& x, const ProbeOptions& opt = {});
Mat build_C(const FloerModel& model, const LoopGrid& x, const ProbeOptions& opt = {});

struct HatOperator {
    Mat matrix;  // 3n x 3n, lower block triangular
    Mat Q_hat, P_hat;
};
HatOperator build_Ahat(const FloerModel& model, const LoopGrid& x, const SpectralSplit& split,
                       const ProbeOptions& opt = {});

struct LoopTriple {
    Vec first, second, third;
};
LoopTriple build_E(const FloerModel& model, const LoopGrid& x, const ProbeOptions& opt = {});

struct CorrectionOperators {
    Mat D, C1, C2;
};
CorrectionOperators build_D_C1_C2(const FloerModel& model, const LoopGrid& x, const SpectralSplit& split);

// Base data at the constant loop.
struct BaseLoop {
    LoopGrid x0;
    LoopOperator A0;
    MetricFamily g;
    SpectralSplit split;
};
BaseLoop base_loop(const FloerModel& model, int n_points, Scheme scheme = Scheme::Spectral);

enum class Provenance { Spectral, Newton, Synthetic };

struct CylinderGrid {
    std::vector<double> s;
    std::vector<LoopGrid> slices;
    Provenance provenance = Provenance::Synthetic;
    double residual = 0.0;  // discrete Floer residual for newton provenance
    int iterations = 0;
    double filtered_mass = 0.0;
    std::string warning;

    double ds() const { return s.size() > 1 ? s[1] - s[0] : 0.0; }
    Vec slice_vector(std::size_t m) const { return slices[m].flatten(); }
};

std::vector<double> uniform_s_grid(double s_max, int intervals);

// Z(s) = P Z0 + sum over negative modes of e^{lambda s} <Z0, e> e; positive modes are dropped.
CylinderGrid linear_stable_evolution(const SpectralSplit& split, const LoopGrid& Z0, const std::vector<double>& s_grid);

struct NewtonOptions {
    double tol = 1e-9;
    int max_iterations = 30;
    int max_halvings = 5;
    Scheme scheme = Scheme::Spectral;
};

// Max-norm of (Z_{m+1} - Z_m)/ds - A_Y Y with Y the midpoint.
double floer_residual(const FloerModel& model, const CylinderGrid& Z, Scheme scheme = Scheme::Spectral);

CylinderGrid nonlinear_floer_solve(const FloerModel& model, const BaseLoop& base, const LoopGrid& Z_initial,
                                   double s_max, int M, const NewtonOptions& opt = {});
CylinderGrid nonlinear_floer_solve(const FloerModel& model, const LoopGrid& Z_initial, double s_max, int M,
                                   const NewtonOptions& opt = {});

struct IdentityResidual {
    std::vector<std::size_t> slices;
    std::vector<double> residual;  // |dB/ds - C| from H^1 to L^2 per slice
    std::vector<double> c_norm;
    double max_residual = 0.0;
    double constant = 0.0;  // max residual / ds^2
};

IdentityResidual check_dsB_equals_C(const FloerModel& model, const CylinderGrid& Z, const MetricFamily& g,
                                    const std::vector<std::size_t>& slices, double floer_tol = 1e-8,
                                    const ProbeOptions& opt = {});

struct DecayOptions {
    double rate_fraction = 0.85;
    double abs_floor = 1e-11;
    double rel_floor = 1e-8;
    double stationary_tol = 1e-12;
    double tail_fraction = 0.1;  // trailing share of slices used for the Cauchy tail
    double tail_ratio = 0.5;     // tail |dZ/ds|_{H^2} relative to the head
};

struct DecayReport {
    std::vector<double> s, l2, h2, dsu;
    std::vector<double> dist;  // sup-norm of Q Z(s)
    morsebott::LogLinearFit fit_l2, fit_h2, fit_dsu;
    bool fitted = false;
    double c0 = 0.0;
    double rate_floor = 0.0;
    double xi = 0.0;  // |Q Z(s0)|_{L^2}
    double envelope_h2 = 0.0;
    // convergence proxy: max over the tail of |Z_{m+1} - Z_m|_{H^2}, over the same at the head
    double cauchy_tail = 0.0;
    bool converging = false;
    bool l2_bound_holds = false;
    bool rates_hold = false;
    bool pass = false;
};

DecayReport measure_decay(const CylinderGrid& Z, const SpectralSplit& split, const FloerModel& model,
                          const DecayOptions& opt = {});

struct MaxPrincipleReport {
    double min_margin = 0.0;  // min over interior of (f'' - delta^2 f) / (delta^2 f)
    double max_excess = 0.0;  // max of f(s) - f(s0) e^{-delta (s - s0)}, scaled by f(s0)
    bool inequality_holds = false;
    bool conclusion_holds = false;
    bool strict = false;
};

MaxPrincipleReport maximum_principle_check(const std::vector<double>& s, const std::vector<double>& f, double delta,
                                           double tol = 1e-6);

struct ActionRow {
    double r, action, derivative, curvature;
};

struct ActionProfile {
    std::vector<ActionRow> rows;
    bool monotone_where_convex = false;
};

ActionProfile reeb_action_profile(const std::function<double(double)>& h, const std::vector<double>& r_grid,
                                  double fd_step = 1e-4);

// Actions r h'(r) - h(r) at the radii where the flow closes after k turns, k = 0..k_max.
std::vector<double> periodic_orbit_actions(const RadialProfile& h, int k_max);

// Xi(x) = |Q x|_{L^2}
double xi_surrogate(const SpectralSplit& split, const LoopGrid& x);

struct LipschitzReport {
    double lipschitz = 0.0;      // max |Xi(x) - Xi(y)| / |x - y|_{H^2}
    double max_on_orbits = 0.0;  // max Xi over sampled constant loops with z'' = 0
    bool pass = false;
};

LipschitzReport xi_lipschitz_check(const FloerModel& model, const SpectralSplit& split, CounterRng& rng, int pairs = 50,
                                   double amplitude = 0.02);

}  // namespace mfl::floerlab
