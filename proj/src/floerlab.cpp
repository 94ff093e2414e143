#include "mfl/floerlab.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mfl::floerlab {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double sup_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Mat block_diagonal(const std::vector<Mat>& blocks) {
    const int r = static_cast<int>(blocks[0].rows());
    const int n = static_cast<int>(blocks.size());
    Mat out = Mat::Zero(n * r, n * r);
    for (int j = 0; j < n; ++j) out.block(j * r, j * r, r, r) = blocks[static_cast<std::size_t>(j)];
    return out;
}

// Per-node metric blocks recovered from the discrete L^2 Gram matrix.
MetricFamily metric_from_gram(const SpectralSplit& sp) {
    MetricFamily g(static_cast<std::size_t>(sp.n_points));
    for (int j = 0; j < sp.n_points; ++j)
        g[static_cast<std::size_t>(j)] = sp.gram.block(j * sp.dim, j * sp.dim, sp.dim, sp.dim) * sp.n_points;
    return g;
}

Vec node_point(const LoopGrid& x, int j) {
    Vec q = x.values.row(j).transpose();
    q(0) += x.t(j);
    return q;
}

}  // namespace

// ---------------------------------------------------------------- ambient system

RadialHamiltonian::RadialHamiltonian(std::vector<RadialProfile> factors, std::vector<double> levels)
    : factors_(std::move(factors)), levels_(std::move(levels)) {
    if (factors_.empty()) throw PreconditionError("need at least one factor");
    if (levels_.empty()) {
        for (const auto& h : factors_) {
            if (h.quadratic != 0.0)
                levels_.push_back((kTwoPi - h.linear) / (2.0 * h.quadratic));
            else
                levels_.push_back(1.0);
        }
    }
    if (levels_.size() != factors_.size()) throw PreconditionError("one level per factor");
    for (double l : levels_)
        if (!(l > 0.0)) throw PreconditionError("orbit level must be positive");
}

double RadialHamiltonian::hamiltonian(const Vec& p) const {
    double H = 0.0;
    for (std::size_t i = 0; i < factors_.size(); ++i)
        H += factors_[i].value(0.5 * (p(2 * i) * p(2 * i) + p(2 * i + 1) * p(2 * i + 1)));
    return H;
}

Vec RadialHamiltonian::gradient(const Vec& p) const {
    Vec g(p.size());
    for (std::size_t i = 0; i < factors_.size(); ++i) {
        const double w = factors_[i].slope(0.5 * (p(2 * i) * p(2 * i) + p(2 * i + 1) * p(2 * i + 1)));
        g(2 * i) = w * p(2 * i);
        g(2 * i + 1) = w * p(2 * i + 1);
    }
    return g;
}

Mat RadialHamiltonian::omega() const {
    Mat W = Mat::Zero(dim(), dim());
    for (int i = 0; i < orbit_dim(); ++i) {
        W(2 * i, 2 * i + 1) = 1.0;
        W(2 * i + 1, 2 * i) = -1.0;
    }
    return W;
}

Mat RadialHamiltonian::complex_structure() const { return -omega(); }

Vec RadialHamiltonian::flow(double time, const Vec& p, int steps) const {
    const double h = time / steps;
    Vec y = p;
    for (int k = 0; k < steps; ++k) {
        const Vec k1 = vector_field<double>(y);
        const Vec k2 = vector_field<double>(Vec(y + 0.5 * h * k1));
        const Vec k3 = vector_field<double>(Vec(y + 0.5 * h * k2));
        const Vec k4 = vector_field<double>(Vec(y + h * k3));
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return y;
}

std::vector<Vec> RadialHamiltonian::orbit_samples(int per_factor) const {
    const int n = orbit_dim();
    std::vector<Vec> out;
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    while (true) {
        Vec p(dim());
        for (int i = 0; i < n; ++i) {
            const double r = std::sqrt(2.0 * levels_[static_cast<std::size_t>(i)]);
            // offset so that factors are not in phase
            const double a = kTwoPi * (idx[static_cast<std::size_t>(i)] + 0.25 * i) / per_factor;
            p(2 * i) = r * std::cos(a);
            p(2 * i + 1) = r * std::sin(a);
        }
        out.push_back(p);
        int i = 0;
        while (i < n && ++idx[static_cast<std::size_t>(i)] == per_factor) idx[static_cast<std::size_t>(i++)] = 0;
        if (i == n) break;
    }
    return out;
}

Mat monodromy(const RadialHamiltonian& system, const Vec& p, double fd_step, int steps) {
    const int m = system.dim();
    Mat Mo(m, m);
    for (int c = 0; c < m; ++c) {
        Vec a = p, b = p;
        a(c) += fd_step;
        b(c) -= fd_step;
        Mo.col(c) = (system.flow(1.0, a, steps) - system.flow(1.0, b, steps)) / (2.0 * fd_step);
    }
    return Mo;
}

MonodromyReport mb_condition_check(const RadialHamiltonian& system, const std::vector<Vec>& samples, double fd_step,
                                   double tol, int steps) {
    MonodromyReport rep;
    rep.expected_dim = system.orbit_dim();
    rep.pass = !samples.empty();
    for (const Vec& p : samples) {
        const double err = (system.flow(1.0, p, steps) - p).norm();
        if (err > 1e-6) throw PreconditionError("sample does not lie on a 1-periodic orbit");
        rep.return_errors.push_back(err);
        const Mat Mo = monodromy(system, p, fd_step, steps);
        const Eigen::JacobiSVD<Mat> svd(Mo - Mat::Identity(Mo.rows(), Mo.cols()));
        const int nullity = static_cast<int>((svd.singularValues().array() < tol).count());
        rep.fixed_dims.push_back(nullity);
        if (nullity != rep.expected_dim) rep.pass = false;
    }
    return rep;
}

// ---------------------------------------------------------------- chart model

void FloerModel::coefficients(const Vec& q, Mat& R, Mat& S) const {
    const Mat J = complex_structure(0.0, q);
    const int d = orbit_dim();
    Mat Sz = Mat::Zero(dim(), dim());
    Sz.rightCols(dim() - d) = defect_factor(0.0, q);
    R = -J;
    S = -J * Sz;
}

RadialFloerModel::RadialFloerModel(RadialProfile h, double level, bool zero_defect)
    : h_(h), level_(level), zero_defect_(zero_defect) {
    if (!(level > 0.0)) throw PreconditionError("orbit level must be positive");
    if (std::abs(h_.slope(level_) - kTwoPi) > 1e-12)
        throw PreconditionError("orbits at the chosen level are not 1-periodic");
}

bool RadialFloerModel::in_chart(const Vec& q) const {
    return std::isfinite(q(0)) && std::abs(q(1)) <= chart_radius && level_ + q(1) > 0.0;
}

template <class T>
MatT<T> RadialFloerModel::j_matrix(const T& z) const {
    const T rho = z + level_;
    MatT<T> J(2, 2);
    J(0, 0) = T(0.0);
    J(0, 1) = T(1.0) / (4.0 * kPi * rho);
    J(1, 0) = -4.0 * kPi * rho;
    J(1, 1) = T(0.0);
    return J;
}

// int_0^1 dF/dz(level + r z) dr with F = (1 - h'(rho)/2pi, 0)
template <class T>
MatT<T> RadialFloerModel::defect_matrix(const T& z) const {
    MatT<T> S(2, 1);
    S(0, 0) = T(0.0);
    S(1, 0) = T(0.0);
    if (zero_defect_) return S;
    T acc(0.0);
    for (const auto& [r, w] : loopfield::gauss_legendre_unit()) acc += w * h_.curvature(T(r * z + level_));
    S(0, 0) = -acc / kTwoPi;
    return S;
}

Mat RadialFloerModel::complex_structure(double, const Vec& q) const { return j_matrix<double>(q(1)); }

Mat RadialFloerModel::defect_factor(double, const Vec& q) const { return defect_matrix<double>(q(1)); }

Mat RadialFloerModel::chart_omega() const {
    Mat W(2, 2);
    W << 0.0, -kTwoPi, kTwoPi, 0.0;
    return W;
}

Mat RadialFloerModel::metric(double, const Vec& q) const { return chart_omega() * j_matrix<double>(q(1)); }

void RadialFloerModel::coefficients(const VecT<Jet3>& q, MatT<Jet3>& R, MatT<Jet3>& S) const {
    const MatT<Jet3> J = j_matrix<Jet3>(q(1));
    const MatT<Jet3> def = defect_matrix<Jet3>(q(1));
    R = -J;
    S = MatT<Jet3>::Zero(2, 2);
    S.col(1) = -(J * def);
}

Vec RadialFloerModel::chart_inverse(const Vec& q) const {
    const double r = std::sqrt(2.0 * (level_ + q(1)));
    Vec p(2);
    p << r * std::cos(kTwoPi * q(0)), r * std::sin(kTwoPi * q(0));
    return p;
}

Vec RadialFloerModel::chart_forward(const Vec& p) const {
    Vec q(2);
    q << std::atan2(p(1), p(0)) / kTwoPi, 0.5 * p.squaredNorm() - level_;
    return q;
}

Vec RadialFloerModel::chart_vector_field(const Vec& q) const {
    Vec X(2);
    X << h_.slope(level_ + q(1)) / kTwoPi, 0.0;
    return X;
}

Vec RadialFloerModel::defect(const Vec& q) const { return Vec::Unit(2, 0) - chart_vector_field(q); }

// ---------------------------------------------------------------- shifts and operators

LoopGrid shift_loops(const LoopGrid& x, int sign) {
    if (sign != 1 && sign != -1) throw PreconditionError("shift sign must be +1 or -1");
    LoopGrid y = x;
    for (int j = 0; j < x.n_points; ++j) y.values(j, 0) += sign * x.t(j);
    return y;
}

namespace {

void check_in_chart(const FloerModel& model, const LoopGrid& x) {
    for (int j = 0; j < x.n_points; ++j)
        if (!model.in_chart(node_point(x, j))) throw DomainError("loop leaves the tubular chart");
}

// Taylor coefficients 0..3 of the coefficient pair along x + eps V.
std::array<CoefficientPair, 4> coefficient_series(const FloerModel& model, const LoopGrid& x, const Vec& V) {
    const int N = x.n_points, dim = x.dim;
    std::array<CoefficientPair, 4> out;
    for (auto& c : out) {
        c.R.assign(static_cast<std::size_t>(N), Mat(dim, dim));
        c.S.assign(static_cast<std::size_t>(N), Mat(dim, dim));
    }
    VecT<Jet3> q(dim);
    MatT<Jet3> R, S;
    for (int j = 0; j < N; ++j) {
        const Vec p = node_point(x, j);
        if (!model.in_chart(p)) throw DomainError("loop leaves the tubular chart");
        for (int c = 0; c < dim; ++c) q(c) = Jet3::variable(p(c), V(j * dim + c));
        model.coefficients(q, R, S);
        for (int k = 0; k <= 3; ++k)
            for (int a = 0; a < dim; ++a)
                for (int b = 0; b < dim; ++b) {
                    out[static_cast<std::size_t>(k)].R[static_cast<std::size_t>(j)](a, b) = R(a, b).c[static_cast<std::size_t>(k)];
                    out[static_cast<std::size_t>(k)].S[static_cast<std::size_t>(j)](a, b) = S(a, b).c[static_cast<std::size_t>(k)];
                }
    }
    return out;
}

CoefficientPair coefficient_values(const FloerModel& model, const LoopGrid& x) {
    CoefficientPair c;
    for (int j = 0; j < x.n_points; ++j) {
        const Vec p = node_point(x, j);
        if (!model.in_chart(p)) throw DomainError("loop leaves the tubular chart");
        Mat R, S;
        model.coefficients(p, R, S);
        c.R.push_back(R);
        c.S.push_back(S);
    }
    return c;
}

CoefficientPair combine(const std::vector<std::pair<double, CoefficientPair>>& terms) {
    CoefficientPair out = terms.front().second;
    for (std::size_t j = 0; j < out.R.size(); ++j) {
        out.R[j].setZero();
        out.S[j].setZero();
        for (const auto& [w, c] : terms) {
            out.R[j] += w * c.R[j];
            out.S[j] += w * c.S[j];
        }
    }
    return out;
}

LoopGrid displaced(const LoopGrid& x, const Vec& V, double h) {
    return LoopGrid::unflatten(Vec(x.flatten() + h * V), x.n_points, x.dim);
}

// central differences of the coefficients along V
CoefficientPair finite_difference_pair(const FloerModel& model, const LoopGrid& x, const Vec& V, int k, double h) {
    auto at = [&](double e) { return coefficient_values(model, displaced(x, V, e)); };
    switch (k) {
        case 1:
            return combine({{0.5 / h, at(h)}, {-0.5 / h, at(-h)}});
        case 2:
            return combine({{1.0 / (h * h), at(h)}, {-2.0 / (h * h), at(0.0)}, {1.0 / (h * h), at(-h)}});
        default: {
            const double c = 0.5 / (h * h * h);
            return combine({{c, at(2 * h)}, {-2 * c, at(h)}, {2 * c, at(-h)}, {-c, at(-2 * h)}});
        }
    }
}

}  // namespace

Mat operator_A(const FloerModel& model, const LoopGrid& x, Scheme scheme) {
    return loopfield::assemble(coefficient_values(model, x), scheme).matrix;
}

Vec apply_A(const FloerModel& model, const LoopGrid& x, const Vec& X, Scheme scheme) {
    const int N = x.n_points, dim = x.dim;
    const LoopGrid Xg = LoopGrid::unflatten(X, N, dim);
    const Mat dX = loopfield::derivative_1d(N, scheme) * Xg.values;
    Vec out(N * dim);
    Mat R, S;
    for (int j = 0; j < N; ++j) {
        const Vec p = node_point(x, j);
        if (!model.in_chart(p)) throw DomainError("loop leaves the tubular chart");
        model.coefficients(p, R, S);
        out.segment(j * dim, dim) = R * dX.row(j).transpose() + S * Xg.values.row(j).transpose();
    }
    return out;
}

Mat derivative_A(const FloerModel& model, const LoopGrid& x, const Vec& V, int k, const ProbeOptions& opt) {
    if (k < 1 || k > 3) throw PreconditionError("derivative order must be 1, 2 or 3");
    const int n = x.n_points * x.dim;
    const double vmax = sup_norm(V);
    if (vmax == 0.0) return Mat::Zero(n, n);
    if (opt.mode == ProbeMode::Taylor) {
        const auto series = coefficient_series(model, x, V);
        const double fact = k == 1 ? 1.0 : (k == 2 ? 2.0 : 6.0);
        return fact * loopfield::assemble(series[static_cast<std::size_t>(k)], opt.scheme).matrix;
    }
    const double scale = 1.0 + sup_norm(x.flatten());
    if (k < 3) {
        const double h = (k == 1 ? opt.step : opt.step2) * scale / vmax;
        return loopfield::assemble(finite_difference_pair(model, x, V, k, h), opt.scheme).matrix;
    }
    const double h = opt.step3 * scale / vmax;
    const Mat coarse = loopfield::assemble(finite_difference_pair(model, x, V, 3, h), opt.scheme).matrix;
    const Mat fine = loopfield::assemble(finite_difference_pair(model, x, V, 3, 0.5 * h), opt.scheme).matrix;
    return (4.0 * fine - coarse) / 3.0;
}

Mat second_derivative_A(const FloerModel& model, const LoopGrid& x, const Vec& U, const Vec& V,
                        const ProbeOptions& opt) {
    return 0.25 * (derivative_A(model, x, U + V, 2, opt) - derivative_A(model, x, U - V, 2, opt));
}

Mat build_B(const FloerModel& model, const LoopGrid& x, const ProbeOptions& opt) {
    const Vec xv = x.flatten();
    const Mat A = operator_A(model, x, opt.scheme);
    const Vec w = A * xv;
    const Mat dAw = derivative_A(model, x, w, 1, opt);
    return derivative_A(model, x, w, 2, opt) + derivative_A(model, x, dAw * xv, 1, opt) +
           derivative_A(model, x, A * w, 1, opt);
}

Mat build_C(const FloerModel& model, const LoopGrid& x, const ProbeOptions& opt) {
    const Vec xv = x.flatten();
    const Mat A = operator_A(model, x, opt.scheme);
    const Vec w = A * xv;
    const Vec a2x = A * w;
    const Vec a3x = A * a2x;
    auto dA = [&](const Vec& V) { return derivative_A(model, x, V, 1, opt); };
    const Mat dAw = dA(w);
    const Vec u1 = dAw * xv;
    const Mat d2ww = derivative_A(model, x, w, 2, opt);

    Mat C = derivative_A(model, x, w, 3, opt);
    C += 3.0 * second_derivative_A(model, x, w, a2x, opt);
    C += 3.0 * second_derivative_A(model, x, w, u1, opt);
    C += 2.0 * dA(dAw * w);
    C += dA(dA(u1) * xv);
    C += dA(dA(a2x) * xv);
    C += dA(d2ww * xv);
    C += dA(A * u1);
    C += dA(a3x);
    return C;
}

HatOperator build_Ahat(const FloerModel& model, const LoopGrid& x, const SpectralSplit& split,
                       const ProbeOptions& opt) {
    const int n = x.n_points * x.dim;
    const Mat A = operator_A(model, x, opt.scheme);
    const Vec w = A * x.flatten();
    const Mat dAw = derivative_A(model, x, w, 1, opt);
    HatOperator out;
    out.matrix = Mat::Zero(3 * n, 3 * n);
    for (int b = 0; b < 3; ++b) out.matrix.block(b * n, b * n, n, n) = A;
    out.matrix.block(n, 0, n, n) = dAw;
    out.matrix.block(2 * n, n, n, n) = 2.0 * dAw;
    out.matrix.block(2 * n, 0, n, n) = build_B(model, x, opt);
    out.Q_hat = Mat::Zero(3 * n, 3 * n);
    out.P_hat = Mat::Zero(3 * n, 3 * n);
    for (int b = 0; b < 3; ++b) {
        out.Q_hat.block(b * n, b * n, n, n) = split.Q;
        out.P_hat.block(b * n, b * n, n, n) = split.P;
    }
    return out;
}

LoopTriple build_E(const FloerModel& model, const LoopGrid& x, const ProbeOptions& opt) {
    const Vec xv = x.flatten();
    const Mat A = operator_A(model, x, opt.scheme);
    const Vec w = A * xv;
    LoopTriple E;
    E.first = xv;
    E.second = w;
    E.third = derivative_A(model, x, w, 1, opt) * xv + A * w;
    return E;
}

CorrectionOperators build_D_C1_C2(const FloerModel& model, const LoopGrid& x, const SpectralSplit& split) {
    check_in_chart(model, x);
    const int N = x.n_points, dim = x.dim, d = model.orbit_dim();
    std::vector<Mat> c1(static_cast<std::size_t>(N)), c2(static_cast<std::size_t>(N));
    for (int j = 0; j < N; ++j) {
        Vec q0 = Vec::Zero(dim);
        q0(0) = x.t(j);
        const Vec qx = node_point(x, j);
        const Mat J0 = model.complex_structure(x.t(j), q0);
        const Mat Jx = model.complex_structure(x.t(j), qx);
        c2[static_cast<std::size_t>(j)] = (J0 - Jx) * Jx;
        Mat b = Mat::Zero(dim, dim);
        b.rightCols(dim - d) = J0 * (model.defect_factor(x.t(j), q0) - model.defect_factor(x.t(j), qx));
        c1[static_cast<std::size_t>(j)] = b;
    }
    CorrectionOperators out;
    out.C1 = split.P * block_diagonal(c1);
    out.C2 = split.P * block_diagonal(c2);
    out.D = Mat::Identity(N * dim, N * dim) - out.C2;
    return out;
}

BaseLoop base_loop(const FloerModel& model, int n_points, Scheme scheme) {
    BaseLoop b;
    b.x0 = LoopGrid(n_points, model.dim());
    b.A0 = loopfield::build_operator_A(b.x0, model, scheme);
    b.g = loopfield::metric_along(b.x0, model);
    b.split = loopfield::spectral_split(b.A0, b.g);
    return b;
}

// ---------------------------------------------------------------- cylinders

std::vector<double> uniform_s_grid(double s_max, int intervals) {
    if (intervals < 2 || !(s_max > 0.0)) throw PreconditionError("need a positive length and at least 2 intervals");
    std::vector<double> s(static_cast<std::size_t>(intervals) + 1);
    for (int m = 0; m <= intervals; ++m) s[static_cast<std::size_t>(m)] = s_max * m / intervals;
    return s;
}

CylinderGrid linear_stable_evolution(const SpectralSplit& split, const LoopGrid& Z0, const std::vector<double>& s_grid) {
    const Mat& G = split.gram;
    const Vec z = Z0.flatten();
    const Vec kernel_part = split.P * z;
    const Vec range_part = split.Q * z;
    const Vec coeff = split.eigenvectors.transpose() * (G * range_part);

    Vec positive = Vec::Zero(z.size());
    for (int i = 0; i < coeff.size(); ++i)
        if (split.eigenvalues(i) > split.kernel_tol) positive += coeff(i) * split.eigenvectors.col(i);

    CylinderGrid cyl;
    cyl.provenance = Provenance::Spectral;
    cyl.filtered_mass = std::sqrt(positive.dot(G * positive));
    if (cyl.filtered_mass > 1e-8) cyl.warning = "initial loop had unstable modes; they were filtered out";
    cyl.s = s_grid;
    for (double s : s_grid) {
        Vec v = kernel_part;
        for (int i = 0; i < coeff.size(); ++i)
            if (split.eigenvalues(i) < -split.kernel_tol)
                v += std::exp(split.eigenvalues(i) * s) * coeff(i) * split.eigenvectors.col(i);
        cyl.slices.push_back(LoopGrid::unflatten(v, Z0.n_points, Z0.dim));
    }
    return cyl;
}

double floer_residual(const FloerModel& model, const CylinderGrid& Z, Scheme scheme) {
    double worst = 0.0;
    for (std::size_t m = 0; m + 1 < Z.slices.size(); ++m) {
        const double ds = Z.s[m + 1] - Z.s[m];
        const Vec a = Z.slices[m].flatten(), b = Z.slices[m + 1].flatten();
        const Vec y = 0.5 * (a + b);
        const LoopGrid Y = LoopGrid::unflatten(y, Z.slices[m].n_points, Z.slices[m].dim);
        worst = std::max(worst, sup_norm(Vec((b - a) / ds - apply_A(model, Y, y, scheme))));
    }
    return worst;
}

namespace {

struct Linearization {
    Vec value;  // A_Y Y
    Mat jac;    // derivative of Y -> A_Y Y
};

Linearization linearize(const FloerModel& model, const LoopGrid& Y, Scheme scheme) {
    const int N = Y.n_points, dim = Y.dim, n = N * dim;
    const Mat dY = loopfield::derivative_1d(N, scheme) * Y.values;
    CoefficientPair c;
    std::vector<Mat> blocks;
    VecT<Jet3> q(dim);
    MatT<Jet3> R, S;
    Linearization L;
    L.value.resize(n);
    for (int j = 0; j < N; ++j) {
        const Vec p = node_point(Y, j);
        if (!model.in_chart(p)) throw DomainError("loop leaves the tubular chart");
        Mat M(dim, dim);
        Mat R0(dim, dim), S0(dim, dim);
        for (int e = 0; e < dim; ++e) {
            for (int a = 0; a < dim; ++a) q(a) = Jet3::variable(p(a), a == e ? 1.0 : 0.0);
            model.coefficients(q, R, S);
            Mat dR(dim, dim), dS(dim, dim);
            for (int a = 0; a < dim; ++a)
                for (int b = 0; b < dim; ++b) {
                    R0(a, b) = R(a, b).c[0];
                    S0(a, b) = S(a, b).c[0];
                    dR(a, b) = R(a, b).c[1];
                    dS(a, b) = S(a, b).c[1];
                }
            M.col(e) = dR * dY.row(j).transpose() + dS * Y.values.row(j).transpose();
        }
        c.R.push_back(R0);
        c.S.push_back(S0);
        blocks.push_back(M);
        L.value.segment(j * dim, dim) = R0 * dY.row(j).transpose() + S0 * Y.values.row(j).transpose();
    }
    L.jac = loopfield::assemble(c, scheme).matrix + block_diagonal(blocks);
    return L;
}

class BandSystem {
public:
    BandSystem(int n, int kl, int ku) : n_(n), kl_(kl), ku_(ku), ld_(2 * kl + ku + 1),
                                        ab_(static_cast<std::size_t>(ld_) * static_cast<std::size_t>(n), 0.0) {}
    void add(int i, int j, double v) {
        ab_[static_cast<std::size_t>(kl_ + ku_ + i - j) + static_cast<std::size_t>(j) * static_cast<std::size_t>(ld_)] += v;
    }
    Vec solve(const Vec& rhs) {
        std::vector<lapack_int> ipiv(static_cast<std::size_t>(n_));
        Vec b = rhs;
        const lapack_int info = LAPACKE_dgbsv(LAPACK_COL_MAJOR, n_, kl_, ku_, 1, ab_.data(), ld_, ipiv.data(), b.data(), n_);
        if (info != 0) throw DivergenceError("singular Newton matrix");
        return b;
    }

private:
    int n_, kl_, ku_, ld_;
    std::vector<double> ab_;
};

}  // namespace

CylinderGrid nonlinear_floer_solve(const FloerModel& model, const BaseLoop& base, const LoopGrid& Z_initial,
                                   double s_max, int M, const NewtonOptions& opt) {
    const SpectralSplit& sp = base.split;
    const int N = Z_initial.n_points, dim = Z_initial.dim, n = N * dim;
    if (N != sp.n_points || dim != sp.dim) throw PreconditionError("initial loop and base loop differ in size");
    const Vec zi = Z_initial.flatten();
    const double amp = sup_norm(Vec(sp.Q * zi));
    if (amp >= model.chart_radius) throw DomainError("initial loop reaches the chart boundary");
    if (amp > model.newton_radius) throw PreconditionError("initial loop is outside the Newton radius");
    check_in_chart(model, Z_initial);

    const Mat& G = sp.gram;
    const Mat neg = sp.negative_modes(), pos = sp.positive_modes();
    const int nk = static_cast<int>(sp.kernel_basis.cols());
    const int nL = nk + static_cast<int>(neg.cols()), nR = static_cast<int>(pos.cols());
    if (nL + nR != n) throw PreconditionError("spectrum has unresolved near-zero modes");
    Mat left(nL, n);
    left.topRows(nk) = sp.kernel_basis.transpose() * G;
    left.bottomRows(nL - nk) = neg.transpose() * G;
    const Mat right = pos.transpose() * G;

    const std::vector<double> s = uniform_s_grid(s_max, M);
    const double ds = s_max / M;
    const int total = n * (M + 1);

    // start from the frozen linear solution
    Vec Z(total);
    {
        const Vec kpart = sp.P * zi;
        const Vec c = neg.transpose() * (G * zi);
        Vec lam(neg.cols());
        for (int i = 0, k = 0; i < sp.eigenvalues.size(); ++i)
            if (sp.eigenvalues(i) < -sp.kernel_tol) lam(k++) = sp.eigenvalues(i);
        for (int m = 0; m <= M; ++m)
            Z.segment(m * n, n) = kpart + neg * (lam.array() * s[static_cast<std::size_t>(m)]).exp().matrix().cwiseProduct(c);
    }

    auto slice = [&](const Vec& v, int m) { return LoopGrid::unflatten(v.segment(m * n, n), N, dim); };
    auto residual = [&](const Vec& v, std::vector<Linearization>* lin) {
        Vec r(total);
        r.head(nL) = left * (v.head(n) - zi);
        for (int m = 0; m < M; ++m) {
            const Vec y = 0.5 * (v.segment(m * n, n) + v.segment((m + 1) * n, n));
            const LoopGrid Y = LoopGrid::unflatten(y, N, dim);
            Vec Ay;
            if (lin) {
                (*lin)[static_cast<std::size_t>(m)] = linearize(model, Y, opt.scheme);
                Ay = (*lin)[static_cast<std::size_t>(m)].value;
            } else {
                Ay = apply_A(model, Y, y, opt.scheme);
            }
            r.segment(nL + m * n, n) = (v.segment((m + 1) * n, n) - v.segment(m * n, n)) / ds - Ay;
        }
        r.tail(nR) = right * v.segment(M * n, n);
        return r;
    };

    const int kl = nL + n - 1, ku = 2 * n - 1 - nL;
    CylinderGrid cyl;
    cyl.provenance = Provenance::Newton;
    cyl.s = s;
    std::vector<Linearization> lin(static_cast<std::size_t>(M));
    Vec r = residual(Z, &lin);
    double norm = sup_norm(r);
    int it = 0;
    for (; it < opt.max_iterations && norm > opt.tol; ++it) {
        BandSystem band(total, kl, ku);
        for (int i = 0; i < nL; ++i)
            for (int k = 0; k < n; ++k) band.add(i, k, left(i, k));
        for (int m = 0; m < M; ++m) {
            const Mat& Jy = lin[static_cast<std::size_t>(m)].jac;
            const int row0 = nL + m * n;
            for (int i = 0; i < n; ++i)
                for (int k = 0; k < n; ++k) {
                    const double half = -0.5 * Jy(i, k);
                    const double diag = i == k ? 1.0 / ds : 0.0;
                    band.add(row0 + i, m * n + k, half - diag);
                    band.add(row0 + i, (m + 1) * n + k, half + diag);
                }
        }
        for (int i = 0; i < nR; ++i)
            for (int k = 0; k < n; ++k) band.add(nL + M * n + i, M * n + k, right(i, k));
        const Vec step = band.solve(r);

        bool accepted = false;
        double alpha = 1.0;
        for (int h = 0; h <= opt.max_halvings; ++h, alpha *= 0.5) {
            const Vec trial = Z - alpha * step;
            try {
                const Vec rt = residual(trial, nullptr);
                const double nt = sup_norm(rt);
                if (nt < norm) {
                    Z = trial;
                    accepted = true;
                    break;
                }
            } catch (const DomainError&) {
                // the trial step left the chart; shorten it
            }
        }
        if (!accepted) throw DivergenceError("Newton step failed to reduce the residual");
        r = residual(Z, &lin);
        norm = sup_norm(r);
    }
    if (norm > opt.tol) throw DivergenceError("Newton iteration did not converge");
    for (int m = 0; m <= M; ++m) {
        cyl.slices.push_back(slice(Z, m));
        check_in_chart(model, cyl.slices.back());
    }
    cyl.iterations = it;
    cyl.residual = norm;
    return cyl;
}

CylinderGrid nonlinear_floer_solve(const FloerModel& model, const LoopGrid& Z_initial, double s_max, int M,
                                   const NewtonOptions& opt) {
    return nonlinear_floer_solve(model, base_loop(model, Z_initial.n_points, opt.scheme), Z_initial, s_max, M, opt);
}

IdentityResidual check_dsB_equals_C(const FloerModel& model, const CylinderGrid& Z, const MetricFamily& g,
                                    const std::vector<std::size_t>& slices, double floer_tol,
                                    const ProbeOptions& opt) {
    if (Z.slices.size() < 3) throw PreconditionError("cylinder needs at least three slices");
    const double res = floer_residual(model, Z, opt.scheme);
    if (res > floer_tol) throw PreconditionError("cylinder does not solve the discrete Floer equation");
    const Mat H1 = loopfield::gram_matrix(g, 1, opt.scheme);
    const Mat L2 = loopfield::gram_matrix(g, 0, opt.scheme);
    const double ds = Z.ds();
    IdentityResidual out;
    for (std::size_t m : slices) {
        if (m == 0 || m + 1 >= Z.slices.size()) throw PreconditionError("slice index must be interior");
        const Mat dB = (build_B(model, Z.slices[m + 1], opt) - build_B(model, Z.slices[m - 1], opt)) / (2.0 * ds);
        const Mat C = build_C(model, Z.slices[m], opt);
        out.slices.push_back(m);
        out.residual.push_back(loopfield::operator_norm(dB - C, H1, L2));
        out.c_norm.push_back(loopfield::operator_norm(C, H1, L2));
        out.max_residual = std::max(out.max_residual, out.residual.back());
    }
    out.constant = out.max_residual / (ds * ds);
    return out;
}

// ---------------------------------------------------------------- decay

DecayReport measure_decay(const CylinderGrid& Z, const SpectralSplit& split, const FloerModel& model,
                          const DecayOptions& opt) {
    if (Z.slices.size() < 3) throw PreconditionError("cylinder needs at least three slices");
    const Mat& G = split.gram;
    const Mat G2 = loopfield::gram_matrix(metric_from_gram(split), 2);
    const int N = split.n_points;
    const std::size_t count = Z.slices.size();

    DecayReport rep;
    rep.s = Z.s;
    rep.c0 = split.c0;
    rep.rate_floor = opt.rate_fraction * std::sqrt(split.c0);

    std::vector<Mat> ambient(count);
    for (std::size_t m = 0; m < count; ++m) {
        const Vec qz = split.Q * Z.slices[m].flatten();
        rep.l2.push_back(std::sqrt(std::max(0.0, qz.dot(G * qz))));
        rep.h2.push_back(std::sqrt(std::max(0.0, qz.dot(G2 * qz))));
        rep.dist.push_back(sup_norm(qz));
        Mat u(N, model.dim());
        for (int j = 0; j < N; ++j) u.row(j) = model.chart_inverse(node_point(Z.slices[m], j)).transpose();
        ambient[m] = u;
    }
    const double ds = Z.ds();
    for (std::size_t m = 0; m < count; ++m) {
        Mat du;
        if (m == 0)
            du = (-3.0 * ambient[0] + 4.0 * ambient[1] - ambient[2]) / (2.0 * ds);
        else if (m + 1 == count)
            du = (3.0 * ambient[m] - 4.0 * ambient[m - 1] + ambient[m - 2]) / (2.0 * ds);
        else
            du = (ambient[m + 1] - ambient[m - 1]) / (2.0 * ds);
        rep.dsu.push_back(du.rowwise().norm().maxCoeff());
    }

    auto h2_step = [&](std::size_t m) {
        const Vec d = Z.slices[m + 1].flatten() - Z.slices[m].flatten();
        return std::sqrt(std::max(0.0, d.dot(G2 * d)));
    };
    const double head = h2_step(0);
    const auto tail_len = std::max<std::size_t>(1, static_cast<std::size_t>(opt.tail_fraction * (count - 1)));
    double tail = 0.0;
    for (std::size_t m = count - 1 - tail_len; m + 1 < count; ++m) tail = std::max(tail, h2_step(m));
    rep.cauchy_tail = head > 0.0 ? tail / head : 0.0;
    rep.converging = tail <= opt.tail_ratio * head || tail <= opt.stationary_tol;

    rep.xi = rep.l2.front();
    const double B = rep.rate_floor;
    rep.l2_bound_holds = true;
    for (std::size_t m = 0; m < count; ++m) {
        const double env = rep.xi * std::exp(-B * (rep.s[m] - rep.s[0]));
        if (rep.l2[m] > env * (1.0 + 1e-9) + 1e-14) rep.l2_bound_holds = false;
        rep.envelope_h2 = std::max(rep.envelope_h2, rep.h2[m] * std::exp(B * (rep.s[m] - rep.s[0])));
    }

    if (*std::max_element(rep.l2.begin(), rep.l2.end()) <= opt.stationary_tol) {
        rep.rates_hold = true;
        rep.pass = rep.l2_bound_holds && rep.converging;
        return rep;
    }
    auto fit = [&](const std::vector<double>& y) {
        return morsebott::fit_log_linear(rep.s, y, std::max(opt.abs_floor, opt.rel_floor * y.front()));
    };
    rep.fit_l2 = fit(rep.l2);
    rep.fit_h2 = fit(rep.h2);
    rep.fit_dsu = fit(rep.dsu);
    rep.fitted = true;
    rep.rates_hold = -rep.fit_l2.slope >= B && -rep.fit_h2.slope >= B && -rep.fit_dsu.slope >= B;
    rep.pass = rep.rates_hold && rep.l2_bound_holds && rep.converging;
    return rep;
}

MaxPrincipleReport maximum_principle_check(const std::vector<double>& s, const std::vector<double>& f, double delta,
                                           double tol) {
    if (s.size() != f.size()) throw PreconditionError("samples and grid differ in length");
    if (s.size() < 5) throw PreconditionError("need at least five samples");
    if (!(f.back() <= 1e-3 * f.front())) throw HypothesisError("tail does not decay; the comparison argument needs f to tend to zero");
    MaxPrincipleReport rep;
    rep.min_margin = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
        const double h1 = s[i] - s[i - 1], h2 = s[i + 1] - s[i];
        const double f2 = 2.0 * (h1 * f[i + 1] - (h1 + h2) * f[i] + h2 * f[i - 1]) / (h1 * h2 * (h1 + h2));
        const double size = std::max(std::abs(f[i]), std::numeric_limits<double>::min());
        rep.min_margin = std::min(rep.min_margin, (f2 - delta * delta * f[i]) / (delta * delta * size));
    }
    rep.inequality_holds = rep.min_margin >= -tol;
    rep.strict = rep.min_margin > tol;
    rep.max_excess = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.size(); ++i) {
        const double bound = f.front() * std::exp(-delta * (s[i] - s.front()));
        rep.max_excess = std::max(rep.max_excess, (f[i] - bound) / std::abs(f.front()));
    }
    rep.conclusion_holds = rep.max_excess <= tol;
    return rep;
}

ActionProfile reeb_action_profile(const std::function<double(double)>& h, const std::vector<double>& r_grid,
                                  double fd_step) {
    ActionProfile out;
    for (double r : r_grid) {
        const double e = fd_step * (1.0 + std::abs(r));
        const double hp = (h(r + e) - h(r - e)) / (2.0 * e);
        const double hpp = (h(r + e) - 2.0 * h(r) + h(r - e)) / (e * e);
        out.rows.push_back({r, r * hp - h(r), r * hpp, hpp});
    }
    out.monotone_where_convex = true;
    for (std::size_t i = 0; i + 1 < out.rows.size(); ++i) {
        const auto& a = out.rows[i];
        const auto& b = out.rows[i + 1];
        if (a.curvature > 1e-6 && b.curvature > 1e-6 && b.r > a.r && !(b.action > a.action))
            out.monotone_where_convex = false;
    }
    return out;
}

std::vector<double> periodic_orbit_actions(const RadialProfile& h, int k_max) {
    if (h.quadratic <= 0.0) throw PreconditionError("needs a strictly convex profile");
    std::vector<double> out;
    for (int k = 0; k <= k_max; ++k) {
        const double rho = (kTwoPi * k - h.linear) / (2.0 * h.quadratic);
        if (rho < 0.0) continue;
        out.push_back(rho * h.slope(rho) - h.value(rho));
    }
    return out;
}

double xi_surrogate(const SpectralSplit& split, const LoopGrid& x) {
    const Vec q = split.Q * x.flatten();
    return std::sqrt(std::max(0.0, q.dot(split.gram * q)));
}

LipschitzReport xi_lipschitz_check(const FloerModel& model, const SpectralSplit& split, CounterRng& rng, int pairs,
                                   double amplitude) {
    const int N = split.n_points, dim = split.dim;
    const Mat G2 = loopfield::gram_matrix(metric_from_gram(split), 2);
    auto random_loop = [&]() {
        LoopGrid X(N, dim);
        for (int c = 0; c < dim; ++c)
            for (int k = 0; k <= 3; ++k) {
                const double a = rng.next_normal() * amplitude / (1 + k * k), b = rng.next_normal() * amplitude / (1 + k * k);
                for (int j = 0; j < N; ++j)
                    X.values(j, c) += a * std::cos(kTwoPi * k * X.t(j)) + b * std::sin(kTwoPi * k * X.t(j));
            }
        check_in_chart(model, X);
        return X;
    };
    LipschitzReport rep;
    for (int p = 0; p < pairs; ++p) {
        const LoopGrid x = random_loop(), y = random_loop();
        const Vec d = x.flatten() - y.flatten();
        const double dist = std::sqrt(d.dot(G2 * d));
        if (dist > 0) rep.lipschitz = std::max(rep.lipschitz, std::abs(xi_surrogate(split, x) - xi_surrogate(split, y)) / dist);

        Vec c = Vec::Zero(dim);
        c(0) = rng.next_normal();
        for (int k = 1; k < model.orbit_dim(); ++k) c(k) = rng.next_normal();
        rep.max_on_orbits = std::max(rep.max_on_orbits, xi_surrogate(split, LoopGrid::constant(N, c)));
    }
    rep.pass = std::isfinite(rep.lipschitz) && rep.max_on_orbits <= 1e-12;
    return rep;
}

}  // namespace mfl::floerlab
