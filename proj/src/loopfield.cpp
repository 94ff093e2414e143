#include "mfl/loopfield.hpp"

#include <boost/math/quadrature/gauss.hpp>

#include <cmath>
#include <limits>
#include <numbers>

namespace mfl::loopfield {

Vec LoopGrid::flatten() const {
    Vec v(n_points * dim);
    for (int j = 0; j < n_points; ++j) v.segment(j * dim, dim) = values.row(j).transpose();
    return v;
}

LoopGrid LoopGrid::unflatten(const Vec& v, int n, int dim) {
    if (v.size() != n * dim) throw PreconditionError("flattened loop has the wrong length");
    LoopGrid X(n, dim);
    for (int j = 0; j < n; ++j) X.values.row(j) = v.segment(j * dim, dim).transpose();
    return X;
}

LoopGrid LoopGrid::constant(int n, const Vec& value) {
    LoopGrid X(n, static_cast<int>(value.size()));
    for (int j = 0; j < n; ++j) X.values.row(j) = value.transpose();
    return X;
}

LoopGrid LoopGrid::sample(int n, int dim, const std::function<Vec(double)>& fn) {
    LoopGrid X(n, dim);
    for (int j = 0; j < n; ++j) X.values.row(j) = fn(static_cast<double>(j) / n).transpose();
    return X;
}

LoopGrid LoopOperator::apply(const LoopGrid& X) const {
    return LoopGrid::unflatten(matrix * X.flatten(), X.n_points, X.dim);
}

Mat derivative_1d(int N, Scheme scheme) {
    if (N < 8) throw PreconditionError("need at least 8 nodes");
    Mat D = Mat::Zero(N, N);
    const double h = 1.0 / N;
    if (scheme == Scheme::FourthOrder) {
        for (int j = 0; j < N; ++j) {
            D(j, (j + 1) % N) += 8.0 / (12.0 * h);
            D(j, (j + N - 1) % N) -= 8.0 / (12.0 * h);
            D(j, (j + 2) % N) -= 1.0 / (12.0 * h);
            D(j, (j + N - 2) % N) += 1.0 / (12.0 * h);
        }
        return D;
    }
    // circulant entries pi (-1)^m cot(pi m/N) for even N, pi (-1)^m csc(pi m/N) for odd N;
    // c_{N-m} = -c_m is kept exact
    std::vector<double> c(N, 0.0);
    for (int m = 1; 2 * m < N; ++m) {
        const double a = std::numbers::pi * m / N;
        const double v = (m % 2 == 0 ? 1.0 : -1.0) * std::numbers::pi / (N % 2 == 0 ? std::tan(a) : std::sin(a));
        c[m] = v;
        c[N - m] = -v;
    }
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k) D(j, k) = c[(j - k + N) % N];
    return D;
}

LoopOperator derivative_matrix(int N, int dim, Scheme scheme) {
    const Mat D1 = derivative_1d(N, scheme);
    LoopOperator op;
    op.label = "d/dt";
    op.matrix = Mat::Zero(N * dim, N * dim);
    for (int j = 0; j < N; ++j)
        for (int k = 0; k < N; ++k)
            if (D1(j, k) != 0.0)
                for (int c = 0; c < dim; ++c) op.matrix(j * dim + c, k * dim + c) = D1(j, k);
    return op;
}

MetricFamily constant_metric(int N, const Mat& g) { return MetricFamily(static_cast<std::size_t>(N), g); }

void require_spd(const MetricFamily& g) {
    for (const Mat& m : g) {
        if ((m - m.transpose()).norm() > 1e-12 * (1.0 + m.norm())) throw DomainError("metric is not symmetric");
        Eigen::LLT<Mat> llt(m);
        if (llt.info() != Eigen::Success) throw DomainError("metric is not positive definite");
    }
}

namespace {

Mat block_diagonal(const std::vector<Mat>& blocks) {
    const int n = static_cast<int>(blocks.size());
    const int r = static_cast<int>(blocks[0].rows()), c = static_cast<int>(blocks[0].cols());
    Mat out = Mat::Zero(n * r, n * c);
    for (int j = 0; j < n; ++j) out.block(j * r, j * c, r, c) = blocks[static_cast<std::size_t>(j)];
    return out;
}

std::vector<Mat> differentiate(const std::vector<Mat>& field, const Mat& D1) {
    const int N = static_cast<int>(field.size());
    const int r = static_cast<int>(field[0].rows()), c = static_cast<int>(field[0].cols());
    std::vector<Mat> out(field.size(), Mat::Zero(r, c));
    Vec v(N);
    for (int a = 0; a < r; ++a)
        for (int b = 0; b < c; ++b) {
            for (int j = 0; j < N; ++j) v(j) = field[static_cast<std::size_t>(j)](a, b);
            const Vec dv = D1 * v;
            for (int j = 0; j < N; ++j) out[static_cast<std::size_t>(j)](a, b) = dv(j);
        }
    return out;
}

// With an even node count every real skew-symmetric periodic difference matrix annihilates
// (-1)^j, so the kernel picks up modes that are not constant loops.
bool has_alternating_kernel(const SpectralSplit& sp) {
    for (int i : sp.kernel_index) {
        const LoopGrid X = LoopGrid::unflatten(sp.eigenvectors.col(i), sp.n_points, sp.dim);
        Vec alt = Vec::Zero(sp.dim);
        for (int j = 0; j < sp.n_points; ++j) alt += (j % 2 == 0 ? 1.0 : -1.0) * X.values.row(j).transpose();
        if (alt.norm() > 1e-6 * std::sqrt(static_cast<double>(sp.n_points)) * X.values.norm()) return true;
    }
    return false;
}

}  // namespace

Mat gram_matrix(const MetricFamily& g, int k, Scheme scheme) {
    require_spd(g);
    const int N = static_cast<int>(g.size());
    const int dim = static_cast<int>(g[0].rows());
    const Mat G = block_diagonal(g) / static_cast<double>(N);
    if (k == 0) return G;
    const Mat D = derivative_matrix(N, dim, scheme).matrix;
    Mat out = G;
    Mat Dj = Mat::Identity(N * dim, N * dim);
    for (int j = 1; j <= k; ++j) {
        Dj = D * Dj;
        out += Dj.transpose() * G * Dj;
    }
    return out;
}

double loop_inner_product(const LoopGrid& X, const LoopGrid& Y, const MetricFamily& g, int k, Scheme scheme) {
    if (X.n_points != Y.n_points || X.dim != Y.dim || static_cast<int>(g.size()) != X.n_points)
        throw PreconditionError("loops and metric live on different grids");
    if (k < 0 || k > 2) throw PreconditionError("derivative order must be 0, 1 or 2");
    require_spd(g);
    const int N = X.n_points;
    const Mat D1 = derivative_1d(N, scheme);
    Mat dx = X.values, dy = Y.values;
    double total = 0.0;
    for (int j = 0; j <= k; ++j) {
        if (j > 0) {
            dx = D1 * dx;
            dy = D1 * dy;
        }
        for (int n = 0; n < N; ++n)
            total += dx.row(n) * g[static_cast<std::size_t>(n)] * dy.row(n).transpose();
    }
    return total / N;
}

double operator_norm(const Mat& A, const Mat& from_gram, const Mat& to_gram) {
    const Mat Lf = Eigen::LLT<Mat>(from_gram).matrixL();
    const Mat Lt = Eigen::LLT<Mat>(to_gram).matrixL();
    // || Lt^T A Lf^{-T} ||_2
    const Mat right = Lf.triangularView<Eigen::Lower>().solve(Mat(A.transpose() * Lt)).transpose();
    Eigen::BDCSVD<Mat> svd(right);
    return svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
}

LoopOperator assemble(const CoefficientPair& c, Scheme scheme) {
    const int N = static_cast<int>(c.R.size());
    const int dim = static_cast<int>(c.R[0].rows());
    const Mat D1 = derivative_1d(N, scheme);
    LoopOperator op;
    op.matrix = Mat::Zero(N * dim, N * dim);
    for (int j = 0; j < N; ++j) {
        const Mat& R = c.R[static_cast<std::size_t>(j)];
        for (int k = 0; k < N; ++k)
            if (D1(j, k) != 0.0) op.matrix.block(j * dim, k * dim, dim, dim) = D1(j, k) * R;
        op.matrix.block(j * dim, j * dim, dim, dim) += c.S[static_cast<std::size_t>(j)];
    }
    return op;
}

CoefficientPair adjoint_coefficients(const CoefficientPair& c, const MetricFamily& g, Scheme scheme) {
    require_spd(g);
    const std::size_t N = c.R.size();
    if (g.size() != N) throw PreconditionError("metric and coefficients live on different grids");
    const Mat D1 = derivative_1d(static_cast<int>(N), scheme);
    std::vector<Mat> Phi(N), PhiInv(N), Rt(N), RtT(N), St(N);
    for (std::size_t j = 0; j < N; ++j) {
        // g = Phi^T Phi, so Phi maps g-orthonormal frames to Euclidean ones
        Phi[j] = Eigen::LLT<Mat>(g[j]).matrixU();
        PhiInv[j] = Phi[j].inverse();
    }
    const std::vector<Mat> dPhi = differentiate(Phi, D1);
    const std::vector<Mat> dPhiInv = differentiate(PhiInv, D1);
    for (std::size_t j = 0; j < N; ++j) {
        Rt[j] = Phi[j] * c.R[j] * PhiInv[j];
        St[j] = Phi[j] * c.S[j] * PhiInv[j] + Phi[j] * c.R[j] * dPhiInv[j];
        RtT[j] = Rt[j].transpose();
    }
    const std::vector<Mat> dRtT = differentiate(RtT, D1);
    CoefficientPair out;
    out.R.resize(N);
    out.S.resize(N);
    for (std::size_t j = 0; j < N; ++j) {
        out.R[j] = -PhiInv[j] * RtT[j] * Phi[j];
        out.S[j] = PhiInv[j] * (St[j].transpose() - dRtT[j]) * Phi[j] - PhiInv[j] * RtT[j] * dPhi[j];
    }
    return out;
}

LoopOperator adjoint_operator(const CoefficientPair& c, const MetricFamily& g, Scheme scheme) {
    LoopOperator op = assemble(adjoint_coefficients(c, g, scheme), scheme);
    op.label = "adjoint";
    return op;
}

LoopOperator discrete_adjoint(const Mat& A, const MetricFamily& g) {
    const Mat G = gram_matrix(g, 0);
    LoopOperator op;
    op.matrix = G.ldlt().solve(Mat(A.transpose() * G));
    op.label = "discrete adjoint";
    return op;
}

LoopGrid shift_plus(const LoopGrid& x) {
    LoopGrid y = x;
    for (int j = 0; j < x.n_points; ++j) y.values(j, 0) += x.t(j);
    return y;
}

CoefficientPair operator_A_coefficients(const LoopGrid& x, const CoefficientModel& model) {
    const int dim = model.dim();
    const int d = model.orbit_dim();
    if (x.dim != dim) throw PreconditionError("loop dimension does not match the model");
    const LoopGrid sx = shift_plus(x);
    CoefficientPair c;
    c.R.resize(static_cast<std::size_t>(x.n_points));
    c.S.resize(static_cast<std::size_t>(x.n_points));
    for (int j = 0; j < x.n_points; ++j) {
        const Vec q = sx.values.row(j).transpose();
        if (!model.in_chart(q)) throw DomainError("loop leaves the tubular chart");
        const Mat J = model.complex_structure(x.t(j), q);
        Mat S = Mat::Zero(dim, dim);
        S.rightCols(dim - d) = model.defect_factor(x.t(j), q);
        c.R[static_cast<std::size_t>(j)] = -J;
        c.S[static_cast<std::size_t>(j)] = -J * S;
    }
    return c;
}

LoopOperator build_operator_A(const LoopGrid& x, const CoefficientModel& model, Scheme scheme) {
    LoopOperator op = assemble(operator_A_coefficients(x, model), scheme);
    op.label = "A_x";
    return op;
}

MetricFamily metric_along(const LoopGrid& x, const CoefficientModel& model) {
    const LoopGrid sx = shift_plus(x);
    MetricFamily g(static_cast<std::size_t>(x.n_points));
    for (int j = 0; j < x.n_points; ++j) g[static_cast<std::size_t>(j)] = model.metric(x.t(j), sx.values.row(j).transpose());
    return g;
}

Mat SpectralSplit::negative_modes() const {
    std::vector<int> idx;
    for (int i = 0; i < eigenvalues.size(); ++i)
        if (eigenvalues(i) < -kernel_tol) idx.push_back(i);
    Mat out(eigenvectors.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = eigenvectors.col(idx[k]);
    return out;
}

Mat SpectralSplit::positive_modes() const {
    std::vector<int> idx;
    for (int i = 0; i < eigenvalues.size(); ++i)
        if (eigenvalues(i) > kernel_tol) idx.push_back(i);
    Mat out(eigenvectors.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = eigenvectors.col(idx[k]);
    return out;
}

SpectralSplit spectral_split(const LoopOperator& A0, const MetricFamily& g, double asymmetry_tol) {
    SpectralSplit sp;
    sp.n_points = static_cast<int>(g.size());
    sp.dim = static_cast<int>(g[0].rows());
    sp.gram = gram_matrix(g, 0);
    const Mat& G = sp.gram;
    const Mat GA = G * A0.matrix;
    if ((GA - GA.transpose()).norm() > asymmetry_tol * GA.norm())
        throw DomainError("operator is not self-adjoint in the loop metric");
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(Mat(0.5 * (GA + GA.transpose())), G);
    sp.eigenvalues = es.eigenvalues();
    sp.eigenvectors = es.eigenvectors();
    sp.kernel_tol = 1e-6 * sp.eigenvalues.cwiseAbs().maxCoeff();

    double smallest = std::numeric_limits<double>::infinity();
    for (int i = 0; i < sp.eigenvalues.size(); ++i) {
        if (std::abs(sp.eigenvalues(i)) < sp.kernel_tol)
            sp.kernel_index.push_back(i);
        else
            smallest = std::min(smallest, std::abs(sp.eigenvalues(i)));
    }
    sp.c0 = smallest * smallest;
    if (sp.n_points % 2 == 0 && has_alternating_kernel(sp))
        throw PreconditionError("alternating grid mode lies in the kernel; use an odd node count");

    const int n = static_cast<int>(A0.matrix.rows());
    const int kdim = static_cast<int>(sp.kernel_index.size());
    sp.kernel_raw.resize(n, kdim);
    sp.kernel_basis.resize(n, kdim);
    for (int k = 0; k < kdim; ++k) {
        const Vec v = sp.eigenvectors.col(sp.kernel_index[static_cast<std::size_t>(k)]);
        sp.kernel_raw.col(k) = v;
        LoopGrid X = LoopGrid::unflatten(v, sp.n_points, sp.dim);
        const Vec mean = X.values.colwise().mean().transpose();
        Vec c = LoopGrid::constant(sp.n_points, mean).flatten();
        for (int i = 0; i < k; ++i) c -= sp.kernel_basis.col(i) * (sp.kernel_basis.col(i).dot(G * c));
        sp.kernel_basis.col(k) = c / std::sqrt(c.dot(G * c));
    }
    sp.P = sp.kernel_basis * sp.kernel_basis.transpose() * G;
    sp.Q = Mat::Identity(n, n) - sp.P;
    return sp;
}

FactsReport check_operator_facts(const SpectralSplit& split, const LoopOperator& A0,
                                 const std::vector<LoopOperator>& A_samples, const LoopOperator& D, CounterRng& rng,
                                 int samples, Scheme scheme) {
    FactsReport rep;
    const Mat& G = split.gram;
    const Mat& Q = split.Q;
    const int n = static_cast<int>(G.rows());
    auto norm = [&](const Mat& M) { return operator_norm(M, G, G); };
    rep.a0_norm = norm(A0.matrix);
    rep.range_residual = norm(Q * A0.matrix - A0.matrix);
    for (const auto& Ax : A_samples) rep.kernel_residual = std::max(rep.kernel_residual, norm(Ax.matrix * Q - Ax.matrix));
    rep.derivative_residual = norm(D.matrix * Q - D.matrix);

    MetricFamily blocks(static_cast<std::size_t>(split.n_points));
    for (int j = 0; j < split.n_points; ++j)
        blocks[static_cast<std::size_t>(j)] = G.block(j * split.dim, j * split.dim, split.dim, split.dim) * split.n_points;
    const Mat H1 = gram_matrix(blocks, 1, scheme);

    rep.coercivity_min_ratio = std::numeric_limits<double>::infinity();
    rep.coercivity_h1_ratio = std::numeric_limits<double>::infinity();
    const double tol = 1e-8 * split.c0;
    for (int s = 0; s < samples; ++s) {
        const Vec X = random_normal_vector(rng, n);
        const Vec Y = random_normal_vector(rng, n);
        const double nx = std::sqrt(X.dot(G * X)), ny = std::sqrt(Y.dot(G * Y));
        const double sa = std::abs((A0.matrix * X).dot(G * Y) - X.dot(G * (A0.matrix * Y))) / (nx * ny);
        rep.self_adjoint_residual = std::max(rep.self_adjoint_residual, sa);

        const Vec QX = Q * X;
        const Vec AQX = A0.matrix * QX;
        const double lhs = AQX.dot(G * AQX);
        const double l2 = QX.dot(G * QX);
        if (lhs < (split.c0 - tol) * l2) ++rep.coercivity_violations;
        rep.coercivity_min_ratio = std::min(rep.coercivity_min_ratio, lhs / l2);
        rep.coercivity_h1_ratio = std::min(rep.coercivity_h1_ratio, lhs / QX.dot(H1 * QX));
    }
    const double cap = 1e-8 * rep.a0_norm;
    rep.pass = rep.self_adjoint_residual <= 1e-6 && rep.range_residual <= cap && rep.kernel_residual <= cap &&
               rep.derivative_residual <= cap && rep.coercivity_violations == 0;
    return rep;
}

const std::vector<std::pair<double, double>>& gauss_legendre_unit() {
    static const std::vector<std::pair<double, double>> rule = [] {
        using Rule = boost::math::quadrature::gauss<double, 32>;
        std::vector<std::pair<double, double>> out;
        const auto& x = Rule::abscissa();
        const auto& w = Rule::weights();
        for (std::size_t i = 0; i < x.size(); ++i) {
            // symmetric half rule on [-1,1]; map both signs to [0,1]
            out.emplace_back(0.5 * (1.0 + x[i]), 0.5 * w[i]);
            if (x[i] != 0.0) out.emplace_back(0.5 * (1.0 - x[i]), 0.5 * w[i]);
        }
        return out;
    }();
    return rule;
}

Mat hadamard_factor(const std::function<Vec(const Vec&)>& F, const Vec& q, int d) {
    const int dim = static_cast<int>(q.size());
    const int m = dim - d;
    Vec slice = q;
    slice.tail(m).setZero();
    const Vec on_slice = F(slice);
    if (on_slice.norm() > 1e-10) throw PreconditionError("map does not vanish on the orbit slice");
    Mat S = Mat::Zero(on_slice.size(), m);
    const double h = 1e-6 * (1.0 + q.norm());
    for (const auto& [r, w] : gauss_legendre_unit()) {
        Vec p = slice;
        p.tail(m) = r * q.tail(m);
        for (int i = 0; i < m; ++i) {
            Vec a = p, b = p;
            a(d + i) += h;
            b(d + i) -= h;
            S.col(i) += w * (F(a) - F(b)) / (2.0 * h);
        }
    }
    return S;
}

}  // namespace mfl::loopfield
