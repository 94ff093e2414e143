#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mfl/loopfield.hpp"

#include <cmath>
#include <numbers>

using namespace mfl;
using namespace mfl::loopfield;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Mat standard_j() {
    Mat J(2, 2);
    J << 0, -1, 1, 0;
    return J;
}

// -J d/dt on R^2 loops with g = I; nothing is transverse, so d = 2.
class FreeModel final : public CoefficientModel {
public:
    int dim() const override { return 2; }
    int orbit_dim() const override { return 2; }
    bool in_chart(const Vec&) const override { return true; }
    Mat complex_structure(double, const Vec&) const override { return standard_j(); }
    Mat defect_factor(double, const Vec&) const override { return Mat::Zero(2, 0); }
    Mat metric(double, const Vec&) const override { return Mat::Identity(2, 2); }
};

// J fixed, a point-dependent defect acting on the second coordinate.
class TiltModel final : public CoefficientModel {
public:
    int dim() const override { return 2; }
    int orbit_dim() const override { return 1; }
    bool in_chart(const Vec& q) const override { return std::abs(q(1)) < 0.5; }
    Mat complex_structure(double, const Vec&) const override { return standard_j(); }
    Mat defect_factor(double, const Vec& q) const override {
        Mat S(2, 1);
        S << std::sin(kTwoPi * q(0)) * 0.3, 1.0 + q(1);
        return S;
    }
    Mat metric(double, const Vec&) const override { return Mat::Identity(2, 2); }
};

MetricFamily wobbly_metric(int N) {
    MetricFamily g;
    for (int j = 0; j < N; ++j) {
        const double t = static_cast<double>(j) / N;
        Mat m(2, 2);
        m << 2.0 + std::sin(kTwoPi * t), 0.3 * std::cos(kTwoPi * t), 0.3 * std::cos(kTwoPi * t),
            1.5 + 0.5 * std::cos(2 * kTwoPi * t);
        g.push_back(m);
    }
    return g;
}

CoefficientPair smooth_pair(int N, double phase) {
    CoefficientPair c;
    for (int j = 0; j < N; ++j) {
        const double t = static_cast<double>(j) / N;
        Mat R(2, 2), S(2, 2);
        R << 0.2 * std::cos(kTwoPi * t + phase), -1.0, 1.0 + 0.1 * std::sin(kTwoPi * t), 0.1;
        S << 0.5, std::sin(kTwoPi * t + phase), 0.2, std::cos(2 * kTwoPi * t);
        c.R.push_back(R);
        c.S.push_back(S);
    }
    return c;
}

Vec random_smooth_loop(CounterRng& rng, int N, int dim, int modes = 4) {
    LoopGrid X(N, dim);
    for (int c = 0; c < dim; ++c)
        for (int k = 0; k <= modes; ++k) {
            const double a = rng.next_normal(), b = rng.next_normal();
            for (int j = 0; j < N; ++j)
                X.values(j, c) += a * std::cos(kTwoPi * k * X.t(j)) + b * std::sin(kTwoPi * k * X.t(j));
        }
    return X.flatten();
}

}  // namespace

TEST_CASE("flattening is node-major and invertible") {
    CounterRng rng(3);
    LoopGrid X(16, 3);
    for (int j = 0; j < 16; ++j)
        for (int c = 0; c < 3; ++c) X.values(j, c) = rng.next_normal();
    const Vec v = X.flatten();
    CHECK(v(5 * 3 + 2) == X.values(5, 2));
    CHECK((LoopGrid::unflatten(v, 16, 3).values - X.values).norm() == 0.0);
}

TEST_CASE("derivative matrix") {
    const int N = 128;
    for (Scheme s : {Scheme::Spectral, Scheme::FourthOrder}) {
        const LoopOperator D = derivative_matrix(N, 2, s);
        Vec c(2);
        c << 1.5, -2.0;
        CHECK(D.apply(LoopGrid::constant(N, c)).values.cwiseAbs().maxCoeff() < 1e-12);
    }
    const LoopGrid X = LoopGrid::sample(N, 2, [](double t) { return Vec::Unit(2, 0) * std::sin(kTwoPi * t); });
    const LoopGrid dX = derivative_matrix(N, 2).apply(X);
    double err = 0.0;
    for (int j = 0; j < N; ++j) {
        err = std::max(err, std::abs(dX.values(j, 0) - kTwoPi * std::cos(kTwoPi * X.t(j))));
        err = std::max(err, std::abs(dX.values(j, 1)));
    }
    CHECK(err < 1e-6);

    SUBCASE("fourth-order scheme converges at fourth order") {
        auto error_at = [](int n) {
            const Mat D = derivative_1d(n, Scheme::FourthOrder);
            Vec x(n), dx(n);
            for (int j = 0; j < n; ++j) {
                x(j) = std::sin(kTwoPi * j / n);
                dx(j) = kTwoPi * std::cos(kTwoPi * j / n);
            }
            return (D * x - dx).cwiseAbs().maxCoeff();
        };
        const double ratio = error_at(64) / error_at(128);
        CHECK(ratio == doctest::Approx(16.0).epsilon(0.02));
    }

    SUBCASE("linearity") {
        CounterRng rng(9);
        const LoopOperator D = derivative_matrix(32, 2);
        const Vec a = random_smooth_loop(rng, 32, 2), b = random_smooth_loop(rng, 32, 2);
        CHECK((D.apply(Vec(2.0 * a - 3.0 * b)) - (2.0 * D.apply(a) - 3.0 * D.apply(b))).norm() < 1e-10);
    }

    CHECK_THROWS_AS(derivative_1d(4), PreconditionError);
}

TEST_CASE("loop inner product") {
    const int N = 64;
    const MetricFamily g = constant_metric(N, Mat::Identity(2, 2));
    const LoopGrid one = LoopGrid::constant(N, Vec::Unit(2, 0));
    CHECK(loop_inner_product(one, one, g, 0) == doctest::Approx(1.0));
    const LoopGrid s = LoopGrid::sample(N, 2, [](double t) { return Vec::Unit(2, 0) * std::sin(kTwoPi * t); });
    const LoopGrid c = LoopGrid::sample(N, 2, [](double t) { return Vec::Unit(2, 0) * std::cos(kTwoPi * t); });
    CHECK(std::abs(loop_inner_product(s, c, g, 0)) < 1e-12);
    CHECK(loop_inner_product(s, s, g, 1) == doctest::Approx(0.5 + kTwoPi * kTwoPi / 2).epsilon(1e-9));

    // agrees with the Gram matrix
    const MetricFamily w = wobbly_metric(N);
    CounterRng rng(1);
    const Vec a = random_smooth_loop(rng, N, 2), b = random_smooth_loop(rng, N, 2);
    for (int k = 0; k <= 2; ++k) {
        const double direct =
            loop_inner_product(LoopGrid::unflatten(a, N, 2), LoopGrid::unflatten(b, N, 2), w, k);
        CHECK(direct == doctest::Approx(a.dot(gram_matrix(w, k) * b)).epsilon(1e-10));
    }

    MetricFamily bad = g;
    bad[3](1, 1) = -1.0;
    CHECK_THROWS_AS(loop_inner_product(one, one, bad, 0), DomainError);
}

TEST_CASE("operator norm matches the weighted definition") {
    CounterRng rng(4);
    const int n = 6;
    Mat A(n, n), B(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            A(i, j) = rng.next_normal();
            B(i, j) = rng.next_normal();
        }
    const Mat G = B * B.transpose() + Mat::Identity(n, n);
    CHECK(operator_norm(A, Mat::Identity(n, n), Mat::Identity(n, n)) ==
          doctest::Approx(Eigen::JacobiSVD<Mat>(A).singularValues()(0)));
    // oracle: largest generalized eigenvalue of (A^T G A, G)
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(Mat(A.transpose() * G * A), G);
    CHECK(operator_norm(A, G, G) == doctest::Approx(std::sqrt(es.eigenvalues().maxCoeff())).epsilon(1e-10));
}

TEST_CASE("adjoint operator") {
    const int N = 64;
    SUBCASE("zero R and symmetric constant S is self-adjoint") {
        CoefficientPair c;
        Mat S(2, 2);
        S << 1.0, 0.4, 0.4, -2.0;
        c.R.assign(N, Mat::Zero(2, 2));
        c.S.assign(N, S);
        const MetricFamily g = constant_metric(N, Mat::Identity(2, 2));
        CHECK((adjoint_operator(c, g).matrix - assemble(c).matrix).norm() < 1e-12);
    }
    SUBCASE("identity R gives minus the derivative") {
        CoefficientPair c;
        c.R.assign(N, Mat::Identity(2, 2));
        c.S.assign(N, Mat::Zero(2, 2));
        const MetricFamily g = constant_metric(N, Mat::Identity(2, 2));
        CHECK((adjoint_operator(c, g).matrix + derivative_matrix(N, 2).matrix).norm() < 1e-10);
    }
    SUBCASE("pairing identity with variable coefficients and metric") {
        const MetricFamily g = wobbly_metric(N);
        const CoefficientPair c = smooth_pair(N, 0.3);
        const Mat A = assemble(c).matrix;
        const Mat As = adjoint_operator(c, g).matrix;
        const Mat G = gram_matrix(g, 0);
        CounterRng rng(12);
        double worst = 0.0;
        for (int s = 0; s < 100; ++s) {
            const Vec X = random_smooth_loop(rng, N, 2), Y = random_smooth_loop(rng, N, 2);
            const double lhs = (A * X).dot(G * Y), rhs = X.dot(G * (As * Y));
            worst = std::max(worst, std::abs(lhs - rhs) / std::sqrt(X.dot(G * X) * Y.dot(G * Y)));
        }
        CHECK(worst < 1e-6);
        // the frame formula and the matrix adjoint agree on smooth loops
        const Mat Ad = discrete_adjoint(A, g).matrix;
        const Vec Y = random_smooth_loop(rng, N, 2);
        CHECK((As * Y - Ad * Y).norm() < 1e-6 * (As * Y).norm());
    }
    SUBCASE("adjoint depends Lipschitz-continuously on the coefficients") {
        const MetricFamily g = wobbly_metric(N);
        const CoefficientPair c = smooth_pair(N, 0.0);
        const Mat base = adjoint_operator(c, g).matrix;
        const Mat H1 = gram_matrix(g, 1), L2 = gram_matrix(g, 0);
        for (int dir = 0; dir < 10; ++dir) {
            const CoefficientPair dc = smooth_pair(N, 0.7 * dir + 0.1);
            double prev_ratio = -1.0;
            for (double eps : {1e-2, 5e-3}) {
                CoefficientPair p = c;
                for (int j = 0; j < N; ++j) {
                    p.R[j] += eps * dc.R[j];
                    p.S[j] += eps * dc.S[j];
                }
                const double diff = operator_norm(adjoint_operator(p, g).matrix - base, H1, L2);
                const double ratio = diff / eps;
                CHECK(std::isfinite(ratio));
                CHECK(ratio < 50.0);
                if (prev_ratio > 0) CHECK(ratio == doctest::Approx(prev_ratio).epsilon(1e-6));
                prev_ratio = ratio;
            }
        }
    }
}

TEST_CASE("operator A on a model with no defect") {
    const int N = 63;
    const FreeModel model;
    const LoopGrid x0(N, 2);
    const LoopOperator A0 = build_operator_A(x0, model);
    const SpectralSplit split = spectral_split(A0, metric_along(x0, model));
    CHECK(split.kernel_index.size() == 2);
    // nonzero spectrum is 2 pi k; the smallest positive ones come in pairs
    std::vector<double> positive;
    for (int i = 0; i < split.eigenvalues.size(); ++i)
        if (split.eigenvalues(i) > split.kernel_tol) positive.push_back(split.eigenvalues(i));
    REQUIRE(positive.size() >= 6);
    CHECK(positive[0] == doctest::Approx(kTwoPi).epsilon(1e-10));
    CHECK(positive[1] == doctest::Approx(kTwoPi).epsilon(1e-10));
    CHECK(positive[2] == doctest::Approx(2 * kTwoPi).epsilon(1e-10));
    CHECK(split.c0 == doctest::Approx(kTwoPi * kTwoPi).epsilon(1e-10));

    SUBCASE("grid doubling leaves low eigenvalues unchanged") {
        const LoopGrid x1(2 * N + 1, 2);
        const SpectralSplit fine = spectral_split(build_operator_A(x1, model), metric_along(x1, model));
        auto lowest_abs = [](const Vec& ev) {
            std::vector<double> v(ev.data(), ev.data() + ev.size());
            std::sort(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
            return v;
        };
        const auto a = lowest_abs(split.eigenvalues), b = lowest_abs(fine.eigenvalues);
        for (int i = 0; i < 10; ++i) CHECK(std::abs(std::abs(a[i]) - std::abs(b[i])) < 1e-6);
    }
}

TEST_CASE("spectral split invariants") {
    const int N = 31;
    const TiltModel model;
    const LoopGrid x0(N, 2);
    const LoopOperator A0 = build_operator_A(x0, model);
    const MetricFamily g = metric_along(x0, model);
    const Mat G = gram_matrix(g, 0);
    // the tilted defect breaks symmetry
    CHECK_THROWS_AS(spectral_split(A0, g), DomainError);

    const LoopOperator Afree = build_operator_A(x0, FreeModel());
    const SpectralSplit sp = spectral_split(Afree, g);
    const int n = 2 * N;
    const Mat I = Mat::Identity(n, n);
    CHECK((sp.P + sp.Q - I).norm() < 1e-12);
    CHECK((sp.P * sp.P - sp.P).norm() < 1e-10);
    CHECK((sp.Q * sp.Q - sp.Q).norm() < 1e-10);
    CHECK((G * sp.P - (G * sp.P).transpose()).norm() < 1e-10);
    CHECK((G * sp.Q - (G * sp.Q).transpose()).norm() < 1e-10);

    CounterRng rng(77);
    for (int s = 0; s < 20; ++s) {
        const Vec X = random_normal_vector(rng, n);
        for (int k = 0; k <= 2; ++k) {
            const Mat Gk = gram_matrix(g, k);
            const Vec PX = sp.P * X, QX = sp.Q * X;
            const double whole = X.dot(Gk * X);
            CHECK(std::abs(whole - PX.dot(Gk * PX) - QX.dot(Gk * QX)) < 1e-10 * whole);
        }
    }
    // an even grid picks up the alternating mode
    const LoopGrid even(32, 2);
    CHECK_THROWS_AS(spectral_split(build_operator_A(even, FreeModel()), metric_along(even, FreeModel())),
                    PreconditionError);

    // kernel basis vectors are constant loops
    for (int k = 0; k < sp.kernel_basis.cols(); ++k) {
        const LoopGrid K = LoopGrid::unflatten(sp.kernel_basis.col(k), N, 2);
        CHECK((K.values.rowwise() - K.values.row(0)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((sp.kernel_raw.col(k) - sp.P * sp.kernel_raw.col(k)).norm() < 1e-6);
    }
}

TEST_CASE("constant loops without transverse part lie in every kernel") {
    const int N = 32;
    const TiltModel model;
    CounterRng rng(5);
    for (int s = 0; s < 5; ++s) {
        LoopGrid x(N, 2);
        const Vec v = random_smooth_loop(rng, N, 2, 2) * 0.02;
        x = LoopGrid::unflatten(v, N, 2);
        Vec c(2);
        c << rng.next_normal(), 0.0;
        const Vec X = LoopGrid::constant(N, c).flatten();
        CHECK(build_operator_A(x, model).apply(X).cwiseAbs().maxCoeff() < 1e-10);
    }
    LoopGrid far(N, 2);
    far.values.col(1).setConstant(0.7);
    CHECK_THROWS_AS(build_operator_A(far, model), DomainError);
}

TEST_CASE("operator facts on the free model") {
    const int N = 31;
    const FreeModel model;
    const LoopGrid x0(N, 2);
    const LoopOperator A0 = build_operator_A(x0, model);
    const MetricFamily g = metric_along(x0, model);
    const SpectralSplit sp = spectral_split(A0, g);
    const LoopOperator D = derivative_matrix(N, 2);
    CounterRng rng(21);
    std::vector<LoopOperator> samples;
    for (int s = 0; s < 3; ++s) samples.push_back(build_operator_A(LoopGrid::unflatten(random_smooth_loop(rng, N, 2) * 0.05, N, 2), model));
    const FactsReport rep = check_operator_facts(sp, A0, samples, D, rng);
    CHECK(rep.pass);
    CHECK(rep.coercivity_violations == 0);
    CHECK(rep.coercivity_min_ratio >= sp.c0 * (1 - 1e-9));

    SUBCASE("kernel vector meets the bound with equality at zero") {
        const Vec K = sp.kernel_basis.col(0);
        CHECK((A0.matrix * sp.Q * K).norm() < 1e-10);
    }
    SUBCASE("swapping P and Q breaks the suite") {
        SpectralSplit bad = sp;
        std::swap(bad.P, bad.Q);
        const FactsReport r = check_operator_facts(bad, A0, samples, D, rng);
        CHECK_FALSE(r.pass);
        CHECK(r.range_residual == doctest::Approx(r.a0_norm).epsilon(1e-6));
    }
}

TEST_CASE("gauss-legendre rule on the unit interval") {
    const auto& rule = gauss_legendre_unit();
    CHECK(rule.size() == 32);
    double sum = 0.0, p61 = 0.0;
    for (const auto& [x, w] : rule) {
        CHECK(x > 0.0);
        CHECK(x < 1.0);
        sum += w;
        p61 += w * std::pow(x, 61);
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(p61 == doctest::Approx(1.0 / 62).epsilon(1e-12));
}

TEST_CASE("hadamard factor") {
    SUBCASE("y squared gives y") {
        auto F = [](const Vec& q) { return Vec::Constant(1, q(0) * q(0)); };
        for (double y : {-0.7, 0.1, 1.3}) {
            const Mat S = hadamard_factor(F, Vec::Constant(1, y), 0);
            CHECK(S(0, 0) == doctest::Approx(y).epsilon(1e-8));
        }
    }
    SUBCASE("linear map gives its matrix") {
        Mat M(3, 2);
        M << 1, 2, -1, 0.5, 3, -2;
        auto F = [&](const Vec& q) { return Vec(M * q.tail(2)); };
        Vec q(3);
        q << 0.3, -0.4, 0.8;
        CHECK((hadamard_factor(F, q, 1) - M).norm() < 1e-8);
    }
    SUBCASE("nonlinear reconstruction") {
        auto F = [](const Vec& q) {
            Vec out(2);
            out << std::sin(q(1)) * std::cos(q(0)), q(1) * q(1) * q(1) + q(1) * q(0);
            return out;
        };
        CounterRng rng(2);
        for (int s = 0; s < 20; ++s) {
            Vec q(2);
            q << rng.next_normal(), 0.3 * rng.next_normal();
            const Mat S = hadamard_factor(F, q, 1);
            const Vec f = F(q);
            CHECK((f - S * q.tail(1)).norm() <= 1e-8 * (1 + f.norm()));
        }
    }
    SUBCASE("map not vanishing on the slice") {
        auto F = [](const Vec& q) { return Vec::Constant(1, 1.0 + q(0)); };
        CHECK_THROWS_AS(hadamard_factor(F, Vec::Constant(1, 0.2), 0), PreconditionError);
    }
}
