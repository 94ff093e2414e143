#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "mfl/morsebott.hpp"

#include <cmath>

using namespace mfl;
using namespace mfl::morsebott;
using flowcore::CriticalSetSample;

namespace {

const geometry::EmbeddedManifold kSphere = geometry::unit_sphere(3);
const geometry::EmbeddedManifold kR1 = geometry::euclidean_space(1);
const geometry::EmbeddedManifold kR3 = geometry::euclidean_space(3);

Vec vec3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

CriticalSetSample north_pole() {
    CriticalSetSample Z;
    Z.points = {vec3(0, 0, 1)};
    Z.zeta = 1.0;
    Z.dim = 0;
    return Z;
}

CriticalSetSample unit_circle(int samples = 16) {
    CriticalSetSample Z;
    for (int k = 0; k < samples; ++k) {
        const double a = 2.0 * M_PI * k / samples;
        Z.points.push_back(vec3(std::cos(a), std::sin(a), 0.0));
    }
    Z.zeta = 0.0;
    Z.dim = 1;
    Z.nearest = [](const Vec& p) {
        const double r = std::hypot(p(0), p(1));
        return vec3(p(0) / r, p(1) / r, 0.0);
    };
    return Z;
}

// point at normal distance rho from the unit circle, at angle a, tilted by b in the (r,z) plane
Vec near_circle(double a, double rho, double b) {
    const double r = 1.0 + rho * std::cos(b);
    return vec3(r * std::cos(a), r * std::sin(a), rho * std::sin(b));
}

double smallest_nonzero_abs_eigenvalue(const Mat& H) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    double best = 1e300;
    for (int i = 0; i < H.rows(); ++i) {
        const double v = std::abs(es.eigenvalues()(i));
        if (v > 1e-6 * scale) best = std::min(best, v);
    }
    return best;
}

}  // namespace

TEST_CASE("integration oracles") {
    SUBCASE("linear decay on the line") {
        const auto t = integrate_gradient_flow(kR1, geometry::fields::half_square(-1.0), Vec::Constant(1, 1.0), 10.0);
        for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t.points[i](0) - std::exp(-t.s[i])) <= 1e-6);
        CHECK(t.s.back() == doctest::Approx(10.0));
    }
    SUBCASE("critical start stays put") {
        const auto t = integrate_gradient_flow(kSphere, geometry::fields::height(3), vec3(0, 0, 1), 5.0);
        CHECK(t.size() == 1);
        CHECK(flowcore::energy_of(t) == 0.0);
    }
    SUBCASE("meridian against the closed form") {
        const double th0 = 2.5;
        const auto t = integrate_gradient_flow(kSphere, geometry::fields::height(3), vec3(std::sin(th0), 0, std::cos(th0)), 40.0);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double th = 2.0 * std::atan(std::tan(0.5 * th0) * std::exp(-t.s[i]));
            CHECK((t.points[i] - vec3(std::sin(th), 0, std::cos(th))).norm() <= 1e-6);
            CHECK(std::abs(kSphere.constraint(t.points[i])(0)) <= 1e-10);
            if (i > 0) CHECK(t.f_values[i] >= t.f_values[i - 1] - 1e-10);
        }
        REQUIRE(t.limit);
        CHECK((t.limit->point - vec3(0, 0, 1)).norm() <= 1e-6);
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(integrate_gradient_flow(kSphere, geometry::fields::height(3), vec3(2, 0, 0), 1.0), DomainError);
        geometry::ScalarField cubic;
        cubic.value = [](const Vec& p) { return std::pow(p(0), 3); };
        cubic.gradient = [](const Vec& p) -> Vec { return Vec::Constant(1, 3.0 * p(0) * p(0)); };
        CHECK_THROWS_AS(integrate_gradient_flow(kR1, cubic, Vec::Constant(1, 1.0), 1.0), DivergenceError);
    }
}

TEST_CASE("limit detection") {
    const auto f = geometry::fields::height(3);
    const auto t = integrate_gradient_flow(kSphere, f, vec3(std::sin(2.0), 0, std::cos(2.0)), 40.0);
    const auto lim = detect_limit(t, north_pole());
    REQUIRE(lim);
    CHECK((*lim - vec3(0, 0, 1)).norm() <= 1e-6);

    const auto up = integrate_gradient_flow(kR1, geometry::fields::half_square(1.0), Vec::Constant(1, 1.0), 10.0);
    CriticalSetSample origin;
    origin.points = {Vec::Zero(1)};
    CHECK_FALSE(detect_limit(up, origin));

    const auto still = flowcore::constant_trajectory(vec3(0, 0, 1), {0, 1, 2}, kSphere, f);
    const auto c = detect_limit(still, north_pole());
    REQUIRE(c);
    CHECK(*c == vec3(0, 0, 1));
}

TEST_CASE("decay fits") {
    const auto metric = geometry::chordal_metric();
    SUBCASE("line: rate 1") {
        const auto t = integrate_gradient_flow(kR1, geometry::fields::half_square(-1.0), Vec::Constant(1, 1.0), 40.0);
        const auto fit = fit_exponential_decay(t, t.points.back(), metric);
        CHECK(std::abs(fit.B_hat - 1.0) <= 1e-3);
        CHECK(fit.r_squared > 0.999);
    }
    SUBCASE("circle well: rate 2") {
        const auto t = integrate_gradient_flow(kR3, geometry::fields::circle_well(), near_circle(0.3, 0.05, 0.4), 40.0);
        const auto lim = detect_limit(t, unit_circle());
        REQUIRE(lim);
        const auto fit = fit_exponential_decay(t, *lim, metric);
        CHECK(std::abs(fit.B_hat - 2.0) <= 1e-2);
        const auto rep = check_decay_bound(t, fit, 0.0, metric);
        CHECK(rep.pass);
        CHECK(std::abs(rep.derivative_rate - 2.0) <= 0.2);
    }
    SUBCASE("sphere: rate 1") {
        const auto t = integrate_gradient_flow(kSphere, geometry::fields::height(3), vec3(std::sin(0.1), 0, std::cos(0.1)), 40.0);
        const auto fit = fit_exponential_decay(t, t.limit->point, metric);
        CHECK(std::abs(fit.B_hat - 1.0) <= 1e-2);
        const auto rep = check_decay_bound(t, fit, 1.0, metric);
        CHECK(rep.pass);
        CHECK(std::abs(rep.derivative_rate - 1.0) <= 0.1);
    }
    SUBCASE("constant trajectory is a trivial pass") {
        const auto still = flowcore::constant_trajectory(vec3(0, 0, 1), {0, 1, 2}, kSphere, geometry::fields::height(3));
        CHECK(check_decay_bound(still, DecayFit{}, 1.0, metric).trivial);
        CHECK_THROWS_AS(fit_exponential_decay(still, vec3(0, 0, 1), metric), FitError);
    }
}

TEST_CASE("Morse-Bott verification") {
    CHECK(morse_bott_verify(kR3, geometry::fields::circle_well(), unit_circle()).pass);
    CriticalSetSample origin;
    origin.points = {Vec::Zero(1)};
    origin.dim = 0;
    const auto q = morse_bott_verify(kR1, geometry::fields::negative_quartic(), origin);
    CHECK_FALSE(q.pass);
    CHECK(q.kernel_dims[0] == 1);
    CHECK(morse_bott_verify(kSphere, geometry::fields::height(3), north_pole()).pass);
    origin.dim.reset();
    CHECK_THROWS_AS(morse_bott_verify(kR1, geometry::fields::negative_quartic(), origin), PreconditionError);
}

TEST_CASE("weighted Sobolev norms") {
    const double ds = 0.01;
    const int n = 2001;
    Mat u(n, 1);
    for (int i = 0; i < n; ++i) u(i, 0) = std::exp(-2.0 * ds * i);
    // integral of e^{2s} e^{-4s} over [0,inf) is 1/2
    const auto a = weighted_sobolev_norm(u, 0.0, ds, {1.0, 0});
    CHECK_FALSE(a.divergent);
    CHECK(std::abs(a.value - 1.0 / std::sqrt(2.0)) <= 1e-3);
    CHECK(weighted_sobolev_norm(u, 0.0, ds, {2.0, 0}).divergent);
    CHECK(weighted_sobolev_norm(Mat::Zero(n, 1), 0.0, ds, {1.0, 2}).value == 0.0);
    // k = 1 adds |u'|^2 = 4 e^{-4s}: total (1 + 4)/2
    CHECK(std::abs(weighted_sobolev_norm(u, 0.0, ds, {1.0, 1}).value - std::sqrt(2.5)) <= 1e-3);
    for (double c : {-3.0, 0.5, 7.0})
        CHECK(weighted_sobolev_norm(c * u, 0.0, ds, {1.0, 2}).value ==
              doctest::Approx(std::abs(c) * weighted_sobolev_norm(u, 0.0, ds, {1.0, 2}).value).epsilon(1e-12));
}

TEST_CASE("shift family on the sphere heteroclinic") {
    const auto metric = geometry::chordal_metric();
    const auto het = heteroclinic_flow(kSphere, geometry::fields::height(3), vec3(1, 0, 0), 40.0);
    REQUIRE(het.limit);
    REQUIRE(het.limit_minus);
    const auto rep = shift_family_diagnostic(het, {1, 2, 4, 8}, metric);
    CHECK(rep.window_monotone);
    CHECK(rep.witness);
    CHECK(rep.entries.back().window_distance < 0.01);
    for (const auto& e : rep.entries) CHECK(e.full_distance >= 1.0);
    const auto zero = shift_family_diagnostic(het, {0.0}, metric);
    CHECK(zero.entries[0].window_distance == zero.baseline_window);
    CHECK(zero.entries[0].full_distance == zero.baseline_full);
    const auto still = flowcore::constant_trajectory(vec3(0, 0, 1), {-1, 0, 1}, kSphere, geometry::fields::height(3));
    const auto deg = shift_family_diagnostic(still, {1, 2}, metric);
    CHECK(deg.degenerate);
    CHECK(deg.entries[0].window_distance == 0.0);
    CHECK(deg.entries[0].full_distance == 0.0);
}

TEST_CASE("property: energy identity, monotonicity, rate-spectrum link, shift invariance") {
    const auto metric = geometry::chordal_metric();
    CounterRng rng(31);
    const auto well = geometry::fields::circle_well();
    const auto height = geometry::fields::height(3);
    for (int trial = 0; trial < 6; ++trial) {
        const bool sphere = trial % 2 == 0;
        const Vec x0 = sphere ? vec3(0.1 * std::cos(6.0 * rng.next_uniform()), 0.1 * std::sin(6.0 * rng.next_uniform()), 0.0)
                              : near_circle(6.0 * rng.next_uniform(), 0.02 + 0.07 * rng.next_uniform(), 6.0 * rng.next_uniform());
        const auto& M = sphere ? kSphere : kR3;
        const auto& f = sphere ? height : well;
        const Vec start = sphere ? kSphere.project_fully(x0 + vec3(0, 0, 1)) : x0;
        const auto t = integrate_gradient_flow(M, f, start, 40.0);
        const double E = flowcore::energy_of(t);
        CHECK(std::abs(E - (t.f_values.back() - t.f_values.front())) <= 1e-4 * (1.0 + E));
        for (std::size_t i = 1; i < t.size(); ++i) CHECK(t.f_values[i] >= t.f_values[i - 1] - 1e-10);
        REQUIRE(t.limit);
        const auto fit = fit_exponential_decay(t, t.limit->point, metric);
        const double lam = smallest_nonzero_abs_eigenvalue(geometry::tangent_hessian(M, f, t.limit->point).matrix);
        CHECK(std::abs(fit.B_hat - lam) <= 0.05 * lam);
        const auto moved = fit_exponential_decay(t.shifted(3.7), t.limit->point, metric);
        CHECK(std::abs(moved.B_hat - fit.B_hat) <= 1e-6);
    }
}
