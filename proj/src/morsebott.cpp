#include "mfl/morsebott.hpp"

#include <algorithm>
#include <cmath>

namespace mfl::morsebott {

namespace {

Vec rk4_step(const EmbeddedManifold& M, const ScalarField& f, double dir, const Vec& p, double h) {
    auto F = [&](const Vec& q) -> Vec { return dir * geometry::gradient_field(M, f, q); };
    const Vec k1 = F(p);
    const Vec k2 = F(p + 0.5 * h * k1);
    const Vec k3 = F(p + 0.5 * h * k2);
    const Vec k4 = F(p + h * k3);
    return p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

Trajectory integrate_gradient_flow(const EmbeddedManifold& M, const ScalarField& f, const Vec& x0, double s_max,
                                   const FlowControls& c) {
    if (M.constraint_residual(x0) > geometry::kOnManifoldTol) throw DomainError("initial point is off the manifold");
    Trajectory traj;
    double s = 0.0;
    Vec p = x0;
    traj.s.push_back(s);
    traj.points.push_back(p);
    double h = std::min(c.initial_step, c.max_step);
    while (s < s_max) {
        if (geometry::gradient_field(M, f, p).norm() < c.stop_tol) break;
        h = std::min({h, c.max_step, s_max - s});
        const Vec full = rk4_step(M, f, c.direction, p, h);
        const Vec half = rk4_step(M, f, c.direction, rk4_step(M, f, c.direction, p, 0.5 * h), 0.5 * h);
        const double err = (half - full).norm() / 15.0;
        const double tol = c.abs_tol + c.rel_tol * half.norm();
        const double factor = err > 0.0 ? 0.9 * std::pow(tol / err, 0.2) : 4.0;
        if (err <= tol) {
            p = M.reproject(half, 1);
            if (M.constraint_residual(p) > c.drift_tol) throw IntegrationError("constraint drift after re-projection");
            if (!p.allFinite() || p.norm() > c.blowup) throw DivergenceError("flow left every bounded region");
            s += h;
            traj.s.push_back(s);
            traj.points.push_back(p);
            h *= std::clamp(factor, 0.2, 4.0);
        } else {
            h *= std::clamp(factor, 0.1, 0.9);
        }
        if (h < c.min_step * (1.0 + std::abs(s))) throw DivergenceError("step size underflow");
    }
    flowcore::fill_caches(traj, M, f);
    if (std::sqrt(traj.G_values.back()) < std::max(c.stop_tol, 1e-8)) traj.limit = flowcore::Limit{p, true};
    return traj;
}

Trajectory heteroclinic_flow(const EmbeddedManifold& M, const ScalarField& f, const Vec& x_mid, double s_max,
                             const FlowControls& controls) {
    FlowControls up = controls, down = controls;
    up.direction = 1.0;
    down.direction = -1.0;
    const Trajectory fwd = integrate_gradient_flow(M, f, x_mid, s_max, up);
    const Trajectory bwd = integrate_gradient_flow(M, f, x_mid, s_max, down);
    Trajectory out;
    for (std::size_t i = bwd.size(); i-- > 1;) {
        out.s.push_back(-bwd.s[i]);
        out.points.push_back(bwd.points[i]);
    }
    out.s.insert(out.s.end(), fwd.s.begin(), fwd.s.end());
    out.points.insert(out.points.end(), fwd.points.begin(), fwd.points.end());
    out.limit = fwd.limit;
    out.limit_minus = bwd.limit;
    flowcore::fill_caches(out, M, f);
    return out;
}

std::optional<Vec> detect_limit(const Trajectory& traj, const CriticalSetSample& Z, const LimitCriteria& crit) {
    const std::size_t n = traj.size();
    if (n == 0) return std::nullopt;
    if (std::sqrt(traj.G_values.back()) > crit.gradient_tol) return std::nullopt;
    const std::size_t k = std::max<std::size_t>(1, n / 10);
    double diam = 0.0;
    for (std::size_t i = n - k; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) diam = std::max(diam, (traj.points[i] - traj.points[j]).norm());
    if (diam > crit.tail_diameter) return std::nullopt;
    if (Z.distance_to(traj.points.back()) > crit.z_tol) return std::nullopt;
    return traj.points.back();
}

LogLinearFit fit_log_linear(const std::vector<double>& s, const std::vector<double>& y, double floor,
                            double skip_fraction, std::size_t min_samples) {
    const std::size_t skip = static_cast<std::size_t>(std::floor(skip_fraction * static_cast<double>(s.size())));
    std::vector<double> xs, ls;
    for (std::size_t i = skip; i < s.size(); ++i)
        if (y[i] > floor && std::isfinite(y[i])) {
            xs.push_back(s[i]);
            ls.push_back(std::log(y[i]));
        }
    if (xs.size() < min_samples) throw FitError("too few samples above the noise floor for a decay fit");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ls[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ls[i] - my);
        syy += (ls[i] - my) * (ls[i] - my);
    }
    LogLinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    fit.used = xs.size();
    fit.s_lo = xs.front();
    fit.s_hi = xs.back();
    return fit;
}

DecayFit fit_exponential_decay(const Trajectory& traj, const Vec& limit, const CoarseMetric& metric,
                               double noise_floor) {
    std::vector<double> d(traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) d[i] = metric(traj.points[i], limit);
    // distances comparable to the remaining gradient are dominated by where the run stopped
    const double guard = std::max(noise_floor, 1e3 * std::sqrt(traj.G_values.back()));
    const LogLinearFit lin = fit_log_linear(traj.s, d, guard);
    DecayFit fit;
    fit.B_hat = std::max(0.0, -lin.slope);
    fit.r_squared = lin.r_squared;
    fit.s_lo = lin.s_lo;
    fit.s_hi = lin.s_hi;
    fit.noise_floor = guard;
    fit.zeta = traj.f_values.back();
    std::size_t lo = 0;
    while (traj.s[lo] < fit.s_lo) ++lo;
    const double head = std::sqrt(std::max(fit.zeta - traj.f_values[lo], 0.0));
    double A = 0.0;
    for (std::size_t i = lo; i < traj.size() && traj.s[i] <= fit.s_hi; ++i)
        if (d[i] > guard) A = std::max(A, d[i] * std::exp(fit.B_hat * (traj.s[i] - fit.s_lo)));
    fit.A_hat = head > 0.0 ? A / head : flowcore::kInf;
    return fit;
}

DecayBoundReport check_decay_bound(const Trajectory& traj, const DecayFit& fit, double zeta,
                                   const CoarseMetric& metric) {
    DecayBoundReport rep;
    if (!traj.limit) throw PreconditionError("decay bound needs a detected limit");
    const Vec& lim = traj.limit->point;
    bool any = false;
    for (const Vec& p : traj.points) any = any || metric(p, lim) > fit.noise_floor;
    if (!any) {
        rep.trivial = true;
        rep.pass = true;
        rep.rate_agrees = true;
        return rep;
    }
    std::size_t lo = 0;
    while (lo < traj.size() && traj.s[lo] < fit.s_lo) ++lo;
    const double head = std::sqrt(std::max(zeta - traj.f_values[lo], 0.0));
    for (std::size_t i = lo; i < traj.size() && traj.s[i] <= fit.s_hi; ++i) {
        const double d = metric(traj.points[i], lim);
        if (d <= fit.noise_floor) continue;
        const double env = fit.A_hat * head * std::exp(-fit.B_hat * (traj.s[i] - fit.s_lo));
        rep.worst_ratio = std::max(rep.worst_ratio, d / env);
        if (d > env * (1.0 + 1e-9)) ++rep.violations;
    }
    std::vector<double> ss, speed;
    for (std::size_t i = 1; i + 1 < traj.size(); ++i) {
        if (traj.s[i] < fit.s_lo || traj.s[i] > fit.s_hi) continue;
        ss.push_back(traj.s[i]);
        speed.push_back((traj.points[i + 1] - traj.points[i - 1]).norm() / (traj.s[i + 1] - traj.s[i - 1]));
    }
    const LogLinearFit lin = fit_log_linear(ss, speed, fit.noise_floor, 0.0);
    rep.derivative_rate = -lin.slope;
    rep.rate_agrees = std::abs(rep.derivative_rate - fit.B_hat) <= 0.1 * fit.B_hat;
    rep.pass = rep.violations == 0 && rep.rate_agrees;
    return rep;
}

MorseBottReport morse_bott_verify(const EmbeddedManifold& M, const ScalarField& f, const CriticalSetSample& Z) {
    if (!Z.dim) throw PreconditionError("critical set sample lacks a dimension hint");
    MorseBottReport rep;
    rep.expected = *Z.dim;
    rep.pass = true;
    for (const Vec& z : Z.points) {
        // finite-difference Hessians carry noise near 1e-8, hence the absolute floor
        const int k = geometry::kernel_dimension(geometry::tangent_hessian(M, f, z).matrix, geometry::kKernelTol,
                                                 geometry::kKernelTol);
        rep.kernel_dims.push_back(k);
        if (k != rep.expected) rep.pass = false;
    }
    return rep;
}

WeightedNorm weighted_sobolev_norm(const Mat& samples, double s0, double ds, const WeightedNormSpec& spec) {
    if (spec.delta <= 0.0) throw PreconditionError("weight must be positive");
    if (spec.k < 0 || spec.k > 2) throw PreconditionError("derivative order must be 0, 1 or 2");
    const Eigen::Index n = samples.rows();
    if (n < 4) throw PreconditionError("too few samples");
    Mat d1(n, samples.cols()), d2(n, samples.cols());
    for (Eigen::Index i = 1; i + 1 < n; ++i) {
        d1.row(i) = (samples.row(i + 1) - samples.row(i - 1)) / (2.0 * ds);
        d2.row(i) = (samples.row(i + 1) - 2.0 * samples.row(i) + samples.row(i - 1)) / (ds * ds);
    }
    d1.row(0) = (-3.0 * samples.row(0) + 4.0 * samples.row(1) - samples.row(2)) / (2.0 * ds);
    d1.row(n - 1) = (3.0 * samples.row(n - 1) - 4.0 * samples.row(n - 2) + samples.row(n - 3)) / (2.0 * ds);
    d2.row(0) = (2.0 * samples.row(0) - 5.0 * samples.row(1) + 4.0 * samples.row(2) - samples.row(3)) / (ds * ds);
    d2.row(n - 1) =
        (2.0 * samples.row(n - 1) - 5.0 * samples.row(n - 2) + 4.0 * samples.row(n - 3) - samples.row(n - 4)) /
        (ds * ds);

    std::vector<double> w(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        double v = samples.row(i).squaredNorm();
        if (spec.k >= 1) v += d1.row(i).squaredNorm();
        if (spec.k >= 2) v += d2.row(i).squaredNorm();
        w[static_cast<std::size_t>(i)] = std::exp(2.0 * spec.delta * std::abs(s0 + ds * static_cast<double>(i))) * v;
    }
    std::vector<double> cum(w.size(), 0.0);
    for (std::size_t i = 1; i < w.size(); ++i) cum[i] = cum[i - 1] + 0.5 * ds * (w[i] + w[i - 1]);
    WeightedNorm out;
    const double total = cum.back();
    const double three_quarters = cum[(3 * (w.size() - 1)) / 4];
    if (three_quarters > 0.0 && total - three_quarters > 0.1 * three_quarters) {
        out.divergent = true;
        out.value = flowcore::kInf;
        return out;
    }
    out.value = std::sqrt(total);
    return out;
}

ShiftReport shift_family_diagnostic(const Trajectory& traj, const std::vector<double>& shifts,
                                    const CoarseMetric& metric, double window, int window_samples) {
    ShiftReport rep;
    const Vec base = traj.limit_minus ? traj.limit_minus->point : traj.points.front();
    const Vec top = traj.limit ? traj.limit->point : traj.points.back();
    rep.half_diameter = 0.5 * metric(base, top);
    rep.degenerate = rep.half_diameter == 0.0;

    auto window_distance = [&](double c) {
        double worst = 0.0;
        for (int i = 0; i < window_samples; ++i) {
            const double s = -window + 2.0 * window * i / (window_samples - 1);
            worst = std::max(worst, metric(traj.at(s - c), base));
        }
        return worst;
    };
    // sup over the whole line of the shifted curve against the constant curve at the backward limit;
    // the shift only reparametrizes, so the sup runs over the same set of points
    auto full_distance = [&](double) {
        double worst = metric(top, base);
        for (const Vec& p : traj.points) worst = std::max(worst, metric(p, base));
        return worst;
    };

    rep.baseline_window = window_distance(0.0);
    rep.baseline_full = full_distance(0.0);
    std::vector<double> sorted = shifts;
    std::sort(sorted.begin(), sorted.end());
    for (double c : sorted) rep.entries.push_back({c, window_distance(c), full_distance(c)});
    rep.window_monotone = true;
    for (std::size_t i = 1; i < rep.entries.size(); ++i)
        if (!(rep.entries[i].window_distance < rep.entries[i - 1].window_distance)) rep.window_monotone = false;
    bool far = true;
    for (const auto& e : rep.entries) far = far && e.full_distance >= rep.half_diameter;
    rep.witness = !rep.degenerate && rep.window_monotone && far;
    return rep;
}

}  // namespace mfl::morsebott
