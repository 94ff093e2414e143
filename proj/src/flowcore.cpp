#include "mfl/flowcore.hpp"

#include <algorithm>
#include <cmath>

namespace mfl::flowcore {

Trajectory Trajectory::shifted(double s0) const {
    Trajectory out = *this;
    for (double& v : out.s) v += s0;
    return out;
}

Vec Trajectory::at(double t) const {
    if (s.empty()) throw PreconditionError("empty trajectory");
    if (t <= s.front()) return limit_minus && t < s.front() ? limit_minus->point : points.front();
    if (t >= s.back()) return limit && t > s.back() ? limit->point : points.back();
    auto it = std::upper_bound(s.begin(), s.end(), t);
    const std::size_t i = static_cast<std::size_t>(it - s.begin());
    const double w = (t - s[i - 1]) / (s[i] - s[i - 1]);
    return (1.0 - w) * points[i - 1] + w * points[i];
}

void fill_caches(Trajectory& traj, const EmbeddedManifold& M, const ScalarField& f) {
    traj.f_values.resize(traj.size());
    traj.G_values.resize(traj.size());
    for (std::size_t i = 0; i < traj.size(); ++i) {
        traj.f_values[i] = f.value(traj.points[i]);
        traj.G_values[i] = geometry::gradient_field(M, f, traj.points[i]).squaredNorm();
    }
}

Trajectory constant_trajectory(const Vec& p, const std::vector<double>& s_grid, const EmbeddedManifold& M,
                               const ScalarField& f) {
    Trajectory t;
    t.s = s_grid;
    t.points.assign(s_grid.size(), p);
    t.limit = Limit{p, true};
    fill_caches(t, M, f);
    return t;
}

double CriticalSetSample::distance_to(const Vec& p) const {
    if (nearest) return (nearest(p) - p).norm();
    double best = kInf;
    for (const Vec& z : points) best = std::min(best, (z - p).norm());
    return best;
}

double energy_of(const Trajectory& traj, double overflow_guard) {
    double E = 0.0;
    for (std::size_t i = 1; i < traj.size(); ++i) {
        const double seg = 0.5 * (traj.G_values[i] + traj.G_values[i - 1]) * (traj.s[i] - traj.s[i - 1]);
        if (i + 1 == traj.size() && (seg > overflow_guard || !std::isfinite(seg))) return kInf;
        E += seg;
    }
    return E;
}

double flow_identity_residual(const Trajectory& traj) {
    if (traj.size() < 3) throw PreconditionError("flow identity needs at least three nodes");
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < traj.size(); ++i) {
        const double df = (traj.f_values[i + 1] - traj.f_values[i - 1]) / (traj.s[i + 1] - traj.s[i - 1]);
        worst = std::max(worst, std::abs(df - traj.G_values[i]));
    }
    return worst;
}

double spectral_gap(const std::vector<double>& critical_values, double zeta, GapMode mode) {
    double below = kInf, above = kInf;
    for (double v : critical_values) {
        if (v <= zeta) below = std::min(below, zeta - v);
        if (v >= zeta) above = std::min(above, v - zeta);
    }
    switch (mode) {
        case GapMode::Positive: return below;
        case GapMode::Negative: return above;
        case GapMode::Ordinary: return std::min(below, above);
    }
    return kInf;
}

UniformDistance uniform_distance(const Trajectory& a, const Trajectory& b, const CoarseMetric& metric) {
    UniformDistance out;
    double worst = 0.0;
    if (a.s == b.s) {
        for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, metric(a.points[i], b.points[i]));
    } else {
        std::vector<double> grid = a.s;
        grid.insert(grid.end(), b.s.begin(), b.s.end());
        std::sort(grid.begin(), grid.end());
        grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
        for (double t : grid) worst = std::max(worst, metric(a.at(t), b.at(t)));
    }
    if (a.limit && b.limit)
        worst = std::max(worst, metric(a.limit->point, b.limit->point));
    else
        out.limits_included = false;
    if (a.limit_minus && b.limit_minus) worst = std::max(worst, metric(a.limit_minus->point, b.limit_minus->point));
    out.value = worst;
    return out;
}

CompactnessReport compactness_certificate(const ModuliFamily& family, const CriticalSetSample& Z,
                                          const CoarseMetric& metric, const CompactnessOptions& opt) {
    if (family.members.empty()) throw PreconditionError("empty family");
    if (family.E0 >= opt.gap)
        throw RefusalError(
            "energy cap reaches the spectral gap: shifted flow lines escape to broken configurations, "
            "so compactness is not expected");
    CompactnessReport rep;
    const std::size_t n = family.members.size();

    const double lo = Z.zeta - family.E0 - opt.tol;
    const double hi = Z.zeta + opt.tol;
    for (std::size_t m = 0; m < n; ++m) {
        const auto& fv = family.members[m].f_values;
        for (std::size_t i = 0; i < fv.size(); ++i)
            if (fv[i] < lo || fv[i] > hi) rep.action_violations.push_back({m, i, fv[i]});
    }

    double entry = -kInf;
    for (const auto& g : family.members) {
        if (!g.limit || Z.distance_to(g.limit->point) > opt.entry_radius) rep.all_limits_in_Z = false;
        // last node outside the radius decides the entry time
        double first_in = g.s.front();
        bool inside_tail = false;
        for (std::size_t i = g.size(); i-- > 0;) {
            if (Z.distance_to(g.points[i]) > opt.entry_radius) {
                first_in = i + 1 < g.size() ? g.s[i + 1] : kInf;
                break;
            }
            inside_tail = true;
        }
        if (!inside_tail) first_in = kInf;
        entry = std::max(entry, first_in);
    }
    rep.entry_time = entry;

    rep.distances = Mat::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = uniform_distance(family.members[i], family.members[j], metric).value;
            rep.distances(i, j) = d;
            rep.distances(j, i) = d;
        }

    rep.assignment.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        bool hit = false;
        for (std::size_t k = 0; k < rep.net.size(); ++k)
            if (rep.distances(i, rep.net[k]) <= opt.eps_cluster) {
                rep.assignment[i] = k;
                hit = true;
                break;
            }
        if (!hit) {
            rep.assignment[i] = rep.net.size();
            rep.net.push_back(i);
        }
    }
    rep.covered = true;
    for (std::size_t i = 0; i < n; ++i)
        if (rep.distances(i, rep.net[rep.assignment[i]]) > opt.eps_cluster) rep.covered = false;

    rep.pass = rep.action_violations.empty() && rep.all_limits_in_Z && std::isfinite(rep.entry_time) && rep.covered;
    return rep;
}

double delta_neighborhood_estimate(const ModuliFamily& family, const std::function<bool(const Vec&)>& in_U,
                                   double zeta, double grid_max, int grid_steps) {
    // delta works iff it stays below zeta - f at every sampled point outside U
    double bound = kInf;
    for (const auto& g : family.members) {
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!in_U(g.points[i])) bound = std::min(bound, zeta - g.f_values[i]);
        if (g.limit && !in_U(g.limit->point)) bound = std::min(bound, 0.0);
    }
    double best = 0.0;
    for (int k = 1; k <= grid_steps; ++k) {
        const double delta = grid_max * k / grid_steps;
        if (delta < bound)
            best = delta;
        else
            break;
    }
    return best;
}

ShorteningReport shortening_bound_check(const ModuliFamily& family, const std::function<double(const Vec&)>& Xi,
                                        const std::function<bool(const Vec&)>& in_U, const CoarseMetric& metric,
                                        const CriticalSetSample& Z, double tol) {
    for (const Vec& z : Z.points)
        if (in_U(z) && std::abs(Xi(z)) > 1e-12) throw PreconditionError("shortening function must vanish on Z");
    ShorteningReport rep;
    for (const auto& g : family.members) {
        if (!g.limit) continue;
        const Vec& lim = g.limit->point;
        for (std::size_t i = g.size(); i-- > 0;) {
            if (!in_U(g.points[i])) break;
            rep.worst_slack = std::max(rep.worst_slack, metric(g.points[i], lim) - Xi(g.points[i]));
            ++rep.checked_nodes;
        }
    }
    rep.pass = rep.worst_slack <= tol;
    return rep;
}

}  // namespace mfl::flowcore
