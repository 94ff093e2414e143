#pragma once

#include "mfl/geometry.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace mfl::flowcore {

using geometry::CoarseMetric;
using geometry::EmbeddedManifold;
using geometry::ScalarField;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Limit {
    Vec point;
    bool reliable = true;
};

// Discretized gradient flow line. For two-sided lines the grid extends to
// negative s and limit_minus holds the backward end.
struct Trajectory {
    std::vector<double> s;
    std::vector<Vec> points;
    std::optional<Limit> limit;
    std::optional<Limit> limit_minus;
    std::vector<double> f_values;
    std::vector<double> G_values;

    std::size_t size() const { return s.size(); }
    Trajectory shifted(double s0) const;  // grid moved by s0, points unchanged
    // Linear interpolation; limits (or end points) outside the grid.
    Vec at(double t) const;
};

void fill_caches(Trajectory& traj, const EmbeddedManifold& M, const ScalarField& f);
Trajectory constant_trajectory(const Vec& p, const std::vector<double>& s_grid, const EmbeddedManifold& M,
                               const ScalarField& f);

struct CriticalSetSample {
    std::vector<Vec> points;
    double zeta = 0.0;
    std::optional<int> dim;
    std::function<Vec(const Vec&)> nearest;  // exact nearest point on Z when known

    double distance_to(const Vec& p) const;
};

struct ModuliFamily {
    std::vector<Trajectory> members;
    double E0 = 0.0;
    double a = 0.0;
};

// Trapezoid rule over G; +inf when the last segment exceeds the overflow guard.
double energy_of(const Trajectory& traj, double overflow_guard = 1e12);
double flow_identity_residual(const Trajectory& traj);

enum class GapMode { Positive, Negative, Ordinary };
double spectral_gap(const std::vector<double>& critical_values, double zeta, GapMode mode);

struct UniformDistance {
    double value = 0.0;
    bool limits_included = true;
};
UniformDistance uniform_distance(const Trajectory& a, const Trajectory& b, const CoarseMetric& metric);

struct CompactnessOptions {
    double gap = kInf;  // positive spectral gap of Z
    double entry_radius = 0.5;
    double eps_cluster = 1e-2;
    double tol = 1e-8;
};

struct ActionViolation {
    std::size_t member = 0;
    std::size_t node = 0;
    double value = 0.0;
};

struct CompactnessReport {
    bool pass = false;
    std::vector<ActionViolation> action_violations;
    double entry_time = kInf;
    bool all_limits_in_Z = true;
    Mat distances;
    std::vector<std::size_t> net;
    std::vector<std::size_t> assignment;
    bool covered = false;
};

// Throws RefusalError when E0 reaches the gap: the shifted family is then non-compact.
CompactnessReport compactness_certificate(const ModuliFamily& family, const CriticalSetSample& Z,
                                          const CoarseMetric& metric, const CompactnessOptions& opt = {});

double delta_neighborhood_estimate(const ModuliFamily& family, const std::function<bool(const Vec&)>& in_U,
                                   double zeta, double grid_max = 1.0, int grid_steps = 1000);

struct ShorteningReport {
    bool pass = false;
    double worst_slack = -kInf;
    std::size_t checked_nodes = 0;
};

ShorteningReport shortening_bound_check(const ModuliFamily& family, const std::function<double(const Vec&)>& Xi,
                                        const std::function<bool(const Vec&)>& in_U, const CoarseMetric& metric,
                                        const CriticalSetSample& Z, double tol = 1e-9);

}  // namespace mfl::flowcore
