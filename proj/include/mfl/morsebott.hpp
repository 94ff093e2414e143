#pragma once

#include "mfl/flowcore.hpp"

#include <optional>
#include <vector>

namespace mfl::morsebott {

using flowcore::CriticalSetSample;
using flowcore::Trajectory;
using geometry::CoarseMetric;
using geometry::EmbeddedManifold;
using geometry::ScalarField;

struct FlowControls {
    double abs_tol = 1e-10;
    double rel_tol = 1e-8;
    double stop_tol = 1e-10;   // |grad f| at which integration ends
    double initial_step = 1e-3;
    double max_step = 1e-2;
    double min_step = 1e-13;
    double drift_tol = 1e-8;
    double blowup = 1e8;       // |point| beyond which the flow is declared divergent
    double direction = 1.0;    // +1 ascending flow, -1 descending
};

Trajectory integrate_gradient_flow(const EmbeddedManifold& M, const ScalarField& f, const Vec& x0, double s_max,
                                   const FlowControls& controls = {});

// Two one-sided flows from x_mid glued at s = 0.
Trajectory heteroclinic_flow(const EmbeddedManifold& M, const ScalarField& f, const Vec& x_mid, double s_max,
                             const FlowControls& controls = {});

struct LimitCriteria {
    double z_tol = 1e-4;
    double tail_diameter = 1e-6;
    double gradient_tol = 1e-8;
};

std::optional<Vec> detect_limit(const Trajectory& traj, const CriticalSetSample& Z, const LimitCriteria& crit = {});

struct LogLinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t used = 0;
    double s_lo = 0.0;
    double s_hi = 0.0;
};

// Least-squares line through (s_i, log y_i) over samples with y_i > floor, skipping the
// leading skip_fraction of the samples. Throws FitError with fewer than min_samples.
LogLinearFit fit_log_linear(const std::vector<double>& s, const std::vector<double>& y, double floor,
                            double skip_fraction = 0.1, std::size_t min_samples = 10);

struct DecayFit {
    double A_hat = 0.0;
    double B_hat = 0.0;
    double r_squared = 0.0;
    double s_lo = 0.0;
    double s_hi = 0.0;
    double noise_floor = 1e-10;
    double zeta = 0.0;
};

DecayFit fit_exponential_decay(const Trajectory& traj, const Vec& limit, const CoarseMetric& metric,
                               double noise_floor = 1e-10);

struct DecayBoundReport {
    bool pass = false;
    std::size_t violations = 0;
    double worst_ratio = 0.0;     // max d / envelope on the window
    double derivative_rate = 0.0;
    bool rate_agrees = false;
    bool trivial = false;
};

DecayBoundReport check_decay_bound(const Trajectory& traj, const DecayFit& fit, double zeta,
                                   const CoarseMetric& metric);

struct MorseBottReport {
    bool pass = false;
    std::vector<int> kernel_dims;
    int expected = 0;
};

MorseBottReport morse_bott_verify(const EmbeddedManifold& M, const ScalarField& f, const CriticalSetSample& Z);

struct WeightedNormSpec {
    double delta = 1.0;
    int k = 0;
};

struct WeightedNorm {
    double value = 0.0;
    bool divergent = false;
};

// Rows of `samples` are u(s0 + i*ds).
WeightedNorm weighted_sobolev_norm(const Mat& samples, double s0, double ds, const WeightedNormSpec& spec);

struct ShiftEntry {
    double shift = 0.0;
    double window_distance = 0.0;
    double full_distance = 0.0;
};

struct ShiftReport {
    std::vector<ShiftEntry> entries;
    double baseline_window = 0.0;
    double baseline_full = 0.0;
    double half_diameter = 0.0;
    bool window_monotone = false;
    bool witness = false;
    bool degenerate = false;
};

ShiftReport shift_family_diagnostic(const Trajectory& traj, const std::vector<double>& shifts,
                                    const CoarseMetric& metric, double window = 2.0, int window_samples = 401);

}  // namespace mfl::morsebott
