#include "mfl/cli.hpp"

#include "mfl/floerlab.hpp"
#include "mfl/flowcore.hpp"
#include "mfl/morsebott.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <numbers>
#include <sstream>

namespace mfl::cli {

namespace {

using json = nlohmann::ordered_json;
using flowcore::CriticalSetSample;
using flowcore::Trajectory;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct ScenarioEntry {
    std::string name;
    std::vector<std::string> claims;
    std::map<std::string, std::string> defaults;
};

const std::vector<ScenarioEntry>& registry() {
    static const std::vector<ScenarioEntry> table = {
        {"sphere-height",
         {"The energy of a gradient flow line equals the action difference of its ends.",
          "Flow lines converging to a nondegenerate critical point approach it exponentially, at the rate of the "
          "Hessian eigenvalue.",
          "Flow lines with energy below the spectral gap form a compact family in the coarse topology.",
          "An energy cap at the spectral gap does not give compactness."},
         {{"theta0", "2.5"},
          {"s_max", "40"},
          {"members", "10"},
          {"E0", "1.9"},
          {"tol_energy", "1e-4"},
          {"tol_rate", "0.05"},
          {"tol_derivative_rate", "0.1"}}},
        {"circle-morse-bott",
         {"Flow lines converging to a Morse-Bott critical manifold decay exponentially at the smallest normal "
          "Hessian eigenvalue.",
          "The velocity of such a flow line decays at the same rate.",
          "The energy of a gradient flow line equals the action difference of its ends."},
         {{"distance", "0.05"},
          {"members", "4"},
          {"s_max", "40"},
          {"tol_energy", "1e-4"},
          {"tol_rate", "0.05"},
          {"tol_derivative_rate", "0.1"}}},
        {"shift-noncompactness",
         {"Shifts of a heteroclinic flow line converge on compact windows to a constant line but stay uniformly "
          "far from it on the whole line, so compactness needs the energy to stay below the gap."},
         {{"shifts", "1,2,4,8"}, {"s_max", "40"}, {"window", "2"}, {"full_floor", "1"}}},
        {"radial-floer-linear",
         {"The operator at the base loop is self-adjoint with kernel equal to the constant loops along the orbit "
          "manifold.",
          "Solutions of the linearized Floer equation in the stable subspace decay at the least negative "
          "eigenvalue."},
         {{"N", "63"}, {"M", "150"}, {"S_max", "1.5"}, {"amplitude", "1e-3"}, {"tol_rate", "1e-3"},
          {"dump_cylinder", "false"}}},
        {"radial-floer-newton",
         {"Floer cylinders near a Morse-Bott family of periodic orbits converge exponentially, at a rate bounded "
          "below by the spectral gap of the operator at the base loop.",
          "The s-derivative of the first-order correction operator equals the second-order one along Floer "
          "cylinders.",
          "The decay coefficient can be chosen continuous in the loop."},
         {{"N", "63"},
          {"M", "200"},
          {"S_max", "2"},
          {"amplitude", "1e-3"},
          {"modes", "4"},
          {"tol_newton", "1e-9"},
          {"rate_fraction", "0.85"},
          {"lipschitz_pairs", "50"},
          {"identity_check", "false"},
          {"identity_M", "40"},
          {"identity_S_max", "1"},
          {"dump_cylinder", "false"}}},
        {"operator-facts",
         {"The operator at the base loop is self-adjoint, its range is orthogonal to its kernel, and it is "
          "coercive on the range.",
          "Operators at nearby loops and the loop derivative annihilate the kernel directions.",
          "The defect of the tubular chart factors through the normal coordinate."},
         {{"N", "127"},
          {"samples", "100"},
          {"loops", "4"},
          {"loop_amplitude", "0.05"},
          {"tol_self_adjoint", "1e-6"},
          {"tol_relative", "1e-8"},
          {"tol_doubling", "1e-6"},
          {"doubling_modes", "10"},
          {"hadamard_points", "50"},
          {"tol_hadamard", "1e-8"}}},
        {"reeb-profile",
         {"The time-one map of a radial Hamiltonian is Morse-Bott along its periodic orbits exactly when the "
          "profile is strictly convex.",
          "The action r h'(r) - h(r) increases where h is convex.",
          "The actions of the periodic orbits determine the spectral gap."},
         {{"k_max", "4"}, {"orbit_samples", "6"}, {"rho_max", "4"}, {"rho_points", "40"}}},
    };
    return table;
}

const ScenarioEntry& entry(const std::string& name) {
    for (const auto& e : registry())
        if (e.name == name) return e;
    throw ConfigError("unknown scenario '" + name + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front())
        return s.substr(1, s.size() - 2);
    return s;
}

bool is_flag_default(const std::string& v) { return v == "true" || v == "false"; }
bool is_list_default(const std::string& v) { return v.find(',') != std::string::npos; }

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const std::string t = trim(v);
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
        throw ConfigError("parameter '" + key + "': not a number: '" + v + "'");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <class F>
auto parallel_map(int n, F f) {
    using R = decltype(f(0));
    std::vector<std::future<R>> jobs;
    for (int k = 0; k < n; ++k) jobs.push_back(std::async(std::launch::async, f, k));
    std::vector<R> out;
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

Vec vec3(double a, double b, double c) {
    Vec v(3);
    v << a, b, c;
    return v;
}

class Recorder {
public:
    explicit Recorder(RunReport& r) : r_(r) {}
    void check(const std::string& name, bool pass, double value, double tolerance) {
        r_.checks.push_back({name, pass, value, tolerance});
    }
    // |value| <= tolerance
    void within(const std::string& name, double value, double tolerance) {
        check(name, std::isfinite(value) && std::abs(value) <= tolerance, value, tolerance);
    }
    void fit(const std::string& key, double v) { r_.fitted[key] = v; }

private:
    RunReport& r_;
};

double smallest_normal_eigenvalue(const Mat& H) {
    Eigen::SelfAdjointEigenSolver<Mat> es(H);
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < H.rows(); ++i) {
        const double v = std::abs(es.eigenvalues()(i));
        if (v > 1e-6 * scale) best = std::min(best, v);
    }
    return best;
}

double energy_residual(const Trajectory& t) {
    return std::abs(flowcore::energy_of(t) - (t.f_values.back() - t.f_values.front()));
}

void fill_distance_series(DecaySeries& series, const Trajectory& t, const geometry::CoarseMetric& metric) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        series.s.push_back(t.s[i]);
        series.dist.push_back(metric(t.points[i], t.limit->point));
    }
}

// ---- finite-dimensional scenarios ----

void sphere_height(const ScenarioConfig& c, RunReport& rep) {
    Recorder out(rep);
    const auto M = geometry::unit_sphere(3);
    const auto f = geometry::fields::height(3);
    const auto metric = geometry::chordal_metric();
    const double s_max = c.number("s_max"), th0 = c.number("theta0");

    const Trajectory t = morsebott::integrate_gradient_flow(M, f, vec3(std::sin(th0), 0.0, std::cos(th0)), s_max);
    if (!t.limit) throw FitError("flow line from theta0 has no detected limit");
    const double E = flowcore::energy_of(t);
    out.within("energy-action-identity", energy_residual(t), c.number("tol_energy") * (1.0 + E));

    CriticalSetSample Z;
    Z.points = {vec3(0, 0, 1)};
    Z.zeta = 1.0;
    Z.dim = 0;
    const double gap = flowcore::spectral_gap({-1.0}, Z.zeta, flowcore::GapMode::Positive);
    out.within("spectral-gap", gap - 2.0, 1e-12);
    out.check("morse-bott", morsebott::morse_bott_verify(M, f, Z).pass, 0.0, 0.0);

    const auto fit = morsebott::fit_exponential_decay(t, t.limit->point, metric);
    const double lam = smallest_normal_eigenvalue(geometry::tangent_hessian(M, f, t.limit->point).matrix);
    out.within("decay-rate", fit.B_hat - lam, c.number("tol_rate") * lam);
    const auto bound = morsebott::check_decay_bound(t, fit, Z.zeta, metric);
    out.check("decay-bound", bound.violations == 0, bound.worst_ratio, 1.0);
    out.within("derivative-rate", bound.derivative_rate - lam, c.number("tol_derivative_rate") * lam);

    flowcore::ModuliFamily fam;
    fam.E0 = c.number("E0");
    const CounterRng root(c.seed);
    fam.members = parallel_map(c.integer("members"), [&](int k) {
        CounterRng rng = root.substream(static_cast<std::uint64_t>(k));
        const double z0 = 1.0 - fam.E0 * (0.05 + 0.95 * rng.next_uniform());
        const double th = std::acos(z0), ph = kTwoPi * rng.next_uniform();
        return morsebott::integrate_gradient_flow(
            M, f, vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), std::cos(th)), s_max);
    });
    flowcore::CompactnessOptions opt;
    opt.gap = gap;
    if (fam.E0 < gap) {
        const auto cert = flowcore::compactness_certificate(fam, Z, metric, opt);
        out.check("compactness-below-gap", cert.pass, static_cast<double>(cert.action_violations.size()), 0.0);
        out.fit("entry_time", cert.entry_time);
        out.fit("net_size", static_cast<double>(cert.net.size()));
    }
    fam.E0 = gap;
    bool refused = false;
    try {
        flowcore::compactness_certificate(fam, Z, metric, opt);
    } catch (const RefusalError&) {
        refused = true;
    }
    out.check("refusal-at-gap", refused, gap, gap);

    out.fit("A_hat", fit.A_hat);
    out.fit("B_hat", fit.B_hat);
    out.fit("gap", gap);
    out.fit("hessian_eigenvalue", lam);
    out.fit("energy", E);
    fill_distance_series(rep.series, t, metric);
}

void circle_morse_bott(const ScenarioConfig& c, RunReport& rep) {
    Recorder out(rep);
    const auto M = geometry::euclidean_space(3);
    const auto f = geometry::fields::circle_well();
    const auto metric = geometry::chordal_metric();
    CriticalSetSample Z;
    for (int k = 0; k < 16; ++k) Z.points.push_back(vec3(std::cos(kTwoPi * k / 16), std::sin(kTwoPi * k / 16), 0.0));
    Z.zeta = 0.0;
    Z.dim = 1;
    Z.nearest = [](const Vec& p) {
        const double r = std::hypot(p(0), p(1));
        return vec3(p(0) / r, p(1) / r, 0.0);
    };
    out.check("morse-bott", morsebott::morse_bott_verify(M, f, Z).pass, 0.0, 0.0);

    const double rho = c.number("distance"), s_max = c.number("s_max");
    const CounterRng root(c.seed);
    const auto flows = parallel_map(c.integer("members"), [&](int k) {
        CounterRng rng = root.substream(static_cast<std::uint64_t>(k));
        const double a = kTwoPi * rng.next_uniform(), b = kTwoPi * rng.next_uniform();
        const double r = 1.0 + rho * std::cos(b);
        return morsebott::integrate_gradient_flow(M, f, vec3(r * std::cos(a), r * std::sin(a), rho * std::sin(b)),
                                                  s_max);
    });

    double energy = 0.0, rate = 0.0, derivative = 0.0, worst_ratio = 0.0;
    double b_min = std::numeric_limits<double>::infinity(), b_max = 0.0, lam0 = 0.0;
    bool energy_ok = true, rate_ok = true, derivative_ok = true, bound_ok = true;
    for (std::size_t k = 0; k < flows.size(); ++k) {
        const Trajectory& t = flows[k];
        const auto lim = morsebott::detect_limit(t, Z);
        if (!lim) throw FitError("member " + std::to_string(k) + " has no detected limit on the circle");
        const double E = flowcore::energy_of(t);
        const double er = energy_residual(t);
        energy = std::max(energy, er);
        energy_ok = energy_ok && er <= c.number("tol_energy") * (1.0 + E);

        const auto fit = morsebott::fit_exponential_decay(t, *lim, metric);
        const double lam = smallest_normal_eigenvalue(geometry::tangent_hessian(M, f, *lim).matrix);
        if (k == 0) lam0 = lam;
        const double dr = std::abs(fit.B_hat - lam) / lam;
        rate = std::max(rate, dr);
        rate_ok = rate_ok && dr <= c.number("tol_rate");
        Trajectory tl = t;
        tl.limit = flowcore::Limit{*lim, true};
        const auto bound = morsebott::check_decay_bound(tl, fit, Z.zeta, metric);
        worst_ratio = std::max(worst_ratio, bound.worst_ratio);
        bound_ok = bound_ok && bound.violations == 0;
        const double dd = std::abs(bound.derivative_rate - lam) / lam;
        derivative = std::max(derivative, dd);
        derivative_ok = derivative_ok && dd <= c.number("tol_derivative_rate");
        b_min = std::min(b_min, fit.B_hat);
        b_max = std::max(b_max, fit.B_hat);
        if (k == 0) {
            out.fit("A_hat", fit.A_hat);
            out.fit("B_hat", fit.B_hat);
            fill_distance_series(rep.series, tl, metric);
        }
    }
    out.check("energy-action-identity", energy_ok, energy, c.number("tol_energy"));
    out.check("decay-rate", rate_ok, rate, c.number("tol_rate"));
    out.check("decay-bound", bound_ok, worst_ratio, 1.0);
    out.check("derivative-rate", derivative_ok, derivative, c.number("tol_derivative_rate"));
    out.fit("B_hat_min", b_min);
    out.fit("B_hat_max", b_max);
    out.fit("hessian_eigenvalue", lam0);
}

void shift_noncompactness(const ScenarioConfig& c, RunReport& rep) {
    Recorder out(rep);
    const auto metric = geometry::chordal_metric();
    const auto het = morsebott::heteroclinic_flow(geometry::unit_sphere(3), geometry::fields::height(3),
                                                  vec3(1, 0, 0), c.number("s_max"));
    const auto d = morsebott::shift_family_diagnostic(het, c.list("shifts"), metric, c.number("window"));
    double full_min = std::numeric_limits<double>::infinity();
    for (const auto& e : d.entries) {
        full_min = std::min(full_min, e.full_distance);
        out.fit("window_distance@" + format_double(e.shift), e.window_distance);
        out.fit("full_distance@" + format_double(e.shift), e.full_distance);
    }
    out.check("window-distance-decreasing", d.window_monotone, d.entries.back().window_distance,
              d.baseline_window);
    out.check("full-line-distance-bounded-below", full_min >= c.number("full_floor"), full_min,
              c.number("full_floor"));
    out.check("non-compactness-witness", d.witness, 0.0, 0.0);
}

// ---- loop-space scenarios ----

using floerlab::BaseLoop;
using floerlab::CylinderGrid;
using floerlab::RadialFloerModel;

void fill_decay_series(DecaySeries& series, const floerlab::DecayReport& d) {
    series.s = d.s;
    series.dist = d.dist;
    series.l2_qnorm = d.l2;
    series.h2_qnorm = d.h2;
    series.dsu_sup = d.dsu;
}

void dump_cylinder(const ScenarioConfig& c, const floerlab::FloerModel& model, const CylinderGrid& cyl) {
    std::error_code ec;
    std::filesystem::create_directories(c.out_dir, ec);
    const auto path = c.out_dir / (c.scenario + "_cylinder.csv");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    const int d = cyl.slices.front().dim;
    os << "s,t";
    for (int i = 1; i <= d / 2; ++i) os << ",x" << i << ",y" << i;
    os << '\n';
    for (std::size_t m = 0; m < cyl.s.size(); ++m) {
        const auto u = floerlab::shift_loops(cyl.slices[m], 1);
        for (int j = 0; j < u.n_points; ++j) {
            const Vec p = model.chart_inverse(u.values.row(j).transpose());
            os << format_double(cyl.s[m]) << ',' << format_double(u.t(j));
            for (int i = 0; i < p.size(); ++i) os << ',' << format_double(p(i));
            os << '\n';
        }
    }
}

double least_negative_eigenvalue(const floerlab::SpectralSplit& sp) {
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < sp.eigenvalues.size(); ++i)
        if (sp.eigenvalues(i) < -sp.kernel_tol) best = std::max(best, sp.eigenvalues(i));
    return best;
}

void radial_floer_linear(const ScenarioConfig& c, RunReport& rep) {
    Recorder out(rep);
    const RadialFloerModel model;
    const int N = c.integer("N");
    const BaseLoop b = floerlab::base_loop(model, N);
    const auto& sp = b.split;
    out.check("kernel-dimension", sp.kernel_basis.cols() == model.orbit_dim(),
              static_cast<double>(sp.kernel_basis.cols()), model.orbit_dim());

    const Mat neg = sp.negative_modes();
    Vec z = neg.col(neg.cols() - 1);
    z *= c.number("amplitude") / z.cwiseAbs().maxCoeff();
    const CylinderGrid cyl = floerlab::linear_stable_evolution(sp, floerlab::LoopGrid::unflatten(z, N, 2),
                                                               floerlab::uniform_s_grid(c.number("S_max"), c.integer("M")));
    const auto d = floerlab::measure_decay(cyl, sp, model);
    const double lam = -least_negative_eigenvalue(sp);
    out.within("l2-rate-matches-eigenvalue", -d.fit_l2.slope - lam, c.number("tol_rate"));

    double worst = 0.0;
    for (std::size_t m = 0; m < d.s.size(); ++m)
        worst = std::max(worst, d.l2[m] / (d.l2.front() * std::exp(-lam * (d.s[m] - d.s.front()))));
    out.check("l2-bound-at-eigenvalue-rate", worst <= 1.0 + 1e-9, worst, 1.0);
    out.check("rates-above-floor", d.rates_hold, -d.fit_l2.slope, d.rate_floor);

    const auto mp = floerlab::maximum_principle_check(d.s, d.l2, d.rate_floor);
    out.check("maximum-principle", mp.inequality_holds && mp.conclusion_holds, mp.max_excess, 1e-6);

    out.fit("c0", sp.c0);
    out.fit("rate_floor", d.rate_floor);
    out.fit("least_negative_eigenvalue", -lam);
    out.fit("B_hat", -d.fit_l2.slope);
    out.fit("A_hat", std::exp(d.fit_l2.intercept));
    fill_decay_series(rep.series, d);
    if (c.flag("dump_cylinder")) dump_cylinder(c, model, cyl);
}

void radial_floer_newton(const ScenarioConfig& c, RunReport& rep) {
    Recorder out(rep);
    const RadialFloerModel model;
    const int N = c.integer("N");
    const BaseLoop b = floerlab::base_loop(model, N);
    const auto& sp = b.split;

    const Mat neg = sp.negative_modes();
    const int modes = std::min<int>(c.integer("modes"), static_cast<int>(neg.cols()));
    CounterRng rng(c.seed);
    Vec z = Vec::Zero(neg.rows());
    for (int k = 1; k <= modes; ++k) z += rng.next_normal() * neg.col(neg.cols() - k);
    z *= c.number("amplitude") / z.cwiseAbs().maxCoeff();
    const auto Zi = floerlab::LoopGrid::unflatten(z, N, 2);

    floerlab::NewtonOptions nopt;
    nopt.tol = c.number("tol_newton");
    const CylinderGrid cyl = floerlab::nonlinear_floer_solve(model, b, Zi, c.number("S_max"), c.integer("M"), nopt);
    out.within("newton-residual", cyl.residual, nopt.tol);

    floerlab::DecayOptions dopt;
    dopt.rate_fraction = c.number("rate_fraction");
    const auto d = floerlab::measure_decay(cyl, sp, model, dopt);
    double worst = 0.0;
    for (std::size_t m = 0; m < d.s.size(); ++m) {
        const double env = d.xi * std::exp(-d.rate_floor * (d.s[m] - d.s.front()));
        worst = std::max(worst, d.l2[m] / env);
    }
    out.check("h2-cauchy-tail", d.converging, d.cauchy_tail, dopt.tail_ratio);
    out.check("l2-bound-with-initial-norm", d.l2_bound_holds, worst, 1.0);
    out.check("l2-rate", d.fitted && -d.fit_l2.slope >= d.rate_floor, -d.fit_l2.slope, d.rate_floor);
    out.check("h2-rate", d.fitted && -d.fit_h2.slope >= d.rate_floor, -d.fit_h2.slope, d.rate_floor);
    out.check("dsu-rate", d.fitted && -d.fit_dsu.slope >= d.rate_floor, -d.fit_dsu.slope, d.rate_floor);

    CounterRng lrng = CounterRng(c.seed).substream(1);
    const auto lip = floerlab::xi_lipschitz_check(model, sp, lrng, c.integer("lipschitz_pairs"));
    out.check("xi-lipschitz", lip.pass, lip.lipschitz, 1.0);

    if (c.flag("identity_check")) {
        const int M1 = c.integer("identity_M");
        const double S1 = c.number("identity_S_max");
        const auto c1 = floerlab::nonlinear_floer_solve(model, b, Zi, S1, M1, nopt);
        const auto c2 = floerlab::nonlinear_floer_solve(model, b, Zi, S1, 2 * M1, nopt);
        const auto m1 = static_cast<std::size_t>(M1 / 5);
        const double r1 = floerlab::check_dsB_equals_C(model, c1, b.g, {m1}).max_residual;
        const double r2 = floerlab::check_dsB_equals_C(model, c2, b.g, {2 * m1}).max_residual;
        const double ratio = r1 / r2;
        out.check("dsB-equals-C-second-order", ratio >= 3.5 && ratio <= 4.5, ratio, 4.0);
        out.fit("identity_residual_coarse", r1);
        out.fit("identity_residual_fine", r2);
    }

    out.fit("c0", sp.c0);
    out.fit("rate_floor", d.rate_floor);
    out.fit("xi", d.xi);
    out.fit("B_hat", -d.fit_l2.slope);
    out.fit("A_hat", std::exp(d.fit_l2.intercept));
    out.fit("B_hat_h2", -d.fit_h2.slope);
    out.fit("B_hat_dsu", -d.fit_dsu.slope);
    out.fit("newton_iterations", cyl.iterations);
    out.fit("lipschitz", lip.lipschitz);
    fill_decay_series(rep.series, d);
    if (c.flag("dump_cylinder")) dump_cylinder(c, model, cyl);
}

std::vector<double> sorted_by_magnitude(const Vec& ev) {
    std::vector<double> v(ev.data(), ev.data() + ev.size());
    std::sort(v.begin(), v.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    return v;
}

void operator_facts(const ScenarioConfig& c, RunReport& rep) {
    Recorder out(rep);
    const RadialFloerModel model;
    const int N = c.integer("N");
    const BaseLoop b = floerlab::base_loop(model, N);
    CounterRng rng(c.seed);

    std::vector<floerlab::LoopOperator> samples;
    const double amp = c.number("loop_amplitude");
    for (int s = 0; s < c.integer("loops"); ++s) {
        floerlab::LoopGrid x(N, 2);
        for (int comp = 0; comp < 2; ++comp)
            for (int k = 0; k <= 3; ++k) {
                const double p = rng.next_normal() * amp / (1 + k), q = rng.next_normal() * amp / (1 + k);
                for (int j = 0; j < N; ++j)
                    x.values(j, comp) += p * std::cos(kTwoPi * k * x.t(j)) + q * std::sin(kTwoPi * k * x.t(j));
            }
        samples.push_back(loopfield::build_operator_A(x, model));
    }
    const auto f = loopfield::check_operator_facts(b.split, b.A0, samples, loopfield::derivative_matrix(N, 2), rng,
                                                   c.integer("samples"));
    const double rel = c.number("tol_relative") * f.a0_norm;
    out.within("self-adjoint", f.self_adjoint_residual, c.number("tol_self_adjoint"));
    out.check("kernel-dimension", b.split.kernel_basis.cols() == model.orbit_dim(),
              static_cast<double>(b.split.kernel_basis.cols()), model.orbit_dim());
    out.within("range-orthogonal-to-kernel", f.range_residual, rel);
    out.within("nearby-operators-annihilate-kernel", f.kernel_residual, rel);
    out.within("derivative-annihilates-kernel", f.derivative_residual, rel);
    out.check("coercive-on-range", f.coercivity_violations == 0, f.coercivity_min_ratio, b.split.c0);

    const BaseLoop fine = floerlab::base_loop(model, 2 * N + 1);
    const auto a = sorted_by_magnitude(b.split.eigenvalues), bb = sorted_by_magnitude(fine.split.eigenvalues);
    double drift = 0.0;
    const auto n_modes = static_cast<std::size_t>(std::min<int>(c.integer("doubling_modes"), static_cast<int>(a.size())));
    for (std::size_t i = 0; i < n_modes; ++i) drift = std::max(drift, std::abs(a[i] - bb[i]));
    out.within("grid-doubling-stability", drift, c.number("tol_doubling"));

    double had = 0.0;
    auto F = [&](const Vec& q) { return model.defect(q); };
    for (int s = 0; s < c.integer("hadamard_points"); ++s) {
        Vec q(2);
        q << rng.next_uniform(), 2.0 * model.chart_radius * (rng.next_uniform() - 0.5);
        const Mat S = loopfield::hadamard_factor(F, q, 1);
        const Vec fq = F(q);
        had = std::max(had, (fq - S * q.tail(1)).norm() / (1.0 + fq.norm()));
    }
    out.within("hadamard-reconstruction", had, c.number("tol_hadamard"));

    out.fit("c0", b.split.c0);
    out.fit("a0_norm", f.a0_norm);
    out.fit("coercivity_min_ratio", f.coercivity_min_ratio);
}

void reeb_profile(const ScenarioConfig& c, RunReport& rep) {
    Recorder out(rep);
    const floerlab::RadialHamiltonian sys;
    const auto mb = floerlab::mb_condition_check(sys, sys.orbit_samples(c.integer("orbit_samples")));
    int dim = 0;
    for (int d : mb.fixed_dims) dim = std::max(dim, d);
    out.check("monodromy-morse-bott", mb.pass, dim, mb.expected_dim);
    const floerlab::RadialHamiltonian linear({floerlab::RadialProfile{0.0, kTwoPi}});
    const auto bad = floerlab::mb_condition_check(linear, linear.orbit_samples(c.integer("orbit_samples")));
    int bad_dim = 0;
    for (int d : bad.fixed_dims) bad_dim = std::max(bad_dim, d);
    out.check("linear-profile-control-fails", !bad.pass, bad_dim, bad.expected_dim);

    const floerlab::RadialProfile h;
    std::vector<double> grid;
    const int n = c.integer("rho_points");
    for (int i = 1; i <= n; ++i) grid.push_back(c.number("rho_max") * i / n);
    const auto prof = floerlab::reeb_action_profile([&](double r) { return h.value(r); }, grid);
    out.check("action-monotone-where-convex", prof.monotone_where_convex, 0.0, 0.0);

    const auto acts = floerlab::periodic_orbit_actions(h, c.integer("k_max"));
    double worst = 0.0;
    for (std::size_t k = 0; k < acts.size(); ++k)
        worst = std::max(worst, std::abs(acts[k] - std::numbers::pi * static_cast<double>(k * k)));
    out.within("orbit-actions", worst, 1e-12);
    if (acts.size() >= 2) {
        std::vector<double> others = acts;
        others.erase(others.begin() + 1);
        const double gap = flowcore::spectral_gap(others, acts[1], flowcore::GapMode::Positive);
        out.within("spectral-gap", gap - std::numbers::pi, 1e-9);
        out.fit("gap", gap);
    }
}

using Runner = void (*)(const ScenarioConfig&, RunReport&);

Runner runner_for(const std::string& name) {
    if (name == "sphere-height") return sphere_height;
    if (name == "circle-morse-bott") return circle_morse_bott;
    if (name == "shift-noncompactness") return shift_noncompactness;
    if (name == "radial-floer-linear") return radial_floer_linear;
    if (name == "radial-floer-newton") return radial_floer_newton;
    if (name == "operator-facts") return operator_facts;
    if (name == "reeb-profile") return reeb_profile;
    throw ConfigError("unknown scenario '" + name + "'");
}

json number_json(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double number_from(const json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
}

json vector_json(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(number_json(x));
    return a;
}

std::vector<double> vector_from(const json& j) {
    std::vector<double> v;
    for (const auto& x : j) v.push_back(number_from(x));
    return v;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace

const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& e : registry()) v.push_back(e.name);
        return v;
    }();
    return names;
}

const std::vector<std::string>& claims_for(const std::string& scenario) { return entry(scenario).claims; }

const std::map<std::string, std::string>& defaults_for(const std::string& scenario) {
    return entry(scenario).defaults;
}

double ScenarioConfig::number(const std::string& key) const {
    const auto it = params.find(key);
    if (it == params.end()) throw ConfigError("missing parameter '" + key + "'");
    return parse_double(key, it->second);
}

int ScenarioConfig::integer(const std::string& key) const {
    const double v = number(key);
    if (v != std::floor(v) || std::abs(v) > 1e9) throw ConfigError("parameter '" + key + "' must be an integer");
    return static_cast<int>(v);
}

bool ScenarioConfig::flag(const std::string& key) const {
    const auto it = params.find(key);
    if (it == params.end()) throw ConfigError("missing parameter '" + key + "'");
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("parameter '" + key + "' must be true or false");
}

std::vector<double> ScenarioConfig::list(const std::string& key) const {
    const auto it = params.find(key);
    if (it == params.end()) throw ConfigError("missing parameter '" + key + "'");
    std::string s = trim(it->second);
    if (!s.empty() && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, item));
    if (out.empty()) throw ConfigError("parameter '" + key + "' is an empty list");
    return out;
}

ScenarioConfig parse_config(const std::string& text) {
    std::stringstream cleaned;
    std::stringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (!t.empty() && t.front() == '#') continue;
        cleaned << line << '\n';
    }
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::ini_parser::read_ini(cleaned, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    ScenarioConfig cfg;
    std::map<std::string, std::string> given;
    for (const auto& [key, node] : tree) {
        if (!node.empty()) throw ConfigError("config: sections are not supported ('" + key + "')");
        given[key] = unquote(trim(node.data()));
    }
    if (!given.count("scenario")) throw ConfigError("config: missing 'scenario'");
    cfg.scenario = given["scenario"];
    const auto& defaults = defaults_for(cfg.scenario);
    given.erase("scenario");
    if (given.count("seed")) {
        const std::string s = given["seed"];
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), cfg.seed);
        if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("config: seed must be an unsigned integer");
        given.erase("seed");
    }
    if (given.count("out")) {
        cfg.out_dir = given["out"];
        given.erase("out");
    }
    for (const auto& [key, value] : given)
        if (!defaults.count(key)) throw ConfigError("config: unknown key '" + key + "' for scenario " + cfg.scenario);
    cfg.params = defaults;
    for (const auto& [key, value] : given) cfg.params[key] = value;
    validate(cfg);
    return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str());
}

void validate(const ScenarioConfig& config) {
    const auto& defaults = defaults_for(config.scenario);
    for (const auto& [key, value] : config.params) {
        const auto d = defaults.find(key);
        if (d == defaults.end()) throw ConfigError("unknown key '" + key + "' for scenario " + config.scenario);
        if (is_flag_default(d->second)) {
            config.flag(key);
        } else if (is_list_default(d->second)) {
            for (double v : config.list(key))
                if (!std::isfinite(v)) throw ConfigError("parameter '" + key + "' must be finite");
        } else {
            const double v = config.number(key);
            if (!std::isfinite(v) || v <= 0.0) throw ConfigError("parameter '" + key + "' must be positive");
        }
    }
}

bool RunReport::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

const Check* RunReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

RunReport run_scenario(const ScenarioConfig& config) {
    validate(config);
    const Runner run = runner_for(config.scenario);
    RunReport rep;
    rep.scenario = config.scenario;
    rep.claims = claims_for(config.scenario);
    rep.parameters = config.params;
    rep.seed = config.seed;
    const auto start = std::chrono::steady_clock::now();
    try {
        run(config, rep);
    } catch (const ConfigError&) {
        throw;
    } catch (const IoError&) {
        throw;
    } catch (const PreconditionError& e) {
        throw ConfigError(config.scenario + ": " + e.what());
    } catch (const std::exception& e) {
        throw NumericError(config.scenario + ": " + e.what());
    }
    rep.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

std::optional<Format> parse_format(const std::string& s) {
    if (s == "json") return Format::Json;
    if (s == "csv") return Format::Csv;
    return std::nullopt;
}

std::string to_json(const RunReport& r, bool with_clock) {
    json j;
    j["scenario"] = r.scenario;
    j["claims"] = r.claims;
    j["seed"] = r.seed;
    j["parameters"] = json::object();
    for (const auto& [k, v] : r.parameters) j["parameters"][k] = v;
    j["checks"] = json::array();
    for (const auto& c : r.checks)
        j["checks"].push_back(
            {{"name", c.name}, {"pass", c.pass}, {"value", number_json(c.value)}, {"tolerance", number_json(c.tolerance)}});
    j["fitted"] = json::object();
    for (const auto& [k, v] : r.fitted) j["fitted"][k] = number_json(v);
    j["series"] = {{"s", vector_json(r.series.s)},
                   {"dist", vector_json(r.series.dist)},
                   {"l2_qnorm", vector_json(r.series.l2_qnorm)},
                   {"h2_qnorm", vector_json(r.series.h2_qnorm)},
                   {"dsu_sup", vector_json(r.series.dsu_sup)}};
    j["pass"] = r.pass();
    if (with_clock) j["wall_clock_s"] = r.wall_clock_s;
    return j.dump(2) + "\n";
}

RunReport from_json(const std::string& text) {
    RunReport r;
    try {
        const json j = json::parse(text);
        r.scenario = j.at("scenario").get<std::string>();
        r.claims = j.at("claims").get<std::vector<std::string>>();
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& [k, v] : j.at("parameters").items()) r.parameters[k] = v.get<std::string>();
        for (const auto& c : j.at("checks"))
            r.checks.push_back({c.at("name").get<std::string>(), c.at("pass").get<bool>(), number_from(c.at("value")),
                                number_from(c.at("tolerance"))});
        for (const auto& [k, v] : j.at("fitted").items()) r.fitted[k] = number_from(v);
        const auto& s = j.at("series");
        r.series = {vector_from(s.at("s")), vector_from(s.at("dist")), vector_from(s.at("l2_qnorm")),
                    vector_from(s.at("h2_qnorm")), vector_from(s.at("dsu_sup"))};
        if (j.contains("wall_clock_s")) r.wall_clock_s = j["wall_clock_s"].get<double>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("report: ") + e.what());
    }
    return r;
}

std::string checks_csv(const RunReport& r) {
    std::string out = "name,pass,value,tolerance\n";
    for (const auto& c : r.checks)
        out += c.name + ',' + (c.pass ? "true" : "false") + ',' + format_double(c.value) + ',' +
               format_double(c.tolerance) + '\n';
    return out;
}

std::string series_csv(const DecaySeries& d) {
    std::string out = "s,dist,l2_qnorm,h2_qnorm,dsu_sup\n";
    auto cell = [](const std::vector<double>& v, std::size_t i) { return i < v.size() ? format_double(v[i]) : ""; };
    for (std::size_t i = 0; i < d.s.size(); ++i)
        out += format_double(d.s[i]) + ',' + cell(d.dist, i) + ',' + cell(d.l2_qnorm, i) + ',' + cell(d.h2_qnorm, i) +
               ',' + cell(d.dsu_sup, i) + '\n';
    return out;
}

std::vector<std::filesystem::path> emit_report(const RunReport& report, Format format,
                                               const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> written;
    const auto json_path = dir / (report.scenario + ".json");
    write_file(json_path, to_json(report));
    written.push_back(json_path);
    if (format == Format::Csv) {
        const auto checks_path = dir / (report.scenario + "_checks.csv");
        write_file(checks_path, checks_csv(report));
        written.push_back(checks_path);
        if (!report.series.empty()) {
            const auto series_path = dir / (report.scenario + "_decay.csv");
            write_file(series_path, series_csv(report.series));
            written.push_back(series_path);
        }
    }
    return written;
}

int exit_code(const RunReport& report) { return report.pass() ? kPass : kCheckFailure; }

}  // namespace mfl::cli
