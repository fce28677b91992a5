#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gapspin/core.hpp"
#include "gapspin/diagnostics.hpp"
#include "gapspin/galerkin.hpp"

namespace gapspin {

enum class Method { kRk4, kRk45Adaptive };

inline std::string method_name(Method m) {
    return m == Method::kRk4 ? "rk4" : "rk45-adaptive";
}

inline Method parse_method(const std::string& s) {
    if (s == "rk4") return Method::kRk4;
    if (s == "rk45-adaptive") return Method::kRk45Adaptive;
    throw ConfigError("unknown integrator method: " + s);
}

struct IntegratorConfig {
    double dt = 0.0;  // 0 requests the default step 0.1 / sigma_max
    double t_end = 1.0;
    Method method = Method::kRk4;
    double rel_tol = 1e-8;
    double abs_tol = 1e-10;
    // Max per-step energy-identity residual. 0 requests the default
    // 1e-5 * max(1, KE(s0)): a genuine identity violation grows like
    // dt * KE while the legitimate RK4 remainder at the default step is
    // below 1e-7 * KE, so the auto threshold separates the two cleanly.
    double energy_guard = 0.0;
    int output_every = 1;  // sample stride in accepted steps
};

inline void validate_integrator_config(const IntegratorConfig& cfg) {
    if (!(cfg.dt >= 0.0) || !std::isfinite(cfg.dt)) throw ConfigError("integrator.dt must be >= 0");
    if (!(cfg.t_end > 0.0) || !std::isfinite(cfg.t_end)) {
        throw ConfigError("integrator.t_end must be > 0");
    }
    if (!(cfg.rel_tol > 0.0) || !(cfg.abs_tol > 0.0)) {
        throw ConfigError("integrator tolerances must be > 0");
    }
    if (!(cfg.energy_guard >= 0.0)) throw ConfigError("integrator.energy_guard must be >= 0");
    if (cfg.output_every < 1) throw ConfigError("integrator.output_every must be >= 1");
}

// Explicit RK4 is stable for the stiffest linear mode sigma_max at
// dt sigma_max <= 2.785; one tenth of 1/sigma_max leaves a wide margin and
// resolves the fastest decay.
inline double default_time_step(const GalerkinSystem& sys) {
    if (sys.n < 1) throw ConfigError("default time step needs at least one mode");
    double sigma_max = sys.a.diagonal().maxCoeff();
    if (!(sigma_max > 0.0)) throw ConfigError("dissipation spectrum is not positive");
    return 0.1 / sigma_max;
}

namespace detail {

inline State axpy(const State& s, double h, const State& k) {
    State out;
    out.c = s.c + h * k.c;
    out.Omega = s.Omega + h * k.Omega;
    return out;
}

inline bool finite_state(const State& s) { return s.c.allFinite() && s.Omega.allFinite(); }

inline double state_norm(const State& s) {
    return std::sqrt(s.c.squaredNorm() + s.Omega.squaredNorm());
}

struct StepResult {
    State s;
    double diss = 0.0;  // integral of 4 mu |D|^2 over the step, same RK weights
};

inline StepResult rk4_step(const GalerkinSystem& sys, const State& s, double dt) {
    State k1 = rhs(sys, s);
    double p1 = 2.0 * dissipation_rate(s, sys);
    State s2 = axpy(s, 0.5 * dt, k1);
    State k2 = rhs(sys, s2);
    double p2 = 2.0 * dissipation_rate(s2, sys);
    State s3 = axpy(s, 0.5 * dt, k2);
    State k3 = rhs(sys, s3);
    double p3 = 2.0 * dissipation_rate(s3, sys);
    State s4 = axpy(s, dt, k3);
    State k4 = rhs(sys, s4);
    double p4 = 2.0 * dissipation_rate(s4, sys);
    StepResult out;
    out.s.c = s.c + (dt / 6.0) * (k1.c + 2.0 * k2.c + 2.0 * k3.c + k4.c);
    out.s.Omega = s.Omega + (dt / 6.0) * (k1.Omega + 2.0 * k2.Omega + 2.0 * k3.Omega + k4.Omega);
    out.diss = (dt / 6.0) * (p1 + 2.0 * p2 + 2.0 * p3 + p4);
    return out;
}

// Dormand-Prince 5(4) tableau.
struct Dopri {
    static constexpr double a21 = 1.0 / 5.0;
    static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
    static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
    static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0,
                            a53 = 64448.0 / 6561.0, a54 = -212.0 / 729.0;
    static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                            a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
    static constexpr double b1 = 35.0 / 384.0, b3 = 500.0 / 1113.0, b4 = 125.0 / 192.0,
                            b5 = -2187.0 / 6784.0, b6 = 11.0 / 84.0;
    static constexpr double e1 = 35.0 / 384.0 - 5179.0 / 57600.0;
    static constexpr double e3 = 500.0 / 1113.0 - 7571.0 / 16695.0;
    static constexpr double e4 = 125.0 / 192.0 - 393.0 / 640.0;
    static constexpr double e5 = -2187.0 / 6784.0 + 92097.0 / 339200.0;
    static constexpr double e6 = 11.0 / 84.0 - 187.0 / 2100.0;
    static constexpr double e7 = -1.0 / 40.0;
};

struct AdaptiveStep {
    State s;
    double diss = 0.0;
    double err = 0.0;  // scaled error estimate, accept when <= 1
};

inline AdaptiveStep dopri_step(const GalerkinSystem& sys, const State& s, double dt,
                               double rel_tol, double abs_tol) {
    using D = Dopri;
    State k1 = rhs(sys, s);
    State y2 = axpy(s, dt * D::a21, k1);
    State k2 = rhs(sys, y2);
    State y3 = s;
    y3.c += dt * (D::a31 * k1.c + D::a32 * k2.c);
    y3.Omega += dt * (D::a31 * k1.Omega + D::a32 * k2.Omega);
    State k3 = rhs(sys, y3);
    State y4 = s;
    y4.c += dt * (D::a41 * k1.c + D::a42 * k2.c + D::a43 * k3.c);
    y4.Omega += dt * (D::a41 * k1.Omega + D::a42 * k2.Omega + D::a43 * k3.Omega);
    State k4 = rhs(sys, y4);
    State y5 = s;
    y5.c += dt * (D::a51 * k1.c + D::a52 * k2.c + D::a53 * k3.c + D::a54 * k4.c);
    y5.Omega += dt * (D::a51 * k1.Omega + D::a52 * k2.Omega + D::a53 * k3.Omega + D::a54 * k4.Omega);
    State k5 = rhs(sys, y5);
    State y6 = s;
    y6.c += dt * (D::a61 * k1.c + D::a62 * k2.c + D::a63 * k3.c + D::a64 * k4.c + D::a65 * k5.c);
    y6.Omega += dt * (D::a61 * k1.Omega + D::a62 * k2.Omega + D::a63 * k3.Omega +
                      D::a64 * k4.Omega + D::a65 * k5.Omega);
    State k6 = rhs(sys, y6);

    AdaptiveStep out;
    out.s.c = s.c + dt * (D::b1 * k1.c + D::b3 * k3.c + D::b4 * k4.c + D::b5 * k5.c + D::b6 * k6.c);
    out.s.Omega = s.Omega + dt * (D::b1 * k1.Omega + D::b3 * k3.Omega + D::b4 * k4.Omega +
                                  D::b5 * k5.Omega + D::b6 * k6.Omega);
    State k7 = rhs(sys, out.s);

    VecX err_c = dt * (D::e1 * k1.c + D::e3 * k3.c + D::e4 * k4.c + D::e5 * k5.c + D::e6 * k6.c +
                       D::e7 * k7.c);
    Vec3 err_w = dt * (D::e1 * k1.Omega + D::e3 * k3.Omega + D::e4 * k4.Omega + D::e5 * k5.Omega +
                       D::e6 * k6.Omega + D::e7 * k7.Omega);
    double acc = 0.0;
    long count = 0;
    auto add = [&](double e, double y0, double y1) {
        double sc = abs_tol + rel_tol * std::max(std::abs(y0), std::abs(y1));
        acc += (e / sc) * (e / sc);
        ++count;
    };
    for (Eigen::Index i = 0; i < err_c.size(); ++i) add(err_c[i], s.c[i], out.s.c[i]);
    for (int i = 0; i < 3; ++i) add(err_w[i], s.Omega[i], out.s.Omega[i]);
    double err_state = std::sqrt(acc / static_cast<double>(count));

    // Drift in the conserved |I Omega| enters the acceptance test directly.
    double a_old = sys.apply_inertia(s.Omega).norm();
    double a_new = sys.apply_inertia(out.s.Omega).norm();
    double err_mom = std::abs(a_new - a_old) / (abs_tol + rel_tol * std::max(a_old, a_new));
    out.err = std::max(err_state, err_mom);

    double p1 = 2.0 * dissipation_rate(s, sys);
    double p3 = 2.0 * dissipation_rate(y3, sys);
    double p4 = 2.0 * dissipation_rate(y4, sys);
    double p5 = 2.0 * dissipation_rate(y5, sys);
    double p6 = 2.0 * dissipation_rate(y6, sys);
    out.diss = dt * (D::b1 * p1 + D::b3 * p3 + D::b4 * p4 + D::b5 * p5 + D::b6 * p6);
    return out;
}

inline void check_finite(const State& s, double t) {
    if (!finite_state(s)) {
        throw NumericalError("solution blow-up at t = " + fmt_g17(t) +
                             ", state norm = " + fmt_g17(state_norm(s)));
    }
}

inline void check_energy_guard(const GalerkinSystem& sys, const State& before, const State& after,
                               double diss, double guard, double t) {
    double r = std::abs(kinetic_energy(after, sys) - kinetic_energy(before, sys) + diss);
    if (!std::isfinite(r)) {
        // The state components are still finite but their squares are not:
        // the energy monitor overflowed, which is a blow-up, not a broken
        // identity.
        throw NumericalError("energy monitor overflow at t = " + fmt_g17(t));
    }
    if (!(r <= guard)) {
        throw InvariantError("energy identity residual " + fmt_g17(r) + " exceeds guard " +
                             fmt_g17(guard) + " at t = " + fmt_g17(t));
    }
}

}  // namespace detail

// One classical RK4 step.
inline State step(const GalerkinSystem& sys, const State& s, double dt) {
    if (!(dt > 0.0)) throw ConfigError("step size must be > 0");
    if (!detail::finite_state(s)) throw NumericalError("non-finite input state");
    State out = detail::rk4_step(sys, s, dt).s;
    detail::check_finite(out, dt);
    return out;
}

inline TimeSeries integrate(const GalerkinSystem& sys, const State& s0,
                            const IntegratorConfig& cfg) {
    validate_integrator_config(cfg);
    if (s0.c.size() != sys.n) throw ConfigError("initial state dimension does not match system");
    if (!detail::finite_state(s0)) throw NumericalError("non-finite initial state");

    double dt = (cfg.dt > 0.0) ? cfg.dt : default_time_step(sys);
    double guard = (cfg.energy_guard > 0.0)
                       ? cfg.energy_guard
                       : 1e-5 * std::max(1.0, kinetic_energy(s0, sys));
    TimeSeries ts;
    State s = s0;
    double diss_total = 0.0;
    append_sample(ts, sys, 0.0, s, diss_total);

    if (cfg.method == Method::kRk4) {
        double steps_exact = cfg.t_end / dt;
        long n_steps = std::lround(steps_exact);
        bool uniform = n_steps >= 1 && std::abs(steps_exact - static_cast<double>(n_steps)) <
                                           1e-9 * std::max(1.0, steps_exact);
        if (!uniform) n_steps = static_cast<long>(std::floor(steps_exact));
        double t = 0.0;
        for (long k = 0; k < n_steps; ++k) {
            detail::StepResult r = detail::rk4_step(sys, s, dt);
            t = dt * static_cast<double>(k + 1);
            detail::check_finite(r.s, t);
            detail::check_energy_guard(sys, s, r.s, r.diss, guard, t);
            s = r.s;
            diss_total += r.diss;
            if ((k + 1) % cfg.output_every == 0 || k + 1 == n_steps) {
                append_sample(ts, sys, t, s, diss_total);
            }
        }
        if (!uniform && t < cfg.t_end) {
            double h = cfg.t_end - t;
            if (h > 1e-14 * cfg.t_end) {
                detail::StepResult r = detail::rk4_step(sys, s, h);
                detail::check_finite(r.s, cfg.t_end);
                detail::check_energy_guard(sys, s, r.s, r.diss, guard, cfg.t_end);
                s = r.s;
                diss_total += r.diss;
                append_sample(ts, sys, cfg.t_end, s, diss_total);
            }
        }
    } else {
        double t = 0.0;
        double h = std::min(dt, cfg.t_end);
        long accepted = 0;
        while (t < cfg.t_end * (1.0 - 1e-14)) {
            h = std::min(h, cfg.t_end - t);
            if (h < 1e-14 * cfg.t_end) {
                throw NumericalError("adaptive step size underflow at t = " + fmt_g17(t));
            }
            detail::AdaptiveStep r = detail::dopri_step(sys, s, h, cfg.rel_tol, cfg.abs_tol);
            detail::check_finite(r.s, t + h);
            if (r.err <= 1.0) {
                detail::check_energy_guard(sys, s, r.s, r.diss, guard, t + h);
                t += h;
                s = r.s;
                diss_total += r.diss;
                ++accepted;
                if (accepted % cfg.output_every == 0 || t >= cfg.t_end * (1.0 - 1e-14)) {
                    append_sample(ts, sys, t, s, diss_total);
                }
            }
            double factor = (r.err > 0.0) ? 0.9 * std::pow(r.err, -0.2) : 5.0;
            h *= std::clamp(factor, 0.2, 5.0);
        }
    }
    validate_time_series(ts);
    return ts;
}

// Rigid-body Euler equations I dOmega/dt + Omega cross I Omega = 0 as the
// fluid-free oracle; identical to integrate() on a system with no modes.
inline TimeSeries euler_top(const Mat3& I, const Vec3& Omega0, double dt, double t_end) {
    Mat3 offdiag = I - Mat3(I.diagonal().asDiagonal());
    if (offdiag.norm() > 1e-14 * I.norm()) throw ConfigError("euler_top expects a diagonal inertia");
    if (!(I.diagonal().minCoeff() > 0.0)) throw ConfigError("inertia must be positive");
    GalerkinSystem sys = rigid_only_system(I.diagonal());
    State s0;
    s0.c.resize(0);
    s0.Omega = Omega0;
    IntegratorConfig cfg;
    cfg.dt = dt;
    cfg.t_end = t_end;
    cfg.energy_guard = 1e100;  // conservation is measured by the caller, not guarded
    return integrate(sys, s0, cfg);
}

struct StabilityReport {
    double delta = 0.0;
    std::vector<double> ratios;  // final-state distance over initial distance
};

// Finite-perturbation continuous-dependence probe: integrate the base state
// and 10 randomly perturbed copies, report amplification ratios.
inline StabilityReport stability_probe(const GalerkinSystem& sys, const State& s0, double delta,
                                       double t_end, std::uint64_t seed = 0x73746162u) {
    if (delta < 0.0) throw ConfigError("perturbation size must be >= 0");
    IntegratorConfig cfg;
    cfg.t_end = t_end;
    cfg.output_every = 1 << 30;  // final sample only
    TimeSeries base = integrate(sys, s0, cfg);
    State sf;
    sf.c = base.c.back();
    sf.Omega = base.Omega.back();

    StabilityReport rep;
    rep.delta = delta;
    Rng rng(seed);
    for (int k = 0; k < 10; ++k) {
        VecX dir_c = rng.vector(sys.n);
        Vec3 dir_w = rng.vec3();
        double norm = std::sqrt(dir_c.squaredNorm() + dir_w.squaredNorm());
        if (norm == 0.0) norm = 1.0;
        if (delta == 0.0) {
            rep.ratios.push_back(1.0);  // 0/0 resolves to no amplification
            continue;
        }
        State sp = s0;
        sp.c += (delta / norm) * dir_c;
        sp.Omega += (delta / norm) * dir_w;
        TimeSeries pert = integrate(sys, sp, cfg);
        double dist = std::sqrt((pert.c.back() - sf.c).squaredNorm() +
                                (pert.Omega.back() - sf.Omega).squaredNorm());
        rep.ratios.push_back(dist / delta);
    }
    return rep;
}

}  // namespace gapspin
