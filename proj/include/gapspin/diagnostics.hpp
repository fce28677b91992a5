#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gapspin/core.hpp"
#include "gapspin/galerkin.hpp"
#include "gapspin/operators.hpp"

namespace gapspin {

constexpr double kDecayFloor = 1e-14;  // E_tilde below this is treated as fully decayed

// Sampled trajectory of the reduced system together with every monitored
// scalar. diss_integral carries the running integral of 4 mu |D|^2 so the
// energy identity can be checked after the fact.
struct TimeSeries {
    int n_modes = 0;
    std::vector<double> t;
    std::vector<VecX> c;
    std::vector<Vec3> Omega;
    std::vector<Vec3> omega1;
    std::vector<Vec3> omega2;
    std::vector<Vec3> omega;
    std::vector<Vec3> omega_R;
    std::vector<double> E_tilde;
    std::vector<double> KE_total;
    std::vector<double> dissipation;   // 2 mu |D(v_n)|^2 at the sample time
    std::vector<double> A_norm;        // |I Omega|
    std::vector<double> v_l2;          // sqrt(rho) L2 norm of the fluid part
    std::vector<double> diss_integral; // integral of 4 mu |D|^2 from t = 0

    std::size_t size() const { return t.size(); }
};

// E(v_n) + Omega.I.Omega; the basis is B-orthonormal, so E(v_n) = sum c^2.
inline double kinetic_energy(const State& s, const GalerkinSystem& sys) {
    if (s.c.size() != sys.n) throw ConfigError("state dimension does not match system");
    return s.c.squaredNorm() + s.Omega.dot(sys.apply_inertia(s.Omega));
}

// |I Omega|, the conserved magnitude of the total angular momentum.
inline double momentum_invariant(const State& s, const GalerkinSystem& sys) {
    if (s.c.size() != sys.n) throw ConfigError("state dimension does not match system");
    return sys.apply_inertia(s.Omega).norm();
}

// Instantaneous viscous power factor 2 mu |D(v_n)|^2 = c.a.c.
inline double dissipation_rate(const State& s, const GalerkinSystem& sys) {
    if (sys.n == 0) return 0.0;
    return s.c.dot(sys.a * s.c);
}

inline void append_sample(TimeSeries& ts, const GalerkinSystem& sys, double t, const State& s,
                          double diss_integral) {
    RigidVelocities vel = reconstruct_velocities(sys, s);
    ts.n_modes = sys.n;
    ts.t.push_back(t);
    ts.c.push_back(s.c);
    ts.Omega.push_back(s.Omega);
    ts.omega1.push_back(vel.omega1);
    ts.omega2.push_back(vel.omega2);
    ts.omega.push_back(vel.omega);
    ts.omega_R.push_back(vel.omega_R);
    double e_tilde = s.c.squaredNorm();
    ts.E_tilde.push_back(e_tilde);
    ts.KE_total.push_back(e_tilde + s.Omega.dot(sys.apply_inertia(s.Omega)));
    ts.dissipation.push_back(dissipation_rate(s, sys));
    ts.A_norm.push_back(sys.apply_inertia(s.Omega).norm());
    double vsq = (sys.n > 0) ? s.c.dot(sys.Mf * s.c) : 0.0;
    ts.v_l2.push_back(std::sqrt(std::max(vsq, 0.0)));
    ts.diss_integral.push_back(diss_integral);
}

inline void validate_time_series(const TimeSeries& ts) {
    for (std::size_t k = 0; k < ts.size(); ++k) {
        if (!std::isfinite(ts.t[k]) || !std::isfinite(ts.KE_total[k]) ||
            !std::isfinite(ts.A_norm[k]) || !std::isfinite(ts.v_l2[k]) ||
            !ts.c[k].allFinite() || !ts.Omega[k].allFinite()) {
            throw InvariantError("time series contains non-finite samples");
        }
        if (k > 0 && !(ts.t[k] > ts.t[k - 1])) {
            throw InvariantError("time series samples are not strictly increasing in t");
        }
    }
}

struct DecayFit {
    double rate = 0.0;  // E_tilde ~ exp(-rate t) over the window
    double r2 = 0.0;
};

// Least-squares fit of log(E_tilde) over [t_begin, t_end]. Samples at or
// below the floor end the usable window: beyond them the signal is noise.
inline DecayFit decay_fit(const TimeSeries& ts, double t_begin, double t_end) {
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < ts.size(); ++k) {
        if (ts.t[k] < t_begin || ts.t[k] > t_end) continue;
        if (ts.E_tilde[k] <= kDecayFloor) break;
        xs.push_back(ts.t[k]);
        ys.push_back(std::log(ts.E_tilde[k]));
    }
    DecayFit fit;
    if (xs.size() < 2) return fit;
    double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        mx += xs[k];
        my += ys[k];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        double dx = xs[k] - mx, dy = ys[k] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx <= 0.0) return fit;
    double slope = sxy / sxx;
    fit.rate = -slope;
    double ss_res = syy - slope * sxy;
    fit.r2 = (syy > 0.0) ? std::max(0.0, 1.0 - ss_res / syy) : 1.0;
    return fit;
}

// Total angular momentum rebuilt from the reconstructed flow field by
// quadrature: I omega1 + [rho Int x cross v + lambda omega]. Along the
// reduced dynamics this must equal I Omega.
inline Vec3 momentum_from_field(const GalerkinSystem& sys, const ModeBasis& basis,
                                const InertiaModel& model, const State& s) {
    RigidVelocities vel = reconstruct_velocities(sys, s);
    ExtendedField f = reconstruct_field(basis, s);
    return model.I * vel.omega1 + moment_map(f, model);
}

inline void write_series_csv(const TimeSeries& ts, std::ostream& out) {
    out << "t,KE_total,E_tilde,dissipation,A_norm,v_l2,"
           "Omega_x,Omega_y,Omega_z,omega1_x,omega1_y,omega1_z,"
           "omega_x,omega_y,omega_z,omegaR_x,omegaR_y,omegaR_z\n";
    for (std::size_t k = 0; k < ts.size(); ++k) {
        out << fmt_g17(ts.t[k]) << ',' << fmt_g17(ts.KE_total[k]) << ',' << fmt_g17(ts.E_tilde[k])
            << ',' << fmt_g17(ts.dissipation[k]) << ',' << fmt_g17(ts.A_norm[k]) << ','
            << fmt_g17(ts.v_l2[k]);
        const Vec3* blocks[4] = {&ts.Omega[k], &ts.omega1[k], &ts.omega[k], &ts.omega_R[k]};
        for (const Vec3* v : blocks) {
            for (int i = 0; i < 3; ++i) out << ',' << fmt_g17((*v)[i]);
        }
        out << '\n';
    }
}

inline void write_series_csv(const TimeSeries& ts, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    write_series_csv(ts, out);
}

struct RunSummary {
    double decay_rate = 0.0;
    double decay_r2 = 0.0;
    double A_drift_rel = 0.0;
    double energy_residual_max = 0.0;
    double final_v_l2_rel = 0.0;
    double final_omega_rel = 0.0;
};

// Scalar verdicts for a finished run. The decay fit uses the late-time
// window [fit_start * T, T].
inline RunSummary summarize(const TimeSeries& ts, double fit_start = 0.5) {
    if (ts.size() == 0) throw ConfigError("cannot summarize an empty time series");
    RunSummary s;
    double T = ts.t.back();
    DecayFit fit = decay_fit(ts, ts.t.front() + fit_start * (T - ts.t.front()), T);
    s.decay_rate = fit.rate;
    s.decay_r2 = fit.r2;
    double a0 = ts.A_norm.front();
    double ke0 = ts.KE_total.front();
    for (std::size_t k = 0; k < ts.size(); ++k) {
        if (a0 > 0.0) s.A_drift_rel = std::max(s.A_drift_rel, std::abs(ts.A_norm[k] - a0) / a0);
        s.energy_residual_max = std::max(
            s.energy_residual_max, std::abs(ts.KE_total[k] - ke0 + ts.diss_integral[k]));
    }
    double v0 = ts.v_l2.front();
    double w0 = ts.omega.front().norm();
    s.final_v_l2_rel = (v0 > 0.0) ? ts.v_l2.back() / v0 : 0.0;
    s.final_omega_rel = (w0 > 0.0) ? ts.omega.back().norm() / w0 : 0.0;
    return s;
}

inline void write_summary_json(const RunSummary& s, std::ostream& out) {
    out << "{\n"
        << "  \"decay_rate\": " << fmt_g17(s.decay_rate) << ",\n"
        << "  \"decay_r2\": " << fmt_g17(s.decay_r2) << ",\n"
        << "  \"A_drift_rel\": " << fmt_g17(s.A_drift_rel) << ",\n"
        << "  \"energy_residual_max\": " << fmt_g17(s.energy_residual_max) << ",\n"
        << "  \"final_v_l2_rel\": " << fmt_g17(s.final_v_l2_rel) << ",\n"
        << "  \"final_omega_rel\": " << fmt_g17(s.final_omega_rel) << "\n"
        << "}\n";
}

inline void write_summary_json(const RunSummary& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    write_summary_json(s, out);
}

}  // namespace gapspin
