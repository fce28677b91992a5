#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gapspin/core.hpp"
#include "gapspin/diagnostics.hpp"
#include "gapspin/discretization.hpp"
#include "gapspin/galerkin.hpp"
#include "gapspin/inertia.hpp"
#include "gapspin/integrator.hpp"
#include "gapspin/mesh.hpp"
#include "gapspin/operators.hpp"
#include "gapspin/serialize.hpp"

namespace gapspin {

// ---------------------------------------------------------------------------
// key = value config files: '#' comments, scalars, strings, [a, b, c] lists.

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

struct KeyValues {
    std::vector<std::pair<std::string, std::string>> items;

    static KeyValues from_string(const std::string& text, const std::string& origin) {
        KeyValues kv;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            std::string t = detail::trim(line);
            if (t.empty()) continue;
            std::size_t eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value'");
            }
            std::string key = detail::trim(t.substr(0, eq));
            std::string val = detail::trim(t.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            }
            kv.items.emplace_back(key, val);
        }
        return kv;
    }

    static KeyValues from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str(), path);
    }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& val) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(val, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected a number, got '" + val + "'");
    }
    if (used != val.size()) {
        throw ConfigError("config key '" + key + "': trailing characters in '" + val + "'");
    }
    return out;
}

inline long parse_long(const std::string& key, const std::string& val) {
    std::size_t used = 0;
    long out = 0;
    try {
        out = std::stol(val, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected an integer, got '" + val + "'");
    }
    if (used != val.size()) {
        throw ConfigError("config key '" + key + "': trailing characters in '" + val + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& val) {
    if (val == "true" || val == "1") return true;
    if (val == "false" || val == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + val + "'");
}

inline std::vector<double> parse_list(const std::string& key, const std::string& val) {
    std::string t = trim(val);
    if (t.size() < 2 || t.front() != '[' || t.back() != ']') {
        throw ConfigError("config key '" + key + "': expected [a, b, ...], got '" + val + "'");
    }
    std::string inner = t.substr(1, t.size() - 2);
    std::vector<double> out;
    std::string item;
    std::istringstream in(inner);
    while (std::getline(in, item, ',')) {
        std::string it = trim(item);
        if (it.empty()) {
            if (out.empty() && trim(inner).empty()) break;
            throw ConfigError("config key '" + key + "': empty list element");
        }
        out.push_back(parse_double(key, it));
    }
    return out;
}

inline Vec3 parse_vec3(const std::string& key, const std::string& val) {
    std::vector<double> v = parse_list(key, val);
    if (v.size() != 3) throw ConfigError("config key '" + key + "': expected exactly 3 entries");
    return Vec3(v[0], v[1], v[2]);
}

inline std::string fmt_vec3(const Vec3& v) {
    return "[" + fmt_g17(v[0]) + ", " + fmt_g17(v[1]) + ", " + fmt_g17(v[2]) + "]";
}

inline std::string fmt_list(const std::vector<double>& v) {
    std::string out = "[";
    for (std::size_t k = 0; k < v.size(); ++k) {
        out += fmt_g17(v[k]);
        if (k + 1 < v.size()) out += ", ";
    }
    return out + "]";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scenario configuration.

struct RunConfig {
    MaterialConfig material;
    Vec3 mesh_outer = Vec3::Ones();  // cavity semi-axes
    int refinement = 1;
    int modes = 16;
    IntegratorConfig integrator;
    Vec3 omega1_0 = Vec3::Zero();
    Vec3 omega2_0 = Vec3::Zero();
    std::string v0_preset = "zero";  // rigid-interp | zero | modes
    std::vector<double> v0_coeffs;
    bool zero_total_momentum = false;
    std::uint64_t seed = 0x67617073u;
};

// Named starting points. Spherical presets make the total inertia isotropic;
// balanced-spin additionally zeroes the conserved momentum so the whole
// energy decays and the late-time fit is cleanly exponential.
inline void apply_preset(RunConfig& cfg, const std::string& name) {
    if (name == "counter-rotating") {
        cfg.omega1_0 = Vec3(0.0, 0.0, 1.0);
        cfg.omega2_0 = Vec3(0.0, 0.0, -1.0);
        cfg.v0_preset = "rigid-interp";
        cfg.zero_total_momentum = false;
    } else if (name == "rest") {
        cfg.omega1_0 = Vec3::Zero();
        cfg.omega2_0 = Vec3::Zero();
        cfg.v0_preset = "zero";
        cfg.zero_total_momentum = false;
    } else if (name == "spherical-spin") {
        cfg.material.IB_eigs = Vec3(0.8, 0.8, 0.8);
        cfg.mesh_outer = Vec3::Ones();
        cfg.omega1_0 = Vec3(0.0, 0.0, 1.0);
        cfg.omega2_0 = Vec3(0.0, 0.0, 1.0);
        cfg.v0_preset = "zero";
        cfg.zero_total_momentum = false;
    } else if (name == "balanced-spin") {
        cfg.material.IB_eigs = Vec3(0.8, 0.8, 0.8);
        cfg.mesh_outer = Vec3::Ones();
        cfg.omega1_0 = Vec3(0.0, 0.0, 0.75);
        cfg.omega2_0 = Vec3(0.0, 0.0, -0.75);
        cfg.v0_preset = "rigid-interp";
        cfg.zero_total_momentum = true;
    } else {
        throw ConfigError("unknown preset: " + name);
    }
}

inline void validate_run_config(const RunConfig& cfg) {
    validate_material(cfg.material);
    if (!(cfg.mesh_outer.minCoeff() > cfg.material.R)) {
        throw ConfigError("mesh.outer semi-axes must exceed ball.radius");
    }
    if (cfg.refinement < 0 || cfg.refinement > 3) {
        throw ConfigError("mesh.refinement must be in [0, 3]");
    }
    if (cfg.modes < 1 || cfg.modes > kMaxModes) {
        throw ConfigError("modes must be in [1, 64]");
    }
    validate_integrator_config(cfg.integrator);
    if (cfg.v0_preset != "rigid-interp" && cfg.v0_preset != "zero" && cfg.v0_preset != "modes") {
        throw ConfigError("initial.v0 must be rigid-interp, zero, or modes");
    }
    if (cfg.v0_preset == "modes" &&
        cfg.v0_coeffs.size() != static_cast<std::size_t>(cfg.modes)) {
        throw ConfigError("initial.coeffs must list exactly 'modes' values");
    }
}

inline void apply_run_key(RunConfig& cfg, const std::string& key, const std::string& val) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_list;
    using detail::parse_long;
    using detail::parse_vec3;
    if (key == "rho") {
        cfg.material.rho = parse_double(key, val);
    } else if (key == "mu") {
        cfg.material.mu = parse_double(key, val);
    } else if (key == "ball.radius") {
        cfg.material.R = parse_double(key, val);
    } else if (key == "ball.mass") {
        cfg.material.m_ball = parse_double(key, val);
    } else if (key == "body.IB") {
        cfg.material.IB_eigs = parse_vec3(key, val);
    } else if (key == "mesh.outer") {
        cfg.mesh_outer = parse_vec3(key, val);
    } else if (key == "mesh.refinement") {
        cfg.refinement = static_cast<int>(parse_long(key, val));
    } else if (key == "modes") {
        cfg.modes = static_cast<int>(parse_long(key, val));
    } else if (key == "integrator.dt") {
        cfg.integrator.dt = parse_double(key, val);
    } else if (key == "integrator.t_end") {
        cfg.integrator.t_end = parse_double(key, val);
    } else if (key == "integrator.method") {
        cfg.integrator.method = parse_method(val);
    } else if (key == "integrator.rel_tol") {
        cfg.integrator.rel_tol = parse_double(key, val);
    } else if (key == "integrator.abs_tol") {
        cfg.integrator.abs_tol = parse_double(key, val);
    } else if (key == "integrator.energy_guard") {
        cfg.integrator.energy_guard = parse_double(key, val);
    } else if (key == "integrator.output_every") {
        cfg.integrator.output_every = static_cast<int>(parse_long(key, val));
    } else if (key == "initial.omega1_0") {
        cfg.omega1_0 = parse_vec3(key, val);
    } else if (key == "initial.omega2_0") {
        cfg.omega2_0 = parse_vec3(key, val);
    } else if (key == "initial.v0") {
        cfg.v0_preset = val;
    } else if (key == "initial.coeffs") {
        cfg.v0_coeffs = parse_list(key, val);
    } else if (key == "initial.zero_total_momentum") {
        cfg.zero_total_momentum = parse_bool(key, val);
    } else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(parse_long(key, val));
    } else {
        throw ConfigError("unknown config key: " + key);
    }
}

inline RunConfig run_config_from_keyvalues(const KeyValues& kv) {
    RunConfig cfg;
    for (const auto& [key, val] : kv.items) {
        if (key == "preset") apply_preset(cfg, val);
    }
    for (const auto& [key, val] : kv.items) {
        if (key == "preset") continue;
        apply_run_key(cfg, key, val);
    }
    validate_run_config(cfg);
    return cfg;
}

inline RunConfig parse_run_config(const std::string& path) {
    return run_config_from_keyvalues(KeyValues::from_file(path));
}

// Canonical echo of the effective configuration; parses back to the same run.
inline std::string echo_config(const RunConfig& cfg) {
    std::ostringstream out;
    out << "rho = " << fmt_g17(cfg.material.rho) << "\n";
    out << "mu = " << fmt_g17(cfg.material.mu) << "\n";
    out << "ball.radius = " << fmt_g17(cfg.material.R) << "\n";
    out << "ball.mass = " << fmt_g17(cfg.material.m_ball) << "\n";
    out << "body.IB = " << detail::fmt_vec3(cfg.material.IB_eigs) << "\n";
    out << "mesh.outer = " << detail::fmt_vec3(cfg.mesh_outer) << "\n";
    out << "mesh.refinement = " << cfg.refinement << "\n";
    out << "modes = " << cfg.modes << "\n";
    out << "integrator.dt = " << fmt_g17(cfg.integrator.dt) << "\n";
    out << "integrator.t_end = " << fmt_g17(cfg.integrator.t_end) << "\n";
    out << "integrator.method = " << method_name(cfg.integrator.method) << "\n";
    out << "integrator.rel_tol = " << fmt_g17(cfg.integrator.rel_tol) << "\n";
    out << "integrator.abs_tol = " << fmt_g17(cfg.integrator.abs_tol) << "\n";
    out << "integrator.energy_guard = " << fmt_g17(cfg.integrator.energy_guard) << "\n";
    out << "integrator.output_every = " << cfg.integrator.output_every << "\n";
    out << "initial.omega1_0 = " << detail::fmt_vec3(cfg.omega1_0) << "\n";
    out << "initial.omega2_0 = " << detail::fmt_vec3(cfg.omega2_0) << "\n";
    out << "initial.v0 = " << cfg.v0_preset << "\n";
    out << "initial.coeffs = " << detail::fmt_list(cfg.v0_coeffs) << "\n";
    out << "initial.zero_total_momentum = " << (cfg.zero_total_momentum ? "true" : "false")
        << "\n";
    out << "seed = " << cfg.seed << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Pipeline stages.

inline Mesh build_liquid_mesh(const RunConfig& cfg) {
    return generate_annulus_mesh(cfg.material.R, cfg.mesh_outer, cfg.refinement);
}

// Initial fluid data projected onto the mode basis. rigid-interp blends the
// ball rotation into rest along the gap, so the trace condition v0 = omega0
// cross x on the ball surface holds before projection.
inline VecX initial_coefficients(const RunConfig& cfg, const ModeBasis& basis,
                                 const InertiaModel& model) {
    Vec3 omega0 = cfg.omega2_0 - cfg.omega1_0;
    if (cfg.v0_preset == "modes") {
        return Eigen::Map<const VecX>(cfg.v0_coeffs.data(),
                                      static_cast<Eigen::Index>(cfg.v0_coeffs.size()));
    }
    if (cfg.v0_preset == "zero" && omega0.norm() == 0.0) {
        return VecX::Zero(basis.count());
    }
    if (cfg.v0_preset == "zero") {
        auto v0 = [](const Vec3&) { return Vec3::Zero().eval(); };
        return project_field(basis, model, v0, omega0).coeffs;
    }
    double R = cfg.material.R;
    Vec3 axes = cfg.mesh_outer;
    auto v0 = [R, axes, omega0](const Vec3& x) {
        double r = x.norm();
        if (r <= R) return Vec3(omega0.cross(x));
        Vec3 xh = x / r;
        double rdir = 1.0 / std::sqrt(xh.cwiseQuotient(axes).squaredNorm());
        double s = (r - R) / (rdir - R);
        double phi = std::clamp(1.0 - s, 0.0, 1.0);
        return Vec3(phi * omega0.cross(x));
    };
    return project_field(basis, model, v0, omega0).coeffs;
}

inline State build_initial_state(const RunConfig& cfg, const ModeBasis& basis,
                                 const InertiaModel& model, const GalerkinSystem& sys) {
    State s;
    s.c = initial_coefficients(cfg, basis, model);
    if (cfg.zero_total_momentum) {
        s.Omega = Vec3::Zero();
    } else {
        // Omega = omega1 - omega_R with omega_R = -I^{-1} sum c_p m_p.
        s.Omega = cfg.omega1_0 + sys.solve_inertia(sys.moments * s.c);
    }
    return s;
}

struct ScenarioResult {
    RunSummary summary;
    TimeSeries series;
};

// Full pipeline: mesh, eigenbasis, tensors, simulate, summarize. Every
// artifact lands in out_dir under the fixed layout.
inline ScenarioResult run_scenario(const RunConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    auto at = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

    Mesh mesh_storage = build_liquid_mesh(cfg);
    export_mesh(mesh_storage, at("mesh.txt"));
    auto mesh = std::make_shared<Mesh>(std::move(mesh_storage));
    InertiaModel model = build_inertia_model(cfg.material, *mesh);
    ConstrainedSpace space = build_constrained_space(*mesh);
    ModeBasis basis = solve_eigenbasis(space, model, cfg.material.mu, cfg.modes, cfg.seed);
    save_basis(at("basis.bin"), basis, "mesh.txt", cfg.material);
    GalerkinSystem sys = assemble_tensors(basis, model, cfg.material.mu);
    save_system(at("sys.bin"), sys);

    RunConfig effective = cfg;
    if (effective.integrator.dt <= 0.0) effective.integrator.dt = default_time_step(sys);
    {
        std::ofstream echo(at("config.echo"), std::ios::binary);
        if (!echo) throw ConfigError("cannot open for writing: " + at("config.echo"));
        echo << echo_config(effective);
    }

    State s0 = build_initial_state(cfg, basis, model, sys);
    ScenarioResult out;
    out.series = integrate(sys, s0, effective.integrator);
    write_series_csv(out.series, at("series.csv"));
    out.summary = summarize(out.series);
    write_summary_json(out.summary, at("summary.json"));
    return out;
}

// Initial state file for the standalone simulate stage.
inline State parse_initial_state(const std::string& path, const GalerkinSystem& sys) {
    KeyValues kv = KeyValues::from_file(path);
    State s;
    s.c = VecX::Zero(sys.n);
    for (const auto& [key, val] : kv.items) {
        if (key == "initial.Omega0") {
            s.Omega = detail::parse_vec3(key, val);
        } else if (key == "initial.c0") {
            std::vector<double> c = detail::parse_list(key, val);
            if (c.size() != static_cast<std::size_t>(sys.n)) {
                throw ConfigError("initial.c0 must list exactly " + std::to_string(sys.n) +
                                  " values");
            }
            s.c = Eigen::Map<const VecX>(c.data(), sys.n);
        } else {
            throw ConfigError("unknown config key: " + key);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Invariant battery: one PASS/FAIL line per check with the measured value.

namespace detail {

struct CheckSink {
    std::ostream& out;
    bool all_pass = true;

    void report(bool ok, const std::string& name, const std::string& metrics) {
        out << (ok ? "PASS " : "FAIL ") << name << ' ' << metrics << "\n";
        if (!ok) all_pass = false;
    }
};

}  // namespace detail

inline bool verify_all(const RunConfig& cfg, std::ostream& out) {
    detail::CheckSink sink{out};
    auto mesh = std::make_shared<Mesh>(build_liquid_mesh(cfg));
    validate_mesh(*mesh);
    sink.report(true, "mesh-valid",
                "vertices=" + std::to_string(mesh->num_vertices()) +
                    " tets=" + std::to_string(mesh->num_tets()));

    InertiaModel model = build_inertia_model(cfg.material, *mesh);
    Mat3 offdiag = model.I - Mat3(model.I.diagonal().asDiagonal());
    double off_rel = offdiag.norm() / model.I.norm();
    sink.report(off_rel <= 1e-9, "inertia-diagonal", "offdiag_rel=" + fmt_g17(off_rel));

    // Weighted energy bounds over random admissible fields.
    {
        Rng rng(cfg.seed ^ 0x636f6572u);
        double min_E = 1e300, max_ratio = 0.0;
        for (int k = 0; k < 100; ++k) {
            ExtendedField w = random_admissible_field(*mesh, rng);
            double norm2 = weighted_inner(w, w, model);
            double e = energy_functional(w, model);
            min_E = std::min(min_E, e);
            if (norm2 > 0.0) max_ratio = std::max(max_ratio, e / norm2);
        }
        bool ok = min_E > 0.0 && max_ratio <= 1.0 + 1e-12;
        sink.report(ok, "coercivity-bounds",
                    "min_E=" + fmt_g17(min_E) + " max_ratio=" + fmt_g17(max_ratio));
    }

    ConstrainedSpace space = build_constrained_space(*mesh);
    {
        double c_est = coercivity_estimate(space, model);
        sink.report(c_est > 0.0, "coercivity-estimate", "c_est=" + fmt_g17(c_est));
    }

    ModeBasis basis = solve_eigenbasis(space, model, cfg.material.mu, cfg.modes, cfg.seed);
    {
        double sigma_min = basis.sigmas.minCoeff();
        sink.report(sigma_min > 0.0, "eigen-positive", "sigma_min=" + fmt_g17(sigma_min));

        WeightedProducts wp{mesh.get(), &model};
        double max_orth = 0.0;
        for (int p = 0; p < basis.count(); ++p) {
            for (int r = p; r < basis.count(); ++r) {
                double gram = wp.inner_B(basis.modes[p], basis.modes[r]);
                max_orth = std::max(max_orth, std::abs(gram - (p == r ? 1.0 : 0.0)));
            }
        }
        sink.report(max_orth <= 1e-8, "eigen-orthonormal", "max_err=" + fmt_g17(max_orth));

        double max_div = 0.0;
        for (const auto& m : basis.modes) {
            VecX div = space.D_full * m.v_dofs;
            max_div = std::max(max_div, div.cwiseAbs().maxCoeff());
        }
        sink.report(max_div <= 1e-8, "eigen-divfree", "max_div=" + fmt_g17(max_div));
    }

    GalerkinSystem sys = assemble_tensors(basis, model, cfg.material.mu);
    {
        MatX a_off = sys.a - MatX(sys.a.diagonal().asDiagonal());
        double rel = a_off.cwiseAbs().maxCoeff() / sys.a.diagonal().maxCoeff();
        sink.report(rel <= 1e-6, "tensor-diagonal", "offdiag_rel=" + fmt_g17(rel));

        double sigma_rel = (sys.a.diagonal() - basis.sigmas).cwiseAbs().maxCoeff() /
                           basis.sigmas.maxCoeff();
        sink.report(sigma_rel <= 1e-8, "tensor-rayleigh", "rel_err=" + fmt_g17(sigma_rel));

        Rng rng(cfg.seed ^ 0x656e6572u);
        double max_energy = 0.0, max_momentum = 0.0, max_convect = 0.0;
        for (int k = 0; k < 20; ++k) {
            State s;
            s.c = rng.vector(sys.n);
            s.Omega = rng.vec3();
            State ds = rhs(sys, s);
            double dE = 2.0 * s.c.dot(ds.c) +
                        2.0 * s.Omega.dot(sys.apply_inertia(ds.Omega));
            double power = 2.0 * s.c.dot(sys.a * s.c);
            max_energy = std::max(max_energy, std::abs(dE + power) / power);
            Vec3 A = sys.apply_inertia(s.Omega);
            double dA2 = 2.0 * A.dot(sys.apply_inertia(ds.Omega));
            max_momentum = std::max(max_momentum, std::abs(dA2) / std::max(1.0, A.squaredNorm()));
            double cubic = 0.0;
            for (int r = 0; r < sys.n; ++r) cubic += s.c[r] * s.c.dot(sys.b[r] * s.c);
            double scale = std::max(1.0, std::pow(s.c.norm(), 3));
            max_convect = std::max(max_convect, std::abs(cubic) / scale);
        }
        sink.report(max_energy <= 1e-10, "energy-identity", "max_rel=" + fmt_g17(max_energy));
        sink.report(max_momentum <= 1e-12, "momentum-identity", "max_rel=" + fmt_g17(max_momentum));
        sink.report(max_convect <= 1e-12, "convective-neutrality",
                    "max_rel=" + fmt_g17(max_convect));
    }

    {
        RunConfig short_cfg = cfg;
        short_cfg.integrator.dt = default_time_step(sys);
        short_cfg.integrator.t_end = 200.0 * short_cfg.integrator.dt;
        short_cfg.integrator.output_every = 1;
        State s0 = build_initial_state(short_cfg, basis, model, sys);
        TimeSeries ts = integrate(sys, s0, short_cfg.integrator);
        double worst_rise = 0.0;
        for (std::size_t k = 1; k < ts.size(); ++k) {
            worst_rise = std::max(worst_rise, ts.KE_total[k] - ts.KE_total[k - 1]);
        }
        double ke0 = ts.KE_total.front();
        bool mono = worst_rise <= 1e-13 * std::max(1.0, ke0);
        sink.report(mono, "short-run-monotone", "worst_rise=" + fmt_g17(worst_rise));
        double drift = 0.0;
        double a0 = ts.A_norm.front();
        for (double an : ts.A_norm) drift = std::max(drift, std::abs(an - a0));
        double drift_rel = (a0 > 0.0) ? drift / a0 : drift;
        sink.report(drift_rel <= 1e-10, "short-run-conservation",
                    "A_drift_rel=" + fmt_g17(drift_rel));
    }
    return sink.all_pass;
}

}  // namespace gapspin
