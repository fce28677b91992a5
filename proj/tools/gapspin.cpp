#include <Eigen/Core>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gapspin/cli.hpp"
#include "gapspin/core.hpp"
#include "gapspin/diagnostics.hpp"
#include "gapspin/discretization.hpp"
#include "gapspin/galerkin.hpp"
#include "gapspin/inertia.hpp"
#include "gapspin/integrator.hpp"
#include "gapspin/mesh.hpp"
#include "gapspin/serialize.hpp"

namespace {

using namespace gapspin;

struct GlobalArgs {
    std::string config;
    std::string out;
    long long seed = -1;
    int threads = 1;
};

RunConfig load_config_or_default(const GlobalArgs& g, bool preset_when_missing) {
    RunConfig cfg;
    if (!g.config.empty()) {
        cfg = parse_run_config(g.config);
    } else if (preset_when_missing) {
        apply_preset(cfg, "counter-rotating");
    }
    if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
    return cfg;
}

int cmd_mesh(const GlobalArgs& g) {
    RunConfig cfg = load_config_or_default(g, false);
    Mesh mesh = build_liquid_mesh(cfg);
    export_mesh(mesh, g.out);
    std::cout << "wrote " << g.out << " (" << mesh.num_vertices() << " vertices, "
              << mesh.num_tets() << " tets)\n";
    return kExitOk;
}

int cmd_eig(const GlobalArgs& g, const std::string& mesh_path, int modes_override) {
    RunConfig cfg = load_config_or_default(g, false);
    if (modes_override > 0) cfg.modes = modes_override;
    validate_run_config(cfg);
    auto mesh = std::make_shared<Mesh>(import_mesh(mesh_path));
    InertiaModel model = build_inertia_model(cfg.material, *mesh);
    ConstrainedSpace space = build_constrained_space(*mesh);
    ModeBasis basis = solve_eigenbasis(space, model, cfg.material.mu, cfg.modes, cfg.seed);
    save_basis(g.out, basis, mesh_path, cfg.material);
    std::cout << "wrote " << g.out << " (" << basis.count()
              << " modes, sigma_1 = " << fmt_g17(basis.sigmas[0]) << ")\n";
    return kExitOk;
}

int cmd_tensors(const GlobalArgs& g, const std::string& basis_path) {
    LoadedBasis lb = load_basis(basis_path);
    InertiaModel model = build_inertia_model(lb.material, *lb.mesh);
    GalerkinSystem sys = assemble_tensors(lb.basis, model, lb.material.mu);
    save_system(g.out, sys);
    std::cout << "wrote " << g.out << " (n = " << sys.n << ")\n";
    return kExitOk;
}

int cmd_simulate(const GlobalArgs& g, const std::string& system_path,
                 const std::string& init_path, double dt, double t_end) {
    RunConfig cfg = load_config_or_default(g, false);
    GalerkinSystem sys = load_system(system_path);
    State s0;
    s0.c = VecX::Zero(sys.n);
    if (!init_path.empty()) s0 = parse_initial_state(init_path, sys);
    IntegratorConfig icfg = cfg.integrator;
    if (dt > 0.0) icfg.dt = dt;
    if (t_end > 0.0) icfg.t_end = t_end;
    if (icfg.dt <= 0.0) icfg.dt = default_time_step(sys);
    namespace fs = std::filesystem;
    fs::create_directories(g.out);
    TimeSeries ts = integrate(sys, s0, icfg);
    std::string csv = (fs::path(g.out) / "series.csv").string();
    std::string json = (fs::path(g.out) / "summary.json").string();
    write_series_csv(ts, csv);
    write_summary_json(summarize(ts), json);
    std::cout << "wrote " << csv << " (" << ts.size() << " samples)\n";
    std::cout << "wrote " << json << "\n";
    return kExitOk;
}

int cmd_verify(const GlobalArgs& g) {
    RunConfig cfg = load_config_or_default(g, true);
    bool ok = verify_all(cfg, std::cout);
    if (!ok) throw InvariantError("verification reported failures");
    return kExitOk;
}

int cmd_euler(const GlobalArgs& g, const std::vector<double>& inertia,
              const std::vector<double>& omega0, double dt, double t_end) {
    Mat3 I = Mat3::Zero();
    for (int i = 0; i < 3; ++i) I(i, i) = inertia[i];
    Vec3 w0(omega0[0], omega0[1], omega0[2]);
    TimeSeries ts = euler_top(I, w0, dt, t_end);
    write_series_csv(ts, g.out);
    std::cout << "wrote " << g.out << " (" << ts.size() << " samples)\n";
    return kExitOk;
}

int cmd_run(const GlobalArgs& g) {
    RunConfig cfg = load_config_or_default(g, true);
    ScenarioResult res = run_scenario(cfg, g.out);
    std::cout << "run complete: " << g.out << "\n"
              << "  decay_rate = " << fmt_g17(res.summary.decay_rate) << "\n"
              << "  A_drift_rel = " << fmt_g17(res.summary.A_drift_rel) << "\n"
              << "  energy_residual_max = " << fmt_g17(res.summary.energy_residual_max) << "\n"
              << "  final_v_l2_rel = " << fmt_g17(res.summary.final_v_l2_rel) << "\n"
              << "  final_omega_rel = " << fmt_g17(res.summary.final_omega_rel) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gapspin: simulation and verification of a rigid shell with a "
                 "liquid-filled gap around an inner ball"};
    app.require_subcommand(1);

    GlobalArgs g;
    app.add_option("--config", g.config, "configuration file (key = value lines)");
    app.add_option("--out", g.out, "output file or directory");
    app.add_option("--seed", g.seed, "random seed override");
    app.add_option("--threads", g.threads, "solver thread count");

    auto* mesh_cmd = app.add_subcommand("mesh", "generate the liquid-gap mesh");
    mesh_cmd->fallthrough();

    auto* eig_cmd = app.add_subcommand("eig", "solve for the dissipation eigenbasis");
    eig_cmd->fallthrough();
    std::string mesh_path;
    int modes_override = 0;
    eig_cmd->add_option("--mesh", mesh_path, "mesh file")->required();
    eig_cmd->add_option("--modes", modes_override, "number of modes");

    auto* tensors_cmd = app.add_subcommand("tensors", "assemble the reduced-system tensors");
    tensors_cmd->fallthrough();
    std::string basis_path;
    tensors_cmd->add_option("--basis", basis_path, "basis file")->required();

    auto* sim_cmd = app.add_subcommand("simulate", "integrate the reduced system");
    sim_cmd->fallthrough();
    std::string system_path, init_path;
    double sim_dt = 0.0, sim_t_end = 0.0;
    sim_cmd->add_option("--system", system_path, "system tensor file")->required();
    sim_cmd->add_option("--init", init_path, "initial state file");
    sim_cmd->add_option("--dt", sim_dt, "time step");
    sim_cmd->add_option("--t-end", sim_t_end, "final time");

    auto* verify_cmd = app.add_subcommand("verify", "run the invariant battery");
    verify_cmd->fallthrough();

    auto* euler_cmd = app.add_subcommand("euler", "integrate the rigid-body oracle");
    euler_cmd->fallthrough();
    std::vector<double> euler_inertia{1.0, 1.0, 2.0};
    std::vector<double> euler_omega0{1.0, 0.0, 1.0};
    double euler_dt = 0.001, euler_t_end = 10.0;
    euler_cmd->add_option("--inertia", euler_inertia, "principal inertia values")
        ->expected(3);
    euler_cmd->add_option("--omega0", euler_omega0, "initial angular velocity")->expected(3);
    euler_cmd->add_option("--dt", euler_dt, "time step");
    euler_cmd->add_option("--t-end", euler_t_end, "final time");

    auto* run_cmd = app.add_subcommand("run", "full pipeline: mesh, eig, tensors, simulate");
    run_cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? gapspin::kExitOk : gapspin::kExitConfig;
    }

    Eigen::setNbThreads(g.threads > 0 ? g.threads : 1);

    try {
        if (mesh_cmd->parsed() || run_cmd->parsed() || sim_cmd->parsed() || euler_cmd->parsed() ||
            eig_cmd->parsed() || tensors_cmd->parsed()) {
            if (g.out.empty()) throw gapspin::ConfigError("--out is required for this command");
        }
        if (mesh_cmd->parsed()) return cmd_mesh(g);
        if (eig_cmd->parsed()) return cmd_eig(g, mesh_path, modes_override);
        if (tensors_cmd->parsed()) return cmd_tensors(g, basis_path);
        if (sim_cmd->parsed()) return cmd_simulate(g, system_path, init_path, sim_dt, sim_t_end);
        if (verify_cmd->parsed()) return cmd_verify(g);
        if (euler_cmd->parsed()) return cmd_euler(g, euler_inertia, euler_omega0, euler_dt,
                                                  euler_t_end);
        if (run_cmd->parsed()) return cmd_run(g);
        throw gapspin::ConfigError("no subcommand given");
    } catch (const gapspin::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return gapspin::kExitConfig;
    } catch (const gapspin::InvariantError& e) {
        std::cerr << "invariant failure: " << e.what() << "\n";
        return gapspin::kExitInvariant;
    } catch (const gapspin::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return gapspin::kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return gapspin::kExitNumerical;
    }
}
