#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gapspin/cli.hpp"
#include "gapspin/serialize.hpp"
#include "json.hpp"

using namespace gapspin;

namespace {

namespace fs = std::filesystem;

const fs::path& scratch_root() {
    static fs::path root = [] {
        fs::path p = fs::path(::testing::TempDir()) / "gapspin_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = scratch_root() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT_TRUE(in.good()) << "cannot open " << path;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    ASSERT_TRUE(out.good()) << "cannot write " << path;
}

struct CliResult {
    int code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args, const std::string& log_name) {
    fs::path log = scratch_root() / log_name;
    std::string cmd = std::string(GAPSPIN_CLI_PATH) + " " + args + " >'" + log.string() + "' 2>&1";
    int raw = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.output = read_text(log);
    return r;
}

// Coarse scenario shared by the command-line round trips: single-level mesh,
// four modes, a couple hundred steps.
std::string coarse_config_text() {
    return "# coarse counter-rotating scenario for fast end-to-end checks\n"
           "preset = counter-rotating\n"
           "mesh.refinement = 0\n"
           "modes = 4\n"
           "integrator.t_end = 0.2\n"
           "integrator.output_every = 4\n";
}

RunConfig coarse_config() {
    return run_config_from_keyvalues(KeyValues::from_string(coarse_config_text(), "inline"));
}

struct Rig {
    Mesh mesh;
    InertiaModel model;
    ConstrainedSpace space;
    ModeBasis basis;
    GalerkinSystem sys;

    Rig() {
        MaterialConfig cfg;
        mesh = generate_annulus_mesh(cfg.R, 1.0, 0);
        model = build_inertia_model(cfg, mesh);
        space = build_constrained_space(mesh);
        basis = solve_eigenbasis(space, model, model.mu, 4);
        sys = assemble_tensors(basis, model, model.mu);
    }
};

const Rig& rig() {
    static Rig r;
    return r;
}

std::string checksum_line_for(const std::string& body) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(body)));
    return std::string("checksum ") + buf + "\n";
}

std::vector<std::vector<double>> parse_csv_rows(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

TEST(ConfigParse, KeyValueSyntaxAndErrors) {
    KeyValues kv = KeyValues::from_string(
        "# comment\n"
        "\n"
        "rho = 2.0   # trailing comment\n"
        "  body.IB = [0.6, 0.8, 1.0]\n",
        "demo");
    ASSERT_EQ(kv.items.size(), 2u);
    EXPECT_EQ(kv.items[0].first, "rho");
    EXPECT_EQ(kv.items[0].second, "2.0");
    EXPECT_EQ(kv.items[1].first, "body.IB");
    EXPECT_EQ(kv.items[1].second, "[0.6, 0.8, 1.0]");

    try {
        KeyValues::from_string("rho = 1\nnot a key value line\n", "demo");
        FAIL() << "missing '=' was accepted";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("demo:2"), std::string::npos);
    }
    EXPECT_THROW(KeyValues::from_string(" = 3\n", "demo"), ConfigError);
    EXPECT_THROW(KeyValues::from_file("/nonexistent/gapspin.cfg"), ConfigError);
}

TEST(ConfigParse, AppliesKeysAndPresets) {
    RunConfig cfg = run_config_from_keyvalues(KeyValues::from_string(
        "rho = 1.5\n"
        "mu = 0.125\n"
        "ball.radius = 0.4\n"
        "ball.mass = 2.0\n"
        "body.IB = [0.5, 0.7, 0.9]\n"
        "mesh.outer = [1.0, 1.1, 1.2]\n"
        "mesh.refinement = 2\n"
        "modes = 8\n"
        "integrator.dt = 0.01\n"
        "integrator.method = rk45-adaptive\n"
        "initial.omega1_0 = [0.1, 0.2, 0.3]\n"
        "seed = 99\n",
        "inline"));
    EXPECT_EQ(cfg.material.rho, 1.5);
    EXPECT_EQ(cfg.material.mu, 0.125);
    EXPECT_EQ(cfg.material.R, 0.4);
    EXPECT_EQ(cfg.material.m_ball, 2.0);
    EXPECT_EQ((cfg.material.IB_eigs - Vec3(0.5, 0.7, 0.9)).norm(), 0.0);
    EXPECT_EQ((cfg.mesh_outer - Vec3(1.0, 1.1, 1.2)).norm(), 0.0);
    EXPECT_EQ(cfg.refinement, 2);
    EXPECT_EQ(cfg.modes, 8);
    EXPECT_EQ(cfg.integrator.dt, 0.01);
    EXPECT_TRUE(cfg.integrator.method == Method::kRk45Adaptive);
    EXPECT_EQ((cfg.omega1_0 - Vec3(0.1, 0.2, 0.3)).norm(), 0.0);
    EXPECT_EQ(cfg.seed, 99u);

    // The preset is applied before the explicit keys regardless of where the
    // preset line sits in the file.
    RunConfig pre = run_config_from_keyvalues(KeyValues::from_string(
        "initial.omega1_0 = [0, 0, 2]\n"
        "preset = counter-rotating\n",
        "inline"));
    EXPECT_EQ((pre.omega1_0 - Vec3(0.0, 0.0, 2.0)).norm(), 0.0);
    EXPECT_EQ((pre.omega2_0 - Vec3(0.0, 0.0, -1.0)).norm(), 0.0);
    EXPECT_EQ(pre.v0_preset, "rigid-interp");

    RunConfig bal;
    apply_preset(bal, "balanced-spin");
    EXPECT_TRUE(bal.zero_total_momentum);
    EXPECT_EQ((bal.material.IB_eigs - Vec3(0.8, 0.8, 0.8)).norm(), 0.0);
    EXPECT_EQ((bal.omega2_0 - Vec3(0.0, 0.0, -0.75)).norm(), 0.0);

    RunConfig rest;
    apply_preset(rest, "rest");
    EXPECT_EQ(rest.omega1_0.norm(), 0.0);
    EXPECT_EQ(rest.v0_preset, "zero");

    RunConfig sph;
    apply_preset(sph, "spherical-spin");
    EXPECT_EQ((sph.omega1_0 - sph.omega2_0).norm(), 0.0);

    EXPECT_THROW(apply_preset(sph, "tumbling"), ConfigError);
}

TEST(ConfigParse, RejectsInvalidValues) {
    auto parse_one = [](const std::string& line) {
        return run_config_from_keyvalues(KeyValues::from_string(line, "inline"));
    };
    EXPECT_THROW(parse_one("rho = 1.5x\n"), ConfigError);
    EXPECT_THROW(parse_one("modes = eight\n"), ConfigError);
    EXPECT_THROW(parse_one("modes = 8.5\n"), ConfigError);
    EXPECT_THROW(parse_one("modes = 0\n"), ConfigError);
    EXPECT_THROW(parse_one("modes = 65\n"), ConfigError);
    EXPECT_THROW(parse_one("mesh.refinement = 4\n"), ConfigError);
    EXPECT_THROW(parse_one("body.IB = [0.6, 0.8]\n"), ConfigError);
    EXPECT_THROW(parse_one("body.IB = 0.6 0.8 1.0\n"), ConfigError);
    EXPECT_THROW(parse_one("initial.coeffs = [1, , 2]\n"), ConfigError);
    EXPECT_THROW(parse_one("initial.zero_total_momentum = yes\n"), ConfigError);
    EXPECT_THROW(parse_one("initial.v0 = vortex\n"), ConfigError);
    EXPECT_THROW(parse_one("integrator.method = euler\n"), ConfigError);
    EXPECT_THROW(parse_one("gravity = 9.81\n"), ConfigError);
    // Cavity must enclose the ball.
    EXPECT_THROW(parse_one("mesh.outer = [0.4, 1.0, 1.0]\n"), ConfigError);
    // v0 = modes requires one coefficient per mode.
    EXPECT_THROW(parse_one("modes = 4\ninitial.v0 = modes\ninitial.coeffs = [1, 2]\n"),
                 ConfigError);
    EXPECT_NO_THROW(
        parse_one("modes = 2\ninitial.v0 = modes\ninitial.coeffs = [0.1, -0.2]\n"));
}

TEST(ConfigEcho, RoundTripsBitExact) {
    std::string text =
        "rho = 1.25\n"
        "mu = 0.0625\n"
        "ball.radius = 0.45\n"
        "ball.mass = 1.5\n"
        "body.IB = [0.7, 0.9, 1.1]\n"
        "mesh.outer = [1.0, 1.1, 1.2]\n"
        "mesh.refinement = 0\n"
        "modes = 3\n"
        "integrator.dt = 0.0078125\n"
        "integrator.t_end = 2.5\n"
        "integrator.method = rk45-adaptive\n"
        "integrator.rel_tol = 1e-9\n"
        "integrator.abs_tol = 1e-11\n"
        "integrator.energy_guard = 0.0001\n"
        "integrator.output_every = 3\n"
        "initial.omega1_0 = [0.1, -0.2, 0.3]\n"
        "initial.omega2_0 = [-0.4, 0.5, -0.6]\n"
        "initial.v0 = modes\n"
        "initial.coeffs = [0.01, -0.02, 0.03]\n"
        "initial.zero_total_momentum = true\n"
        "seed = 12345\n";
    RunConfig cfg = run_config_from_keyvalues(KeyValues::from_string(text, "inline"));
    std::string echoed = echo_config(cfg);
    RunConfig again = run_config_from_keyvalues(KeyValues::from_string(echoed, "echo"));
    EXPECT_EQ(echo_config(again), echoed);

    EXPECT_EQ(again.material.rho, cfg.material.rho);
    EXPECT_EQ(again.integrator.dt, cfg.integrator.dt);
    EXPECT_EQ(again.integrator.rel_tol, cfg.integrator.rel_tol);
    EXPECT_EQ((again.omega2_0 - cfg.omega2_0).norm(), 0.0);
    ASSERT_EQ(again.v0_coeffs.size(), cfg.v0_coeffs.size());
    for (std::size_t k = 0; k < cfg.v0_coeffs.size(); ++k) {
        EXPECT_EQ(again.v0_coeffs[k], cfg.v0_coeffs[k]);
    }
    EXPECT_EQ(again.seed, cfg.seed);
    EXPECT_TRUE(again.zero_total_momentum);
}

TEST(ConfigParse, ShippedConfigFilesAreValid) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(GAPSPIN_CONFIG_DIR)) {
        if (entry.path().extension() == ".cfg") files.push_back(entry.path());
    }
    ASSERT_GE(files.size(), 4u);
    for (const fs::path& file : files) {
        SCOPED_TRACE(file.filename().string());
        RunConfig cfg;
        ASSERT_NO_THROW(
            cfg = run_config_from_keyvalues(KeyValues::from_file(file.string())));
        std::string echoed = echo_config(cfg);
        RunConfig again =
            run_config_from_keyvalues(KeyValues::from_string(echoed, "echo"));
        EXPECT_EQ(echo_config(again), echoed);
    }

    RunConfig coarse = run_config_from_keyvalues(
        KeyValues::from_file((fs::path(GAPSPIN_CONFIG_DIR) / "coarse.cfg").string()));
    EXPECT_EQ(coarse.refinement, 0);
    EXPECT_EQ(coarse.modes, 4);
    RunConfig counter = run_config_from_keyvalues(KeyValues::from_file(
        (fs::path(GAPSPIN_CONFIG_DIR) / "counter-rotating.cfg").string()));
    EXPECT_EQ((counter.omega1_0 - Vec3(0.0, 0.0, 1.0)).norm(), 0.0);
    EXPECT_EQ((counter.omega2_0 - Vec3(0.0, 0.0, -1.0)).norm(), 0.0);
    EXPECT_EQ(counter.v0_preset, "rigid-interp");
}

TEST(SerializedBasis, RoundTripsBitExact) {
    const Rig& r = rig();
    fs::path dir = fresh_dir("basis_roundtrip");
    export_mesh(r.mesh, (dir / "mesh.txt").string());
    MaterialConfig material;
    save_basis((dir / "basis.bin").string(), r.basis, "mesh.txt", material);

    LoadedBasis lb = load_basis((dir / "basis.bin").string());
    EXPECT_EQ(lb.mesh_path, "mesh.txt");
    EXPECT_EQ(lb.material.rho, material.rho);
    EXPECT_EQ(lb.material.mu, material.mu);
    EXPECT_EQ(lb.material.R, material.R);
    EXPECT_EQ(lb.material.m_ball, material.m_ball);
    EXPECT_EQ((lb.material.IB_eigs - material.IB_eigs).norm(), 0.0);

    ASSERT_EQ(lb.basis.count(), r.basis.count());
    EXPECT_EQ((lb.basis.sigmas - r.basis.sigmas).norm(), 0.0);
    for (int p = 0; p < r.basis.count(); ++p) {
        EXPECT_EQ((lb.basis.modes[p].omega_ball - r.basis.modes[p].omega_ball).norm(), 0.0);
        EXPECT_EQ((lb.basis.modes[p].v_dofs - r.basis.modes[p].v_dofs).norm(), 0.0);
    }
    EXPECT_EQ(lb.mesh->num_vertices(), r.mesh.num_vertices());
    EXPECT_EQ(lb.mesh->num_tets(), r.mesh.num_tets());

    // Tensors assembled from the reloaded basis match the originals bitwise.
    InertiaModel model = build_inertia_model(lb.material, *lb.mesh);
    GalerkinSystem sys = assemble_tensors(lb.basis, model, lb.material.mu);
    EXPECT_EQ((sys.a - r.sys.a).norm(), 0.0);
    EXPECT_EQ((sys.moments - r.sys.moments).norm(), 0.0);
    EXPECT_EQ((sys.ell - r.sys.ell).norm(), 0.0);

    ModeBasis empty;
    EXPECT_THROW(save_basis((dir / "none.bin").string(), empty, "mesh.txt", material),
                 ConfigError);
}

TEST(SerializedSystem, RoundTripsBitExact) {
    const Rig& r = rig();
    fs::path dir = fresh_dir("system_roundtrip");
    std::string path = (dir / "sys.bin").string();
    save_system(path, r.sys);
    GalerkinSystem sys = load_system(path);

    EXPECT_EQ(sys.n, r.sys.n);
    EXPECT_EQ(sys.mu, r.sys.mu);
    EXPECT_EQ(sys.rho, r.sys.rho);
    EXPECT_EQ(sys.lambda, r.sys.lambda);
    EXPECT_EQ((sys.ell - r.sys.ell).norm(), 0.0);
    EXPECT_EQ((sys.a - r.sys.a).norm(), 0.0);
    EXPECT_EQ((sys.moments - r.sys.moments).norm(), 0.0);
    EXPECT_EQ((sys.omega_modes - r.sys.omega_modes).norm(), 0.0);
    EXPECT_EQ((sys.Mf - r.sys.Mf).norm(), 0.0);
    for (int p = 0; p < r.sys.n; ++p) {
        EXPECT_EQ((sys.b[p] - r.sys.b[p]).norm(), 0.0);
        EXPECT_EQ((sys.d[p] - r.sys.d[p]).norm(), 0.0);
        EXPECT_EQ((sys.f[p] - r.sys.f[p]).norm(), 0.0);
    }
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ((sys.g[k] - r.sys.g[k]).norm(), 0.0);
        EXPECT_EQ((sys.h[k] - r.sys.h[k]).norm(), 0.0);
    }

    // A reloaded system drives the dynamics identically.
    State s;
    s.c = VecX::LinSpaced(sys.n, 0.1, 0.4);
    s.Omega = Vec3(0.3, -0.2, 0.4);
    State da = rhs(sys, s);
    State db = rhs(r.sys, s);
    EXPECT_EQ((da.c - db.c).norm(), 0.0);
    EXPECT_EQ((da.Omega - db.Omega).norm(), 0.0);
}

TEST(SerializedFiles, DetectChecksumAndFormatErrors) {
    const Rig& r = rig();
    fs::path dir = fresh_dir("tamper");
    std::string path = (dir / "sys.bin").string();
    save_system(path, r.sys);
    std::string content = read_text(path);

    // Any body mutation breaks the trailing checksum.
    std::size_t tail = content.rfind("checksum ");
    ASSERT_NE(tail, std::string::npos);
    std::string tampered = content;
    tampered[tail / 2] ^= 1;
    write_text(dir / "tampered.bin", tampered);
    try {
        load_system((dir / "tampered.bin").string());
        FAIL() << "tampered file was accepted";
    } catch (const InvariantError& e) {
        EXPECT_NE(std::string(e.what()).find("checksum mismatch"), std::string::npos);
    }

    write_text(dir / "headless.bin", content.substr(0, tail));
    EXPECT_THROW(load_system((dir / "headless.bin").string()), InvariantError);

    write_text(dir / "badhex.bin", content.substr(0, tail) + "checksum zzzz\n");
    EXPECT_THROW(load_system((dir / "badhex.bin").string()), InvariantError);

    // A consistent checksum over an unsupported header is a config error, not
    // a corruption.
    std::string body = "gapspin-system v9\nn 1\n";
    write_text(dir / "future.bin", body + checksum_line_for(body));
    EXPECT_THROW(load_system((dir / "future.bin").string()), ConfigError);

    std::string truncated = content.substr(0, content.find("\nMf") + 1);
    write_text(dir / "truncated.bin", truncated + checksum_line_for(truncated));
    EXPECT_THROW(load_system((dir / "truncated.bin").string()), ConfigError);
}

TEST(InitialState, PresetsAndMomentumHandling) {
    const Rig& r = rig();
    RunConfig cfg;
    apply_preset(cfg, "counter-rotating");
    cfg.refinement = 0;
    cfg.modes = r.sys.n;

    // The assembled state reproduces the requested shell angular velocity.
    State s = build_initial_state(cfg, r.basis, r.model, r.sys);
    EXPECT_GT(s.c.norm(), 0.0);
    RigidVelocities rv = reconstruct_velocities(r.sys, s);
    EXPECT_LT((rv.omega1 - cfg.omega1_0).norm(), 1e-12);

    // Requesting zero total momentum pins Omega at exactly zero.
    cfg.zero_total_momentum = true;
    State balanced = build_initial_state(cfg, r.basis, r.model, r.sys);
    EXPECT_EQ(balanced.Omega.norm(), 0.0);
    EXPECT_GT(balanced.c.norm(), 0.0);

    // Explicit coefficients pass through untouched.
    RunConfig explicit_cfg;
    explicit_cfg.refinement = 0;
    explicit_cfg.modes = r.sys.n;
    explicit_cfg.v0_preset = "modes";
    explicit_cfg.v0_coeffs = {0.25, -0.5, 0.125, 0.0625};
    VecX c = initial_coefficients(explicit_cfg, r.basis, r.model);
    ASSERT_EQ(c.size(), 4);
    for (int p = 0; p < 4; ++p) EXPECT_EQ(c[p], explicit_cfg.v0_coeffs[p]);

    // Matching shell and ball rotations leave no relative flow to project.
    RunConfig still;
    still.refinement = 0;
    still.modes = r.sys.n;
    still.omega1_0 = Vec3(0.3, 0.1, -0.2);
    still.omega2_0 = Vec3(0.3, 0.1, -0.2);
    EXPECT_EQ(initial_coefficients(still, r.basis, r.model).norm(), 0.0);
}

TEST(InitialState, ParsesStateFile) {
    const Rig& r = rig();
    fs::path dir = fresh_dir("init_state");
    write_text(dir / "init.cfg",
               "initial.Omega0 = [0.3, -0.2, 0.4]\n"
               "initial.c0 = [0.05, -0.04, 0.03, -0.02]\n");
    State s = parse_initial_state((dir / "init.cfg").string(), r.sys);
    EXPECT_EQ((s.Omega - Vec3(0.3, -0.2, 0.4)).norm(), 0.0);
    ASSERT_EQ(s.c.size(), 4);
    EXPECT_EQ(s.c[0], 0.05);
    EXPECT_EQ(s.c[3], -0.02);

    write_text(dir / "short.cfg", "initial.c0 = [1, 2]\n");
    EXPECT_THROW(parse_initial_state((dir / "short.cfg").string(), r.sys), ConfigError);
    write_text(dir / "unknown.cfg", "initial.spin = [1, 2, 3]\n");
    EXPECT_THROW(parse_initial_state((dir / "unknown.cfg").string(), r.sys), ConfigError);
}

TEST(Scenario, WritesArtifactsDeterministically) {
    RunConfig cfg = coarse_config();
    fs::path dir_a = fresh_dir("scenario_a");
    fs::path dir_b = fresh_dir("scenario_b");
    ScenarioResult res = run_scenario(cfg, dir_a.string());
    run_scenario(cfg, dir_b.string());

    for (const char* name : {"mesh.txt", "basis.bin", "sys.bin", "config.echo", "series.csv",
                             "summary.json"}) {
        EXPECT_TRUE(fs::exists(dir_a / name)) << name;
        EXPECT_EQ(read_text(dir_a / name), read_text(dir_b / name)) << name;
    }

    // The echoed configuration is effective, valid, and stable under re-echo.
    std::string echoed = read_text(dir_a / "config.echo");
    RunConfig effective =
        run_config_from_keyvalues(KeyValues::from_string(echoed, "config.echo"));
    EXPECT_GT(effective.integrator.dt, 0.0);
    EXPECT_EQ(echo_config(effective), echoed);

    // The summary is valid JSON with finite physical verdicts.
    nlohmann::json summary = nlohmann::json::parse(read_text(dir_a / "summary.json"));
    for (const char* key : {"decay_rate", "decay_r2", "A_drift_rel", "energy_residual_max",
                            "final_v_l2_rel", "final_omega_rel"}) {
        ASSERT_TRUE(summary.contains(key)) << key;
        EXPECT_TRUE(std::isfinite(summary[key].get<double>())) << key;
    }
    EXPECT_LT(summary["A_drift_rel"].get<double>(), 1e-9);
    EXPECT_EQ(res.summary.A_drift_rel, summary["A_drift_rel"].get<double>());

    // The saved system is the one the run used.
    GalerkinSystem sys = load_system((dir_a / "sys.bin").string());
    EXPECT_EQ(sys.n, cfg.modes);
}

TEST(Battery, PassesOnCoarseScenario) {
    RunConfig cfg = coarse_config();
    std::ostringstream out;
    bool ok = verify_all(cfg, out);
    std::string report = out.str();
    EXPECT_TRUE(ok) << report;
    EXPECT_EQ(report.find("FAIL"), std::string::npos) << report;
    for (const char* check : {"mesh-valid", "inertia-diagonal", "coercivity-bounds",
                              "eigen-positive", "eigen-orthonormal", "eigen-divfree",
                              "tensor-diagonal", "tensor-rayleigh", "energy-identity",
                              "momentum-identity", "convective-neutrality",
                              "short-run-monotone", "short-run-conservation"}) {
        EXPECT_NE(report.find(std::string("PASS ") + check), std::string::npos) << check;
    }
}

TEST(Cli, StagedPipelineMatchesFullRun) {
    fs::path dir = fresh_dir("staged");
    write_text(dir / "run.cfg", coarse_config_text());
    std::string cfg_arg = " --config '" + (dir / "run.cfg").string() + "'";

    CliResult mesh = run_cli("mesh" + cfg_arg + " --out '" + (dir / "mesh.txt").string() + "'",
                             "staged_mesh.log");
    ASSERT_EQ(mesh.code, 0) << mesh.output;
    EXPECT_NE(mesh.output.find("vertices"), std::string::npos);

    CliResult eig = run_cli("eig" + cfg_arg + " --mesh '" + (dir / "mesh.txt").string() +
                                "' --out '" + (dir / "basis.bin").string() + "'",
                            "staged_eig.log");
    ASSERT_EQ(eig.code, 0) << eig.output;

    CliResult tensors = run_cli("tensors" + cfg_arg + " --basis '" +
                                    (dir / "basis.bin").string() + "' --out '" +
                                    (dir / "sys.bin").string() + "'",
                                "staged_tensors.log");
    ASSERT_EQ(tensors.code, 0) << tensors.output;

    CliResult full = run_cli("run" + cfg_arg + " --out '" + (dir / "full").string() + "'",
                             "staged_run.log");
    ASSERT_EQ(full.code, 0) << full.output;

    // Stage by stage or in one shot, the same configuration yields the same
    // mesh and tensor files byte for byte.
    EXPECT_EQ(read_text(dir / "mesh.txt"), read_text(dir / "full" / "mesh.txt"));
    EXPECT_EQ(read_text(dir / "sys.bin"), read_text(dir / "full" / "sys.bin"));
}

TEST(Cli, SimulateHonorsInitialStateFile) {
    const Rig& r = rig();
    fs::path dir = fresh_dir("simulate");
    save_system((dir / "sys.bin").string(), r.sys);
    write_text(dir / "run.cfg", coarse_config_text());
    write_text(dir / "init.cfg",
               "initial.Omega0 = [0.3, -0.2, 0.4]\n"
               "initial.c0 = [0.05, -0.04, 0.03, -0.02]\n");

    CliResult sim = run_cli("simulate --config '" + (dir / "run.cfg").string() +
                                "' --system '" + (dir / "sys.bin").string() + "' --init '" +
                                (dir / "init.cfg").string() + "' --out '" +
                                (dir / "sim").string() + "'",
                            "simulate.log");
    ASSERT_EQ(sim.code, 0) << sim.output;

    auto rows = parse_csv_rows(read_text(dir / "sim" / "series.csv"));
    ASSERT_GE(rows.size(), 3u);
    ASSERT_EQ(rows[0].size(), 18u);

    // First sample is the initial state exactly as written.
    EXPECT_EQ(rows[0][0], 0.0);
    EXPECT_EQ(rows[0][6], 0.3);
    EXPECT_EQ(rows[0][7], -0.2);
    EXPECT_EQ(rows[0][8], 0.4);

    // Momentum magnitude holds and energy never rises along the samples.
    double a0 = rows[0][4];
    double ke_prev = rows[0][1];
    for (const auto& row : rows) {
        EXPECT_NEAR(row[4], a0, 1e-9 * a0);
        EXPECT_LE(row[1], ke_prev + 1e-12 * rows[0][1]);
        ke_prev = row[1];
    }
    EXPECT_LT(rows.back()[1], rows[0][1]);
}

TEST(Cli, RunIsByteDeterministic) {
    fs::path dir = fresh_dir("deterministic");
    write_text(dir / "run.cfg", coarse_config_text());
    std::string cfg_arg = " --config '" + (dir / "run.cfg").string() + "'";

    CliResult first = run_cli("run" + cfg_arg + " --out '" + (dir / "one").string() + "'",
                              "deterministic_one.log");
    ASSERT_EQ(first.code, 0) << first.output;
    CliResult second = run_cli("run" + cfg_arg + " --out '" + (dir / "two").string() + "'",
                               "deterministic_two.log");
    ASSERT_EQ(second.code, 0) << second.output;

    EXPECT_EQ(read_text(dir / "one" / "series.csv"), read_text(dir / "two" / "series.csv"));
    EXPECT_EQ(read_text(dir / "one" / "summary.json"),
              read_text(dir / "two" / "summary.json"));
    EXPECT_EQ(read_text(dir / "one" / "basis.bin"), read_text(dir / "two" / "basis.bin"));
}

TEST(Cli, EulerMatchesClosedForm) {
    fs::path dir = fresh_dir("euler");
    CliResult euler = run_cli(
        "euler --inertia 1 1 2 --omega0 1 0 1 --dt 0.001 --t-end 1 --out '" +
            (dir / "euler.csv").string() + "'",
        "euler.log");
    ASSERT_EQ(euler.code, 0) << euler.output;

    auto rows = parse_csv_rows(read_text(dir / "euler.csv"));
    ASSERT_GE(rows.size(), 2u);
    double t = rows.back()[0];
    EXPECT_DOUBLE_EQ(t, 1.0);
    // Symmetric top: the transverse spin precesses at unit rate.
    EXPECT_NEAR(rows.back()[6], std::cos(t), 1e-9);
    EXPECT_NEAR(rows.back()[7], std::sin(t), 1e-9);
    EXPECT_NEAR(rows.back()[8], 1.0, 1e-12);
}

TEST(Cli, VerifyPrintsPassBattery) {
    fs::path dir = fresh_dir("verify");
    write_text(dir / "run.cfg", coarse_config_text());
    CliResult verify = run_cli("verify --config '" + (dir / "run.cfg").string() + "'",
                               "verify.log");
    ASSERT_EQ(verify.code, 0) << verify.output;
    EXPECT_NE(verify.output.find("PASS mesh-valid"), std::string::npos) << verify.output;
    EXPECT_NE(verify.output.find("PASS energy-identity"), std::string::npos) << verify.output;
    EXPECT_EQ(verify.output.find("FAIL"), std::string::npos) << verify.output;
}

TEST(Cli, ExitCodesReflectErrorCategory) {
    const Rig& r = rig();
    fs::path dir = fresh_dir("exit_codes");
    save_system((dir / "sys.bin").string(), r.sys);
    std::string content = read_text(dir / "sys.bin");
    content[content.rfind("checksum ") / 2] ^= 1;
    write_text(dir / "tampered.bin", content);
    write_text(dir / "init.cfg",
               "initial.Omega0 = [0.3, -0.2, 0.4]\n"
               "initial.c0 = [0.05, -0.04, 0.03, -0.02]\n");
    write_text(dir / "bad.cfg", "gravity = 9.81\n");

    EXPECT_EQ(run_cli("", "exit_none.log").code, 2);
    EXPECT_EQ(run_cli("frobnicate", "exit_unknown.log").code, 2);
    EXPECT_EQ(run_cli("mesh", "exit_noout.log").code, 2);
    EXPECT_EQ(run_cli("simulate --out '" + (dir / "x").string() + "'", "exit_nosys.log").code,
              2);
    EXPECT_EQ(run_cli("mesh --config '" + (dir / "missing.cfg").string() + "' --out '" +
                          (dir / "m.txt").string() + "'",
                      "exit_nocfg.log")
                  .code,
              2);
    EXPECT_EQ(run_cli("mesh --config '" + (dir / "bad.cfg").string() + "' --out '" +
                          (dir / "m.txt").string() + "'",
                      "exit_badcfg.log")
                  .code,
              2);
    EXPECT_EQ(run_cli("euler --inertia 1 -1 2 --omega0 1 0 1 --out '" +
                          (dir / "e.csv").string() + "'",
                      "exit_badinertia.log")
                  .code,
              2);

    // A corrupted tensor file is an invariant failure.
    CliResult tampered = run_cli("simulate --system '" + (dir / "tampered.bin").string() +
                                     "' --out '" + (dir / "t").string() + "'",
                                 "exit_tampered.log");
    EXPECT_EQ(tampered.code, 4) << tampered.output;
    EXPECT_NE(tampered.output.find("checksum mismatch"), std::string::npos);

    // An absurd step size blows the solution up, which is a numerical failure.
    CliResult blowup = run_cli("simulate --system '" + (dir / "sys.bin").string() +
                                   "' --init '" + (dir / "init.cfg").string() +
                                   "' --dt 1e50 --t-end 1e51 --out '" + (dir / "b").string() +
                                   "'",
                               "exit_blowup.log");
    EXPECT_EQ(blowup.code, 3) << blowup.output;
}
