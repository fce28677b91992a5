#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "gapspin/core.hpp"
#include "gapspin/galerkin.hpp"
#include "gapspin/inertia.hpp"
#include "gapspin/mesh.hpp"
#include "gapspin/operators.hpp"

namespace gapspin {

// Basis and system containers are line-oriented ASCII: a version line, named
// sections, %.17g numbers (bit-exact round trip), and a trailing FNV-1a
// checksum line covering every preceding byte.

inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : data) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

inline std::string checksum_line(const std::string& body) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
    return std::string("checksum ") + buf + "\n";
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Strip and verify the trailing checksum line; return the covered body.
inline std::string verified_body(const std::string& data, const std::string& what) {
    std::size_t pos = data.rfind("checksum ");
    if (pos == std::string::npos || (pos != 0 && data[pos - 1] != '\n')) {
        throw InvariantError(what + ": missing checksum line");
    }
    std::string body = data.substr(0, pos);
    std::istringstream tail(data.substr(pos));
    std::string word, hex;
    tail >> word >> hex;
    std::uint64_t stored = 0;
    try {
        stored = std::stoull(hex, nullptr, 16);
    } catch (const std::exception&) {
        throw InvariantError(what + ": malformed checksum line");
    }
    if (stored != fnv1a64(body)) {
        throw InvariantError(what + ": checksum mismatch, file is corrupt or was modified");
    }
    return body;
}

inline void write_values(std::ostream& out, const double* v, std::size_t count) {
    for (std::size_t k = 0; k < count; ++k) {
        out << fmt_g17(v[k]) << (((k + 1) % 6 == 0 || k + 1 == count) ? '\n' : ' ');
    }
}

inline void read_values(std::istream& in, double* v, std::size_t count, const std::string& what) {
    for (std::size_t k = 0; k < count; ++k) {
        if (!(in >> v[k])) throw ConfigError(what + ": truncated numeric block");
    }
}

inline void expect_token(std::istream& in, const std::string& want, const std::string& what) {
    std::string got;
    if (!(in >> got) || got != want) {
        throw ConfigError(what + ": expected token '" + want + "'");
    }
}

inline void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw ConfigError("cannot open for writing: " + tmp);
        out << content;
        if (!out) throw ConfigError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void save_basis(const std::string& path, const ModeBasis& basis,
                       const std::string& mesh_path, const MaterialConfig& material) {
    if (basis.count() < 1) throw ConfigError("cannot save an empty basis");
    const Mesh& mesh = *basis.modes[0].mesh;
    std::ostringstream out;
    out << "gapspin-basis v1\n";
    out << "mesh " << mesh_path << "\n";
    out << "material " << fmt_g17(material.rho) << ' ' << fmt_g17(material.mu) << ' '
        << fmt_g17(material.R) << ' ' << fmt_g17(material.m_ball) << ' '
        << fmt_g17(material.IB_eigs[0]) << ' ' << fmt_g17(material.IB_eigs[1]) << ' '
        << fmt_g17(material.IB_eigs[2]) << "\n";
    out << "modes " << basis.count() << "\n";
    out << "dofs " << basis.modes[0].v_dofs.size() << "\n";
    out << "sigma\n";
    detail::write_values(out, basis.sigmas.data(), static_cast<std::size_t>(basis.sigmas.size()));
    for (int p = 0; p < basis.count(); ++p) {
        const ExtendedField& m = basis.modes[p];
        if (m.mesh != &mesh || m.v_dofs.size() != basis.modes[0].v_dofs.size()) {
            throw InvariantError("basis modes are not uniform");
        }
        out << "mode " << p << "\n";
        out << "omega " << fmt_g17(m.omega_ball[0]) << ' ' << fmt_g17(m.omega_ball[1]) << ' '
            << fmt_g17(m.omega_ball[2]) << "\n";
        detail::write_values(out, m.v_dofs.data(), static_cast<std::size_t>(m.v_dofs.size()));
    }
    std::string body = out.str();
    detail::atomic_write(path, body + detail::checksum_line(body));
}

struct LoadedBasis {
    std::shared_ptr<Mesh> mesh;
    ModeBasis basis;
    MaterialConfig material;
    std::string mesh_path;
};

inline LoadedBasis load_basis(const std::string& path) {
    const std::string what = "basis file " + path;
    std::string body = detail::verified_body(detail::read_file(path), what);
    std::istringstream in(body);
    std::string magic, version;
    in >> magic >> version;
    if (magic != "gapspin-basis" || version != "v1") {
        throw ConfigError(what + ": unsupported format or version");
    }
    LoadedBasis out;
    detail::expect_token(in, "mesh", what);
    in >> out.mesh_path;
    detail::expect_token(in, "material", what);
    MaterialConfig& mc = out.material;
    if (!(in >> mc.rho >> mc.mu >> mc.R >> mc.m_ball >> mc.IB_eigs[0] >> mc.IB_eigs[1] >>
          mc.IB_eigs[2])) {
        throw ConfigError(what + ": malformed material line");
    }
    int n = 0;
    long dofs = 0;
    detail::expect_token(in, "modes", what);
    in >> n;
    detail::expect_token(in, "dofs", what);
    in >> dofs;
    if (n < 1 || n > kMaxModes || dofs < 3) throw ConfigError(what + ": invalid mode counts");

    detail::expect_token(in, "sigma", what);
    out.basis.sigmas.resize(n);
    detail::read_values(in, out.basis.sigmas.data(), static_cast<std::size_t>(n), what);

    // Relative mesh paths resolve against the basis file's directory, so a
    // run directory stays relocatable.
    std::filesystem::path mp(out.mesh_path);
    if (mp.is_relative()) {
        std::filesystem::path beside = std::filesystem::path(path).parent_path() / mp;
        if (std::filesystem::exists(beside)) mp = beside;
    }
    out.mesh = std::make_shared<Mesh>(import_mesh(mp.string()));
    long nv = static_cast<long>(out.mesh->num_vertices());
    long nt = static_cast<long>(out.mesh->num_tets());
    if (dofs != 3 * nv && dofs != 3 * (nv + nt)) {
        throw InvariantError(what + ": dof count does not match the mesh");
    }

    for (int p = 0; p < n; ++p) {
        detail::expect_token(in, "mode", what);
        int idx = -1;
        in >> idx;
        if (idx != p) throw ConfigError(what + ": mode blocks out of order");
        ExtendedField f;
        f.mesh = out.mesh.get();
        detail::expect_token(in, "omega", what);
        if (!(in >> f.omega_ball[0] >> f.omega_ball[1] >> f.omega_ball[2])) {
            throw ConfigError(what + ": malformed omega line");
        }
        f.v_dofs.resize(dofs);
        detail::read_values(in, f.v_dofs.data(), static_cast<std::size_t>(dofs), what);
        out.basis.modes.push_back(std::move(f));
    }
    return out;
}

inline void save_system(const std::string& path, const GalerkinSystem& sys) {
    if (sys.n < 0 || sys.n > kMaxModes) throw ConfigError("system has invalid mode count");
    const int n = sys.n;
    std::ostringstream out;
    out << "gapspin-system v1\n";
    out << "n " << n << "\n";
    out << "scalars " << fmt_g17(sys.mu) << ' ' << fmt_g17(sys.rho) << ' ' << fmt_g17(sys.lambda)
        << "\n";
    out << "ell " << fmt_g17(sys.ell[0]) << ' ' << fmt_g17(sys.ell[1]) << ' '
        << fmt_g17(sys.ell[2]) << "\n";
    auto block = [&](const std::string& name, const double* v, std::size_t count) {
        out << name << ' ' << count << "\n";
        detail::write_values(out, v, count);
    };
    block("a", sys.a.data(), static_cast<std::size_t>(n) * n);
    for (int r = 0; r < n; ++r) block("b", sys.b[r].data(), static_cast<std::size_t>(n) * n);
    for (int r = 0; r < n; ++r) block("d", sys.d[r].data(), static_cast<std::size_t>(3) * n);
    for (int r = 0; r < n; ++r) block("f", sys.f[r].data(), 9);
    for (int k = 0; k < 3; ++k) block("g", sys.g[k].data(), 9);
    for (int k = 0; k < 3; ++k) block("h", sys.h[k].data(), static_cast<std::size_t>(n) * 3);
    block("moments", sys.moments.data(), static_cast<std::size_t>(3) * n);
    block("omega_modes", sys.omega_modes.data(), static_cast<std::size_t>(3) * n);
    block("Mf", sys.Mf.data(), static_cast<std::size_t>(n) * n);
    std::string body = out.str();
    detail::atomic_write(path, body + detail::checksum_line(body));
}

inline GalerkinSystem load_system(const std::string& path) {
    const std::string what = "system file " + path;
    std::string body = detail::verified_body(detail::read_file(path), what);
    std::istringstream in(body);
    std::string magic, version;
    in >> magic >> version;
    if (magic != "gapspin-system" || version != "v1") {
        throw ConfigError(what + ": unsupported format or version");
    }
    GalerkinSystem sys;
    detail::expect_token(in, "n", what);
    in >> sys.n;
    if (sys.n < 0 || sys.n > kMaxModes) throw ConfigError(what + ": invalid mode count");
    const int n = sys.n;
    detail::expect_token(in, "scalars", what);
    if (!(in >> sys.mu >> sys.rho >> sys.lambda)) throw ConfigError(what + ": malformed scalars");
    detail::expect_token(in, "ell", what);
    if (!(in >> sys.ell[0] >> sys.ell[1] >> sys.ell[2])) throw ConfigError(what + ": malformed ell");
    auto block = [&](const std::string& name, double* v, std::size_t count) {
        detail::expect_token(in, name, what);
        std::size_t stored = 0;
        if (!(in >> stored) || stored != count) {
            throw ConfigError(what + ": block '" + name + "' has wrong size");
        }
        detail::read_values(in, v, count, what);
    };
    sys.a.resize(n, n);
    block("a", sys.a.data(), static_cast<std::size_t>(n) * n);
    sys.b.assign(n, MatX::Zero(n, n));
    for (int r = 0; r < n; ++r) block("b", sys.b[r].data(), static_cast<std::size_t>(n) * n);
    sys.d.assign(n, MatX::Zero(3, n));
    for (int r = 0; r < n; ++r) block("d", sys.d[r].data(), static_cast<std::size_t>(3) * n);
    sys.f.assign(n, Mat3::Zero());
    for (int r = 0; r < n; ++r) block("f", sys.f[r].data(), 9);
    for (int k = 0; k < 3; ++k) block("g", sys.g[k].data(), 9);
    sys.h.assign(3, MatX::Zero(n, 3));
    for (int k = 0; k < 3; ++k) block("h", sys.h[k].data(), static_cast<std::size_t>(n) * 3);
    sys.moments.resize(3, n);
    block("moments", sys.moments.data(), static_cast<std::size_t>(3) * n);
    sys.omega_modes.resize(3, n);
    block("omega_modes", sys.omega_modes.data(), static_cast<std::size_t>(3) * n);
    sys.Mf.resize(n, n);
    block("Mf", sys.Mf.data(), static_cast<std::size_t>(n) * n);
    if (!(sys.ell.minCoeff() > 0.0)) throw InvariantError(what + ": inertia diagonal not positive");
    return sys;
}

}  // namespace gapspin
