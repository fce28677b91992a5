#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gapspin/core.hpp"
#include "gapspin/quadrature.hpp"

namespace gapspin {

enum class BoundaryTag { kInnerS, kOuterC };

inline const char* tag_name(BoundaryTag t) {
    return t == BoundaryTag::kInnerS ? "INNER_S" : "OUTER_C";
}

struct BoundaryFace {
    std::array<int, 3> v;
    BoundaryTag tag;
};

// Tetrahedral mesh centered at the ball center (the origin). Boundary faces
// are oriented so INNER_S normals point toward the origin and OUTER_C normals
// away from it.
struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 4>> tets;
    std::vector<BoundaryFace> boundary_faces;
    int quadrature_order = 2;

    int num_vertices() const { return static_cast<int>(vertices.size()); }
    int num_tets() const { return static_cast<int>(tets.size()); }

    double tet_volume(std::size_t t) const {
        const auto& k = tets[t];
        Mat3 e;
        e.col(0) = vertices[k[1]] - vertices[k[0]];
        e.col(1) = vertices[k[2]] - vertices[k[0]];
        e.col(2) = vertices[k[3]] - vertices[k[0]];
        return e.determinant() / 6.0;
    }
};

inline void validate_mesh(const Mesh& m) {
    const int nv = m.num_vertices();
    for (std::size_t t = 0; t < m.tets.size(); ++t) {
        for (int i : m.tets[t]) {
            if (i < 0 || i >= nv) throw InvariantError("tet vertex index out of range");
        }
        if (m.tet_volume(t) <= 0.0) throw InvariantError("tet with nonpositive volume");
    }
    for (const auto& f : m.boundary_faces) {
        for (int i : f.v) {
            if (i < 0 || i >= nv) throw InvariantError("face vertex index out of range");
        }
    }
}

enum class VertexClass { kInterior, kInnerS, kOuterC };

// A vertex is boundary iff it appears in a boundary face; the two boundary
// spheres are disjoint, so the classification is unambiguous.
inline std::vector<VertexClass> classify_vertices(const Mesh& m) {
    std::vector<VertexClass> cls(m.vertices.size(), VertexClass::kInterior);
    for (const auto& f : m.boundary_faces) {
        VertexClass c = f.tag == BoundaryTag::kInnerS ? VertexClass::kInnerS : VertexClass::kOuterC;
        for (int i : f.v) {
            if (cls[i] != VertexClass::kInterior && cls[i] != c) {
                throw InvariantError("vertex lies on both boundary spheres");
            }
            cls[i] = c;
        }
    }
    return cls;
}

// Quadrature of a scalar sampler over the mesh. Per-tet sums are combined by
// a pairwise tree reduction so the result does not depend on any chunking.
template <class F>
double integrate_scalar(const Mesh& mesh, F&& f) {
    QuadratureRule rule = tet_rule(mesh.quadrature_order);
    std::vector<double> per_tet(mesh.tets.size(), 0.0);
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        const auto& k = mesh.tets[t];
        double vol = mesh.tet_volume(t);
        double acc = 0.0;
        for (Eigen::Index q = 0; q < rule.size(); ++q) {
            Vec3 x = rule.bary(0, q) * mesh.vertices[k[0]] + rule.bary(1, q) * mesh.vertices[k[1]] +
                     rule.bary(2, q) * mesh.vertices[k[2]] + rule.bary(3, q) * mesh.vertices[k[3]];
            acc += rule.weights[q] * f(x);
        }
        per_tet[t] = vol * acc;
    }
    return pairwise_sum(per_tet);
}

template <class F>
Vec3 integrate_vector(const Mesh& mesh, F&& f) {
    Vec3 out;
    for (int c = 0; c < 3; ++c) {
        out[c] = integrate_scalar(mesh, [&](const Vec3& x) { return f(x)[c]; });
    }
    return out;
}

namespace detail {

struct SurfaceTriangulation {
    std::vector<Vec3> verts;                 // on the unit sphere
    std::vector<std::array<int, 3>> faces;   // oriented with outward normals
    double edge = 0.0;                       // nominal edge length
};

// Icosahedron subdivided `level` times, midpoints projected to the sphere.
inline SurfaceTriangulation icosphere(int level) {
    SurfaceTriangulation s;
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    const double base[12][3] = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
        {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
        {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (const auto& p : base) s.verts.push_back(Vec3(p[0], p[1], p[2]).normalized());
    s.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
               {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
               {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
               {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
    for (int l = 0; l < level; ++l) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            auto key = std::minmax(a, b);
            auto it = midpoint.find(key);
            if (it != midpoint.end()) return it->second;
            int id = static_cast<int>(s.verts.size());
            s.verts.push_back((s.verts[a] + s.verts[b]).normalized());
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(4 * s.faces.size());
        for (const auto& f : s.faces) {
            int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        s.faces = std::move(next);
    }
    // Make every face normal point away from the origin.
    for (auto& f : s.faces) {
        const Vec3 &a = s.verts[f[0]], &b = s.verts[f[1]], &c = s.verts[f[2]];
        if ((b - a).cross(c - a).dot(a + b + c) < 0.0) std::swap(f[1], f[2]);
    }
    // Icosahedron edge on the unit sphere, halved per subdivision.
    s.edge = 4.0 / std::sqrt(10.0 + 2.0 * std::sqrt(5.0)) / std::pow(2.0, level);
    return s;
}

inline void append_tet(Mesh& m, int a, int b, int c, int d) {
    Mat3 e;
    e.col(0) = m.vertices[b] - m.vertices[a];
    e.col(1) = m.vertices[c] - m.vertices[a];
    e.col(2) = m.vertices[d] - m.vertices[a];
    if (e.determinant() < 0.0) std::swap(c, d);
    m.tets.push_back({a, b, c, d});
}

// Split a prism (bottom triangle p0 p1 p2, top p3 p4 p5, pi below pi+3) into
// three tets so that every quadrilateral face gets the diagonal through its
// smallest global vertex id. Adjacent prisms then split shared faces the same
// way, which keeps the mesh conforming.
inline void split_prism(Mesh& m, const std::array<int, 6>& p) {
    static const int perms[6][6] = {{0, 1, 2, 3, 4, 5}, {1, 2, 0, 4, 5, 3}, {2, 0, 1, 5, 3, 4},
                                    {3, 5, 4, 0, 2, 1}, {4, 3, 5, 1, 0, 2}, {5, 4, 3, 2, 1, 0}};
    int lowest = 0;
    for (int i = 1; i < 6; ++i) {
        if (p[i] < p[lowest]) lowest = i;
    }
    std::array<int, 6> w;
    for (int i = 0; i < 6; ++i) w[i] = p[perms[lowest][i]];
    if (std::min(w[1], w[5]) < std::min(w[2], w[4])) {
        append_tet(m, w[0], w[1], w[2], w[5]);
        append_tet(m, w[0], w[1], w[5], w[4]);
        append_tet(m, w[0], w[4], w[5], w[3]);
    } else {
        append_tet(m, w[0], w[1], w[2], w[4]);
        append_tet(m, w[0], w[4], w[2], w[5]);
        append_tet(m, w[0], w[4], w[5], w[3]);
    }
}

}  // namespace detail

// Spherical shell {R_inner <= |x| <= R_dir(x/|x|)} where the outer surface is
// the axis-aligned ellipsoid with the given semi-axes. Concentric spheres are
// the special case of equal semi-axes.
inline Mesh generate_annulus_mesh(double R_inner, const Vec3& outer_semi_axes, int refinement) {
    if (refinement < 0) throw ConfigError("refinement must be >= 0");
    double min_axis = outer_semi_axes.minCoeff();
    if (!(R_inner > 0.0) || !(R_inner < min_axis)) {
        throw ConfigError("annulus requires 0 < R_inner < every outer semi-axis");
    }
    detail::SurfaceTriangulation surf = detail::icosphere(refinement + 1);
    const int nv = static_cast<int>(surf.verts.size());

    double mean_outer = outer_semi_axes.mean();
    double mid_radius = 0.5 * (R_inner + mean_outer);
    int layers = std::max<long>(1, std::llround((mean_outer - R_inner) / (surf.edge * mid_radius)));

    auto outer_radius = [&](const Vec3& u) {
        Vec3 s = u.cwiseQuotient(outer_semi_axes);
        return 1.0 / s.norm();
    };

    Mesh m;
    m.vertices.reserve(static_cast<std::size_t>(nv) * (layers + 1));
    for (int s = 0; s <= layers; ++s) {
        double t = static_cast<double>(s) / layers;
        for (const Vec3& u : surf.verts) {
            double r = R_inner + t * (outer_radius(u) - R_inner);
            m.vertices.push_back(r * u);
        }
    }
    m.tets.reserve(3 * static_cast<std::size_t>(layers) * surf.faces.size());
    for (int s = 0; s < layers; ++s) {
        int lo = s * nv, hi = (s + 1) * nv;
        for (const auto& f : surf.faces) {
            detail::split_prism(m, {lo + f[0], lo + f[1], lo + f[2], hi + f[0], hi + f[1], hi + f[2]});
        }
    }
    int top = layers * nv;
    for (const auto& f : surf.faces) {
        m.boundary_faces.push_back({{f[2], f[1], f[0]}, BoundaryTag::kInnerS});
        m.boundary_faces.push_back({{top + f[0], top + f[1], top + f[2]}, BoundaryTag::kOuterC});
    }
    validate_mesh(m);
    return m;
}

inline Mesh generate_annulus_mesh(double R_inner, double R_outer, int refinement) {
    if (!(R_inner > 0.0) || !(R_outer > R_inner)) {
        throw ConfigError("annulus requires 0 < R_inner < R_outer");
    }
    return generate_annulus_mesh(R_inner, Vec3::Constant(R_outer), refinement);
}

// Ball B_R centered at the origin: a vertex fan around the center plus swept
// prism shells. The whole boundary is the sphere |x| = R, tagged INNER_S.
inline Mesh generate_ball_mesh(double R, int refinement) {
    if (!(R > 0.0)) throw ConfigError("ball radius must be positive");
    if (refinement < 0) throw ConfigError("refinement must be >= 0");
    detail::SurfaceTriangulation surf = detail::icosphere(refinement + 1);
    const int nv = static_cast<int>(surf.verts.size());
    int layers = std::max<long>(1, std::llround(1.0 / surf.edge));

    Mesh m;
    m.vertices.reserve(1 + static_cast<std::size_t>(nv) * layers);
    m.vertices.push_back(Vec3::Zero());
    for (int s = 1; s <= layers; ++s) {
        double r = R * static_cast<double>(s) / layers;
        for (const Vec3& u : surf.verts) m.vertices.push_back(r * u);
    }
    auto sheet = [&](int s, int k) { return 1 + (s - 1) * nv + k; };
    for (const auto& f : surf.faces) {
        m.tets.push_back({0, sheet(1, f[0]), sheet(1, f[1]), sheet(1, f[2])});
    }
    for (int s = 1; s < layers; ++s) {
        for (const auto& f : surf.faces) {
            detail::split_prism(m, {sheet(s, f[0]), sheet(s, f[1]), sheet(s, f[2]),
                                    sheet(s + 1, f[0]), sheet(s + 1, f[1]), sheet(s + 1, f[2])});
        }
    }
    for (const auto& f : surf.faces) {
        m.boundary_faces.push_back(
            {{sheet(layers, f[2]), sheet(layers, f[1]), sheet(layers, f[0])}, BoundaryTag::kInnerS});
    }
    validate_mesh(m);
    return m;
}

inline void export_mesh(const Mesh& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    out << "gapspin-mesh v1\n";
    out << m.vertices.size() << ' ' << m.tets.size() << ' ' << m.boundary_faces.size() << '\n';
    for (const Vec3& v : m.vertices) {
        out << fmt_g17(v.x()) << ' ' << fmt_g17(v.y()) << ' ' << fmt_g17(v.z()) << '\n';
    }
    for (const auto& t : m.tets) {
        out << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
    }
    for (const auto& f : m.boundary_faces) {
        out << f.v[0] << ' ' << f.v[1] << ' ' << f.v[2] << ' ' << tag_name(f.tag) << '\n';
    }
    if (!out) throw ConfigError("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_tokens(const std::string& line) {
    std::vector<std::string> toks;
    std::istringstream iss(line);
    std::string t;
    while (iss >> t) toks.push_back(t);
    return toks;
}

inline double parse_double(const std::string& tok, const std::string& path, int lineno) {
    char* end = nullptr;
    double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": bad number '" + tok + "'");
    }
    return v;
}

inline long parse_index(const std::string& tok, const std::string& path, int lineno) {
    char* end = nullptr;
    long v = std::strtol(tok.c_str(), &end, 10);
    if (end == tok.c_str() || *end != '\0') {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": bad index '" + tok + "'");
    }
    return v;
}

}  // namespace detail

inline Mesh import_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open mesh file: " + path);
    int lineno = 0;
    std::string line;
    auto next_line = [&]() {
        if (!std::getline(in, line)) {
            throw ConfigError(path + ":" + std::to_string(lineno + 1) + ": unexpected end of file");
        }
        ++lineno;
    };
    next_line();
    if (line != "gapspin-mesh v1") {
        throw ConfigError(path + ":1: expected header 'gapspin-mesh v1'");
    }
    next_line();
    auto counts = detail::split_tokens(line);
    if (counts.size() != 3) throw ConfigError(path + ":2: expected 'nv nt nf'");
    long nv = detail::parse_index(counts[0], path, lineno);
    long nt = detail::parse_index(counts[1], path, lineno);
    long nf = detail::parse_index(counts[2], path, lineno);
    if (nv < 4 || nt < 1 || nf < 0) throw ConfigError(path + ":2: implausible counts");

    Mesh m;
    m.vertices.reserve(nv);
    for (long i = 0; i < nv; ++i) {
        next_line();
        auto toks = detail::split_tokens(line);
        if (toks.size() != 3) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 3 coordinates");
        }
        m.vertices.emplace_back(detail::parse_double(toks[0], path, lineno),
                                detail::parse_double(toks[1], path, lineno),
                                detail::parse_double(toks[2], path, lineno));
    }
    m.tets.reserve(nt);
    for (long i = 0; i < nt; ++i) {
        next_line();
        auto toks = detail::split_tokens(line);
        if (toks.size() != 4) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected 4 vertex indices");
        }
        std::array<int, 4> t;
        for (int j = 0; j < 4; ++j) {
            t[j] = static_cast<int>(detail::parse_index(toks[j], path, lineno));
        }
        m.tets.push_back(t);
    }
    m.boundary_faces.reserve(nf);
    for (long i = 0; i < nf; ++i) {
        next_line();
        auto toks = detail::split_tokens(line);
        if (toks.size() != 4) {
            throw InvariantError(path + ":" + std::to_string(lineno) +
                                 ": boundary face needs 3 indices and a tag");
        }
        BoundaryFace f;
        for (int j = 0; j < 3; ++j) {
            f.v[j] = static_cast<int>(detail::parse_index(toks[j], path, lineno));
        }
        if (toks[3] == "INNER_S") {
            f.tag = BoundaryTag::kInnerS;
        } else if (toks[3] == "OUTER_C") {
            f.tag = BoundaryTag::kOuterC;
        } else {
            throw InvariantError(path + ":" + std::to_string(lineno) + ": unknown boundary tag '" +
                                 toks[3] + "'");
        }
        m.boundary_faces.push_back(f);
    }
    validate_mesh(m);
    return m;
}

}  // namespace gapspin
