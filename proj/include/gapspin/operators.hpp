#pragma once

#include <Eigen/Dense>
#include <cstddef>

#include "gapspin/core.hpp"
#include "gapspin/inertia.hpp"
#include "gapspin/mesh.hpp"

namespace gapspin {

// Velocity fields are continuous piecewise-linear on vertices, optionally
// enriched with one interior (bubble) vector dof per tet. All inner products
// of such fields are polynomial of total degree <= 8 on affine tets, so a
// degree-9 rule integrates them exactly.
constexpr int kFieldQuadOrder = 9;

// A liquid velocity field together with the rigid angular velocity of its
// extension onto the ball: w = v on the gap, omega_ball x x on the ball.
struct ExtendedField {
    const Mesh* mesh = nullptr;
    VecX v_dofs;               // 3*nv vertex values, then optionally 3*nt bubble values
    Vec3 omega_ball = Vec3::Zero();

    bool has_bubbles() const {
        return mesh != nullptr &&
               v_dofs.size() == 3 * (mesh->num_vertices() + mesh->num_tets());
    }
};

inline ExtendedField zero_field(const Mesh& mesh, bool with_bubbles = false) {
    ExtendedField f;
    f.mesh = &mesh;
    f.v_dofs = VecX::Zero(3 * (mesh.num_vertices() + (with_bubbles ? mesh.num_tets() : 0)));
    return f;
}

namespace detail {

inline void check_field(const ExtendedField& u) {
    if (u.mesh == nullptr) throw ConfigError("field has no mesh");
    Eigen::Index nv3 = 3 * u.mesh->num_vertices();
    Eigen::Index full3 = nv3 + 3 * u.mesh->num_tets();
    if (u.v_dofs.size() != nv3 && u.v_dofs.size() != full3) {
        throw ConfigError("field dof vector does not match its mesh");
    }
}

inline void check_same_mesh(const ExtendedField& u, const ExtendedField& w) {
    check_field(u);
    check_field(w);
    if (u.mesh != w.mesh) throw ConfigError("fields live on different meshes");
}

}  // namespace detail

// Value of the field inside tet t at barycentric coordinates b. The bubble
// shape is 256 l0 l1 l2 l3, normalized to 1 at the centroid.
inline Vec3 eval_field(const ExtendedField& u, std::size_t t, double b0, double b1, double b2,
                       double b3) {
    const auto& k = u.mesh->tets[t];
    Vec3 val = b0 * u.v_dofs.segment<3>(3 * k[0]) + b1 * u.v_dofs.segment<3>(3 * k[1]) +
               b2 * u.v_dofs.segment<3>(3 * k[2]) + b3 * u.v_dofs.segment<3>(3 * k[3]);
    if (u.has_bubbles()) {
        double bubble = 256.0 * b0 * b1 * b2 * b3;
        val += bubble * u.v_dofs.segment<3>(3 * (u.mesh->num_vertices() + t));
    }
    return val;
}

// Weighted inner product (u,w) = rho Int_L u.w dV + lambda omega_u.omega_w.
// The gap integral is exact quadrature; the ball term is analytic.
inline double weighted_inner(const ExtendedField& u, const ExtendedField& w,
                             const InertiaModel& model) {
    detail::check_same_mesh(u, w);
    const Mesh& mesh = *u.mesh;
    QuadratureRule rule = tet_rule(kFieldQuadOrder);
    std::vector<double> per_tet(mesh.tets.size(), 0.0);
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        double acc = 0.0;
        for (Eigen::Index q = 0; q < rule.size(); ++q) {
            Vec3 uv = eval_field(u, t, rule.bary(0, q), rule.bary(1, q), rule.bary(2, q),
                                 rule.bary(3, q));
            Vec3 wv = eval_field(w, t, rule.bary(0, q), rule.bary(1, q), rule.bary(2, q),
                                 rule.bary(3, q));
            acc += rule.weights[q] * uv.dot(wv);
        }
        per_tet[t] = mesh.tet_volume(t) * acc;
    }
    return model.rho * pairwise_sum(per_tet) + model.lambda * u.omega_ball.dot(w.omega_ball);
}

// Moment map M(w) = rho Int_L x cross w dV + lambda omega_w.
inline Vec3 moment_map(const ExtendedField& w, const InertiaModel& model) {
    detail::check_field(w);
    const Mesh& mesh = *w.mesh;
    QuadratureRule rule = tet_rule(kFieldQuadOrder);
    std::vector<double> px(mesh.tets.size()), py(mesh.tets.size()), pz(mesh.tets.size());
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        const auto& k = mesh.tets[t];
        Vec3 acc = Vec3::Zero();
        for (Eigen::Index q = 0; q < rule.size(); ++q) {
            Vec3 x = rule.bary(0, q) * mesh.vertices[k[0]] + rule.bary(1, q) * mesh.vertices[k[1]] +
                     rule.bary(2, q) * mesh.vertices[k[2]] + rule.bary(3, q) * mesh.vertices[k[3]];
            Vec3 wv = eval_field(w, t, rule.bary(0, q), rule.bary(1, q), rule.bary(2, q),
                                 rule.bary(3, q));
            acc += rule.weights[q] * x.cross(wv);
        }
        acc *= mesh.tet_volume(t);
        px[t] = acc.x();
        py[t] = acc.y();
        pz[t] = acc.z();
    }
    Vec3 fluid(pairwise_sum(px), pairwise_sum(py), pairwise_sum(pz));
    return model.rho * fluid + model.lambda * w.omega_ball;
}

// b(w) = -I^{-1} M(w); applied to the velocity decomposition this is the
// rigid angular velocity omega_R carried by the total angular momentum.
inline Vec3 b_functional(const ExtendedField& w, const InertiaModel& model) {
    return -(model.I_inv * moment_map(w, model));
}

// The finite-rank operator: (Bw)(x) = -b(w) cross x, rigid on the whole domain.
inline ExtendedField apply_B(const ExtendedField& w, const InertiaModel& model) {
    detail::check_field(w);
    Vec3 nb = -b_functional(w, model);
    const Mesh& mesh = *w.mesh;
    ExtendedField out;
    out.mesh = &mesh;
    out.omega_ball = nb;
    out.v_dofs.resize(3 * mesh.num_vertices());
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        out.v_dofs.segment<3>(3 * v) = nb.cross(mesh.vertices[v]);
    }
    return out;
}

// Energy functional E(w) = |w|^2 - b(w).I.b(w), the squared B-norm.
inline double energy_functional(const ExtendedField& w, const InertiaModel& model) {
    Vec3 b = b_functional(w, model);
    return weighted_inner(w, w, model) - b.dot(model.I * b);
}

// B-inner product (u,w)_B = (u,w) - b(u).I.b(w) = ((1-B)u, w).
inline double b_inner(const ExtendedField& u, const ExtendedField& w, const InertiaModel& model) {
    Vec3 bu = b_functional(u, model);
    Vec3 bw = b_functional(w, model);
    return weighted_inner(u, w, model) - bu.dot(model.I * bw);
}

// Bundles mesh and material model for the weighted-product algebra.
struct WeightedProducts {
    const Mesh* mesh = nullptr;
    const InertiaModel* model = nullptr;

    double inner(const ExtendedField& u, const ExtendedField& w) const {
        return weighted_inner(u, w, *model);
    }
    Vec3 moment(const ExtendedField& w) const { return moment_map(w, *model); }
    Vec3 b(const ExtendedField& w) const { return b_functional(w, *model); }
    double energy(const ExtendedField& w) const { return energy_functional(w, *model); }
    double inner_B(const ExtendedField& u, const ExtendedField& w) const {
        return b_inner(u, w, *model);
    }
};

// Random field satisfying the essential boundary conditions: zero at outer
// boundary vertices, omega cross x at inner sphere vertices, free elsewhere.
inline ExtendedField random_admissible_field(const Mesh& mesh, Rng& rng, bool with_bubbles = true) {
    std::vector<VertexClass> cls = classify_vertices(mesh);
    ExtendedField f = zero_field(mesh, with_bubbles);
    f.omega_ball = rng.vec3();
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        switch (cls[v]) {
            case VertexClass::kInterior:
                f.v_dofs.segment<3>(3 * v) = rng.vec3();
                break;
            case VertexClass::kInnerS:
                f.v_dofs.segment<3>(3 * v) = f.omega_ball.cross(mesh.vertices[v]);
                break;
            case VertexClass::kOuterC:
                break;
        }
    }
    if (with_bubbles) {
        for (int t = 0; t < mesh.num_tets(); ++t) {
            f.v_dofs.segment<3>(3 * (mesh.num_vertices() + t)) = rng.vec3();
        }
    }
    return f;
}

}  // namespace gapspin
