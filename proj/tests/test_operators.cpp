#include <gtest/gtest.h>

#include <cmath>

#include "gapspin/inertia.hpp"
#include "gapspin/mesh.hpp"
#include "gapspin/operators.hpp"

using namespace gapspin;

namespace {

struct Domain {
    Mesh mesh;
    InertiaModel model;

    explicit Domain(int refinement) {
        MaterialConfig cfg;
        mesh = generate_annulus_mesh(cfg.R, 1.0, refinement);
        model = build_inertia_model(cfg, mesh);
    }
};

// Global rigid field omega cross x, co-rotating ball. Linear in x, so vertex
// interpolation is exact and quadrature errors vanish.
ExtendedField rigid_field(const Mesh& mesh, const Vec3& omega) {
    ExtendedField f = zero_field(mesh, false);
    f.omega_ball = omega;
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        f.v_dofs.segment<3>(3 * v) = omega.cross(mesh.vertices[v]);
    }
    return f;
}

void add_rigid(ExtendedField& f, const Vec3& omega) {
    f.omega_ball += omega;
    for (int v = 0; v < f.mesh->num_vertices(); ++v) {
        f.v_dofs.segment<3>(3 * v) += omega.cross(f.mesh->vertices[v]);
    }
}

}  // namespace

// For w = omega cross x the weighted products reduce to inertia algebra:
// (w,w) = omega.(I_L + lambda) omega and M(w) = (I_L + lambda) omega. Both
// integrands are quadratic, so mesh quadrature reproduces them to round-off.
TEST(WeightedOperators, RigidFieldClosedForm) {
    Domain s(0);
    const Vec3 omega(0.4, -0.9, 1.2);
    ExtendedField w = rigid_field(s.mesh, omega);

    Mat3 moment_matrix = s.model.I_L + s.model.lambda * Mat3::Identity();
    double norm2 = weighted_inner(w, w, s.model);
    double exact_norm2 = omega.dot(moment_matrix * omega);
    EXPECT_NEAR(norm2, exact_norm2, 1e-12 * exact_norm2);

    Vec3 m = moment_map(w, s.model);
    EXPECT_LT((m - moment_matrix * omega).norm(), 1e-12 * m.norm());

    Vec3 b = b_functional(w, s.model);
    Vec3 exact_b = -(s.model.I_inv * (moment_matrix * omega));
    EXPECT_LT((b - exact_b).norm(), 1e-12 * exact_b.norm());

    double e = energy_functional(w, s.model);
    double exact_e = exact_norm2 - exact_b.dot(s.model.I * exact_b);
    EXPECT_NEAR(e, exact_e, 1e-11 * exact_norm2);
    EXPECT_GT(e, 0.0);
}

TEST(WeightedOperators, ZeroField) {
    Domain s(0);
    ExtendedField z = zero_field(s.mesh, true);
    EXPECT_DOUBLE_EQ(weighted_inner(z, z, s.model), 0.0);
    EXPECT_TRUE(moment_map(z, s.model).isZero());
    EXPECT_DOUBLE_EQ(energy_functional(z, s.model), 0.0);
}

TEST(WeightedOperators, BilinearAndSymmetric) {
    Domain s(0);
    Rng rng(0x1234u);
    ExtendedField u = random_admissible_field(s.mesh, rng);
    ExtendedField w = random_admissible_field(s.mesh, rng);

    double uw = weighted_inner(u, w, s.model);
    double wu = weighted_inner(w, u, s.model);
    EXPECT_NEAR(uw, wu, 1e-12 * std::abs(uw));

    ExtendedField combo = u;
    combo.v_dofs = 2.0 * u.v_dofs + w.v_dofs;
    combo.omega_ball = 2.0 * u.omega_ball + w.omega_ball;
    double lhs = weighted_inner(combo, w, s.model);
    double rhs = 2.0 * uw + weighted_inner(w, w, s.model);
    EXPECT_NEAR(lhs, rhs, 1e-11 * std::abs(rhs));

    double bi = b_inner(u, w, s.model);
    double bi_sym = b_inner(w, u, s.model);
    EXPECT_NEAR(bi, bi_sym, 1e-12 * std::abs(bi));
    EXPECT_NEAR(b_inner(u, u, s.model), energy_functional(u, s.model),
                1e-12 * std::abs(energy_functional(u, s.model)));
}

// 100 random admissible fields: the energy functional is strictly positive
// and never exceeds the squared weighted norm beyond round-off.
TEST(WeightedOperators, EnergyBoundsOnRandomFields) {
    Domain s(0);
    Rng rng(0xabcdefu);
    double min_ratio = 1.0, max_ratio = 0.0;
    for (int k = 0; k < 100; ++k) {
        ExtendedField w = random_admissible_field(s.mesh, rng);
        double e = energy_functional(w, s.model);
        double n2 = weighted_inner(w, w, s.model);
        ASSERT_GT(n2, 0.0);
        ASSERT_GT(e, 0.0) << "field " << k;
        double ratio = e / n2;
        ASSERT_LE(ratio, 1.0 + 1e-12) << "field " << k;
        min_ratio = std::min(min_ratio, ratio);
        max_ratio = std::max(max_ratio, ratio);
    }
    EXPECT_GT(min_ratio, 0.0);
    EXPECT_LE(max_ratio, 1.0 + 1e-12);
}

// Subtracting the rigid field that cancels the moment produces b(w) = 0, so
// the upper bound E(w) = |w|^2 is attained exactly.
TEST(WeightedOperators, UpperBoundIsAttained) {
    Domain s(0);
    Rng rng(0x5eedu);
    ExtendedField w = random_admissible_field(s.mesh, rng);
    Mat3 moment_matrix = s.model.I_L + s.model.lambda * Mat3::Identity();
    Vec3 c = -moment_matrix.inverse() * moment_map(w, s.model);
    add_rigid(w, c);

    EXPECT_LT(b_functional(w, s.model).norm(), 1e-12);
    double ratio = energy_functional(w, s.model) / weighted_inner(w, w, s.model);
    EXPECT_NEAR(ratio, 1.0, 1e-12);
}

TEST(WeightedOperators, ApplyBIsTheRigidPart) {
    Domain s(0);
    Rng rng(0x99u);
    ExtendedField w = random_admissible_field(s.mesh, rng);
    Vec3 b = b_functional(w, s.model);
    ExtendedField Bw = apply_B(w, s.model);

    EXPECT_LT((Bw.omega_ball + b).norm(), 1e-14);
    for (int v : {0, 7, s.mesh.num_vertices() - 1}) {
        Vec3 expect = (-b).cross(s.mesh.vertices[v]);
        EXPECT_LT((Vec3(Bw.v_dofs.segment<3>(3 * v)) - expect).norm(), 1e-14);
    }

    // The moment of a rigid field is (I_L + lambda) times its rate.
    Mat3 moment_matrix = s.model.I_L + s.model.lambda * Mat3::Identity();
    Vec3 m = moment_map(Bw, s.model);
    EXPECT_LT((m - moment_matrix * (-b)).norm(), 1e-12 * (m.norm() + 1.0));
}

TEST(WeightedOperators, AdmissibleFieldsHonorBoundaryConditions) {
    Domain s(1);
    Rng rng(0x77u);
    ExtendedField w = random_admissible_field(s.mesh, rng);
    auto cls = classify_vertices(s.mesh);
    for (int v = 0; v < s.mesh.num_vertices(); ++v) {
        Vec3 val = w.v_dofs.segment<3>(3 * v);
        if (cls[v] == VertexClass::kOuterC) {
            EXPECT_TRUE(val.isZero());
        } else if (cls[v] == VertexClass::kInnerS) {
            EXPECT_LT((val - w.omega_ball.cross(s.mesh.vertices[v])).norm(), 1e-15);
        }
    }
}

TEST(WeightedOperators, ErrorPaths) {
    Domain a(0);
    Mesh other = generate_annulus_mesh(0.5, 1.0, 0);
    Rng rng(1u);
    ExtendedField u = random_admissible_field(a.mesh, rng);
    ExtendedField w = random_admissible_field(other, rng);
    EXPECT_THROW(weighted_inner(u, w, a.model), ConfigError);

    ExtendedField bad;
    EXPECT_THROW(moment_map(bad, a.model), ConfigError);

    ExtendedField truncated = u;
    truncated.v_dofs.conservativeResize(17);
    EXPECT_THROW(weighted_inner(truncated, u, a.model), ConfigError);
}
