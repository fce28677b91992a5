#pragma once

#include <Eigen/Dense>
#include <vector>

#include "gapspin/core.hpp"
#include "gapspin/discretization.hpp"
#include "gapspin/inertia.hpp"
#include "gapspin/mesh.hpp"
#include "gapspin/operators.hpp"

namespace gapspin {

constexpr int kMaxModes = 64;  // dense n^3 tensor storage stays desk-sized

// Coefficient tensors of the reduced ODE in (c, Omega):
//   dc_r/dt + sum_p a_pr c_p + sum_pq b_pqr c_p c_q
//           + sum_ip d_ipr Omega_i c_p + sum_ij f_ijr Omega_i Omega_j = 0
//   ell_k dOmega_k/dt + sum_ij g_ijk Omega_i Omega_j
//           + sum_pj h_pjk c_p Omega_j = 0
// The viscous factor 2 mu sits inside a_pr exactly once; this is the only
// convention under which the energy identity
//   d/dt [sum c^2 + Omega.I.Omega] = -2 c.a.c
// holds along the flow.
struct GalerkinSystem {
    int n = 0;
    double mu = 0.0;
    double rho = 0.0;
    double lambda = 0.0;
    Vec3 ell = Vec3::Zero();        // diagonal of the total inertia tensor
    MatX a;                         // n x n dissipation, includes 2 mu
    std::vector<MatX> b;            // b[r](p, q)
    std::vector<MatX> d;            // d[r](i, p), 3 x n
    std::vector<Mat3> f;            // f[r](i, j)
    Mat3 g[3];                      // g[k](i, j)
    std::vector<MatX> h;            // h[k](p, j), n x 3
    Mat3X moments;                  // column p: m_p = Int rho_tilde x cross w_p
    Mat3X omega_modes;              // column p: ball angular velocity of mode p
    MatX Mf;                        // n x n: rho Int_L w_p . w_r (fluid only)

    Vec3 apply_inertia(const Vec3& v) const { return ell.cwiseProduct(v); }
    Vec3 solve_inertia(const Vec3& v) const { return v.cwiseQuotient(ell); }
};

struct State {
    VecX c;
    Vec3 Omega = Vec3::Zero();
};

struct RigidVelocities {
    Vec3 omega1;   // hollow body
    Vec3 omega2;   // ball
    Vec3 omega;    // relative, omega2 - omega1
    Vec3 omega_R;  // rigid-rotation part carried by the liquid momentum
};

namespace detail {

// Vertex and bubble dofs of one mode on one tet.
inline void gather_tet_dofs(const ExtendedField& w, std::size_t t, Vec3 out[5]) {
    const auto& k = w.mesh->tets[t];
    for (int a = 0; a < 4; ++a) out[a] = w.v_dofs.segment<3>(3 * k[a]);
    if (w.has_bubbles()) {
        out[4] = w.v_dofs.segment<3>(3 * (w.mesh->num_vertices() + t));
    } else {
        out[4].setZero();
    }
}

}  // namespace detail

// Assemble every coefficient tensor from a B-orthonormal mode basis. One
// quadrature sweep accumulates the convection tensor T_pqr, the cross
// moments V_pr, the fluid mode Gram, the dissipation pairs, and the mode
// moments; ball contributions enter through the exact lambda-weighted terms.
inline GalerkinSystem assemble_tensors(const ModeBasis& basis, const InertiaModel& model,
                                       double mu) {
    const int n = basis.count();
    if (n < 1) throw ConfigError("empty mode basis");
    if (n > kMaxModes) throw ConfigError("mode count exceeds dense tensor limit");
    if (!(mu >= 0.0)) throw ConfigError("mu must be nonnegative");
    const Mesh& mesh = *basis.modes[0].mesh;
    for (const auto& m : basis.modes) {
        if (m.mesh != &mesh) throw ConfigError("modes live on different meshes");
    }

    // The reduced system treats the inertia tensor through its diagonal; the
    // body frame is the central-axes frame, so off-diagonal entries are mesh
    // round-off only.
    Mat3 I_offdiag = model.I - Mat3(model.I.diagonal().asDiagonal());
    if (I_offdiag.norm() > 1e-9 * model.I.norm()) {
        throw InvariantError("inertia tensor is not diagonal in the body frame");
    }

    GalerkinSystem sys;
    sys.n = n;
    sys.mu = mu;
    sys.rho = model.rho;
    sys.lambda = model.lambda;
    sys.ell = model.I.diagonal();

    const auto& ref = fem::ReferenceData::get();
    const Eigen::Index nq = ref.rule.size();

    std::vector<double> T(static_cast<std::size_t>(n) * n * n, 0.0);
    auto Tat = [&](int p, int q, int r) -> double& {
        return T[(static_cast<std::size_t>(p) * n + q) * n + r];
    };
    std::vector<Vec3> V(static_cast<std::size_t>(n) * n, Vec3::Zero());
    auto Vat = [&](int p, int r) -> Vec3& { return V[static_cast<std::size_t>(p) * n + r]; };
    MatX Mf = MatX::Zero(n, n);
    MatX a = MatX::Zero(n, n);
    Mat3X m_p = Mat3X::Zero(3, n);

    std::vector<Vec3> dofs(static_cast<std::size_t>(n) * 5);
    MatX W(3, n);
    std::vector<Mat3> J(n), D(n);
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        fem::TetGeometry geo = fem::tet_geometry(mesh, t);
        const auto& kv = mesh.tets[t];
        for (int p = 0; p < n; ++p) {
            detail::gather_tet_dofs(basis.modes[p], t, &dofs[static_cast<std::size_t>(p) * 5]);
        }
        for (Eigen::Index q = 0; q < nq; ++q) {
            Vec3 grads[5];
            for (int s = 0; s < 5; ++s) grads[s] = ref.grad(geo, s, q);
            Vec3 x = ref.shape(0, q) * mesh.vertices[kv[0]] + ref.shape(1, q) * mesh.vertices[kv[1]] +
                     ref.shape(2, q) * mesh.vertices[kv[2]] + ref.shape(3, q) * mesh.vertices[kv[3]];
            for (int p = 0; p < n; ++p) {
                const Vec3* dp = &dofs[static_cast<std::size_t>(p) * 5];
                Vec3 val = Vec3::Zero();
                Mat3 jac = Mat3::Zero();
                for (int s = 0; s < 5; ++s) {
                    val += ref.shape(s, q) * dp[s];
                    jac += dp[s] * grads[s].transpose();
                }
                W.col(p) = val;
                J[p] = jac;
                D[p] = 0.5 * (jac + jac.transpose());
            }
            double wq = ref.rule.weights[q] * geo.vol;
            for (int p = 0; p < n; ++p) {
                m_p.col(p) += wq * x.cross(Vec3(W.col(p)));
                for (int r = p; r < n; ++r) {
                    Mf(p, r) += wq * W.col(p).dot(W.col(r));
                    a(p, r) += wq * (D[p].array() * D[r].array()).sum();
                    if (r > p) Vat(p, r) += wq * Vec3(W.col(p)).cross(Vec3(W.col(r)));
                }
            }
            for (int p = 0; p < n; ++p) {
                for (int qq = 0; qq < n; ++qq) {
                    Vec3 conv = J[qq] * W.col(p);
                    for (int r = 0; r < n; ++r) {
                        Tat(p, qq, r) += wq * conv.dot(W.col(r));
                    }
                }
            }
        }
    }

    // Scale the fluid quadrature parts and add the analytic ball terms.
    const double lam = model.lambda;
    for (int p = 0; p < n; ++p) {
        m_p.col(p) = model.rho * m_p.col(p) + lam * basis.modes[p].omega_ball;
        for (int r = p; r < n; ++r) {
            Mf(p, r) *= model.rho;
            Mf(r, p) = Mf(p, r);
            a(p, r) *= 2.0 * mu;
            a(r, p) = a(p, r);
            if (r > p) {
                Vec3 v = model.rho * Vat(p, r) +
                         0.5 * lam * basis.modes[p].omega_ball.cross(basis.modes[r].omega_ball);
                Vat(p, r) = v;
                Vat(r, p) = -v;
            } else {
                Vat(p, r).setZero();
            }
        }
    }
    for (int p = 0; p < n; ++p) {
        const Vec3& op = basis.modes[p].omega_ball;
        for (int q = 0; q < n; ++q) {
            const Vec3& oq = basis.modes[q].omega_ball;
            for (int r = 0; r < n; ++r) {
                const Vec3& orr = basis.modes[r].omega_ball;
                Tat(p, q, r) = model.rho * Tat(p, q, r) + 0.5 * lam * oq.dot(op.cross(orr));
            }
        }
    }

    sys.a = a;
    sys.Mf = Mf;
    sys.moments = m_p;
    sys.omega_modes.resize(3, n);
    for (int p = 0; p < n; ++p) sys.omega_modes.col(p) = basis.modes[p].omega_ball;

    std::vector<Vec3> beta(n);
    for (int p = 0; p < n; ++p) beta[p] = sys.solve_inertia(m_p.col(p));

    sys.b.assign(n, MatX::Zero(n, n));
    sys.d.assign(n, MatX::Zero(3, n));
    sys.f.assign(n, Mat3::Zero());
    sys.h.assign(3, MatX::Zero(n, 3));
    for (int r = 0; r < n; ++r) {
        for (int p = 0; p < n; ++p) {
            for (int q = 0; q < n; ++q) {
                sys.b[r](p, q) = 0.5 * (Tat(p, q, r) - Tat(p, r, q)) - 2.0 * beta[p].dot(Vat(q, r));
            }
            Vec3 cross_term = sys.apply_inertia(beta[p].cross(beta[r]));
            for (int i = 0; i < 3; ++i) {
                sys.d[r](i, p) = 2.0 * Vat(p, r)[i] - cross_term[i];
            }
        }
        for (int j = 0; j < 3; ++j) {
            Vec3 col = sys.ell[j] * beta[r].cross(Vec3::Unit(j));
            for (int i = 0; i < 3; ++i) sys.f[r](i, j) = col[i];
        }
    }
    for (int k = 0; k < 3; ++k) {
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                sys.g[k](i, j) = sys.ell[j] * Vec3::Unit(i).cross(Vec3::Unit(j))[k];
            }
        for (int p = 0; p < n; ++p)
            for (int j = 0; j < 3; ++j) {
                sys.h[k](p, j) = -(sys.ell[j] * beta[p].cross(Vec3::Unit(j)))[k];
            }
    }
    return sys;
}

// Right-hand side of the reduced ODE, solved for the time derivatives.
inline State rhs(const GalerkinSystem& sys, const State& s) {
    if (s.c.size() != sys.n) throw ConfigError("state dimension does not match system");
    State out;
    out.c.resize(sys.n);
    const VecX& c = s.c;
    const Vec3& W = s.Omega;
    VecX ac = sys.a * c;
    for (int r = 0; r < sys.n; ++r) {
        double conv = c.dot(sys.b[r] * c);
        double cor = W.dot(sys.d[r] * c);
        double ff = W.dot(sys.f[r] * W);
        out.c[r] = -(ac[r] + conv + cor + ff);
    }
    for (int k = 0; k < 3; ++k) {
        double gg = W.dot(sys.g[k] * W);
        double hh = (c.transpose() * sys.h[k] * W).value();
        out.Omega[k] = -(gg + hh) / sys.ell[k];
    }
    return out;
}

// Reduced system with no fluid modes: pure rigid-body rotation of the total
// inertia, Euler's equations in the diagonal frame.
inline GalerkinSystem rigid_only_system(const Vec3& inertia_diag) {
    if (!(inertia_diag.minCoeff() > 0.0)) throw ConfigError("inertia must be positive");
    GalerkinSystem sys;
    sys.n = 0;
    sys.ell = inertia_diag;
    sys.a.resize(0, 0);
    sys.Mf.resize(0, 0);
    sys.moments.resize(3, 0);
    sys.omega_modes.resize(3, 0);
    for (int k = 0; k < 3; ++k) {
        sys.h.push_back(MatX::Zero(0, 3));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                sys.g[k](i, j) = sys.ell[j] * Vec3::Unit(i).cross(Vec3::Unit(j))[k];
            }
    }
    return sys;
}

inline ExtendedField reconstruct_field(const ModeBasis& basis, const State& s) {
    return combine_modes(basis, s.c);
}

// Angular velocities recovered from the state: omega_R = -I^{-1} sum c_p m_p,
// omega1 = Omega + omega_R, omega = ball part of the reconstructed field,
// omega2 = omega1 + omega.
inline RigidVelocities reconstruct_velocities(const GalerkinSystem& sys, const State& s) {
    if (s.c.size() != sys.n) throw ConfigError("state dimension does not match system");
    RigidVelocities v;
    v.omega_R = -sys.solve_inertia(sys.moments * s.c);
    v.omega = sys.omega_modes * s.c;
    v.omega1 = s.Omega + v.omega_R;
    v.omega2 = v.omega1 + v.omega;
    return v;
}

}  // namespace gapspin
