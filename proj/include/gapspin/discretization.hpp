#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "gapspin/core.hpp"
#include "gapspin/inertia.hpp"
#include "gapspin/mesh.hpp"
#include "gapspin/operators.hpp"

namespace gapspin {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Mat3X = Eigen::Matrix<double, 3, Eigen::Dynamic>;

namespace fem {

// P1 barycentric gradients and volume of one tet.
struct TetGeometry {
    Vec3 grad[4];
    double vol = 0.0;
};

inline TetGeometry tet_geometry(const Mesh& m, std::size_t t) {
    const auto& k = m.tets[t];
    Mat3 E;
    E.col(0) = m.vertices[k[1]] - m.vertices[k[0]];
    E.col(1) = m.vertices[k[2]] - m.vertices[k[0]];
    E.col(2) = m.vertices[k[3]] - m.vertices[k[0]];
    double det = E.determinant();
    if (det <= 0.0) throw InvariantError("degenerate element " + std::to_string(t));
    TetGeometry g;
    g.vol = det / 6.0;
    Mat3 Einv = E.inverse();
    for (int a = 1; a < 4; ++a) g.grad[a] = Einv.row(a - 1).transpose();
    g.grad[0] = -(g.grad[1] + g.grad[2] + g.grad[3]);
    return g;
}

// Shape values at the shared quadrature rule. Barycentric shapes do not
// depend on the element, so this is computed once. Shapes are the four
// vertex hats plus the interior bubble 256 l0 l1 l2 l3.
struct ReferenceData {
    QuadratureRule rule;
    MatX shape;     // 5 x nq
    MatX cfac;      // 4 x nq: cfac(a,q) = product of the other three barycentrics
    MatX pair_mass; // 5 x 5: Int N_a N_b over the reference tet (volume 1)

    ReferenceData() : rule(tet_rule(kFieldQuadOrder)) {
        Eigen::Index nq = rule.size();
        shape.resize(5, nq);
        cfac.resize(4, nq);
        for (Eigen::Index q = 0; q < nq; ++q) {
            double b0 = rule.bary(0, q), b1 = rule.bary(1, q), b2 = rule.bary(2, q),
                   b3 = rule.bary(3, q);
            shape(0, q) = b0;
            shape(1, q) = b1;
            shape(2, q) = b2;
            shape(3, q) = b3;
            shape(4, q) = 256.0 * b0 * b1 * b2 * b3;
            cfac(0, q) = b1 * b2 * b3;
            cfac(1, q) = b0 * b2 * b3;
            cfac(2, q) = b0 * b1 * b3;
            cfac(3, q) = b0 * b1 * b2;
        }
        pair_mass.setZero(5, 5);
        for (int a = 0; a < 5; ++a)
            for (int b = 0; b < 5; ++b)
                for (Eigen::Index q = 0; q < nq; ++q)
                    pair_mass(a, b) += rule.weights[q] * shape(a, q) * shape(b, q);
    }

    // Gradient of shape a at quadrature point q on an element with geometry g.
    Vec3 grad(const TetGeometry& g, int a, Eigen::Index q) const {
        if (a < 4) return g.grad[a];
        return 256.0 * (cfac(0, q) * g.grad[0] + cfac(1, q) * g.grad[1] +
                        cfac(2, q) * g.grad[2] + cfac(3, q) * g.grad[3]);
    }

    static const ReferenceData& get() {
        static const ReferenceData data;
        return data;
    }
};

// Scalar dof id of shape a on tet t in the full layout: vertex dofs first,
// then one bubble dof per tet.
inline Eigen::Index scalar_dof(const Mesh& mesh, std::size_t t, int a) {
    return a < 4 ? mesh.tets[t][a] : mesh.num_vertices() + static_cast<Eigen::Index>(t);
}

}  // namespace fem

// Velocity space with the essential constraints eliminated: zero at outer
// boundary vertices, omega cross x at inner sphere vertices with omega kept
// as 3 explicit unknowns. Reduced layout: interior vertex dofs, bubble dofs,
// then the 3 rigid dofs.
struct ConstrainedSpace {
    const Mesh* mesh = nullptr;
    std::vector<VertexClass> vclass;
    std::vector<Eigen::Index> vertex_slot;  // interior vertex -> slot, else -1
    Eigen::Index n_interior = 0;
    Eigen::Index rigid_offset = 0;          // 3 * (n_interior + num_tets)
    Eigen::Index n_reduced = 0;             // rigid_offset + 3
    SpMat C;                                // 3*(nv+nt) x n_reduced embedding
    SpMat D_full;                           // nv x 3*(nv+nt) divergence, unreduced
    SpMat D_red;                            // nv x n_reduced divergence
};

inline ConstrainedSpace build_constrained_space(const Mesh& mesh) {
    ConstrainedSpace sp;
    sp.mesh = &mesh;
    sp.vclass = classify_vertices(mesh);
    const Eigen::Index nv = mesh.num_vertices();
    const Eigen::Index nt = mesh.num_tets();
    sp.vertex_slot.assign(nv, -1);
    for (Eigen::Index v = 0; v < nv; ++v) {
        if (sp.vclass[v] == VertexClass::kInterior) sp.vertex_slot[v] = sp.n_interior++;
    }
    sp.rigid_offset = 3 * (sp.n_interior + nt);
    sp.n_reduced = sp.rigid_offset + 3;

    std::vector<Triplet> trips;
    trips.reserve(3 * (sp.n_interior + nt) + 6 * nv);
    for (Eigen::Index v = 0; v < nv; ++v) {
        if (sp.vclass[v] == VertexClass::kInterior) {
            for (int c = 0; c < 3; ++c) {
                trips.emplace_back(3 * v + c, 3 * sp.vertex_slot[v] + c, 1.0);
            }
        } else if (sp.vclass[v] == VertexClass::kInnerS) {
            // omega cross x_v = -skew(x_v) omega
            Mat3 blk = -skew(mesh.vertices[v]);
            for (int c = 0; c < 3; ++c)
                for (int d = 0; d < 3; ++d)
                    if (blk(c, d) != 0.0) {
                        trips.emplace_back(3 * v + c, sp.rigid_offset + d, blk(c, d));
                    }
        }
    }
    for (Eigen::Index t = 0; t < nt; ++t) {
        for (int c = 0; c < 3; ++c) {
            trips.emplace_back(3 * (nv + t) + c, 3 * (sp.n_interior + t) + c, 1.0);
        }
    }
    sp.C.resize(3 * (nv + nt), sp.n_reduced);
    sp.C.setFromTriplets(trips.begin(), trips.end());

    // Divergence rows: D[q, (a,i)] = Int psi_q d_i N_a over each tet, with
    // P1 pressure on all vertices.
    const auto& ref = fem::ReferenceData::get();
    std::vector<Triplet> dtr;
    dtr.reserve(mesh.tets.size() * 60);
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        fem::TetGeometry g = fem::tet_geometry(mesh, t);
        const auto& k = mesh.tets[t];
        for (int pq = 0; pq < 4; ++pq) {
            for (int a = 0; a < 5; ++a) {
                Vec3 acc = Vec3::Zero();
                for (Eigen::Index q = 0; q < ref.rule.size(); ++q) {
                    acc += ref.rule.weights[q] * ref.shape(pq, q) * ref.grad(g, a, q);
                }
                acc *= g.vol;
                Eigen::Index col = fem::scalar_dof(mesh, t, a);
                for (int i = 0; i < 3; ++i) {
                    dtr.emplace_back(k[pq], 3 * col + i, acc[i]);
                }
            }
        }
    }
    sp.D_full.resize(nv, 3 * (nv + nt));
    sp.D_full.setFromTriplets(dtr.begin(), dtr.end());
    sp.D_red = sp.D_full * sp.C;
    sp.D_red.prune(0.0);
    return sp;
}

// Stiffness of the dissipation form a(v,w) = 2 mu Int D(v):D(w), reduced.
// Local blocks: A[(a,i),(b,j)] = mu Int (delta_ij grad N_a . grad N_b
// + d_j N_a d_i N_b).
inline SpMat assemble_dissipation(const ConstrainedSpace& space, double mu) {
    if (!(mu >= 0.0)) throw ConfigError("mu must be nonnegative");
    const Mesh& mesh = *space.mesh;
    const auto& ref = fem::ReferenceData::get();
    const Eigen::Index nfull = 3 * (mesh.num_vertices() + mesh.num_tets());
    std::vector<Triplet> trips;
    trips.reserve(mesh.tets.size() * 225);
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        fem::TetGeometry g = fem::tet_geometry(mesh, t);
        Mat3 pair[5][5];
        for (int a = 0; a < 5; ++a)
            for (int b = 0; b < 5; ++b) pair[a][b].setZero();
        for (Eigen::Index q = 0; q < ref.rule.size(); ++q) {
            Vec3 gr[5];
            for (int a = 0; a < 5; ++a) gr[a] = ref.grad(g, a, q);
            for (int a = 0; a < 5; ++a)
                for (int b = 0; b < 5; ++b) {
                    pair[a][b] += ref.rule.weights[q] * gr[a] * gr[b].transpose();
                }
        }
        for (int a = 0; a < 5; ++a) {
            Eigen::Index da = fem::scalar_dof(mesh, t, a);
            for (int b = 0; b < 5; ++b) {
                Eigen::Index db = fem::scalar_dof(mesh, t, b);
                double kab = pair[a][b].trace();
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        double val = pair[a][b](j, i);
                        if (i == j) val += kab;
                        trips.emplace_back(3 * da + i, 3 * db + j, mu * g.vol * val);
                    }
            }
        }
    }
    SpMat A_full(nfull, nfull);
    A_full.setFromTriplets(trips.begin(), trips.end());
    SpMat A_red = SpMat(space.C.transpose()) * SpMat(A_full * space.C);
    SpMat A_t = SpMat(A_red.transpose());
    A_red = 0.5 * (A_red + A_t);
    return A_red;
}

// Mass matrix of the weighted inner product: rho-weighted fluid mass plus
// lambda on the rigid block.
inline SpMat assemble_weighted_mass(const ConstrainedSpace& space, const InertiaModel& model) {
    const Mesh& mesh = *space.mesh;
    const auto& ref = fem::ReferenceData::get();
    const Eigen::Index nfull = 3 * (mesh.num_vertices() + mesh.num_tets());
    std::vector<Triplet> trips;
    trips.reserve(mesh.tets.size() * 75);
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        double vol = mesh.tet_volume(t);
        for (int a = 0; a < 5; ++a) {
            Eigen::Index da = fem::scalar_dof(mesh, t, a);
            for (int b = 0; b < 5; ++b) {
                Eigen::Index db = fem::scalar_dof(mesh, t, b);
                double val = model.rho * vol * ref.pair_mass(a, b);
                for (int i = 0; i < 3; ++i) {
                    trips.emplace_back(3 * da + i, 3 * db + i, val);
                }
            }
        }
    }
    SpMat M_full(nfull, nfull);
    M_full.setFromTriplets(trips.begin(), trips.end());
    SpMat M_red = SpMat(space.C.transpose()) * SpMat(M_full * space.C);
    for (int d = 0; d < 3; ++d) {
        M_red.coeffRef(space.rigid_offset + d, space.rigid_offset + d) += model.lambda;
    }
    SpMat M_t = SpMat(M_red.transpose());
    M_red = 0.5 * (M_red + M_t);
    return M_red;
}

// Moment rows: M(w) = G y for reduced coordinates y, including the lambda
// term on the rigid dofs. Row k is the k-th component of rho Int x cross w.
inline Mat3X assemble_moment_rows(const ConstrainedSpace& space, const InertiaModel& model) {
    const Mesh& mesh = *space.mesh;
    const auto& ref = fem::ReferenceData::get();
    const Eigen::Index nfull = 3 * (mesh.num_vertices() + mesh.num_tets());
    Mat3X G_full = Mat3X::Zero(3, nfull);
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        double vol = mesh.tet_volume(t);
        const auto& k = mesh.tets[t];
        for (int a = 0; a < 5; ++a) {
            Vec3 p = Vec3::Zero();  // Int N_a x over the tet
            for (Eigen::Index q = 0; q < ref.rule.size(); ++q) {
                Vec3 x = ref.shape(0, q) * mesh.vertices[k[0]] + ref.shape(1, q) * mesh.vertices[k[1]] +
                         ref.shape(2, q) * mesh.vertices[k[2]] + ref.shape(3, q) * mesh.vertices[k[3]];
                p += ref.rule.weights[q] * ref.shape(a, q) * x;
            }
            p *= model.rho * vol;
            Eigen::Index da = fem::scalar_dof(mesh, t, a);
            for (int i = 0; i < 3; ++i) {
                G_full.col(3 * da + i) += p.cross(Vec3::Unit(i));
            }
        }
    }
    Mat3X G_red = G_full * space.C;
    G_red.block<3, 3>(0, space.rigid_offset) += model.lambda * Mat3::Identity();
    return G_red;
}

// The B-weighted mass (v,w)_B = (v,w) - b(v).I.b(w) as mass minus a rank-3
// correction, kept in factored form.
struct BMassOperator {
    SpMat M;
    Mat3X G;
    Mat3 I_inv;

    VecX apply(const VecX& y) const { return M * y - G.transpose() * (I_inv * (G * y)); }
    double quad(const VecX& y) const { return y.dot(apply(y)); }
    MatX dense() const { return MatX(M) - G.transpose() * I_inv * G; }
};

inline BMassOperator assemble_B_mass(const ConstrainedSpace& space, const InertiaModel& model) {
    BMassOperator op;
    op.M = assemble_weighted_mass(space, model);
    op.G = assemble_moment_rows(space, model);
    op.I_inv = model.I_inv;
    return op;
}

// Coercivity constant of the energy functional on the discrete space:
// c_est = 1 - max eigenvalue of I^{-1} (G M^{-1} G^T), the largest Rayleigh
// quotient of b(w).I.b(w) against |w|^2.
inline double coercivity_estimate(const ConstrainedSpace& space, const InertiaModel& model) {
    SpMat M = assemble_weighted_mass(space, model);
    Mat3X G = assemble_moment_rows(space, model);
    Eigen::SimplicialLDLT<SpMat> ldlt(M);
    if (ldlt.info() != Eigen::Success) throw NumericalError("mass factorization failed");
    Eigen::Matrix<double, Eigen::Dynamic, 3> X = ldlt.solve(G.transpose());
    Mat3 S = G * X;
    S = 0.5 * (S + S.transpose()).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat3> ges(S, model.I);
    return 1.0 - ges.eigenvalues().maxCoeff();
}

// Dimension of the discretely divergence-free subspace by dense rank of the
// divergence matrix. Small meshes only; used by verification.
inline Eigen::Index divfree_dimension(const ConstrainedSpace& space) {
    MatX D = MatX(space.D_red);
    Eigen::FullPivLU<MatX> lu(D);
    lu.setThreshold(1e-10);
    return space.n_reduced - lu.rank();
}

// Eigenbasis of a(w, .) = sigma (w, .)_B on the divergence-free subspace.
// reduced holds the constrained-space coordinates of each mode when the
// basis came from solve_eigenbasis; a basis loaded from a file leaves it
// empty.
struct ModeBasis {
    std::vector<ExtendedField> modes;
    VecX sigmas;
    MatX reduced;

    int count() const { return static_cast<int>(modes.size()); }
};

inline ExtendedField combine_modes(const ModeBasis& basis, const VecX& coeffs) {
    if (coeffs.size() != basis.count()) throw ConfigError("coefficient count mismatch");
    if (basis.count() == 0) throw ConfigError("empty mode basis");
    ExtendedField out = zero_field(*basis.modes[0].mesh, basis.modes[0].has_bubbles());
    for (int r = 0; r < basis.count(); ++r) {
        out.v_dofs += coeffs[r] * basis.modes[r].v_dofs;
        out.omega_ball += coeffs[r] * basis.modes[r].omega_ball;
    }
    return out;
}

namespace detail {

// Kernel projector r -> r - Dt^T (Dt Dt^T)^{-1} Dt r for the pinned
// divergence matrix; used to certify eigenresiduals inside ker(Dt).
struct KernelProjector {
    SpMat Dt;
    Eigen::SimplicialLDLT<SpMat> ldlt;

    explicit KernelProjector(const SpMat& D_pinned) : Dt(D_pinned) {
        SpMat DDt = SpMat(Dt * SpMat(Dt.transpose()));
        ldlt.compute(DDt);
        if (ldlt.info() != Eigen::Success) {
            throw NumericalError("divergence normal-equation factorization failed");
        }
    }

    VecX project(const VecX& r) const {
        return r - SpMat(Dt.transpose()) * ldlt.solve(Dt * r);
    }
};

}  // namespace detail

inline ModeBasis solve_eigenbasis(const ConstrainedSpace& space, const InertiaModel& model,
                                  double mu, int n_modes, std::uint64_t seed = 0x67617073u) {
    if (n_modes < 1) throw ConfigError("need at least one mode");
    if (!(mu > 0.0)) throw ConfigError("mu must be positive");
    const Mesh& mesh = *space.mesh;
    const Eigen::Index n = space.n_reduced;
    const Eigen::Index np = mesh.num_vertices() - 1;  // one pressure dof pinned
    if (n_modes > n - np) throw ConfigError("more modes requested than divergence-free dofs");

    SpMat A = assemble_dissipation(space, mu);
    BMassOperator MB = assemble_B_mass(space, model);
    SpMat Dt = space.D_red.bottomRows(np);

    // Saddle matrix [A Dt^T; Dt 0]; one LU factorization serves every
    // shift-invert application.
    std::vector<Triplet> ktr;
    ktr.reserve(A.nonZeros() + 2 * Dt.nonZeros());
    for (Eigen::Index c = 0; c < A.outerSize(); ++c) {
        for (SpMat::InnerIterator it(A, c); it; ++it) {
            ktr.emplace_back(it.row(), it.col(), it.value());
        }
    }
    for (Eigen::Index c = 0; c < Dt.outerSize(); ++c) {
        for (SpMat::InnerIterator it(Dt, c); it; ++it) {
            ktr.emplace_back(n + it.row(), it.col(), it.value());
            ktr.emplace_back(it.col(), n + it.row(), it.value());
        }
    }
    SpMat K(n + np, n + np);
    K.setFromTriplets(ktr.begin(), ktr.end());
    Eigen::SparseLU<SpMat> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success) throw NumericalError("saddle factorization failed");

    // T y = A^{-1} M_B y restricted to ker(Dt), via the saddle solve.
    auto apply_T = [&](const VecX& y) {
        VecX rhs = VecX::Zero(n + np);
        rhs.head(n) = MB.apply(y);
        VecX sol = lu.solve(rhs);
        return VecX(sol.head(n));
    };

    // Lanczos in the M_B inner product with full reorthogonalization. The
    // largest Ritz values of T are the smallest eigenvalues sigma = 1/theta.
    const Eigen::Index max_steps = std::min<Eigen::Index>(n - np, 16 * n_modes + 120);
    MatX Q(n, max_steps);
    MatX MQ(n, max_steps);  // M_B Q, kept for cheap reorthogonalization
    VecX alpha = VecX::Zero(max_steps);
    VecX beta = VecX::Zero(max_steps);
    detail::KernelProjector proj(Dt);

    Rng rng(seed);
    VecX w = proj.project(apply_T(rng.vector(n)));
    VecX mw = MB.apply(w);
    double nrm = std::sqrt(w.dot(mw));
    if (!(nrm > 0.0)) throw NumericalError("eigensolver start vector degenerated");
    Q.col(0) = w / nrm;
    MQ.col(0) = mw / nrm;

    Eigen::Index steps = 0;
    Eigen::SelfAdjointEigenSolver<MatX> tri_es;
    for (Eigen::Index j = 0; j < max_steps; ++j) {
        w = apply_T(Q.col(j));
        mw = MB.apply(w);
        alpha[j] = Q.col(j).dot(mw);
        // Two-pass Gram-Schmidt against every previous vector.
        for (int pass = 0; pass < 2; ++pass) {
            VecX h = MQ.leftCols(j + 1).transpose() * w;
            w -= Q.leftCols(j + 1) * h;
        }
        // A small beta step amplifies any divergence-constraint defect and
        // any drift in an incrementally updated M_B w by a factor of 1/beta,
        // which snowballs across later steps. Re-project into ker(Dt) and
        // recompute the product from scratch before normalizing.
        w = proj.project(w);
        mw = MB.apply(w);
        steps = j + 1;
        double b = std::sqrt(std::max(0.0, w.dot(mw)));
        beta[j] = b;
        double scale = std::max(1.0, alpha.head(steps).cwiseAbs().maxCoeff());
        bool exhausted = b <= 1e-13 * scale;

        bool last = (j + 1 == max_steps) || exhausted;
        bool check = last || (steps >= n_modes + 2 && (j % 4 == 3));
        if (check) {
            MatX T = MatX::Zero(steps, steps);
            for (Eigen::Index i = 0; i < steps; ++i) {
                T(i, i) = alpha[i];
                if (i + 1 < steps) T(i, i + 1) = T(i + 1, i) = beta[i];
            }
            tri_es.compute(T);
            if (steps >= n_modes) {
                // Ritz values ascend; the wanted ones are the top n_modes.
                bool converged = true;
                for (int i = 0; i < n_modes; ++i) {
                    Eigen::Index col = steps - 1 - i;
                    double theta = tri_es.eigenvalues()[col];
                    double est = b * std::abs(tri_es.eigenvectors()(steps - 1, col));
                    if (!(theta > 0.0) || est > 1e-11 * std::abs(theta)) {
                        converged = false;
                        break;
                    }
                }
                if (converged) break;
            }
            if (last) break;
        }
        if (exhausted) break;
        Q.col(j + 1) = w / b;
        MQ.col(j + 1) = mw / b;
    }

    MatX T = MatX::Zero(steps, steps);
    for (Eigen::Index i = 0; i < steps; ++i) {
        T(i, i) = alpha[i];
        if (i + 1 < steps) T(i, i + 1) = T(i + 1, i) = beta[i];
    }
    tri_es.compute(T);
    if (steps < n_modes) throw NumericalError("eigensolver ran out of Krylov directions");

    // Ritz vectors for the n_modes largest theta, i.e. smallest sigma,
    // ordered by ascending sigma.
    MatX W(n, n_modes);
    for (int i = 0; i < n_modes; ++i) {
        Eigen::Index col = steps - 1 - i;
        if (!(tri_es.eigenvalues()[col] > 0.0)) {
            throw NumericalError("nonpositive Ritz value in requested window");
        }
        W.col(i) = Q.leftCols(steps) * tri_es.eigenvectors().col(col);
    }

    // Clean the kernel component, then B-orthonormalize via the Gram factor.
    for (int i = 0; i < n_modes; ++i) W.col(i) = proj.project(W.col(i));
    MatX MBW(n, n_modes);
    for (int i = 0; i < n_modes; ++i) MBW.col(i) = MB.apply(W.col(i));
    MatX gram = W.transpose() * MBW;
    gram = 0.5 * (gram + gram.transpose()).eval();
    Eigen::LLT<MatX> llt(gram);
    if (llt.info() != Eigen::Success) throw NumericalError("mode Gram matrix not positive definite");
    MatX Linv_t = llt.matrixL().toDenseMatrix().transpose().triangularView<Eigen::Upper>().solve(
        MatX::Identity(n_modes, n_modes));
    W = W * Linv_t;

    // Rayleigh quotients give the eigenvalues consistent with the returned
    // vectors; certify each pair with the kernel-projected residual.
    ModeBasis basis;
    basis.sigmas.resize(n_modes);
    VecX residuals(n_modes);
    for (int i = 0; i < n_modes; ++i) {
        VecX aw = A * W.col(i);
        double sigma = W.col(i).dot(aw);
        basis.sigmas[i] = sigma;
        VecX r = proj.project(aw - sigma * MB.apply(W.col(i)));
        residuals[i] = r.norm() / W.col(i).norm();
    }
    for (int i = 0; i < n_modes; ++i) {
        if (!(basis.sigmas[i] > 0.0)) throw NumericalError("nonpositive eigenvalue");
        if (!(residuals[i] <= 1e-8)) {
            throw NumericalError("eigenresidual " + fmt_g17(residuals[i]) + " for mode " +
                                 std::to_string(i) + " exceeds certificate threshold");
        }
    }
    for (int i = 0; i + 1 < n_modes; ++i) {
        if (basis.sigmas[i] > basis.sigmas[i + 1]) {
            throw NumericalError("eigenvalues not sorted after extraction");
        }
    }

    basis.reduced = W;
    basis.modes.reserve(n_modes);
    for (int i = 0; i < n_modes; ++i) {
        VecX full = space.C * W.col(i);
        ExtendedField f;
        f.mesh = &mesh;
        f.v_dofs = full;
        f.omega_ball = W.col(i).segment<3>(space.rigid_offset);
        basis.modes.push_back(std::move(f));
    }
    return basis;
}

struct Projection {
    ExtendedField field;
    VecX coeffs;
};

// B-orthogonal projection of a discrete field onto the mode span.
inline Projection project_field(const ModeBasis& basis, const InertiaModel& model,
                                const ExtendedField& v0) {
    VecX c(basis.count());
    for (int r = 0; r < basis.count(); ++r) c[r] = b_inner(v0, basis.modes[r], model);
    return {combine_modes(basis, c), c};
}

// B-orthogonal projection of an analytic velocity sampler with ball angular
// velocity omega0: c_r = (v0, w_r) - b(v0).I.b(w_r).
template <class F>
Projection project_field(const ModeBasis& basis, const InertiaModel& model, F&& v0,
                         const Vec3& omega0) {
    if (basis.count() == 0) throw ConfigError("empty mode basis");
    const Mesh& mesh = *basis.modes[0].mesh;
    QuadratureRule rule = tet_rule(kFieldQuadOrder);
    const int nm = basis.count();

    // Per-tet contributions to (v0, w_r) over the gap and to the moment of v0.
    std::vector<std::vector<double>> inner_terms(nm, std::vector<double>(mesh.tets.size()));
    std::vector<double> mx(mesh.tets.size()), my(mesh.tets.size()), mz(mesh.tets.size());
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        const auto& k = mesh.tets[t];
        double vol = mesh.tet_volume(t);
        std::vector<double> acc(nm, 0.0);
        Vec3 macc = Vec3::Zero();
        for (Eigen::Index q = 0; q < rule.size(); ++q) {
            double b0 = rule.bary(0, q), b1 = rule.bary(1, q), b2 = rule.bary(2, q),
                   b3 = rule.bary(3, q);
            Vec3 x = b0 * mesh.vertices[k[0]] + b1 * mesh.vertices[k[1]] +
                     b2 * mesh.vertices[k[2]] + b3 * mesh.vertices[k[3]];
            Vec3 v = v0(x);
            macc += rule.weights[q] * x.cross(v);
            for (int r = 0; r < nm; ++r) {
                Vec3 wv = eval_field(basis.modes[r], t, b0, b1, b2, b3);
                acc[r] += rule.weights[q] * v.dot(wv);
            }
        }
        for (int r = 0; r < nm; ++r) inner_terms[r][t] = vol * acc[r];
        macc *= vol;
        mx[t] = macc.x();
        my[t] = macc.y();
        mz[t] = macc.z();
    }
    Vec3 m0 = model.rho * Vec3(pairwise_sum(mx), pairwise_sum(my), pairwise_sum(mz)) +
              model.lambda * omega0;
    Vec3 b0v = -(model.I_inv * m0);
    VecX c(nm);
    for (int r = 0; r < nm; ++r) {
        double inner = model.rho * pairwise_sum(inner_terms[r]) +
                       model.lambda * omega0.dot(basis.modes[r].omega_ball);
        Vec3 br = b_functional(basis.modes[r], model);
        c[r] = inner - b0v.dot(model.I * br);
    }
    return {combine_modes(basis, c), c};
}

}  // namespace gapspin
