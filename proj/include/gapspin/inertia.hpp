#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "gapspin/core.hpp"
#include "gapspin/mesh.hpp"

namespace gapspin {

// Material parameters in the body frame: the frame axes are the central
// inertia axes, so the hollow body's inertia tensor is supplied as its three
// eigenvalues.
struct MaterialConfig {
    double rho = 1.0;      // liquid density
    double mu = 0.05;      // shear viscosity
    double R = 0.5;        // ball radius
    double m_ball = 1.0;   // ball mass
    Vec3 IB_eigs = Vec3(0.6, 0.8, 1.0);
};

inline void validate_material(const MaterialConfig& cfg) {
    if (!(cfg.rho > 0.0)) throw ConfigError("rho must be positive");
    if (!(cfg.mu > 0.0)) throw ConfigError("mu must be positive");
    if (!(cfg.R > 0.0)) throw ConfigError("ball.radius must be positive");
    if (!(cfg.m_ball > 0.0)) throw ConfigError("ball.mass must be positive");
    if (!(cfg.IB_eigs.minCoeff() > 0.0)) throw ConfigError("body.IB must be componentwise positive");
}

// Moment coefficient of a homogeneous ball: lambda = (2/5) m R^2.
inline double lambda_ball(double m_ball, double R) {
    if (!(m_ball > 0.0) || !(R > 0.0)) throw ConfigError("ball mass and radius must be positive");
    return 0.4 * m_ball * R * R;
}

// Inertia tensor of the liquid gap, b.I_L.c = rho Int (x cross b).(x cross c) dV,
// i.e. I_L = rho Int (|x|^2 Id - x xT) dV by quadrature.
inline Mat3 fluid_inertia(const Mesh& mesh, double rho) {
    if (!(rho >= 0.0)) throw ConfigError("rho must be nonnegative");
    if (mesh.tets.empty()) throw InvariantError("fluid_inertia needs a nonempty mesh");
    Mat3 I_L;
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            double v = integrate_scalar(mesh, [&](const Vec3& x) {
                double m = -x[i] * x[j];
                if (i == j) m += x.squaredNorm();
                return m;
            });
            I_L(i, j) = rho * v;
            I_L(j, i) = rho * v;
        }
    }
    return I_L;
}

// All inertia tensors of the coupled system in the body frame.
struct InertiaModel {
    double rho = 0.0;
    double mu = 0.0;
    double R = 0.0;
    double m_ball = 0.0;
    double lambda = 0.0;
    Mat3 I_B = Mat3::Zero();   // hollow body
    Mat3 I_L = Mat3::Zero();   // liquid gap (quadrature)
    Mat3 I_C = Mat3::Zero();   // I_B + I_L
    Mat3 I = Mat3::Zero();     // I_C + lambda Id
    Mat3 I_inv = Mat3::Zero();

    // Density of the ball extension, 15 lambda / (8 pi R^5): the homogeneous
    // ball density scaled so rigid moments integrate to lambda omega.
    double ball_density() const { return 15.0 * lambda / (8.0 * M_PI * std::pow(R, 5)); }

    // Piecewise density: liquid density on the gap, scaled density on the ball.
    double rho_tilde(const Vec3& x) const { return x.norm() < R ? ball_density() : rho; }
};

inline InertiaModel build_inertia_model(const MaterialConfig& cfg, const Mesh& liquid_mesh) {
    validate_material(cfg);
    InertiaModel model;
    model.rho = cfg.rho;
    model.mu = cfg.mu;
    model.R = cfg.R;
    model.m_ball = cfg.m_ball;
    model.lambda = lambda_ball(cfg.m_ball, cfg.R);
    model.I_B = cfg.IB_eigs.asDiagonal();
    model.I_L = fluid_inertia(liquid_mesh, cfg.rho);
    model.I_C = model.I_B + model.I_L;
    model.I = model.I_C + model.lambda * Mat3::Identity();

    Eigen::SelfAdjointEigenSolver<Mat3> es(model.I);
    if (es.eigenvalues().minCoeff() <= 0.0) {
        throw NumericalError("total inertia tensor is not positive definite");
    }
    model.I_inv = model.I.inverse();
    double residual = (model.I_inv * model.I - Mat3::Identity()).norm();
    if (!(residual <= 1e-12)) {
        throw NumericalError("inertia inverse residual too large");
    }
    return model;
}

}  // namespace gapspin
