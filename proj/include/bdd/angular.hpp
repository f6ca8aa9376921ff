#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "error.hpp"

namespace bdd {

// Cosines are clamped to [-1 + kCosClamp, 1 - kCosClamp] so arccos and its
// derivative stay finite.
inline constexpr double kCosClamp = 1e-7;
// Floor on label angle variances (radians^2) before forming a_k.
inline constexpr double kVarianceFloor = 1e-6;
// Added to the first coordinate of an all-zero representation.
inline constexpr double kZeroNormNudge = 1e-8;
// Weight rows are never allowed to shrink below this norm.
inline constexpr double kWeightNormFloor = 1e-12;

// Label weight vectors (rows of W) with AM-loss scale s and margin m.
struct AngularHead {
    Eigen::MatrixXd W; // K x D
    double s = 1.0;
    double m = 0.0;

    Eigen::Index num_labels() const { return W.rows(); }
};

// Per-label affine angle maps psi_k(theta) = a_k * theta + b_k.
struct BalancedTransform {
    Eigen::VectorXd a;
    Eigen::VectorXd b;

    static BalancedTransform identity(Eigen::Index K) {
        return {Eigen::VectorXd::Ones(K), Eigen::VectorXd::Zero(K)};
    }
    Eigen::Index size() const { return a.size(); }
    bool is_identity() const { return (a.array() == 1.0).all() && (b.array() == 0.0).all(); }
};

// Returns true (and nudges f) when f is the zero vector.
inline bool nudge_degenerate(Eigen::VectorXd &f) {
    if (f.squaredNorm() > 0.0)
        return false;
    f(0) += kZeroNormNudge;
    return true;
}

inline double clamp_cos(double c) { return std::clamp(c, -1.0 + kCosClamp, 1.0 - kCosClamp); }

// psi = a * theta + b restricted to [0, pi]. Outside that range cos(psi) would
// fold back and rank a distant representation above a closer one, so the
// map saturates there and carries no gradient.
inline double transformed_angle(double theta, double a, double b) {
    return std::clamp(a * theta + b, 0.0, std::numbers::pi);
}

// d psi / d theta for transformed_angle.
inline double transformed_angle_slope(double theta, double a, double b) {
    const double raw = a * theta + b;
    return raw > 0.0 && raw < std::numbers::pi ? a : 0.0;
}

struct CosineAngles {
    Eigen::VectorXd cos;
    Eigen::VectorXd theta;
};

inline CosineAngles cosine_angles(const Eigen::VectorXd &f, const Eigen::MatrixXd &W) {
    require(W.cols() == f.size(), "cosine_angles: dimension mismatch");
    const double fn = f.norm();
    require(fn > 0.0, "cosine_angles: zero representation");
    CosineAngles out{Eigen::VectorXd(W.rows()), Eigen::VectorXd(W.rows())};
    for (Eigen::Index k = 0; k < W.rows(); ++k) {
        const double wn = W.row(k).norm();
        if (!(wn > 0.0))
            throw ContractViolation("cosine_angles: zero-norm label weight row");
        out.cos(k) = clamp_cos(W.row(k).dot(f) / (fn * wn));
        out.theta(k) = std::acos(out.cos(k));
    }
    return out;
}

struct LossGrad {
    double loss = 0.0;
    Eigen::VectorXd grad;
};

// -sum_k y_k log softmax_k(s * (cos_j - y_j m)), gradient w.r.t. cos.
inline LossGrad am_loss(const Eigen::VectorXd &cos, const Eigen::VectorXd &y, double s, double m) {
    require(cos.size() == y.size(), "am_loss: size mismatch");
    if (!cos.allFinite() || !y.allFinite() || !std::isfinite(s) || !std::isfinite(m))
        throw ContractViolation("am_loss: non-finite input");
    const Eigen::VectorXd z = s * (cos - m * y);
    const double zmax = z.maxCoeff();
    const Eigen::ArrayXd e = (z.array() - zmax).exp();
    const double sum = e.sum();
    const double lse = zmax + std::log(sum);
    const double ysum = y.sum();
    LossGrad out;
    out.loss = -(y.dot(z)) + ysum * lse;
    // d/dz_j = -y_j + (sum y) p_j ; d/dcos_j = s * d/dz_j
    out.grad = s * (-y.array() + ysum * e / sum).matrix();
    return out;
}

inline Eigen::VectorXd transformed_cos(const Eigen::VectorXd &theta, const BalancedTransform &t) {
    require(theta.size() == t.size(), "transformed_cos: size mismatch");
    Eigen::VectorXd c(theta.size());
    for (Eigen::Index k = 0; k < theta.size(); ++k)
        c(k) = std::cos(transformed_angle(theta(k), t.a(k), t.b(k)));
    return c;
}

// AM loss evaluated on transformed angles; gradient w.r.t. theta.
inline LossGrad bdd_loss(const Eigen::VectorXd &theta, const Eigen::VectorXd &y,
                         const BalancedTransform &t, double s, double m) {
    require(theta.size() == y.size() && theta.size() == t.size(), "bdd_loss: size mismatch");
    const Eigen::VectorXd c = transformed_cos(theta, t);
    LossGrad out = am_loss(c, y, s, m);
    for (Eigen::Index k = 0; k < theta.size(); ++k)
        out.grad(k) *= -transformed_angle_slope(theta(k), t.a(k), t.b(k)) *
                       std::sin(transformed_angle(theta(k), t.a(k), t.b(k)));
    return out;
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd &z) {
    const Eigen::ArrayXd e = (z.array() - z.maxCoeff()).exp();
    return (e / e.sum()).matrix();
}

inline Eigen::VectorXd posterior(const Eigen::VectorXd &theta, const BalancedTransform &t) {
    return softmax(transformed_cos(theta, t));
}

// a_k = sigma_hat / sigma_k, b_k = (1 - a_k) mu_k with sigma_hat^2 the mean
// label variance. Variances below kVarianceFloor are floored; the number of
// floored labels is reported through `floored`.
inline BalancedTransform balanced_transform(const Eigen::VectorXd &mu, const Eigen::VectorXd &var,
                                            int *floored = nullptr) {
    require(mu.size() == var.size() && mu.size() > 0, "balanced_transform: size mismatch");
    const Eigen::Index K = var.size();
    Eigen::VectorXd v = var;
    int n_floored = 0;
    for (Eigen::Index k = 0; k < K; ++k) {
        if (!(v(k) >= kVarianceFloor)) {
            v(k) = kVarianceFloor;
            ++n_floored;
        }
    }
    if (floored)
        *floored = n_floored;
    // Mean written as an offset from v(0) so identical variances give exactly v(0).
    double offset = 0.0;
    for (Eigen::Index k = 0; k < K; ++k)
        offset += v(k) - v(0);
    const double mean_var = v(0) + offset / static_cast<double>(K);
    BalancedTransform t{Eigen::VectorXd(K), Eigen::VectorXd(K)};
    for (Eigen::Index k = 0; k < K; ++k) {
        t.a(k) = std::sqrt(mean_var / v(k));
        t.b(k) = (1.0 - t.a(k)) * mu(k);
    }
    return t;
}

// Forward state of the head for one representation, reusable for any loss
// defined on the transformed cosines cos(psi_k(theta_k)).
class HeadPass {
  public:
    HeadPass(Eigen::VectorXd f, const Eigen::MatrixXd &W, const BalancedTransform &t)
        : f_(std::move(f)), W_(W) {
        require(W.cols() == f_.size() && W.rows() == t.size(), "HeadPass: shape mismatch");
        degenerate_ = nudge_degenerate(f_);
        const Eigen::Index K = W.rows();
        fnorm_ = f_.norm();
        wnorm_.resize(K);
        cos_.resize(K);
        theta_.resize(K);
        tcos_.resize(K);
        dtcos_dcos_.resize(K);
        for (Eigen::Index k = 0; k < K; ++k) {
            wnorm_(k) = W.row(k).norm();
            if (!(wnorm_(k) > 0.0))
                throw ContractViolation("HeadPass: zero-norm label weight row");
            const double raw = W.row(k).dot(f_) / (fnorm_ * wnorm_(k));
            cos_(k) = clamp_cos(raw);
            theta_(k) = std::acos(cos_(k));
            const double psi = transformed_angle(theta_(k), t.a(k), t.b(k));
            tcos_(k) = std::cos(psi);
            // d cos(psi)/d theta = -psi' sin(psi); d theta / d cos = -1 / sin(theta)
            dtcos_dcos_(k) = transformed_angle_slope(theta_(k), t.a(k), t.b(k)) * std::sin(psi) /
                             std::sqrt(1.0 - cos_(k) * cos_(k));
        }
    }

    const Eigen::VectorXd &cos() const { return cos_; }
    const Eigen::VectorXd &theta() const { return theta_; }
    const Eigen::VectorXd &transformed_cos() const { return tcos_; }
    bool degenerate() const { return degenerate_; }
    Eigen::VectorXd posterior() const { return softmax(tcos_); }

    // Chain dL/d cos(psi_k) back to f and W; grad_W is accumulated.
    Eigen::VectorXd backprop(const Eigen::VectorXd &dtcos, Eigen::MatrixXd &grad_W) const {
        require(grad_W.rows() == W_.rows() && grad_W.cols() == W_.cols(), "HeadPass: grad_W shape");
        const Eigen::VectorXd v = f_ / fnorm_;
        Eigen::VectorXd grad_f = Eigen::VectorXd::Zero(f_.size());
        for (Eigen::Index k = 0; k < W_.rows(); ++k) {
            const double g = dtcos(k) * dtcos_dcos_(k);
            if (g == 0.0)
                continue;
            const Eigen::VectorXd u = W_.row(k).transpose() / wnorm_(k);
            grad_f.noalias() += (g / fnorm_) * (u - cos_(k) * v);
            grad_W.row(k).noalias() += ((g / wnorm_(k)) * (v - cos_(k) * u)).transpose();
        }
        return grad_f;
    }

  private:
    Eigen::VectorXd f_;
    Eigen::MatrixXd W_;
    bool degenerate_ = false;
    double fnorm_ = 0.0;
    Eigen::VectorXd wnorm_, cos_, theta_, tcos_, dtcos_dcos_;
};

struct HeadGradients {
    double loss = 0.0;
    Eigen::VectorXd grad_f;
    Eigen::MatrixXd grad_W;
};

// BDD loss of one example and its exact gradients w.r.t. f and W.
inline HeadGradients head_backward(const Eigen::VectorXd &f, const AngularHead &head,
                                   const BalancedTransform &t, const Eigen::VectorXd &y) {
    HeadPass pass(f, head.W, t);
    const LossGrad lg = am_loss(pass.transformed_cos(), y, head.s, head.m);
    HeadGradients out;
    out.loss = lg.loss;
    out.grad_W = Eigen::MatrixXd::Zero(head.W.rows(), head.W.cols());
    out.grad_f = pass.backprop(lg.grad, out.grad_W);
    return out;
}

} // namespace bdd
