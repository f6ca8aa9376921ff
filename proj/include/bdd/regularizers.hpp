#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "error.hpp"

namespace bdd {

struct EntropyValue {
    double value = 0.0;
    Eigen::MatrixXd grad; // d value / d P
};

// -(1/N) sum_i sum_k P_ik ln P_ik, with 0 ln 0 := 0 (gradient 0 there too).
inline EntropyValue entropy_reg(const Eigen::MatrixXd &P) {
    if ((P.array() < 0.0).any())
        throw ContractViolation("entropy_reg: negative probability");
    EntropyValue out;
    out.grad = Eigen::MatrixXd::Zero(P.rows(), P.cols());
    if (P.rows() == 0)
        return out;
    const double inv_n = 1.0 / static_cast<double>(P.rows());
    double sum = 0.0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        for (Eigen::Index k = 0; k < P.cols(); ++k) {
            const double p = P(i, k);
            if (p <= 0.0)
                continue;
            const double lp = std::log(p);
            sum += p * lp;
            out.grad(i, k) = -inv_n * (lp + 1.0);
        }
    }
    out.value = -inv_n * sum;
    return out;
}

namespace detail {

inline std::string matrix_summary(const Eigen::MatrixXd &M) {
    std::ostringstream os;
    os << M.rows() << "x" << M.cols() << ", finite=" << (M.allFinite() ? "yes" : "no");
    if (M.allFinite() && M.size() > 0)
        os << ", min=" << M.minCoeff() << ", max=" << M.maxCoeff() << ", fro=" << M.norm();
    return os.str();
}

inline Eigen::JacobiSVD<Eigen::MatrixXd> checked_svd(const Eigen::MatrixXd &M, unsigned options) {
    if (!M.allFinite())
        throw NumericalError("SVD of non-finite matrix (" + matrix_summary(M) + ")");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, options);
    if (svd.info() != Eigen::Success || !svd.singularValues().allFinite())
        throw NumericalError("SVD did not converge (" + matrix_summary(M) + ")");
    return svd;
}

} // namespace detail

inline double nuclear_norm(const Eigen::MatrixXd &M) {
    if (M.size() == 0)
        return 0.0;
    return detail::checked_svd(M, 0).singularValues().sum();
}

// Singular value thresholding: U max(S - thresh, 0) V^T, the proximal
// operator of thresh * ||.||_*.
inline Eigen::MatrixXd svt(const Eigen::MatrixXd &M, double thresh) {
    if (!(thresh >= 0.0))
        throw ArgumentError("svt: threshold must be nonnegative");
    if (M.size() == 0 || thresh == 0.0)
        return M; // exact identity; a zero threshold must not add SVD round-off
    const auto svd = detail::checked_svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd shrunk = (svd.singularValues().array() - thresh).max(0.0).matrix();
    return svd.matrixU() * shrunk.asDiagonal() * svd.matrixV().transpose();
}

// Auxiliary copy W_hat of the head weights and multiplier Theta for the
// nuclear-norm split W = W_hat.
struct AdmmState {
    Eigen::MatrixXd W_hat;
    Eigen::MatrixXd Theta;
    double tau_penalty = 1.0;
    double lambda3 = 0.0;

    // W_hat = W and Theta = 0: the penalty term and its gradient vanish.
    static AdmmState start_at(const Eigen::MatrixXd &W, double tau_penalty, double lambda3) {
        if (!(tau_penalty > 0.0))
            throw ArgumentError("ADMM penalty tau must be positive");
        if (!(lambda3 >= 0.0))
            throw ArgumentError("lambda3 must be nonnegative");
        return {W, Eigen::MatrixXd::Zero(W.rows(), W.cols()), tau_penalty, lambda3};
    }
};

// (tau/2) ||W_hat - W + Theta/tau||_F^2
inline double admm_penalty(const AdmmState &st, const Eigen::MatrixXd &W) {
    return 0.5 * st.tau_penalty * (st.W_hat - W + st.Theta / st.tau_penalty).squaredNorm();
}

// Gradient of admm_penalty w.r.t. W: tau (W - W_hat) - Theta.
inline Eigen::MatrixXd admm_penalty_grad(const AdmmState &st, const Eigen::MatrixXd &W) {
    require(W.rows() == st.W_hat.rows() && W.cols() == st.W_hat.cols(), "admm_penalty_grad: shape mismatch");
    return st.tau_penalty * (W - st.W_hat) - st.Theta;
}

// W_hat <- D_{lambda3/tau}(W - Theta/tau)
inline void admm_auxiliary_update(AdmmState &st, const Eigen::MatrixXd &W) {
    require(W.rows() == st.W_hat.rows() && W.cols() == st.W_hat.cols(), "admm_auxiliary_update: shape mismatch");
    st.W_hat = svt(W - st.Theta / st.tau_penalty, st.lambda3 / st.tau_penalty);
}

// Theta <- Theta + tau (W_hat - W)
inline void admm_dual_update(AdmmState &st, const Eigen::MatrixXd &W) {
    require(W.rows() == st.Theta.rows() && W.cols() == st.Theta.cols(), "admm_dual_update: shape mismatch");
    st.Theta += st.tau_penalty * (st.W_hat - W);
}

// Combined once-per-epoch step: refresh W_hat by SVT, then the multiplier.
inline AdmmState admm_step(AdmmState st, const Eigen::MatrixXd &W) {
    admm_auxiliary_update(st, W);
    admm_dual_update(st, W);
    return st;
}

} // namespace bdd
