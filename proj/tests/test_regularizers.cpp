#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "bdd/regularizers.hpp"
#include "bdd/rng.hpp"
#include "oracles.hpp"

using namespace bdd;

namespace {

Eigen::MatrixXd random_matrix(Rng &rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = scale * rng.normal();
    return m;
}

Eigen::MatrixXd random_simplex_rows(Rng &rng, Eigen::Index N, Eigen::Index K) {
    Eigen::MatrixXd P(N, K);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index k = 0; k < K; ++k)
            P(i, k) = rng.uniform(0.05, 1.0);
        P.row(i) /= P.row(i).sum();
    }
    return P;
}

} // namespace

TEST(Entropy, HandValues) {
    Eigen::MatrixXd P(1, 2);
    P << 0.5, 0.5;
    EXPECT_NEAR(entropy_reg(P).value, std::log(2.0), 1e-15);
    P << 1.0, 0.0;
    const auto e = entropy_reg(P);
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.grad(0, 1), 0.0);
    EXPECT_NEAR(e.grad(0, 0), -1.0, 1e-15);
    EXPECT_EQ(entropy_reg(Eigen::MatrixXd(0, 3)).value, 0.0);
    Eigen::MatrixXd bad(1, 2);
    bad << -0.1, 1.1;
    EXPECT_THROW(entropy_reg(bad), ContractViolation);
}

TEST(Entropy, AveragedOverRowsAndBoundedByLogK) {
    Rng rng(21);
    for (int t = 0; t < 100; ++t) {
        const auto K = 2 + static_cast<Eigen::Index>(rng.below(4));
        const auto P = random_simplex_rows(rng, 1 + static_cast<Eigen::Index>(rng.below(6)), K);
        const double v = entropy_reg(P).value;
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, std::log(static_cast<double>(K)) + 1e-12);
    }
}

TEST(Entropy, GradientMatchesFiniteDifferences) {
    Rng rng(22);
    for (int t = 0; t < 100; ++t) {
        const auto N = 1 + static_cast<Eigen::Index>(rng.below(5));
        const auto K = 2 + static_cast<Eigen::Index>(rng.below(4));
        const auto P = random_simplex_rows(rng, N, K);
        const auto numeric = oracle::numeric_gradient(
            [&](const Eigen::VectorXd &v) { return entropy_reg(oracle::unflatten(v, N, K)).value; },
            oracle::flatten(P));
        EXPECT_LE(oracle::relative_error(oracle::flatten(entropy_reg(P).grad), numeric), 1e-5);
    }
}

TEST(NuclearNorm, MatchesClosedFormOn2x2) {
    Rng rng(23);
    for (int t = 0; t < 100; ++t) {
        const Eigen::Matrix2d M = random_matrix(rng, 2, 2);
        EXPECT_NEAR(nuclear_norm(M), oracle::nuclear_2x2(M), 1e-12);
    }
    EXPECT_EQ(nuclear_norm(Eigen::MatrixXd(0, 0)), 0.0);
}

TEST(Svt, HandExamples) {
    const Eigen::Matrix2d D = Eigen::Vector2d(3.0, 1.0).asDiagonal();
    const Eigen::MatrixXd out = svt(D, 2.0);
    EXPECT_NEAR(out(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(out(1, 1), 0.0, 1e-12);
    EXPECT_NEAR(std::abs(out(0, 1)) + std::abs(out(1, 0)), 0.0, 1e-12);
    EXPECT_EQ(svt(D, 0.0), Eigen::MatrixXd(D));
    EXPECT_NEAR(svt(D, 5.0).norm(), 0.0, 1e-12);
    EXPECT_THROW(svt(D, -1.0), ArgumentError);
}

TEST(Svt, MatchesBruteForceProxOn2x2) {
    Rng rng(24);
    for (int t = 0; t < 100; ++t) {
        const Eigen::Matrix2d M = random_matrix(rng, 2, 2);
        const double thr = rng.uniform(0.0, 1.5);
        const Eigen::Matrix2d ref = oracle::prox_nuclear_2x2(M, thr);
        EXPECT_LE((svt(M, thr) - ref).cwiseAbs().maxCoeff(), 1e-4) << "trial " << t;
    }
}

TEST(Svt, ShrinksSingularValuesAndKeepsSubspaces) {
    Rng rng(25);
    for (int t = 0; t < 50; ++t) {
        const auto M = random_matrix(rng, 5, 3);
        const double thr = rng.uniform(0.0, 2.0);
        const auto in = detail::checked_svd(M, 0).singularValues();
        const auto out = detail::checked_svd(svt(M, thr), 0).singularValues();
        for (Eigen::Index i = 0; i < in.size(); ++i)
            EXPECT_NEAR(out(i), std::max(in(i) - thr, 0.0), 1e-10);
    }
}

TEST(Svt, NonFiniteInputIsANumericalError) {
    Eigen::MatrixXd M = Eigen::MatrixXd::Ones(2, 2);
    M(0, 1) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(svt(M, 0.1), NumericalError);
    EXPECT_THROW(nuclear_norm(M), NumericalError);
}

TEST(Admm, StartStateHasZeroPenaltyAndGradient) {
    Rng rng(26);
    const auto W = random_matrix(rng, 3, 4);
    const auto st = AdmmState::start_at(W, 2.0, 0.1);
    EXPECT_EQ(admm_penalty(st, W), 0.0);
    EXPECT_EQ(admm_penalty_grad(st, W).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_THROW(AdmmState::start_at(W, 0.0, 0.1), ArgumentError);
    EXPECT_THROW(AdmmState::start_at(W, 1.0, -0.1), ArgumentError);
}

TEST(Admm, PenaltyGradientMatchesFiniteDifferences) {
    Rng rng(27);
    for (int t = 0; t < 100; ++t) {
        const auto K = 2 + static_cast<Eigen::Index>(rng.below(4));
        const auto D = 2 + static_cast<Eigen::Index>(rng.below(7));
        AdmmState st{random_matrix(rng, K, D), random_matrix(rng, K, D), rng.uniform(0.1, 3.0), 0.1};
        const auto W = random_matrix(rng, K, D);
        const auto numeric = oracle::numeric_gradient(
            [&](const Eigen::VectorXd &v) { return admm_penalty(st, oracle::unflatten(v, K, D)); },
            oracle::flatten(W));
        EXPECT_LE(oracle::relative_error(oracle::flatten(admm_penalty_grad(st, W)), numeric), 1e-5);
    }
}

TEST(Admm, StepHandExample) {
    // Theta = 0, W = diag(3, 1), tau = 1, lambda3 = 2: W_hat = diag(1, 0) and
    // Theta = W_hat - W = diag(-2, -1).
    const Eigen::MatrixXd W = Eigen::Vector2d(3.0, 1.0).asDiagonal();
    const auto st = admm_step(AdmmState::start_at(W, 1.0, 2.0), W);
    EXPECT_NEAR(st.W_hat(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(st.W_hat(1, 1), 0.0, 1e-12);
    EXPECT_NEAR(st.Theta(0, 0), -2.0, 1e-12);
    EXPECT_NEAR(st.Theta(1, 1), -1.0, 1e-12);
}

TEST(Admm, ZeroLambdaKeepsTheSplitExact) {
    Rng rng(28);
    const auto W = random_matrix(rng, 3, 3);
    const auto st = admm_step(AdmmState::start_at(W, 1.5, 0.0), W);
    EXPECT_EQ(st.W_hat, W);
    EXPECT_EQ(st.Theta.cwiseAbs().maxCoeff(), 0.0);
}

// Minimizing 0.5 ||W - A||^2 + lambda3 ||W_hat||_* subject to W = W_hat. The
// W-subproblem has the closed form (A + tau W_hat + Theta) / (1 + tau); the
// fixed point is the nuclear prox of A.
TEST(Admm, SurrogateProblemConvergesToTheProx) {
    Rng rng(29);
    for (int t = 0; t < 20; ++t) {
        const auto A = random_matrix(rng, 4, 4);
        const double lambda3 = rng.uniform(0.1, 1.0);
        const double tau = 1.0;
        auto st = AdmmState::start_at(A, tau, lambda3);
        Eigen::MatrixXd W = A;
        int iters = 0;
        for (; iters < 200; ++iters) {
            W = (A + tau * st.W_hat + st.Theta) / (1.0 + tau);
            st = admm_step(st, W);
            if ((st.W_hat - W).norm() < 1e-6)
                break;
        }
        EXPECT_LT(iters, 200);
        EXPECT_LE((W - svt(A, lambda3)).norm(), 1e-5);
    }
}
