#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "angular.hpp"
#include "error.hpp"

namespace bdd {

// Moving-average label prototypes and label angle statistics.
struct AngleStats {
    Eigen::MatrixXd c;   // K x D prototypes
    Eigen::VectorXd mu;  // K, radians
    Eigen::VectorXd var; // K, radians^2
    double gamma_ma = 0.1;
    std::vector<bool> proto_initialized;
    std::vector<bool> var_initialized;

    static AngleStats empty(Eigen::Index K, Eigen::Index D, double gamma_ma) {
        AngleStats s;
        s.c = Eigen::MatrixXd::Zero(K, D);
        s.mu = Eigen::VectorXd::Constant(K, std::numbers::pi / 2);
        s.var = Eigen::VectorXd::Constant(K, kVarianceFloor);
        s.gamma_ma = gamma_ma;
        s.proto_initialized.assign(static_cast<std::size_t>(K), false);
        s.var_initialized.assign(static_cast<std::size_t>(K), false);
        return s;
    }
    Eigen::Index num_labels() const { return mu.size(); }
};

// One epoch's raw estimates, before moving-average mixing.
struct StatsSample {
    Eigen::MatrixXd c;
    Eigen::VectorXd mu;
    Eigen::VectorXd var;
    std::vector<bool> has_proto; // sum_i y_ik > 0 and nonzero prototype
    std::vector<bool> has_var;   // sum_i y_ik > 1
};

struct Prototypes {
    Eigen::MatrixXd c;
    std::vector<bool> present;
};

// c_k = sum_i y_ik f_i / sum_i y_ik. Labels without support are flagged absent
// and their rows are left at zero.
inline Prototypes compute_prototypes(const Eigen::MatrixXd &F, const Eigen::MatrixXd &Y) {
    require(F.rows() == Y.rows(), "compute_prototypes: row mismatch");
    const Eigen::Index K = Y.cols();
    Prototypes out{Eigen::MatrixXd::Zero(K, F.cols()), std::vector<bool>(static_cast<std::size_t>(K), false)};
    for (Eigen::Index k = 0; k < K; ++k) {
        const double w = Y.col(k).sum();
        if (!(w > 0.0))
            continue;
        out.c.row(k) = (Y.col(k).transpose() * F) / w;
        out.present[static_cast<std::size_t>(k)] = out.c.row(k).squaredNorm() > 0.0;
    }
    return out;
}

// Weighted mean and Bessel-style variance (denominator sum_i y_ik - 1) of the
// angles beta_ik between each f_i and prototype c_k. Zero-norm rows of F are
// skipped.
inline StatsSample compute_angle_stats(const Eigen::MatrixXd &F, const Eigen::MatrixXd &Y,
                                       const Prototypes &protos) {
    require(F.rows() == Y.rows() && protos.c.rows() == Y.cols() && protos.c.cols() == F.cols(),
            "compute_angle_stats: shape mismatch");
    const Eigen::Index N = F.rows(), K = Y.cols();
    StatsSample s;
    s.c = protos.c;
    s.mu = Eigen::VectorXd::Zero(K);
    s.var = Eigen::VectorXd::Zero(K);
    s.has_proto = protos.present;
    s.has_var.assign(static_cast<std::size_t>(K), false);

    Eigen::VectorXd fnorm = F.rowwise().norm();
    for (Eigen::Index k = 0; k < K; ++k) {
        if (!protos.present[static_cast<std::size_t>(k)])
            continue;
        const double cn = protos.c.row(k).norm();
        std::vector<std::pair<double, double>> beta; // (weight, angle)
        double wsum = 0.0, msum = 0.0;
        for (Eigen::Index i = 0; i < N; ++i) {
            const double w = Y(i, k);
            if (w == 0.0 || fnorm(i) == 0.0)
                continue;
            const double b = std::acos(clamp_cos(F.row(i).dot(protos.c.row(k)) / (fnorm(i) * cn)));
            beta.emplace_back(w, b);
            wsum += w;
            msum += w * b;
        }
        if (!(wsum > 0.0)) {
            s.has_proto[static_cast<std::size_t>(k)] = false;
            continue;
        }
        const double mu = msum / wsum;
        s.mu(k) = mu;
        if (wsum > 1.0) {
            double ss = 0.0;
            for (const auto &[w, b] : beta)
                ss += w * (b - mu) * (b - mu);
            s.var(k) = ss / (wsum - 1.0);
            s.has_var[static_cast<std::size_t>(k)] = true;
        }
    }
    return s;
}

// value <- (1 - gamma) * new + gamma * previous. A label's first observation
// is taken as-is; labels missing from the sample keep their previous values.
inline AngleStats ma_update(const AngleStats &prev, const StatsSample &sample, double gamma_ma) {
    if (!(gamma_ma > 0.0 && gamma_ma <= 1.0))
        throw ArgumentError("moving-average rate must lie in (0, 1]");
    AngleStats out = prev;
    out.gamma_ma = gamma_ma;
    const double keep = gamma_ma, take = 1.0 - gamma_ma;
    for (Eigen::Index k = 0; k < prev.num_labels(); ++k) {
        const auto ku = static_cast<std::size_t>(k);
        if (sample.has_proto[ku]) {
            if (prev.proto_initialized[ku]) {
                out.c.row(k) = take * sample.c.row(k) + keep * prev.c.row(k);
                out.mu(k) = take * sample.mu(k) + keep * prev.mu(k);
            } else {
                out.c.row(k) = sample.c.row(k);
                out.mu(k) = sample.mu(k);
                out.proto_initialized[ku] = true;
            }
        }
        if (sample.has_var[ku]) {
            if (prev.var_initialized[ku]) {
                out.var(k) = take * sample.var(k) + keep * prev.var(k);
            } else {
                out.var(k) = sample.var(k);
                out.var_initialized[ku] = true;
            }
        }
    }
    return out;
}

// Sets the stats directly from a sample (no mixing).
inline AngleStats bootstrap_stats(const StatsSample &sample, double gamma_ma) {
    auto s = AngleStats::empty(sample.c.rows(), sample.c.cols(), gamma_ma);
    return ma_update(s, sample, gamma_ma);
}

inline BalancedTransform balanced_transform(const AngleStats &stats, int *floored = nullptr) {
    return balanced_transform(stats.mu, stats.var, floored);
}

// Average difference of label angle variances: mean of |var_k - var_j| over
// unordered label pairs.
inline double avg_dlav(const Eigen::VectorXd &var) {
    const Eigen::Index K = var.size();
    if (K < 2)
        throw ArgumentError("avg_dlav needs at least 2 labels");
    double sum = 0.0;
    for (Eigen::Index k = 0; k < K; ++k)
        for (Eigen::Index j = k + 1; j < K; ++j)
            sum += std::abs(var(k) - var(j));
    return sum / static_cast<double>(K * (K - 1) / 2);
}

} // namespace bdd
