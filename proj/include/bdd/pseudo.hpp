#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "corpus.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace bdd {

// q_k = p_k^(1/T) / sum_j p_j^(1/T), computed in log space.
inline Eigen::VectorXd sharpen(const Eigen::VectorXd &p, double T) {
    if (!(T > 0.0))
        throw ArgumentError("sharpen: temperature must be positive");
    if ((p.array() < 0.0).any())
        throw ContractViolation("sharpen: negative probability");
    Eigen::ArrayXd logq(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k)
        logq(k) = p(k) > 0.0 ? std::log(p(k)) / T : -std::numeric_limits<double>::infinity();
    const double mx = logq.maxCoeff();
    // Scalar exp: the vectorized one can return a denormal for -inf, and a
    // zero probability must stay exactly zero.
    Eigen::ArrayXd q(p.size());
    for (Eigen::Index k = 0; k < p.size(); ++k)
        q(k) = p(k) > 0.0 ? std::exp(logq(k) - mx) : 0.0;
    return (q / q.sum()).matrix();
}

// Linear ramp of the unlabeled-loss weight: min(step / total_ramp, 1).
inline double ramp_up(std::size_t step, std::size_t total_ramp) {
    if (total_ramp == 0)
        throw ArgumentError("ramp_up: total_ramp must be positive");
    return std::min(static_cast<double>(step) / static_cast<double>(total_ramp), 1.0);
}

struct MaskResult {
    std::vector<std::size_t> labels;
    std::vector<bool> keep;
};

// Hard pseudo-labels with a confidence mask, one row of P per instance.
class ConfidenceMasker {
  public:
    virtual ~ConfidenceMasker() = default;
    virtual MaskResult mask(const Eigen::MatrixXd &P) = 0;
};

// Self-adaptive threshold: a global EMA `tau` of the batch-mean max
// probability, scaled per class by the normalized EMA `ptilde` of mean class
// probabilities. Thresholds come from the state before the batch is folded in.
struct AdaptiveThresholdState {
    double tau = 0.0;
    Eigen::VectorXd ptilde;
    double momentum = 0.999;

    static AdaptiveThresholdState fresh(Eigen::Index K, double momentum = 0.999) {
        if (!(momentum > 0.0 && momentum < 1.0))
            throw ArgumentError("adaptive threshold momentum must lie in (0, 1)");
        return {1.0 / static_cast<double>(K), Eigen::VectorXd::Constant(K, 1.0 / static_cast<double>(K)),
                momentum};
    }

    Eigen::VectorXd thresholds() const {
        const double mx = ptilde.maxCoeff();
        if (!(mx > 0.0))
            return Eigen::VectorXd::Constant(ptilde.size(), tau);
        return tau * ptilde / mx;
    }
};

inline MaskResult adaptive_mask(const Eigen::MatrixXd &P, AdaptiveThresholdState &state) {
    MaskResult out;
    if (P.rows() == 0)
        return out;
    require(P.cols() == state.ptilde.size(), "adaptive_mask: class count mismatch");
    const Eigen::VectorXd thr = state.thresholds();
    out.labels.resize(static_cast<std::size_t>(P.rows()));
    out.keep.resize(static_cast<std::size_t>(P.rows()));
    double max_sum = 0.0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        Eigen::Index arg = 0;
        const double mx = P.row(i).maxCoeff(&arg); // first index among ties
        out.labels[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arg);
        out.keep[static_cast<std::size_t>(i)] = mx >= thr(arg);
        max_sum += mx;
    }
    const double mom = state.momentum;
    const double n = static_cast<double>(P.rows());
    state.tau = mom * state.tau + (1.0 - mom) * (max_sum / n);
    state.ptilde = mom * state.ptilde + (1.0 - mom) * (P.colwise().sum().transpose() / n);
    return out;
}

class SelfAdaptiveThreshold final : public ConfidenceMasker {
  public:
    explicit SelfAdaptiveThreshold(AdaptiveThresholdState state) : state_(std::move(state)) {}
    MaskResult mask(const Eigen::MatrixXd &P) override { return adaptive_mask(P, state_); }
    const AdaptiveThresholdState &state() const { return state_; }

  private:
    AdaptiveThresholdState state_;
};

// Class-distribution-aware thresholds: gamma_k is the r_k-th largest score of
// column k with r_k = round_half_up(prevalence_k * N_u); +inf when r_k = 0.
inline Eigen::VectorXd cap_thresholds(const Eigen::MatrixXd &S, const Eigen::VectorXd &prevalence) {
    require(S.rows() >= 1, "cap_thresholds: no unlabeled scores");
    require(S.cols() == prevalence.size(), "cap_thresholds: class count mismatch");
    const Eigen::Index N = S.rows();
    Eigen::VectorXd gamma(S.cols());
    std::vector<double> col(static_cast<std::size_t>(N));
    for (Eigen::Index k = 0; k < S.cols(); ++k) {
        const double p = std::clamp(prevalence(k), 0.0, 1.0);
        const auto r = static_cast<Eigen::Index>(std::floor(p * static_cast<double>(N) + 0.5));
        if (r <= 0) {
            gamma(k) = std::numeric_limits<double>::infinity();
            continue;
        }
        for (Eigen::Index i = 0; i < N; ++i)
            col[static_cast<std::size_t>(i)] = S(i, k);
        const auto nth = col.begin() + (std::min(r, N) - 1);
        std::nth_element(col.begin(), nth, col.end(), std::greater<>());
        gamma(k) = *nth;
    }
    return gamma;
}

inline Eigen::MatrixXd apply_cap(const Eigen::MatrixXd &S, const Eigen::VectorXd &gamma) {
    require(S.cols() == gamma.size(), "apply_cap: class count mismatch");
    Eigen::MatrixXd Y(S.rows(), S.cols());
    for (Eigen::Index i = 0; i < S.rows(); ++i)
        for (Eigen::Index k = 0; k < S.cols(); ++k)
            Y(i, k) = S(i, k) >= gamma(k) ? 1.0 : 0.0;
    return Y;
}

// ---------------------------------------------------------------------------
// Token-level augmentation standing in for back translation.

inline std::uint64_t stable_hash(const std::string &s) {
    std::uint64_t h = 0xcbf29ce484222325ULL; // FNV-1a
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct AugmentSpec {
    double dropout = 0.1;
    double swap = 0.0; // probability of swapping each adjacent token pair
};

inline constexpr AugmentSpec kWeakAugment{0.1, 0.0};
inline constexpr AugmentSpec kStrongAugment{0.3, 0.1};

// Deterministic in (seed, doc id, epoch, spec); never returns an empty text
// for a non-empty input.
inline std::string augment_text(const std::string &text, const AugmentSpec &spec, std::uint64_t seed,
                                const std::string &doc_id, std::uint64_t epoch, std::uint64_t view_tag) {
    Rng rng(mix_seed(mix_seed(seed ^ stable_hash(doc_id), epoch), view_tag));
    const auto tokens = tokenize(text);
    std::vector<const std::string *> kept;
    for (const auto &t : tokens)
        if (!rng.bernoulli(spec.dropout))
            kept.push_back(&t);
    if (kept.empty() && !tokens.empty())
        kept.push_back(&tokens[rng.below(tokens.size())]);
    if (spec.swap > 0.0) {
        for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
            if (rng.bernoulli(spec.swap)) {
                std::swap(kept[i], kept[i + 1]);
                ++i;
            }
        }
    }
    std::string out;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        if (i)
            out.push_back(' ');
        out += *kept[i];
    }
    return out;
}

} // namespace bdd
