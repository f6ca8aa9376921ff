#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "checkpoint.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace bdd {

// Two-layer MLP: f = W2^T tanh(W1^T x + b1) + b2.
struct EncoderParams {
    Eigen::MatrixXd W1; // V x H
    Eigen::VectorXd b1; // H
    Eigen::MatrixXd W2; // H x D
    Eigen::VectorXd b2; // D
    // Bumped on every in-place parameter update; forward caches remember it.
    std::uint64_t version = 0;

    Eigen::Index input_dim() const { return W1.rows(); }
    Eigen::Index hidden_dim() const { return W1.cols(); }
    Eigen::Index output_dim() const { return W2.cols(); }

    static EncoderParams zeros(Eigen::Index V, Eigen::Index H, Eigen::Index D) {
        EncoderParams p;
        p.W1 = Eigen::MatrixXd::Zero(V, H);
        p.b1 = Eigen::VectorXd::Zero(H);
        p.W2 = Eigen::MatrixXd::Zero(H, D);
        p.b2 = Eigen::VectorXd::Zero(D);
        return p;
    }

    // Glorot-uniform weights, zero biases.
    static EncoderParams glorot(Eigen::Index V, Eigen::Index H, Eigen::Index D, Rng &rng) {
        auto p = zeros(V, H, D);
        const double r1 = std::sqrt(6.0 / static_cast<double>(V + H));
        const double r2 = std::sqrt(6.0 / static_cast<double>(H + D));
        for (Eigen::Index j = 0; j < H; ++j)
            for (Eigen::Index i = 0; i < V; ++i)
                p.W1(i, j) = rng.uniform(-r1, r1);
        for (Eigen::Index j = 0; j < D; ++j)
            for (Eigen::Index i = 0; i < H; ++i)
                p.W2(i, j) = rng.uniform(-r2, r2);
        return p;
    }

    void set_zero() {
        W1.setZero();
        b1.setZero();
        W2.setZero();
        b2.setZero();
    }

    bool all_finite() const {
        return W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite();
    }

    bool same_shape(const EncoderParams &o) const {
        return W1.rows() == o.W1.rows() && W1.cols() == o.W1.cols() && W2.rows() == o.W2.rows() &&
               W2.cols() == o.W2.cols() && b1.size() == o.b1.size() && b2.size() == o.b2.size();
    }
};

struct EncoderCache {
    const SparseVector *x = nullptr;
    Eigen::VectorXd hidden; // tanh(W1^T x + b1)
    std::uint64_t version = 0;
};

inline Eigen::VectorXd forward(const SparseVector &x, const EncoderParams &p, EncoderCache *cache = nullptr) {
    if (static_cast<Eigen::Index>(x.dim) != p.input_dim())
        throw ContractViolation("encoder forward: input dimension " + std::to_string(x.dim) +
                                " does not match " + std::to_string(p.input_dim()));
    Eigen::VectorXd pre = p.b1;
    for (const auto &[col, v] : x.entries)
        pre.noalias() += v * p.W1.row(static_cast<Eigen::Index>(col)).transpose();
    Eigen::VectorXd hidden = pre.array().tanh().matrix();
    Eigen::VectorXd f = p.W2.transpose() * hidden + p.b2;
    if (cache) {
        cache->x = &x;
        cache->hidden = std::move(hidden);
        cache->version = p.version;
    }
    return f;
}

// Adds d(f . grad_f)/d(params) into `grads`.
inline void accumulate_backward(const Eigen::VectorXd &grad_f, const EncoderCache &cache,
                                const EncoderParams &p, EncoderParams &grads) {
    if (!cache.x || cache.version != p.version)
        throw ContractViolation("encoder backward: stale or empty forward cache");
    require(grad_f.size() == p.output_dim(), "encoder backward: grad_f dimension mismatch");
    require(grads.same_shape(p), "encoder backward: gradient buffer shape mismatch");
    grads.W2.noalias() += cache.hidden * grad_f.transpose();
    grads.b2 += grad_f;
    const Eigen::VectorXd dhidden = p.W2 * grad_f;
    const Eigen::VectorXd dpre =
        (dhidden.array() * (1.0 - cache.hidden.array().square())).matrix();
    grads.b1 += dpre;
    for (const auto &[col, v] : cache.x->entries)
        grads.W1.row(static_cast<Eigen::Index>(col)).noalias() += v * dpre.transpose();
}

inline EncoderParams backward(const Eigen::VectorXd &grad_f, const EncoderCache &cache,
                              const EncoderParams &p) {
    auto g = EncoderParams::zeros(p.input_dim(), p.hidden_dim(), p.output_dim());
    accumulate_backward(grad_f, cache, p, g);
    return g;
}

// Evaluation copy of the encoder and head, updated as an exponential moving
// average of the live parameters.
struct EmaShadow {
    EncoderParams encoder;
    Eigen::MatrixXd head; // K x D
    double decay = 0.999;
};

inline void check_ema_decay(double decay) {
    if (!(decay > 0.0 && decay < 1.0))
        throw ArgumentError("EMA decay must lie in (0, 1), got " + std::to_string(decay));
}

inline void ema_update(const EncoderParams &live_encoder, const Eigen::MatrixXd &live_head,
                       EmaShadow &shadow) {
    check_ema_decay(shadow.decay);
    require(shadow.encoder.same_shape(live_encoder) && shadow.head.rows() == live_head.rows() &&
                shadow.head.cols() == live_head.cols(),
            "ema_update: shape mismatch");
    const double d = shadow.decay, w = 1.0 - shadow.decay;
    shadow.encoder.W1 = d * shadow.encoder.W1 + w * live_encoder.W1;
    shadow.encoder.b1 = d * shadow.encoder.b1 + w * live_encoder.b1;
    shadow.encoder.W2 = d * shadow.encoder.W2 + w * live_encoder.W2;
    shadow.encoder.b2 = d * shadow.encoder.b2 + w * live_encoder.b2;
    shadow.head = d * shadow.head + w * live_head;
    ++shadow.encoder.version;
}

inline void store_encoder(TensorArchive &ar, const std::string &prefix, const EncoderParams &p) {
    ar.put(prefix + "W1", p.W1);
    ar.put(prefix + "b1", p.b1);
    ar.put(prefix + "W2", p.W2);
    ar.put(prefix + "b2", p.b2);
}

inline EncoderParams load_encoder(const TensorArchive &ar, const std::string &prefix) {
    EncoderParams p;
    p.W1 = ar.get(prefix + "W1");
    p.b1 = ar.get(prefix + "b1");
    p.W2 = ar.get(prefix + "W2");
    p.b2 = ar.get(prefix + "b2");
    if (p.b1.size() != p.hidden_dim() || p.W2.rows() != p.hidden_dim() || p.b2.size() != p.output_dim())
        throw ArgumentError("checkpoint encoder tensors have inconsistent shapes");
    return p;
}

} // namespace bdd
