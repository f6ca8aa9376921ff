#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "encoder.hpp"
#include "error.hpp"

namespace bdd {

// Everything the optimizer touches: encoder tensors plus the head weights.
struct ParamSet {
    EncoderParams encoder;
    Eigen::MatrixXd head; // K x D

    static ParamSet zeros_like(const ParamSet &p) {
        return {EncoderParams::zeros(p.encoder.input_dim(), p.encoder.hidden_dim(), p.encoder.output_dim()),
                Eigen::MatrixXd::Zero(p.head.rows(), p.head.cols())};
    }
    void set_zero() {
        encoder.set_zero();
        head.setZero();
    }
    bool all_finite() const { return encoder.all_finite() && head.allFinite(); }
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct OptimizerState {
    ParamSet first;
    ParamSet second;
    std::size_t step = 0;
    AdamWConfig hyper;

    static OptimizerState for_params(const ParamSet &p, AdamWConfig hyper = {}) {
        return {ParamSet::zeros_like(p), ParamSet::zeros_like(p), 0, hyper};
    }
};

namespace detail {

template <class Tensor>
void adamw_tensor(Tensor &param, const Tensor &grad, Tensor &m, Tensor &v, double lr, const AdamWConfig &h,
                  double bc1, double bc2) {
    param *= (1.0 - lr * h.weight_decay);
    m = h.beta1 * m + (1.0 - h.beta1) * grad;
    v = h.beta2 * v + (1.0 - h.beta2) * grad.cwiseProduct(grad);
    const double step_size = lr / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    param.array() -= step_size * m.array() / (v.array().sqrt() / sqrt_bc2 + h.eps);
}

} // namespace detail

// Bias-corrected adaptive-moment step with decoupled weight decay; the
// encoder and the head are separate parameter groups with their own rates.
inline void optimizer_step(ParamSet &params, const ParamSet &grads, OptimizerState &opt, double lr_encoder,
                           double lr_head) {
    require(grads.encoder.same_shape(params.encoder) && grads.head.rows() == params.head.rows() &&
                grads.head.cols() == params.head.cols(),
            "optimizer_step: gradient shape mismatch");
    if (!grads.all_finite())
        throw NumericalError("optimizer_step: non-finite gradient at step " + std::to_string(opt.step + 1));
    ++opt.step;
    const auto &h = opt.hyper;
    const double t = static_cast<double>(opt.step);
    const double bc1 = 1.0 - std::pow(h.beta1, t);
    const double bc2 = 1.0 - std::pow(h.beta2, t);
    auto &p = params.encoder;
    const auto &g = grads.encoder;
    detail::adamw_tensor(p.W1, g.W1, opt.first.encoder.W1, opt.second.encoder.W1, lr_encoder, h, bc1, bc2);
    detail::adamw_tensor(p.b1, g.b1, opt.first.encoder.b1, opt.second.encoder.b1, lr_encoder, h, bc1, bc2);
    detail::adamw_tensor(p.W2, g.W2, opt.first.encoder.W2, opt.second.encoder.W2, lr_encoder, h, bc1, bc2);
    detail::adamw_tensor(p.b2, g.b2, opt.first.encoder.b2, opt.second.encoder.b2, lr_encoder, h, bc1, bc2);
    detail::adamw_tensor(params.head, grads.head, opt.first.head, opt.second.head, lr_head, h, bc1, bc2);
    ++p.version;
}

} // namespace bdd
