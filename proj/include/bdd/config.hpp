#pragma once

#include <cstdint>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "error.hpp"

namespace bdd {

// MCC-S: sharpened soft pseudo-labels with a ramped unlabeled weight.
// MCC-F: hard pseudo-labels masked by a self-adaptive confidence threshold,
//        trained on strongly augmented views.
// MLC:   class-distribution-aware pseudo-labels with a nuclear-norm
//        regularizer solved by ADMM.
enum class Mode { MccS, MccF, Mlc };

inline std::string to_string(Mode m) {
    switch (m) {
    case Mode::MccS:
        return "mcc-s";
    case Mode::MccF:
        return "mcc-f";
    case Mode::Mlc:
        return "mlc";
    }
    return "?";
}

inline Mode parse_mode(const std::string &s) {
    if (s == "mcc-s")
        return Mode::MccS;
    if (s == "mcc-f")
        return Mode::MccF;
    if (s == "mlc")
        return Mode::Mlc;
    throw ArgumentError("unknown mode '" + s + "' (expected mcc-s, mcc-f or mlc)");
}

inline bool is_multi_label(Mode m) { return m == Mode::Mlc; }

struct TrainConfig {
    Mode mode = Mode::MccS;
    double s = 1.0;
    double m = 0.01;
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 0.001;
    double tau_penalty = 1.0;
    double T = 0.5;
    double gamma_ma = 0.1;
    double ema_decay = 0.999;
    std::size_t batch_labeled = 4;
    std::size_t batch_unlabeled = 8;
    std::size_t epochs = 20;
    std::size_t inner_loops = 50;
    std::size_t warmup_epochs = 5;
    std::size_t warmup_batch = 8;
    double lr_encoder = 1e-5;
    double lr_head = 1e-3;
    double weight_decay = 0.01;
    std::size_t hidden = 128;
    std::size_t dim = 32;
    std::size_t ramp_up_steps = 500;
    double threshold_momentum = 0.999;
    bool use_bdd = true;
    bool margin_on_unlabeled = true;
    bool use_admm = true;
    std::size_t admm_interval = 1;
    std::size_t min_df = 1;
    std::size_t max_features = 2000;
    std::uint64_t seed = 1;

    // Mode-specific settings used in the reference experiments.
    static TrainConfig defaults(Mode mode) {
        TrainConfig c;
        c.mode = mode;
        switch (mode) {
        case Mode::MccS:
            break;
        case Mode::MccF:
            c.lambda2 = 0.001;
            c.s = 20.0;
            c.m = 0.3;
            break;
        case Mode::Mlc:
            c.lambda3 = 0.001;
            c.s = 20.0;
            c.m = 0.3;
            c.gamma_ma = 0.001;
            break;
        }
        return c;
    }

    void validate() const {
        auto fail = [](const std::string &what) { throw ArgumentError("config: " + what); };
        if (!(s > 0.0))
            fail("s must be positive");
        if (!(m >= 0.0))
            fail("m must be nonnegative");
        if (!(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0))
            fail("lambda1, lambda2, lambda3 must be nonnegative");
        if (!(tau_penalty > 0.0))
            fail("tau_penalty must be positive");
        if (!(T > 0.0))
            fail("T must be positive");
        if (!(gamma_ma > 0.0 && gamma_ma <= 1.0))
            fail("gamma_ma must lie in (0, 1]");
        if (!(ema_decay > 0.0 && ema_decay < 1.0))
            fail("ema_decay must lie in (0, 1)");
        if (batch_labeled == 0 || warmup_batch == 0)
            fail("batch sizes must be positive");
        if (inner_loops == 0)
            fail("inner_loops must be positive");
        if (!(lr_encoder > 0.0 && lr_head > 0.0))
            fail("learning rates must be positive");
        if (!(weight_decay >= 0.0))
            fail("weight_decay must be nonnegative");
        if (hidden == 0 || dim == 0)
            fail("hidden and dim must be positive");
        if (ramp_up_steps == 0)
            fail("ramp_up_steps must be positive");
        if (!(threshold_momentum > 0.0 && threshold_momentum < 1.0))
            fail("threshold_momentum must lie in (0, 1)");
        if (admm_interval == 0)
            fail("admm_interval must be positive");
        if (min_df == 0)
            fail("min_df must be positive");
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["mode"] = to_string(mode);
        j["s"] = s;
        j["m"] = m;
        j["lambda1"] = lambda1;
        j["lambda2"] = lambda2;
        j["lambda3"] = lambda3;
        j["tau_penalty"] = tau_penalty;
        j["T"] = T;
        j["gamma_ma"] = gamma_ma;
        j["ema_decay"] = ema_decay;
        j["batch_labeled"] = batch_labeled;
        j["batch_unlabeled"] = batch_unlabeled;
        j["epochs"] = epochs;
        j["inner_loops"] = inner_loops;
        j["warmup_epochs"] = warmup_epochs;
        j["warmup_batch"] = warmup_batch;
        j["lr_encoder"] = lr_encoder;
        j["lr_head"] = lr_head;
        j["weight_decay"] = weight_decay;
        j["hidden"] = hidden;
        j["dim"] = dim;
        j["ramp_up_steps"] = ramp_up_steps;
        j["threshold_momentum"] = threshold_momentum;
        j["use_bdd"] = use_bdd;
        j["margin_on_unlabeled"] = margin_on_unlabeled;
        j["use_admm"] = use_admm;
        j["admm_interval"] = admm_interval;
        j["min_df"] = min_df;
        j["max_features"] = max_features;
        j["seed"] = seed;
        return j;
    }

    // Overlays the keys of `j` onto `base`; unknown keys and wrongly typed
    // values are errors.
    static TrainConfig from_json(const nlohmann::json &j) { return from_json(j, TrainConfig{}); }
    static TrainConfig from_json(const nlohmann::json &j, const TrainConfig &base) {
        if (!j.is_object())
            throw ArgumentError("config: expected a JSON object");
        TrainConfig c = base;
        if (auto it = j.find("mode"); it != j.end()) {
            if (!it->is_string())
                throw ArgumentError("config: 'mode' must be a string");
            c.mode = parse_mode(it->get<std::string>());
        }
        for (const auto &[key, value] : j.items()) {
            if (key == "mode")
                continue;
            try {
                if (!c.assign(key, value))
                    throw ArgumentError("config: unknown key '" + key + "'");
            } catch (const WrongType &) {
                throw ArgumentError("config: key '" + key + "' has the wrong type");
            }
        }
        c.validate();
        return c;
    }

  private:
    struct WrongType {};

    template <class T> static void take(T &field, const nlohmann::json &v) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean())
                throw WrongType{};
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<long long>() < 0))
                throw WrongType{};
        } else {
            if (!v.is_number())
                throw WrongType{};
        }
        field = v.get<T>();
    }

    bool assign(const std::string &key, const nlohmann::json &v) {
#define BDD_CONFIG_FIELD(name)                                                                                         \
    if (key == #name) {                                                                                                \
        take(name, v);                                                                                                 \
        return true;                                                                                                   \
    }
        BDD_CONFIG_FIELD(s)
        BDD_CONFIG_FIELD(m)
        BDD_CONFIG_FIELD(lambda1)
        BDD_CONFIG_FIELD(lambda2)
        BDD_CONFIG_FIELD(lambda3)
        BDD_CONFIG_FIELD(tau_penalty)
        BDD_CONFIG_FIELD(T)
        BDD_CONFIG_FIELD(gamma_ma)
        BDD_CONFIG_FIELD(ema_decay)
        BDD_CONFIG_FIELD(batch_labeled)
        BDD_CONFIG_FIELD(batch_unlabeled)
        BDD_CONFIG_FIELD(epochs)
        BDD_CONFIG_FIELD(inner_loops)
        BDD_CONFIG_FIELD(warmup_epochs)
        BDD_CONFIG_FIELD(warmup_batch)
        BDD_CONFIG_FIELD(lr_encoder)
        BDD_CONFIG_FIELD(lr_head)
        BDD_CONFIG_FIELD(weight_decay)
        BDD_CONFIG_FIELD(hidden)
        BDD_CONFIG_FIELD(dim)
        BDD_CONFIG_FIELD(ramp_up_steps)
        BDD_CONFIG_FIELD(threshold_momentum)
        BDD_CONFIG_FIELD(use_bdd)
        BDD_CONFIG_FIELD(margin_on_unlabeled)
        BDD_CONFIG_FIELD(use_admm)
        BDD_CONFIG_FIELD(admm_interval)
        BDD_CONFIG_FIELD(min_df)
        BDD_CONFIG_FIELD(max_features)
        BDD_CONFIG_FIELD(seed)
#undef BDD_CONFIG_FIELD
        return false;
    }
};

} // namespace bdd
