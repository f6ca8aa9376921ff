#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "angular.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "encoder.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "optimizer.hpp"
#include "pseudo.hpp"
#include "regularizers.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace bdd {

struct Example {
    std::string id;
    std::string text;
    SparseVector x;
    Eigen::VectorXd y; // multi-hot; all zeros for unlabeled texts
};

struct TrainData {
    LabelVocab vocab;
    FeatureSpace features;
    std::vector<Example> labeled;
    std::vector<Example> unlabeled;
    std::vector<Example> dev;
};

inline std::vector<Example> make_examples(const std::vector<Document> &docs, const FeatureSpace &fs,
                                          const LabelVocab &vocab) {
    std::vector<Example> out;
    out.reserve(docs.size());
    for (const auto &d : docs) {
        Example e{d.id, d.text, featurize(d, fs), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.size()))};
        for (const auto &l : d.labels)
            e.y(static_cast<Eigen::Index>(vocab.index_of(l))) = 1.0;
        out.push_back(std::move(e));
    }
    return out;
}

// Features are fit on the training texts (labeled + unlabeled). Labels of
// `unlabeled` are ignored.
inline TrainData prepare_data(const std::vector<Document> &labeled, const std::vector<Document> &unlabeled,
                              const std::vector<Document> &dev, const LabelVocab &vocab, const TrainConfig &cfg) {
    vocab.validate();
    std::vector<Document> fit = labeled;
    fit.insert(fit.end(), unlabeled.begin(), unlabeled.end());
    TrainData data;
    data.vocab = vocab;
    data.features = build_features(fit, cfg.min_df, cfg.max_features);
    data.labeled = make_examples(labeled, data.features, vocab);
    std::vector<Document> stripped = unlabeled;
    for (auto &d : stripped)
        d.labels.clear();
    data.unlabeled = make_examples(stripped, data.features, vocab);
    data.dev = make_examples(dev, data.features, vocab);
    return data;
}

inline Eigen::MatrixXd label_matrix(const std::vector<Example> &xs, Eigen::Index K) {
    Eigen::MatrixXd Y(static_cast<Eigen::Index>(xs.size()), K);
    for (std::size_t i = 0; i < xs.size(); ++i)
        Y.row(static_cast<Eigen::Index>(i)) = xs[i].y.transpose();
    return Y;
}

struct Prediction {
    Eigen::MatrixXd scores; // posteriors, N x K
    Eigen::MatrixXd labels; // 0/1, N x K
};

// Frozen inference state: evaluation parameters plus everything needed to
// map raw documents to label decisions.
struct ModelSnapshot {
    Mode mode = Mode::MccS;
    LabelVocab vocab;
    FeatureSpace features;
    EncoderParams encoder;
    Eigen::MatrixXd head;
    BalancedTransform transform;
    Eigen::VectorXd cap_gamma; // multi-label binarization thresholds

    Eigen::VectorXd represent(const SparseVector &x) const { return forward(x, encoder); }

    Eigen::VectorXd score(const SparseVector &x) const {
        return HeadPass(represent(x), head, transform).posterior();
    }

    Prediction predict(const std::vector<Example> &xs) const {
        const auto K = head.rows();
        Prediction p{Eigen::MatrixXd(static_cast<Eigen::Index>(xs.size()), K),
                     Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(xs.size()), K)};
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            p.scores.row(r) = score(xs[i].x).transpose();
        }
        if (is_multi_label(mode)) {
            p.labels = apply_cap(p.scores, cap_gamma);
        } else {
            for (Eigen::Index i = 0; i < p.scores.rows(); ++i) {
                Eigen::Index arg = 0;
                p.scores.row(i).maxCoeff(&arg);
                p.labels(i, arg) = 1.0;
            }
        }
        return p;
    }

    EvalReport evaluate(const std::vector<Example> &xs) const {
        const auto pred = predict(xs);
        return bdd::evaluate(label_matrix(xs, head.rows()), pred.labels, pred.scores, vocab.names());
    }
};

struct EpochReport {
    std::size_t epoch = 0;
    double loss_total = 0.0;
    double loss_supervised = 0.0;
    double loss_unsupervised = 0.0; // includes lambda1-free ramp weighting
    double loss_regularizer = 0.0;  // lambda2 * entropy, or the ADMM penalty
    double unsup_weight = 0.0;      // ramp weight at the last inner loop
    double kept_fraction = 0.0;     // pseudo-labeled instances used / seen
    Eigen::VectorXd stats_mu;
    Eigen::VectorXd stats_var;      // moving-average variances after the update
    Eigen::VectorXd sample_var;     // this epoch's raw variances
    double avg_dlav = 0.0;          // of the moving-average variances
    double admm_gap = 0.0;          // ||W_hat - W||_F
    double nuclear = 0.0;           // ||W_hat||_*
    std::size_t what_rank = 0;      // singular values of W_hat above 1e-6
    std::size_t degenerate = 0;     // zero-norm representations nudged
    std::size_t floored = 0;        // variances raised to the floor
    std::optional<EvalReport> dev;
};

class Trainer {
  public:
    Trainer(TrainConfig cfg, TrainData data) : cfg_(std::move(cfg)), data_(std::move(data)) {
        cfg_.validate();
        data_.vocab.validate();
        K_ = static_cast<Eigen::Index>(data_.vocab.size());
        if (data_.labeled.empty())
            throw ArgumentError("training needs at least one labeled text");
        if (!is_multi_label(cfg_.mode)) {
            for (const auto &e : data_.labeled)
                if (e.y.sum() != 1.0)
                    throw ArgumentError("multi-class training needs exactly one label per text ('" + e.id + "')");
            const Eigen::VectorXd counts = label_matrix(data_.labeled, K_).colwise().sum().transpose();
            for (Eigen::Index k = 0; k < K_; ++k)
                if (counts(k) == 0.0)
                    throw ArgumentError("class '" + data_.vocab.name(static_cast<std::size_t>(k)) +
                                        "' has no labeled text");
        }

        Rng init_rng(mix_seed(cfg_.seed, 1));
        const auto V = static_cast<Eigen::Index>(data_.features.size());
        const auto H = static_cast<Eigen::Index>(cfg_.hidden), D = static_cast<Eigen::Index>(cfg_.dim);
        live_.encoder = EncoderParams::glorot(V, H, D, init_rng);
        live_.head = Eigen::MatrixXd(K_, D);
        const double r = std::sqrt(6.0 / static_cast<double>(K_ + D));
        for (Eigen::Index k = 0; k < K_; ++k) {
            do {
                for (Eigen::Index j = 0; j < D; ++j)
                    live_.head(k, j) = init_rng.uniform(-r, r);
            } while (live_.head.row(k).norm() < kWeightNormFloor);
        }
        opt_ = OptimizerState::for_params(live_, AdamWConfig{0.9, 0.999, 1e-8, cfg_.weight_decay});
        grads_ = ParamSet::zeros_like(live_);
        shadow_ = {live_.encoder, live_.head, cfg_.ema_decay};
        stats_ = AngleStats::empty(K_, D, cfg_.gamma_ma);
        transform_ = BalancedTransform::identity(K_);
        threshold_ = AdaptiveThresholdState::fresh(K_, cfg_.threshold_momentum);
        admm_ = AdmmState::start_at(live_.head, cfg_.tau_penalty, cfg_.lambda3);
        prevalence_ = label_matrix(data_.labeled, K_).colwise().mean().transpose();
        cap_gamma_ = Eigen::VectorXd::Constant(K_, std::numeric_limits<double>::infinity());
        labeled_order_ = Cycler(data_.labeled.size(), mix_seed(cfg_.seed, 2));
        unlabeled_order_ = Cycler(data_.unlabeled.size(), mix_seed(cfg_.seed, 3));
    }

    const TrainConfig &config() const { return cfg_; }
    const TrainData &data() const { return data_; }
    const ParamSet &live() const { return live_; }
    const EmaShadow &shadow() const { return shadow_; }
    const AngleStats &stats() const { return stats_; }
    const BalancedTransform &transform() const { return transform_; }
    const AdmmState &admm() const { return admm_; }
    const AdaptiveThresholdState &threshold_state() const { return threshold_; }
    const OptimizerState &optimizer() const { return opt_; }
    const Eigen::VectorXd &cap_gamma() const { return cap_gamma_; }
    std::size_t epochs_done() const { return epoch_; }
    bool warmed_up() const { return warmed_up_; }

    // Supervised AM-loss training on labeled texts, then bootstrap of the
    // angle statistics from the labeled texts. The EMA shadow starts here.
    void warmup() {
        const auto id = BalancedTransform::identity(K_);
        Rng order_rng(mix_seed(cfg_.seed, 4));
        std::vector<std::size_t> order(data_.labeled.size());
        for (std::size_t i = 0; i < order.size(); ++i)
            order[i] = i;
        for (std::size_t ep = 0; ep < cfg_.warmup_epochs; ++ep) {
            order_rng.shuffle(order);
            for (std::size_t start = 0; start < order.size(); start += cfg_.warmup_batch) {
                const std::size_t end = std::min(order.size(), start + cfg_.warmup_batch);
                grads_.set_zero();
                const double inv_b = 1.0 / static_cast<double>(end - start);
                double loss = 0.0;
                for (std::size_t j = start; j < end; ++j) {
                    const auto &e = data_.labeled[order[j]];
                    loss += inv_b * accumulate_example(e.x, id, e.y, cfg_.m, inv_b, 0.0);
                }
                check_finite(loss, "warm-up");
                optimizer_step(live_, grads_, opt_, cfg_.lr_encoder, cfg_.lr_head);
                warmup_losses_.push_back(loss);
            }
        }
        shadow_ = {live_.encoder, live_.head, cfg_.ema_decay};
        admm_ = AdmmState::start_at(live_.head, cfg_.tau_penalty, cfg_.lambda3);

        const auto sample = epoch_sample(data_.labeled, label_matrix(data_.labeled, K_));
        stats_ = bootstrap_stats(sample, cfg_.gamma_ma);
        refresh_transform();
        warmed_up_ = true;
    }

    // Per-batch losses recorded during warm-up.
    const std::vector<double> &warmup_losses() const { return warmup_losses_; }

    EpochReport train_epoch() {
        if (!warmed_up_)
            throw ArgumentError("train_epoch called before warmup");
        EpochReport rep = is_multi_label(cfg_.mode) ? train_epoch_mlc() : train_epoch_mcc();
        ++epoch_;
        rep.epoch = epoch_;
        return rep;
    }

    // Warm-up followed by cfg.epochs self-training epochs. The observer runs
    // after every epoch.
    std::vector<EpochReport> run(const std::function<void(const Trainer &, const EpochReport &)> &observer = {}) {
        warmup();
        std::vector<EpochReport> reports;
        for (std::size_t e = 0; e < cfg_.epochs; ++e) {
            auto rep = train_epoch();
            if (!data_.dev.empty())
                rep.dev = snapshot().evaluate(data_.dev);
            if (observer)
                observer(*this, rep);
            reports.push_back(std::move(rep));
        }
        return reports;
    }

    // Evaluation model: EMA shadow parameters with the current transform.
    ModelSnapshot snapshot() const {
        return {cfg_.mode, data_.vocab, data_.features, shadow_.encoder, shadow_.head, transform_, cap_gamma_};
    }

    // Live parameters as a frozen copy (what pseudo-labeling sees).
    ModelSnapshot live_snapshot() const {
        return {cfg_.mode, data_.vocab, data_.features, live_.encoder, live_.head, transform_, cap_gamma_};
    }

    // Current pseudo-labels for every unlabeled text from the frozen live
    // parameters on the unaugmented text: sharpened posteriors (MCC-S), one-hot
    // argmax (MCC-F) or CAP decisions (MLC).
    Eigen::MatrixXd pseudo_labels_all() const {
        const auto snap = live_snapshot();
        Eigen::MatrixXd S(static_cast<Eigen::Index>(data_.unlabeled.size()), K_);
        for (std::size_t i = 0; i < data_.unlabeled.size(); ++i)
            S.row(static_cast<Eigen::Index>(i)) = snap.score(data_.unlabeled[i].x).transpose();
        if (S.rows() == 0)
            return S;
        if (is_multi_label(cfg_.mode))
            return apply_cap(S, cap_thresholds(S, prevalence_));
        Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(S.rows(), K_);
        for (Eigen::Index i = 0; i < S.rows(); ++i) {
            if (cfg_.mode == Mode::MccS) {
                Y.row(i) = sharpen(S.row(i).transpose(), cfg_.T).transpose();
            } else {
                Eigen::Index arg = 0;
                S.row(i).maxCoeff(&arg);
                Y(i, arg) = 1.0;
            }
        }
        return Y;
    }

    // Representations of `xs` under the live parameters.
    Eigen::MatrixXd represent(const std::vector<Example> &xs) const {
        Eigen::MatrixXd F(static_cast<Eigen::Index>(xs.size()), live_.head.cols());
        for (std::size_t i = 0; i < xs.size(); ++i)
            F.row(static_cast<Eigen::Index>(i)) = forward(xs[i].x, live_.encoder).transpose();
        return F;
    }

  private:
    // Deterministic epoch-wise reshuffled cycling over [0, n).
    class Cycler {
      public:
        Cycler() : rng_(0) {}
        Cycler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
            for (std::size_t i = 0; i < n; ++i)
                order_[i] = i;
            rng_.shuffle(order_);
        }
        std::vector<std::size_t> next(std::size_t count) {
            std::vector<std::size_t> out;
            if (order_.empty())
                return out;
            for (std::size_t j = 0; j < count; ++j) {
                if (pos_ == order_.size()) {
                    rng_.shuffle(order_);
                    pos_ = 0;
                }
                out.push_back(order_[pos_++]);
            }
            return out;
        }

      private:
        std::vector<std::size_t> order_;
        std::size_t pos_ = 0;
        Rng rng_;
    };

    struct ForwardItem {
        EncoderCache cache;
        HeadPass pass;
    };

    // BDD loss of one example; gradients scaled by `weight` are accumulated
    // into grads_. `entropy_weight` adds weight * entropy(posterior) on top.
    // Returns the unweighted BDD loss.
    double accumulate_example(const SparseVector &x, const BalancedTransform &t, const Eigen::VectorXd &y,
                              double margin, double weight, double entropy_weight, double *entropy = nullptr) {
        EncoderCache cache;
        const Eigen::VectorXd f = forward(x, live_.encoder, &cache);
        HeadPass pass(f, live_.head, t);
        if (pass.degenerate())
            ++degenerate_;
        Eigen::VectorXd dtcos = Eigen::VectorXd::Zero(K_);
        double loss = 0.0;
        if (weight != 0.0 && y.sum() > 0.0) {
            const LossGrad lg = am_loss(pass.transformed_cos(), y, cfg_.s, margin);
            loss = lg.loss;
            dtcos += weight * lg.grad;
        }
        if (entropy_weight != 0.0 || entropy) {
            const Eigen::VectorXd p = pass.posterior();
            const EntropyValue ev = entropy_reg(p.transpose());
            if (entropy)
                *entropy = ev.value;
            if (entropy_weight != 0.0) {
                const Eigen::VectorXd g = ev.grad.row(0).transpose();
                const double pg = p.dot(g);
                dtcos += entropy_weight * (p.array() * (g.array() - pg)).matrix();
            }
        }
        if (dtcos.cwiseAbs().maxCoeff() > 0.0) {
            const Eigen::VectorXd grad_f = pass.backprop(dtcos, grads_.head);
            accumulate_backward(grad_f, cache, live_.encoder, grads_.encoder);
        }
        return loss;
    }

    void check_finite(double v, const std::string &where) const {
        if (!std::isfinite(v)) {
            std::ostringstream os;
            os << "non-finite loss during " << where << " (epoch " << epoch_ + 1 << ", optimizer step "
               << opt_.step << ", head norm " << live_.head.norm() << ", encoder finite "
               << (live_.encoder.all_finite() ? "yes" : "no") << ")";
            throw NumericalError(os.str());
        }
    }

    void after_step() {
        ema_update(live_.encoder, live_.head, shadow_);
        for (Eigen::Index k = 0; k < K_; ++k)
            if (!(live_.head.row(k).norm() >= kWeightNormFloor))
                throw NumericalError("label weight row collapsed to zero norm");
    }

    double unlabeled_margin() const { return cfg_.margin_on_unlabeled ? cfg_.m : 0.0; }

    StatsSample epoch_sample(const std::vector<const Example *> &xs, const Eigen::MatrixXd &Y) {
        Eigen::MatrixXd F(static_cast<Eigen::Index>(xs.size()), live_.head.cols());
        Eigen::MatrixXd W = Y;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            if (xs[i]->x.degenerate) {
                F.row(r).setZero();
                W.row(r).setZero();
                continue;
            }
            F.row(r) = forward(xs[i]->x, live_.encoder).transpose();
        }
        return compute_angle_stats(F, W, compute_prototypes(F, W));
    }

    StatsSample epoch_sample(const std::vector<Example> &xs, const Eigen::MatrixXd &Y) {
        std::vector<const Example *> ptrs;
        for (const auto &e : xs)
            ptrs.push_back(&e);
        return epoch_sample(ptrs, Y);
    }

    void refresh_transform() {
        int floored = 0;
        const auto balanced = balanced_transform(stats_, &floored);
        floored_ += static_cast<std::size_t>(floored);
        transform_ = cfg_.use_bdd ? balanced : BalancedTransform::identity(K_);
    }

    // End-of-epoch statistics over labeled texts plus the pseudo-labeled texts
    // used this epoch.
    StatsSample refresh_stats(const std::map<std::size_t, Eigen::VectorXd> &pseudo) {
        std::vector<const Example *> omega;
        Eigen::MatrixXd Y(static_cast<Eigen::Index>(data_.labeled.size() + pseudo.size()), K_);
        Eigen::Index r = 0;
        for (const auto &e : data_.labeled) {
            omega.push_back(&e);
            Y.row(r++) = e.y.transpose();
        }
        for (const auto &[idx, y] : pseudo) {
            omega.push_back(&data_.unlabeled[idx]);
            Y.row(r++) = y.transpose();
        }
        auto sample = epoch_sample(omega, Y);
        stats_ = ma_update(stats_, sample, cfg_.gamma_ma);
        refresh_transform();
        return sample;
    }

    void fill_stats_report(EpochReport &rep, const StatsSample &sample) const {
        rep.stats_mu = stats_.mu;
        rep.stats_var = stats_.var;
        rep.sample_var = sample.var;
        rep.avg_dlav = avg_dlav(stats_.var);
        rep.degenerate = degenerate_;
        rep.floored = floored_;
    }

    EpochReport train_epoch_mcc() {
        EpochReport rep;
        const bool fixmatch = cfg_.mode == Mode::MccF;
        std::map<std::size_t, Eigen::VectorXd> pseudo;
        std::size_t seen = 0, kept = 0;
        double sum_sup = 0, sum_unsup = 0, sum_reg = 0, sum_total = 0;
        for (std::size_t loop = 0; loop < cfg_.inner_loops; ++loop) {
            const auto lb = labeled_order_.next(cfg_.batch_labeled);
            const auto ub = unlabeled_order_.next(cfg_.batch_unlabeled);
            const double w_ramp = fixmatch ? 1.0 : ramp_up(step_, cfg_.ramp_up_steps);
            rep.unsup_weight = w_ramp;

            // Pseudo-labels from the parameters as they stand before this
            // step's update (the frozen copy).
            std::vector<Eigen::VectorXd> targets(ub.size());
            std::vector<SparseVector> views(ub.size());
            std::vector<bool> keep(ub.size(), true);
            if (!ub.empty()) {
                Eigen::MatrixXd P(static_cast<Eigen::Index>(ub.size()), K_);
                for (std::size_t j = 0; j < ub.size(); ++j) {
                    const auto &e = data_.unlabeled[ub[j]];
                    if (fixmatch) {
                        Document weak{e.id, augment_text(e.text, kWeakAugment, cfg_.seed, e.id, epoch_, 2 * loop), {}};
                        Document strong{e.id, augment_text(e.text, kStrongAugment, cfg_.seed, e.id, epoch_, 2 * loop + 1), {}};
                        views[j] = featurize(strong, data_.features);
                        P.row(static_cast<Eigen::Index>(j)) =
                            HeadPass(forward(featurize(weak, data_.features), live_.encoder), live_.head, transform_)
                                .posterior()
                                .transpose();
                    } else {
                        views[j] = e.x;
                        P.row(static_cast<Eigen::Index>(j)) =
                            HeadPass(forward(e.x, live_.encoder), live_.head, transform_).posterior().transpose();
                    }
                }
                if (fixmatch) {
                    const auto mr = adaptive_mask(P, threshold_);
                    for (std::size_t j = 0; j < ub.size(); ++j) {
                        targets[j] = Eigen::VectorXd::Zero(K_);
                        targets[j](static_cast<Eigen::Index>(mr.labels[j])) = 1.0;
                        keep[j] = mr.keep[j];
                    }
                } else {
                    for (std::size_t j = 0; j < ub.size(); ++j)
                        targets[j] = sharpen(P.row(static_cast<Eigen::Index>(j)).transpose(), cfg_.T);
                }
            }

            grads_.set_zero();
            const double inv_l = 1.0 / static_cast<double>(lb.size());
            const double inv_u = ub.empty() ? 0.0 : 1.0 / static_cast<double>(ub.size());
            const double inv_all = 1.0 / static_cast<double>(lb.size() + ub.size());
            const double ent_w = cfg_.lambda2 * inv_all;
            double sup = 0.0, unsup = 0.0, ent = 0.0;
            for (auto i : lb) {
                const auto &e = data_.labeled[i];
                double h = 0.0;
                sup += inv_l * accumulate_example(e.x, transform_, e.y, cfg_.m, inv_l, ent_w, &h);
                ent += inv_all * h;
            }
            const double uw = cfg_.lambda1 * w_ramp * inv_u;
            for (std::size_t j = 0; j < ub.size(); ++j) {
                double h = 0.0;
                const Eigen::VectorXd &y = keep[j] ? targets[j] : Eigen::VectorXd::Zero(K_).eval();
                unsup += inv_u * accumulate_example(views[j], transform_, y, unlabeled_margin(),
                                                    keep[j] ? uw : 0.0, ent_w, &h);
                ent += inv_all * h;
                ++seen;
                if (keep[j]) {
                    ++kept;
                    pseudo[ub[j]] = targets[j];
                }
            }
            const double weighted_unsup = w_ramp * unsup;
            const double reg = cfg_.lambda2 * ent;
            const double total = sup + cfg_.lambda1 * weighted_unsup + reg;
            check_finite(total, "self-training");
            optimizer_step(live_, grads_, opt_, cfg_.lr_encoder, cfg_.lr_head);
            after_step();
            ++step_;
            sum_sup += sup;
            sum_unsup += weighted_unsup;
            sum_reg += reg;
            sum_total += total;
        }
        const double n = static_cast<double>(cfg_.inner_loops);
        rep.loss_supervised = sum_sup / n;
        rep.loss_unsupervised = sum_unsup / n;
        rep.loss_regularizer = sum_reg / n;
        rep.loss_total = sum_total / n;
        rep.kept_fraction = seen ? static_cast<double>(kept) / static_cast<double>(seen) : 0.0;
        last_pseudo_ = pseudo;
        const auto sample = refresh_stats(pseudo);
        fill_stats_report(rep, sample);
        return rep;
    }

    EpochReport train_epoch_mlc() {
        EpochReport rep;
        // Pseudo-labels for the whole unlabeled pool from the frozen copy.
        Eigen::MatrixXd Yu(static_cast<Eigen::Index>(data_.unlabeled.size()), K_);
        if (!data_.unlabeled.empty()) {
            const auto snap = live_snapshot();
            Eigen::MatrixXd S(Yu.rows(), K_);
            for (std::size_t i = 0; i < data_.unlabeled.size(); ++i)
                S.row(static_cast<Eigen::Index>(i)) = snap.score(data_.unlabeled[i].x).transpose();
            cap_gamma_ = cap_thresholds(S, prevalence_);
            Yu = apply_cap(S, cap_gamma_);
        } else {
            // Without unlabeled texts, binarize by the labeled-set scores.
            const auto snap = live_snapshot();
            Eigen::MatrixXd S(static_cast<Eigen::Index>(data_.labeled.size()), K_);
            for (std::size_t i = 0; i < data_.labeled.size(); ++i)
                S.row(static_cast<Eigen::Index>(i)) = snap.score(data_.labeled[i].x).transpose();
            cap_gamma_ = cap_thresholds(S, prevalence_);
        }

        std::map<std::size_t, Eigen::VectorXd> pseudo;
        std::size_t seen = 0, kept = 0;
        double sum_sup = 0, sum_unsup = 0, sum_reg = 0, sum_total = 0;
        for (std::size_t loop = 0; loop < cfg_.inner_loops; ++loop) {
            const auto lb = labeled_order_.next(cfg_.batch_labeled);
            const auto ub = unlabeled_order_.next(cfg_.batch_unlabeled);
            grads_.set_zero();
            const double inv_l = 1.0 / static_cast<double>(lb.size());
            const double inv_u = ub.empty() ? 0.0 : 1.0 / static_cast<double>(ub.size());
            double sup = 0.0, unsup = 0.0;
            for (auto i : lb) {
                const auto &e = data_.labeled[i];
                sup += inv_l * accumulate_example(e.x, transform_, e.y, cfg_.m, inv_l, 0.0);
            }
            for (auto j : ub) {
                const Eigen::VectorXd y = Yu.row(static_cast<Eigen::Index>(j)).transpose();
                ++seen;
                if (y.sum() == 0.0)
                    continue; // contributes exactly zero
                ++kept;
                pseudo[j] = y;
                unsup += inv_u * accumulate_example(data_.unlabeled[j].x, transform_, y, unlabeled_margin(),
                                                    cfg_.lambda1 * inv_u, 0.0);
            }
            double reg = 0.0;
            if (cfg_.use_admm) {
                reg = admm_penalty(admm_, live_.head);
                grads_.head += admm_penalty_grad(admm_, live_.head);
            }
            const double total = sup + cfg_.lambda1 * unsup + reg;
            check_finite(total, "self-training");
            optimizer_step(live_, grads_, opt_, cfg_.lr_encoder, cfg_.lr_head);
            after_step();
            ++step_;
            sum_sup += sup;
            sum_unsup += unsup;
            sum_reg += reg;
            sum_total += total;
        }
        const double n = static_cast<double>(cfg_.inner_loops);
        rep.loss_supervised = sum_sup / n;
        rep.loss_unsupervised = sum_unsup / n;
        rep.loss_regularizer = sum_reg / n;
        rep.loss_total = sum_total / n;
        rep.unsup_weight = 1.0;
        rep.kept_fraction = seen ? static_cast<double>(kept) / static_cast<double>(seen) : 0.0;

        if (cfg_.use_admm && (epoch_ + 1) % cfg_.admm_interval == 0)
            admm_ = admm_step(admm_, live_.head);
        rep.admm_gap = (admm_.W_hat - live_.head).norm();
        const auto svd = detail::checked_svd(admm_.W_hat, 0);
        rep.nuclear = svd.singularValues().sum();
        rep.what_rank = static_cast<std::size_t>((svd.singularValues().array() > 1e-6).count());

        last_pseudo_ = pseudo;
        const auto sample = refresh_stats(pseudo);
        fill_stats_report(rep, sample);
        return rep;
    }

    TrainConfig cfg_;
    TrainData data_;
    Eigen::Index K_ = 0;
    ParamSet live_;
    ParamSet grads_;
    OptimizerState opt_;
    EmaShadow shadow_;
    AngleStats stats_;
    BalancedTransform transform_;
    AdaptiveThresholdState threshold_;
    AdmmState admm_;
    Eigen::VectorXd prevalence_;
    Eigen::VectorXd cap_gamma_;
    Cycler labeled_order_;
    Cycler unlabeled_order_;
    std::map<std::size_t, Eigen::VectorXd> last_pseudo_;
    std::vector<double> warmup_losses_;
    std::size_t epoch_ = 0;
    std::size_t step_ = 0;
    std::size_t degenerate_ = 0;
    std::size_t floored_ = 0;
    bool warmed_up_ = false;
};

} // namespace bdd
