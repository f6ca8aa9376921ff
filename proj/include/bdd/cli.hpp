#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "stats.hpp"
#include "trainer.hpp"

#ifndef BDD_VERSION
#define BDD_VERSION "unknown"
#endif

namespace bdd {

namespace fs = std::filesystem;

inline constexpr const char *kVersion = BDD_VERSION;

// ---------------------------------------------------------------------------
// Small file helpers.

namespace detail {

inline std::string fmt_double(double v) {
    if (!std::isfinite(v))
        return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    return os.str();
}

inline std::string fmt_opt(const std::optional<double> &v) { return v ? fmt_double(*v) : ""; }

inline void write_text(const fs::path &p, const std::string &s) {
    std::ofstream out(p, std::ios::binary);
    if (!out)
        throw ArgumentError("cannot write '" + p.string() + "'");
    out << s;
}

inline std::string read_text(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw MissingArtifactError("cannot open '" + p.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline nlohmann::json read_json(const fs::path &p) {
    const std::string s = read_text(p);
    try {
        return nlohmann::json::parse(s);
    } catch (const nlohmann::json::parse_error &e) {
        throw ArgumentError("'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

inline void write_json(const fs::path &p, const nlohmann::ordered_json &j) { write_text(p, j.dump(2) + "\n"); }

// Creates `dir`; an existing non-empty directory is refused unless `force`.
inline void prepare_output_dir(const fs::path &dir, bool force) {
    if (dir.empty())
        throw ArgumentError("an output directory is required");
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir))
            throw ArgumentError("'" + dir.string() + "' exists and is not a directory");
        if (!fs::is_empty(dir) && !force)
            throw ArgumentError("output directory '" + dir.string() + "' is not empty (use --force)");
    }
    fs::create_directories(dir);
}

inline std::vector<Document> load_docs(const std::string &path, const char *what) {
    if (path.empty())
        return {};
    if (!fs::exists(path))
        throw ArgumentError(std::string(what) + " dataset '" + path + "' does not exist");
    return load_jsonl(path).docs;
}

inline nlohmann::ordered_json matrix_to_json(const Eigen::MatrixXd &m) {
    auto rows = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            r[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(r);
    }
    return rows;
}

inline std::vector<double> to_std(const Eigen::VectorXd &v) { return {v.data(), v.data() + v.size()}; }

} // namespace detail

// ---------------------------------------------------------------------------
// Run requests. Each command resolves its arguments into one of these; the
// manifest stores the resolved request so a rerun needs nothing else.

struct DataPaths {
    std::string labeled;
    std::string unlabeled;
    std::string dev;

    nlohmann::ordered_json to_json() const {
        return {{"labeled", labeled}, {"unlabeled", unlabeled}, {"dev", dev}};
    }
    static DataPaths from_json(const nlohmann::json &j) {
        return {j.value("labeled", ""), j.value("unlabeled", ""), j.value("dev", "")};
    }
};

struct RunManifest {
    std::string command;
    std::string config_path; // informational; `config` is authoritative
    nlohmann::ordered_json config;
    std::vector<std::uint64_t> seeds;
    std::string output_dir;
    std::string version = kVersion;
    nlohmann::ordered_json inputs = nlohmann::ordered_json::object();

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["command"] = command;
        j["config_path"] = config_path;
        j["config"] = config;
        j["seeds"] = seeds;
        j["output_dir"] = output_dir;
        j["version"] = version;
        j["inputs"] = inputs;
        return j;
    }

    static RunManifest from_json(const nlohmann::json &j) {
        try {
            RunManifest m;
            m.command = j.at("command").get<std::string>();
            m.config_path = j.value("config_path", "");
            m.config = j.at("config");
            m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
            m.output_dir = j.value("output_dir", "");
            m.version = j.value("version", "unknown");
            if (j.contains("inputs"))
                m.inputs = j.at("inputs");
            return m;
        } catch (const nlohmann::json::exception &e) {
            throw ArgumentError(std::string("malformed manifest: ") + e.what());
        }
    }
};

// ---------------------------------------------------------------------------
// Training outputs.

inline const char *kMetricsHeader =
    "epoch,loss_total,loss_supervised,loss_unsupervised,loss_regularizer,unsup_weight,kept_fraction,"
    "avg_dlav,admm_gap,nuclear_norm,what_rank,degenerate,floored,"
    "pl_precision,pl_recall,pl_micro_f1,pl_macro_f1,"
    "dev_micro_f1,dev_macro_f1,dev_ranking_loss,dev_average_precision";

// Pseudo-label quality against hidden ground truth, when available.
struct PseudoLabelQuality {
    double precision = 0.0; // micro
    double recall = 0.0;    // micro
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    double avg_dlav_semi = 0.0;
    double avg_dlav_oracle = 0.0;
};

inline std::string metrics_row(const EpochReport &r, const std::optional<PseudoLabelQuality> &pl) {
    using detail::fmt_double;
    std::ostringstream os;
    os << r.epoch << ',' << fmt_double(r.loss_total) << ',' << fmt_double(r.loss_supervised) << ','
       << fmt_double(r.loss_unsupervised) << ',' << fmt_double(r.loss_regularizer) << ','
       << fmt_double(r.unsup_weight) << ',' << fmt_double(r.kept_fraction) << ',' << fmt_double(r.avg_dlav) << ','
       << fmt_double(r.admm_gap) << ',' << fmt_double(r.nuclear) << ',' << r.what_rank << ',' << r.degenerate
       << ',' << r.floored << ',';
    if (pl)
        os << fmt_double(pl->precision) << ',' << fmt_double(pl->recall) << ',' << fmt_double(pl->micro_f1) << ','
           << fmt_double(pl->macro_f1) << ',';
    else
        os << ",,,,";
    if (r.dev)
        os << fmt_double(r.dev->micro_f1) << ',' << fmt_double(r.dev->macro_f1) << ','
           << detail::fmt_opt(r.dev->ranking_loss) << ',' << detail::fmt_opt(r.dev->average_precision);
    else
        os << ",,,";
    return os.str();
}

// Binary pseudo-label decisions for the unlabeled pool: argmax for the
// multi-class modes, CAP decisions for multi-label.
inline Eigen::MatrixXd binarize_pseudo_labels(const Eigen::MatrixXd &pl, Mode mode) {
    if (is_multi_label(mode))
        return pl;
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(pl.rows(), pl.cols());
    for (Eigen::Index i = 0; i < pl.rows(); ++i) {
        Eigen::Index arg = 0;
        pl.row(i).maxCoeff(&arg);
        B(i, arg) = 1.0;
    }
    return B;
}

// Angle-variance spread over labeled + unlabeled texts under the live
// encoder, once with the current pseudo-labels and once with the hidden truth.
inline PseudoLabelQuality pseudo_label_quality(const Trainer &tr, const Eigen::MatrixXd &truth) {
    const auto &d = tr.data();
    require(truth.rows() == static_cast<Eigen::Index>(d.unlabeled.size()), "pseudo_label_quality: truth rows");
    const auto K = static_cast<Eigen::Index>(d.vocab.size());
    PseudoLabelQuality q;
    const Eigen::MatrixXd pl = tr.pseudo_labels_all();
    if (truth.rows() > 0) {
        const Eigen::MatrixXd B = binarize_pseudo_labels(pl, tr.config().mode);
        const auto f1 = micro_macro_f1(truth, B);
        q.micro_f1 = f1.micro;
        q.macro_f1 = f1.macro;
        double tp = 0, fp = 0, fn = 0;
        for (Eigen::Index i = 0; i < B.rows(); ++i)
            for (Eigen::Index k = 0; k < K; ++k) {
                const bool t = truth(i, k) > 0.5, p = B(i, k) > 0.5;
                tp += t && p;
                fp += !t && p;
                fn += t && !p;
            }
        q.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
        q.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    }

    const Eigen::MatrixXd Fl = tr.represent(d.labeled), Fu = tr.represent(d.unlabeled);
    Eigen::MatrixXd F(Fl.rows() + Fu.rows(), Fl.cols());
    F << Fl, Fu;
    const Eigen::MatrixXd Yl = label_matrix(d.labeled, K);
    auto spread = [&](const Eigen::MatrixXd &Yu) {
        Eigen::MatrixXd Y(F.rows(), K);
        Y << Yl, Yu;
        for (Eigen::Index i = 0; i < F.rows(); ++i)
            if (F.row(i).norm() == 0.0)
                Y.row(i).setZero();
        const auto sample = compute_angle_stats(F, Y, compute_prototypes(F, Y));
        Eigen::VectorXd var = sample.var.cwiseMax(kVarianceFloor);
        return avg_dlav(var);
    };
    q.avg_dlav_semi = spread(pl);
    q.avg_dlav_oracle = spread(truth);
    return q;
}

inline void save_model(const fs::path &dir, const Trainer &tr) {
    const auto snap = tr.snapshot();
    TensorArchive model;
    store_encoder(model, "encoder.", snap.encoder);
    model.put("head", snap.head);
    model.put("transform.a", snap.transform.a);
    model.put("transform.b", snap.transform.b);
    model.put("cap_gamma", snap.cap_gamma);
    store_encoder(model, "live.encoder.", tr.live().encoder);
    model.put("live.head", tr.live().head);
    model.write_binary((dir / "model.bin").string());

    TensorArchive admm;
    admm.put("W_hat", tr.admm().W_hat);
    admm.put("Theta", tr.admm().Theta);
    Eigen::MatrixXd hyper(1, 2);
    hyper << tr.admm().tau_penalty, tr.admm().lambda3;
    admm.put("hyper", hyper);
    admm.write_binary((dir / "admm.bin").string());

    const auto &st = tr.stats();
    nlohmann::ordered_json sj;
    sj["gamma_ma"] = st.gamma_ma;
    sj["mu"] = detail::to_std(st.mu);
    sj["var"] = detail::to_std(st.var);
    sj["prototypes"] = detail::matrix_to_json(st.c);
    sj["transform_a"] = detail::to_std(tr.transform().a);
    sj["transform_b"] = detail::to_std(tr.transform().b);
    detail::write_json(dir / "stats.json", sj);

    detail::write_json(dir / "config.json", tr.config().to_json());
    detail::write_json(dir / "labels.json", nlohmann::ordered_json(tr.data().vocab.names()));
    detail::write_json(dir / "features.json", feature_space_to_json(tr.data().features));
}

inline ModelSnapshot load_model(const fs::path &dir) {
    for (const char *f : {"model.bin", "config.json", "labels.json", "features.json"})
        if (!fs::exists(dir / f))
            throw MissingArtifactError("model directory '" + dir.string() + "' lacks " + f);
    ModelSnapshot m;
    const auto cfg = TrainConfig::from_json(detail::read_json(dir / "config.json"));
    m.mode = cfg.mode;
    m.vocab = LabelVocab(detail::read_json(dir / "labels.json").get<std::vector<std::string>>());
    m.features = feature_space_from_json(detail::read_json(dir / "features.json"));
    const auto ar = TensorArchive::read_binary((dir / "model.bin").string());
    m.encoder = load_encoder(ar, "encoder.");
    m.head = ar.get("head");
    m.transform.a = ar.get("transform.a");
    m.transform.b = ar.get("transform.b");
    m.cap_gamma = ar.get("cap_gamma");
    return m;
}

// ---------------------------------------------------------------------------
// Commands.

struct TrainRequest {
    TrainConfig config;
    DataPaths data;
    std::string out_dir;
    std::string config_path;
};

struct LoadedData {
    std::vector<Document> labeled, unlabeled, dev;
    LabelVocab vocab;
};

inline LoadedData load_training_data(const DataPaths &p) {
    if (p.labeled.empty())
        throw ArgumentError("a labeled dataset is required (--labeled or --data)");
    LoadedData d;
    d.labeled = detail::load_docs(p.labeled, "labeled");
    d.unlabeled = detail::load_docs(p.unlabeled, "unlabeled");
    d.dev = detail::load_docs(p.dev, "dev");
    for (auto &doc : d.unlabeled)
        doc.labels.clear(); // training never sees labels of unlabeled texts
    d.vocab = LabelVocab::from_documents({&d.labeled, &d.dev});
    d.vocab.validate();
    return d;
}

struct TrainOutcome {
    std::vector<EpochReport> reports;
    std::optional<EvalReport> final_dev;
};

// Trains one model; if `truth` is given (rows aligned with the unlabeled
// file) each epoch row also carries pseudo-label quality.
inline TrainOutcome train_to_dir(const TrainConfig &cfg, const LoadedData &d, const fs::path &out,
                                 const std::optional<Eigen::MatrixXd> &truth = std::nullopt,
                                 std::ostream *diag_csv = nullptr) {
    Trainer tr(cfg, prepare_data(d.labeled, d.unlabeled, d.dev, d.vocab, cfg));
    std::ofstream metrics(out / "metrics.csv", std::ios::binary);
    if (!metrics)
        throw ArgumentError("cannot write '" + (out / "metrics.csv").string() + "'");
    metrics << kMetricsHeader << '\n';
    if (diag_csv)
        *diag_csv << "epoch,avg_dlav_semi,avg_dlav_oracle,pl_micro_f1,pl_macro_f1\n";
    TrainOutcome res;
    res.reports = tr.run([&](const Trainer &t, const EpochReport &r) {
        std::optional<PseudoLabelQuality> q;
        if (truth) {
            q = pseudo_label_quality(t, *truth);
            if (diag_csv)
                *diag_csv << r.epoch << ',' << detail::fmt_double(q->avg_dlav_semi) << ','
                          << detail::fmt_double(q->avg_dlav_oracle) << ',' << detail::fmt_double(q->micro_f1)
                          << ',' << detail::fmt_double(q->macro_f1) << '\n';
        }
        metrics << metrics_row(r, q) << '\n';
        metrics.flush();
    });
    save_model(out, tr);
    if (!d.dev.empty()) {
        res.final_dev = tr.snapshot().evaluate(tr.data().dev);
        detail::write_json(out / "dev_eval.json", res.final_dev->to_json());
    }
    return res;
}

inline RunManifest train_manifest(const TrainRequest &r, const std::string &command) {
    RunManifest m;
    m.command = command;
    m.config_path = r.config_path;
    m.config = r.config.to_json();
    m.seeds = {r.config.seed};
    m.output_dir = r.out_dir;
    m.inputs = {{"data", r.data.to_json()}};
    return m;
}

inline int cmd_train(const TrainRequest &r, bool force, std::ostream &out) {
    const LoadedData d = load_training_data(r.data);
    detail::prepare_output_dir(r.out_dir, force);
    detail::write_json(fs::path(r.out_dir) / "manifest.json", train_manifest(r, "train").to_json());
    const auto res = train_to_dir(r.config, d, r.out_dir);
    out << "trained " << res.reports.size() << " epochs (" << to_string(r.config.mode) << ") -> " << r.out_dir
        << '\n';
    if (res.final_dev)
        out << "dev micro-F1 " << detail::fmt_double(res.final_dev->micro_f1) << ", macro-F1 "
            << detail::fmt_double(res.final_dev->macro_f1) << '\n';
    return 0;
}

struct EvaluateRequest {
    std::string model_dir;
    std::string data;
    std::string out_dir; // optional
};

inline int cmd_evaluate(const EvaluateRequest &r, bool force, std::ostream &out) {
    if (r.data.empty() || !fs::exists(r.data))
        throw ArgumentError("evaluation dataset '" + r.data + "' does not exist");
    if (!fs::is_directory(r.model_dir))
        throw MissingArtifactError("model directory '" + r.model_dir + "' does not exist");
    const auto model = load_model(r.model_dir);
    const auto docs = load_jsonl(r.data).docs;
    const auto report = model.evaluate(make_examples(docs, model.features, model.vocab));
    if (!r.out_dir.empty()) {
        detail::prepare_output_dir(r.out_dir, force);
        RunManifest m;
        m.command = "evaluate";
        m.config = detail::read_json(fs::path(r.model_dir) / "config.json");
        m.output_dir = r.out_dir;
        m.inputs = {{"model_dir", r.model_dir}, {"data", r.data}};
        detail::write_json(fs::path(r.out_dir) / "manifest.json", m.to_json());
        detail::write_text(fs::path(r.out_dir) / "metrics.csv", report.to_csv());
        detail::write_json(fs::path(r.out_dir) / "eval.json", report.to_json());
    }
    out << report.to_json().dump(2) << '\n';
    return 0;
}

enum class Ablation { Full, NoRegularization, NoBdd, NoUnlabeled, NoAll };

inline const std::vector<Ablation> &all_ablations() {
    static const std::vector<Ablation> v{Ablation::Full, Ablation::NoRegularization, Ablation::NoBdd,
                                         Ablation::NoUnlabeled, Ablation::NoAll};
    return v;
}

inline std::string to_string(Ablation a) {
    switch (a) {
    case Ablation::Full:
        return "full";
    case Ablation::NoRegularization:
        return "-regularization";
    case Ablation::NoBdd:
        return "-bdd";
    case Ablation::NoUnlabeled:
        return "-unlabeled";
    case Ablation::NoAll:
        return "-all";
    }
    return "?";
}

// Strips one component; regularization means the entropy term for the
// multi-class modes and the nuclear-norm term for multi-label.
inline TrainConfig apply_ablation(TrainConfig c, Ablation a) {
    const bool strip_reg = a == Ablation::NoRegularization || a == Ablation::NoAll;
    const bool strip_bdd = a == Ablation::NoBdd || a == Ablation::NoAll;
    const bool strip_unl = a == Ablation::NoUnlabeled || a == Ablation::NoAll;
    if (strip_reg) {
        if (is_multi_label(c.mode))
            c.lambda3 = 0.0;
        else
            c.lambda2 = 0.0;
    }
    if (strip_bdd)
        c.use_bdd = false;
    if (strip_unl)
        c.lambda1 = 0.0;
    return c;
}

struct AblateRequest {
    TrainConfig config;
    DataPaths data;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::string out_dir;
    std::string config_path;
};

inline int cmd_ablate(const AblateRequest &r, bool force, std::ostream &out) {
    if (r.seeds.empty())
        throw ArgumentError("ablate needs at least one seed");
    const LoadedData d = load_training_data(r.data);
    if (d.dev.empty())
        throw ArgumentError("ablate needs a dev set (--dev or --data)");
    detail::prepare_output_dir(r.out_dir, force);
    RunManifest m;
    m.command = "ablate";
    m.config_path = r.config_path;
    m.config = r.config.to_json();
    m.seeds = r.seeds;
    m.output_dir = r.out_dir;
    m.inputs = {{"data", r.data.to_json()}};
    const fs::path root(r.out_dir);
    detail::write_json(root / "manifest.json", m.to_json());

    const char *cols = "dev_micro_f1,dev_macro_f1,dev_ranking_loss,dev_average_precision";
    std::ofstream per_seed(root / "metrics.csv", std::ios::binary);
    per_seed << "variant,seed," << cols << '\n';
    std::ostringstream table;
    table << "variant,seeds," << cols << '\n';
    for (auto a : all_ablations()) {
        double sums[4] = {0, 0, 0, 0};
        std::size_t counts[4] = {0, 0, 0, 0};
        for (auto seed : r.seeds) {
            TrainConfig c = apply_ablation(r.config, a);
            c.seed = seed;
            const fs::path dir = root / "runs" / (to_string(a) + "_seed" + std::to_string(seed));
            fs::create_directories(dir);
            const auto res = train_to_dir(c, d, dir);
            const auto &e = *res.final_dev;
            const std::optional<double> vals[4] = {e.micro_f1, e.macro_f1, e.ranking_loss, e.average_precision};
            per_seed << to_string(a) << ',' << seed;
            for (int j = 0; j < 4; ++j) {
                per_seed << ',' << detail::fmt_opt(vals[j]);
                if (vals[j]) {
                    sums[j] += *vals[j];
                    ++counts[j];
                }
            }
            per_seed << '\n';
        }
        table << to_string(a) << ',' << r.seeds.size();
        for (int j = 0; j < 4; ++j)
            table << ',' << (counts[j] ? detail::fmt_double(sums[j] / static_cast<double>(counts[j])) : "");
        table << '\n';
    }
    detail::write_text(root / "ablation.csv", table.str());
    out << table.str();
    return 0;
}

struct DiagnoseRequest {
    TrainConfig config;
    DataPaths data;
    std::string truth; // hidden ground truth of the unlabeled texts
    std::string out_dir;
    std::string config_path;
};

// Ground-truth rows aligned with the unlabeled file order; every unlabeled id
// must be present in the truth file.
inline Eigen::MatrixXd load_truth(const std::string &path, const std::vector<Document> &unlabeled,
                                  const LabelVocab &vocab) {
    if (path.empty() || !fs::exists(path))
        throw MissingArtifactError("ground-truth file '" + path + "' not found; diagnostics need oracle labels");
    std::map<std::string, const Document *> by_id;
    const auto truth = load_jsonl(path).docs;
    for (const auto &t : truth)
        by_id[t.id] = &t;
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(unlabeled.size()),
                                              static_cast<Eigen::Index>(vocab.size()));
    for (std::size_t i = 0; i < unlabeled.size(); ++i) {
        auto it = by_id.find(unlabeled[i].id);
        if (it == by_id.end())
            throw MissingArtifactError("ground truth lacks unlabeled text '" + unlabeled[i].id + "'");
        for (const auto &l : it->second->labels)
            Y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(vocab.index_of(l))) = 1.0;
    }
    return Y;
}

inline int cmd_diagnose(const DiagnoseRequest &r, bool force, std::ostream &out) {
    const LoadedData d = load_training_data(r.data);
    const Eigen::MatrixXd truth = load_truth(r.truth, d.unlabeled, d.vocab);
    detail::prepare_output_dir(r.out_dir, force);
    TrainRequest tr{r.config, r.data, r.out_dir, r.config_path};
    auto m = train_manifest(tr, "diagnose");
    m.inputs["truth"] = r.truth;
    const fs::path root(r.out_dir);
    detail::write_json(root / "manifest.json", m.to_json());
    std::ofstream diag(root / "diagnostics.csv", std::ios::binary);
    train_to_dir(r.config, d, root, truth, &diag);
    diag.close();
    out << detail::read_text(root / "diagnostics.csv");
    return 0;
}

struct SynthRequest {
    SynthSpec spec;
    std::string out_dir;
};

inline int cmd_synth(const SynthRequest &r, bool force, std::ostream &out) {
    const auto corpus = synth_corpus(r.spec);
    detail::prepare_output_dir(r.out_dir, force);
    const fs::path root(r.out_dir);
    RunManifest m;
    m.command = "synth";
    m.config = synth_spec_to_json(r.spec);
    m.seeds = {r.spec.split.seed};
    m.output_dir = r.out_dir;
    detail::write_json(root / "manifest.json", m.to_json());
    save_jsonl((root / "labeled.jsonl").string(), corpus.labeled);
    save_jsonl((root / "unlabeled.jsonl").string(), corpus.unlabeled, false);
    save_jsonl((root / "dev.jsonl").string(), corpus.dev);
    save_jsonl((root / "test.jsonl").string(), corpus.test);
    fs::create_directories(root / "oracle");
    save_jsonl((root / "oracle" / "unlabeled_truth.jsonl").string(), corpus.unlabeled);
    out << "wrote " << corpus.labeled.size() << " labeled, " << corpus.unlabeled.size() << " unlabeled, "
        << corpus.dev.size() << " dev, " << corpus.test.size() << " test texts to " << r.out_dir << '\n';
    return 0;
}

// Replays the resolved request stored in a manifest into `out_dir`.
inline int cmd_rerun(const std::string &manifest_path, const std::string &out_dir, bool force, std::ostream &out) {
    const auto m = RunManifest::from_json(detail::read_json(manifest_path));
    if (m.version != kVersion)
        out << "note: manifest written by version " << m.version << ", running " << kVersion << '\n';
    auto data = [&] { return DataPaths::from_json(m.inputs.at("data")); };
    if (m.command == "synth") {
        return cmd_synth({synth_spec_from_json(m.config), out_dir}, force, out);
    } else if (m.command == "train") {
        return cmd_train({TrainConfig::from_json(m.config), data(), out_dir, m.config_path}, force, out);
    } else if (m.command == "ablate") {
        return cmd_ablate({TrainConfig::from_json(m.config), data(), m.seeds, out_dir, m.config_path}, force, out);
    } else if (m.command == "diagnose") {
        return cmd_diagnose({TrainConfig::from_json(m.config), data(), m.inputs.at("truth").get<std::string>(),
                             out_dir, m.config_path},
                            force, out);
    } else if (m.command == "evaluate") {
        return cmd_evaluate({m.inputs.at("model_dir").get<std::string>(), m.inputs.at("data").get<std::string>(),
                             out_dir},
                            force, out);
    }
    throw ArgumentError("manifest names unknown command '" + m.command + "'");
}

// ---------------------------------------------------------------------------
// Argument parsing.

struct ConfigArgs {
    std::string mode;
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    std::optional<double> lambda1, lambda2, lambda3;
    bool no_bdd = false;

    void attach(CLI::App *app) {
        app->add_option("--mode", mode, "mcc-s, mcc-f or mlc (default: config file, else mcc-s)");
        app->add_option("--config", config_path, "JSON config; keys are TrainConfig fields");
        app->add_option("--set", sets, "override a config field, KEY=JSON_VALUE (repeatable)");
        app->add_option("--seed", seed, "training seed");
        app->add_option("--epochs", epochs, "self-training epochs");
        app->add_option("--lambda1", lambda1, "unlabeled-loss weight");
        app->add_option("--lambda2", lambda2, "entropy weight (multi-class)");
        app->add_option("--lambda3", lambda3, "nuclear-norm weight (multi-label)");
        app->add_flag("--no-bdd", no_bdd, "use the identity angle transform");
    }

    // Mode defaults, then the config file, then command-line overrides.
    TrainConfig resolve() const {
        nlohmann::json file = nlohmann::json::object();
        if (!config_path.empty()) {
            if (!fs::exists(config_path))
                throw ArgumentError("config file '" + config_path + "' does not exist");
            file = detail::read_json(config_path);
        }
        std::string m = mode;
        if (m.empty() && file.is_object() && file.contains("mode") && file["mode"].is_string())
            m = file["mode"].get<std::string>();
        const Mode md = m.empty() ? Mode::MccS : parse_mode(m);
        TrainConfig c = TrainConfig::from_json(file, TrainConfig::defaults(md));
        c.mode = md;
        nlohmann::json over = nlohmann::json::object();
        for (const auto &kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos || eq == 0)
                throw ArgumentError("--set expects KEY=VALUE, got '" + kv + "'");
            const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
            if (key == "mode")
                throw ArgumentError("use --mode to select the mode");
            try {
                over[key] = nlohmann::json::parse(val);
            } catch (const nlohmann::json::parse_error &) {
                over[key] = val;
            }
        }
        if (seed)
            over["seed"] = *seed;
        if (epochs)
            over["epochs"] = *epochs;
        if (lambda1)
            over["lambda1"] = *lambda1;
        if (lambda2)
            over["lambda2"] = *lambda2;
        if (lambda3)
            over["lambda3"] = *lambda3;
        if (no_bdd)
            over["use_bdd"] = false;
        return TrainConfig::from_json(over, c);
    }
};

struct DataArgs {
    std::string data_dir, labeled, unlabeled, dev;

    void attach(CLI::App *app) {
        app->add_option("--data", data_dir, "directory with labeled.jsonl, unlabeled.jsonl, dev.jsonl");
        app->add_option("--labeled", labeled, "labeled JSONL");
        app->add_option("--unlabeled", unlabeled, "unlabeled JSONL");
        app->add_option("--dev", dev, "dev JSONL");
    }

    DataPaths resolve() const {
        DataPaths p{labeled, unlabeled, dev};
        if (!data_dir.empty()) {
            if (!fs::is_directory(data_dir))
                throw ArgumentError("data directory '" + data_dir + "' does not exist");
            const fs::path root(data_dir);
            if (p.labeled.empty())
                p.labeled = (root / "labeled.jsonl").string();
            if (p.unlabeled.empty() && fs::exists(root / "unlabeled.jsonl"))
                p.unlabeled = (root / "unlabeled.jsonl").string();
            if (p.dev.empty() && fs::exists(root / "dev.jsonl"))
                p.dev = (root / "dev.jsonl").string();
        }
        return p;
    }
};

inline std::vector<std::uint64_t> parse_seed_list(const std::string &s) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            seeds.push_back(std::stoull(item, &used));
            if (used != item.size())
                throw std::invalid_argument(item);
        } catch (const std::exception &) {
            throw ArgumentError("invalid seed '" + item + "' in --seeds");
        }
    }
    if (seeds.empty())
        throw ArgumentError("--seeds is empty");
    return seeds;
}

// Entry point shared by the executable and the tests. Exit codes: 0 success,
// 2 usage/config error, 3 missing artifact, 4 numerical failure, 1 other.
inline int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout, std::ostream &err = std::cerr) {
    CLI::App app{"Semi-supervised text classification with balanced angular representation distributions"};
    app.set_version_flag("--version", std::string(kVersion));
    app.require_subcommand(1);
    bool force = false;

    auto *synth = app.add_subcommand("synth", "generate a synthetic corpus with per-label dispersion");
    SynthSpec sspec;
    std::string synth_out, synth_preset, dispersion, multi_label;
    std::optional<std::size_t> k, vocab, corpus_size, n_lab, n_unl, n_dev;
    std::optional<std::uint64_t> synth_seed;
    std::optional<double> avg_labels;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--preset", synth_preset, "JSON file with generator settings");
    synth->add_option("--k", k, "number of labels");
    synth->add_option("--vocab", vocab, "vocabulary size");
    synth->add_option("--dispersion", dispersion, "comma-separated per-label dispersion");
    synth->add_option("--size", corpus_size, "total corpus size");
    synth->add_option("--n-labeled", n_lab, "labeled texts");
    synth->add_option("--n-unlabeled", n_unl, "unlabeled texts");
    synth->add_option("--n-dev", n_dev, "dev texts");
    synth->add_option("--multi-label", multi_label, "true or false");
    synth->add_option("--avg-labels", avg_labels, "mean labels per text (multi-label)");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_flag("--force", force, "write into a non-empty directory");

    auto *train = app.add_subcommand("train", "train a model and write a checkpoint directory");
    ConfigArgs train_cfg;
    DataArgs train_data;
    std::string train_out;
    train_cfg.attach(train);
    train_data.attach(train);
    train->add_option("--out", train_out, "checkpoint directory")->required();
    train->add_flag("--force", force, "write into a non-empty directory");

    auto *evaluate = app.add_subcommand("evaluate", "score a labeled JSONL file with a trained model");
    EvaluateRequest eval_req;
    evaluate->add_option("--model", eval_req.model_dir, "checkpoint directory")->required();
    evaluate->add_option("--data", eval_req.data, "labeled JSONL to evaluate")->required();
    evaluate->add_option("--out", eval_req.out_dir, "optional output directory");
    evaluate->add_flag("--force", force, "write into a non-empty directory");

    auto *ablate = app.add_subcommand("ablate", "run the five ablation variants over several seeds");
    ConfigArgs ablate_cfg;
    DataArgs ablate_data;
    std::string ablate_out, seeds = "1,2,3,4,5";
    ablate_cfg.attach(ablate);
    ablate_data.attach(ablate);
    ablate->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
    ablate->add_option("--out", ablate_out, "output directory")->required();
    ablate->add_flag("--force", force, "write into a non-empty directory");

    auto *diagnose = app.add_subcommand("diagnose", "train while tracking pseudo-label quality against ground truth");
    ConfigArgs diag_cfg;
    DataArgs diag_data;
    std::string diag_out, truth;
    diag_cfg.attach(diagnose);
    diag_data.attach(diagnose);
    diagnose->add_option("--truth", truth, "ground truth for the unlabeled texts (default: DATA/oracle/unlabeled_truth.jsonl)");
    diagnose->add_option("--out", diag_out, "output directory")->required();
    diagnose->add_flag("--force", force, "write into a non-empty directory");

    auto *rerun = app.add_subcommand("rerun", "repeat a run from its manifest");
    std::string manifest, rerun_out;
    rerun->add_option("--manifest", manifest, "manifest.json of an earlier run")->required();
    rerun->add_option("--out", rerun_out, "output directory for the repeated run")->required();
    rerun->add_flag("--force", force, "write into a non-empty directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) {
            SynthSpec s;
            s.dispersion = {0.1, 0.2, 0.4, 0.8};
            if (!synth_preset.empty()) {
                if (!fs::exists(synth_preset))
                    throw ArgumentError("preset '" + synth_preset + "' does not exist");
                s = synth_spec_from_json(detail::read_json(synth_preset), s);
            }
            if (k)
                s.num_labels = *k;
            if (vocab)
                s.vocab_size = *vocab;
            if (corpus_size)
                s.corpus_size = *corpus_size;
            if (n_lab)
                s.split.n_labeled = *n_lab;
            if (n_unl)
                s.split.n_unlabeled = *n_unl;
            if (n_dev)
                s.split.n_dev = *n_dev;
            if (synth_seed)
                s.split.seed = *synth_seed;
            if (avg_labels)
                s.avg_labels = *avg_labels;
            if (!multi_label.empty()) {
                if (multi_label != "true" && multi_label != "false")
                    throw ArgumentError("--multi-label expects true or false");
                s.multi_label = multi_label == "true";
            }
            if (!dispersion.empty()) {
                s.dispersion.clear();
                std::stringstream ss(dispersion);
                std::string item;
                while (std::getline(ss, item, ',')) {
                    try {
                        s.dispersion.push_back(std::stod(item));
                    } catch (const std::exception &) {
                        throw ArgumentError("invalid dispersion value '" + item + "'");
                    }
                }
            } else if (k && s.dispersion.size() != s.num_labels) {
                // Geometric dispersion from 0.1 to 0.8 for a custom K.
                s.dispersion.clear();
                const auto steps = static_cast<double>(std::max<std::size_t>(1, s.num_labels - 1));
                for (std::size_t j = 0; j < s.num_labels; ++j)
                    s.dispersion.push_back(0.1 * std::pow(8.0, static_cast<double>(j) / steps));
            }
            return cmd_synth({s, synth_out}, force, out);
        }
        if (train->parsed())
            return cmd_train({train_cfg.resolve(), train_data.resolve(), train_out, train_cfg.config_path}, force,
                             out);
        if (evaluate->parsed())
            return cmd_evaluate(eval_req, force, out);
        if (ablate->parsed())
            return cmd_ablate({ablate_cfg.resolve(), ablate_data.resolve(), parse_seed_list(seeds), ablate_out,
                               ablate_cfg.config_path},
                              force, out);
        if (diagnose->parsed()) {
            std::string t = truth;
            if (t.empty() && !diag_data.data_dir.empty())
                t = (fs::path(diag_data.data_dir) / "oracle" / "unlabeled_truth.jsonl").string();
            return cmd_diagnose({diag_cfg.resolve(), diag_data.resolve(), t, diag_out, diag_cfg.config_path}, force,
                                out);
        }
        if (rerun->parsed())
            return cmd_rerun(manifest, rerun_out, force, out);
    } catch (const ArgumentError &e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError &e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const MissingArtifactError &e) {
        err << "error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError &e) {
        err << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception &e) {
        err << "internal error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace bdd
