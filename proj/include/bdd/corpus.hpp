#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace bdd {

struct Document {
    std::string id;
    std::string text;
    std::vector<std::string> labels; // empty for unlabeled texts

    bool labeled() const { return !labels.empty(); }
    bool operator==(const Document &) const = default;
};

// Ordered label names. Duplicates are rejected on construction; K >= 2 is
// checked by validate() because an empty file legitimately yields K = 0.
class LabelVocab {
  public:
    LabelVocab() = default;
    explicit LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
        for (std::size_t k = 0; k < names_.size(); ++k) {
            if (!index_.emplace(names_[k], k).second)
                throw ArgumentError("duplicate label name '" + names_[k] + "'");
        }
    }

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string> &names() const { return names_; }
    const std::string &name(std::size_t k) const { return names_.at(k); }

    std::size_t index_of(const std::string &name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw ArgumentError("unknown label '" + name + "'");
        return it->second;
    }
    bool contains(const std::string &name) const { return index_.count(name) != 0; }

    void validate() const {
        if (names_.size() < 2)
            throw ArgumentError("label vocabulary needs at least 2 labels, got " +
                                std::to_string(names_.size()));
    }

    // Sorted union of the label names seen in the given document sets.
    static LabelVocab from_documents(std::initializer_list<const std::vector<Document> *> sets) {
        std::set<std::string> seen;
        for (const auto *docs : sets)
            for (const auto &d : *docs)
                seen.insert(d.labels.begin(), d.labels.end());
        return LabelVocab({seen.begin(), seen.end()});
    }

  private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Sparse feature vector, entries sorted by column.
struct SparseVector {
    std::size_t dim = 0;
    std::vector<std::pair<std::size_t, double>> entries;
    bool degenerate = false; // no known tokens: zero vector, no direction

    double norm() const {
        double s = 0.0;
        for (const auto &[_, v] : entries)
            s += v * v;
        return std::sqrt(s);
    }
};

struct FeatureSpace {
    std::map<std::string, std::size_t> token_index;
    std::vector<double> idf;

    std::size_t size() const { return idf.size(); }
};

struct LoadedCorpus {
    std::vector<Document> docs;
    LabelVocab vocab;
};

inline std::vector<std::string> tokenize(const std::string &text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty())
                tokens.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty())
        tokens.push_back(std::move(cur));
    return tokens;
}

inline std::vector<Document> parse_jsonl(std::istream &in) {
    std::vector<Document> docs;
    std::set<std::string> ids;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }))
            continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error &e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object())
            throw ParseError(lineno, "expected a JSON object");
        Document doc;
        auto text = obj.find("text");
        if (text == obj.end() || !text->is_string())
            throw ParseError(lineno, "field 'text' must be a string");
        doc.text = text->get<std::string>();
        if (auto id = obj.find("id"); id != obj.end() && !id->is_null()) {
            if (!id->is_string())
                throw ParseError(lineno, "field 'id' must be a string");
            doc.id = id->get<std::string>();
        } else {
            doc.id = "doc" + std::to_string(lineno);
        }
        if (auto labels = obj.find("labels"); labels != obj.end() && !labels->is_null()) {
            if (!labels->is_array())
                throw ParseError(lineno, "field 'labels' must be an array of strings");
            for (const auto &l : *labels) {
                if (!l.is_string())
                    throw ParseError(lineno, "field 'labels' must be an array of strings");
                doc.labels.push_back(l.get<std::string>());
            }
        }
        if (!ids.insert(doc.id).second)
            throw ParseError(lineno, "duplicate document id '" + doc.id + "'");
        docs.push_back(std::move(doc));
    }
    return docs;
}

inline LoadedCorpus load_jsonl(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw MissingArtifactError("cannot open '" + path + "'");
    LoadedCorpus out;
    out.docs = parse_jsonl(in);
    out.vocab = LabelVocab::from_documents({&out.docs});
    return out;
}

inline void write_jsonl(std::ostream &out, const std::vector<Document> &docs, bool with_labels = true) {
    for (const auto &d : docs) {
        nlohmann::ordered_json obj;
        obj["id"] = d.id;
        obj["text"] = d.text;
        if (with_labels && !d.labels.empty())
            obj["labels"] = d.labels;
        out << obj.dump() << '\n';
    }
}

inline void save_jsonl(const std::string &path, const std::vector<Document> &docs, bool with_labels = true) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw ArgumentError("cannot write '" + path + "'");
    write_jsonl(out, docs, with_labels);
}

// Smoothed tf-idf vocabulary: idf_t = ln((1 + N) / (1 + df_t)) + 1.
inline FeatureSpace build_features(const std::vector<Document> &docs, std::size_t min_df,
                                   std::size_t max_features) {
    if (docs.empty())
        throw ArgumentError("build_features: no documents");
    std::map<std::string, std::size_t> df;
    for (const auto &d : docs) {
        auto toks = tokenize(d.text);
        std::sort(toks.begin(), toks.end());
        toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
        for (auto &t : toks)
            ++df[t];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto &[tok, count] : df)
        if (count >= min_df)
            kept.emplace_back(tok, count);
    if (kept.empty())
        throw ArgumentError("build_features: every token was filtered out (empty feature space)");
    // Highest document frequency first, lexical order among ties.
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto &a, const auto &b) { return a.second > b.second; });
    if (max_features > 0 && kept.size() > max_features)
        kept.resize(max_features);
    std::sort(kept.begin(), kept.end());

    FeatureSpace fs;
    const double n = static_cast<double>(docs.size());
    for (const auto &[tok, count] : kept) {
        fs.token_index.emplace(tok, fs.idf.size());
        fs.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
    }
    return fs;
}

inline SparseVector featurize(const Document &doc, const FeatureSpace &fs) {
    require(fs.size() > 0, "featurize: empty feature space");
    std::map<std::size_t, double> tf;
    for (const auto &t : tokenize(doc.text)) {
        auto it = fs.token_index.find(t);
        if (it != fs.token_index.end())
            tf[it->second] += 1.0;
    }
    SparseVector x;
    x.dim = fs.size();
    for (const auto &[col, count] : tf)
        x.entries.emplace_back(col, count * fs.idf[col]);
    const double nrm = x.norm();
    if (nrm == 0.0) {
        x.entries.clear();
        x.degenerate = true;
        return x;
    }
    for (auto &[_, v] : x.entries)
        v /= nrm;
    return x;
}

inline nlohmann::json feature_space_to_json(const FeatureSpace &fs) {
    std::vector<std::string> by_col(fs.size());
    for (const auto &[tok, col] : fs.token_index)
        by_col[col] = tok;
    return {{"tokens", by_col}, {"idf", fs.idf}};
}

inline FeatureSpace feature_space_from_json(const nlohmann::json &j) {
    FeatureSpace fs;
    auto tokens = j.at("tokens").get<std::vector<std::string>>();
    fs.idf = j.at("idf").get<std::vector<double>>();
    if (tokens.size() != fs.idf.size())
        throw ArgumentError("feature space: token/idf length mismatch");
    for (std::size_t i = 0; i < tokens.size(); ++i)
        fs.token_index.emplace(tokens[i], i);
    return fs;
}

// ---------------------------------------------------------------------------
// Synthetic corpora with controllable per-label dispersion.

// Upper bound on a document's noise rate. The rate range grows like
// 2 * dispersion for small values and saturates below this ceiling; a rate
// near 1 leaves only background tokens and the angular spread shrinks again.
inline constexpr double kNoiseCeiling = 0.8;

struct SplitSpec {
    std::size_t n_labeled = 40;
    std::size_t n_unlabeled = 2000;
    std::size_t n_dev = 400;
    std::uint64_t seed = 1;
};

struct SynthSpec {
    std::size_t num_labels = 4;
    std::size_t vocab_size = 600;
    std::vector<double> dispersion; // one per label, > 0
    std::size_t corpus_size = 3240;  // labeled + unlabeled + dev + test
    SplitSpec split;
    bool multi_label = false;
    double avg_labels = 1.5;          // multi-label only, in [1, K]
    std::size_t topic_size = 40;      // tokens in each label's profile
    std::size_t doc_len_min = 20;
    std::size_t doc_len_max = 40;
};

inline nlohmann::ordered_json synth_spec_to_json(const SynthSpec &s) {
    return {{"num_labels", s.num_labels},   {"vocab_size", s.vocab_size},
            {"dispersion", s.dispersion},   {"corpus_size", s.corpus_size},
            {"n_labeled", s.split.n_labeled}, {"n_unlabeled", s.split.n_unlabeled},
            {"n_dev", s.split.n_dev},       {"seed", s.split.seed},
            {"multi_label", s.multi_label}, {"avg_labels", s.avg_labels},
            {"topic_size", s.topic_size},   {"doc_len_min", s.doc_len_min},
            {"doc_len_max", s.doc_len_max}};
}

// Overlays the keys of `j` onto `base`; unknown keys are errors.
inline SynthSpec synth_spec_from_json(const nlohmann::json &j, SynthSpec base = SynthSpec{}) {
    if (!j.is_object())
        throw ArgumentError("synth spec: expected a JSON object");
    SynthSpec s = std::move(base);
    for (const auto &[key, v] : j.items()) {
        try {
            if (key == "num_labels")
                s.num_labels = v.get<std::size_t>();
            else if (key == "vocab_size")
                s.vocab_size = v.get<std::size_t>();
            else if (key == "dispersion")
                s.dispersion = v.get<std::vector<double>>();
            else if (key == "corpus_size")
                s.corpus_size = v.get<std::size_t>();
            else if (key == "n_labeled")
                s.split.n_labeled = v.get<std::size_t>();
            else if (key == "n_unlabeled")
                s.split.n_unlabeled = v.get<std::size_t>();
            else if (key == "n_dev")
                s.split.n_dev = v.get<std::size_t>();
            else if (key == "seed")
                s.split.seed = v.get<std::uint64_t>();
            else if (key == "multi_label")
                s.multi_label = v.get<bool>();
            else if (key == "avg_labels")
                s.avg_labels = v.get<double>();
            else if (key == "topic_size")
                s.topic_size = v.get<std::size_t>();
            else if (key == "doc_len_min")
                s.doc_len_min = v.get<std::size_t>();
            else if (key == "doc_len_max")
                s.doc_len_max = v.get<std::size_t>();
            else
                throw ArgumentError("synth spec: unknown key '" + key + "'");
        } catch (const nlohmann::json::exception &) {
            throw ArgumentError("synth spec: key '" + key + "' has the wrong type");
        }
    }
    return s;
}

struct SynthCorpus {
    std::vector<Document> labeled;
    std::vector<Document> unlabeled; // carries ground-truth labels; strip before training
    std::vector<Document> dev;
    std::vector<Document> test;
    LabelVocab vocab;
};

namespace detail {

inline std::string pad_number(std::size_t v, int width) {
    std::string s = std::to_string(v);
    if (static_cast<int>(s.size()) < width)
        s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
    return s;
}

} // namespace detail

// Each label owns a disjoint block of topic tokens. A document of label k
// draws every token from its label profile, or from a Zipfian background with
// a per-document noise rate uniform in [0, r_k] with
// r_k = c (1 - exp(-2 dispersion_k / c)) and c = kNoiseCeiling, so angular
// spread around the label direction grows with dispersion_k.
inline SynthCorpus synth_corpus(const SynthSpec &spec) {
    const std::size_t K = spec.num_labels;
    if (K < 2)
        throw ArgumentError("synth: need at least 2 labels");
    if (spec.dispersion.size() != K)
        throw ArgumentError("synth: dispersion list has " + std::to_string(spec.dispersion.size()) +
                            " entries, expected " + std::to_string(K));
    for (double d : spec.dispersion)
        if (!(d > 0.0) || !std::isfinite(d))
            throw ArgumentError("synth: dispersion values must be positive");
    if (spec.topic_size == 0 || K * spec.topic_size > spec.vocab_size)
        throw ArgumentError("synth: vocab_size must hold K * topic_size topic tokens");
    if (spec.doc_len_min == 0 || spec.doc_len_min > spec.doc_len_max)
        throw ArgumentError("synth: invalid document length range");
    const auto &sp = spec.split;
    if (sp.n_labeled + sp.n_unlabeled + sp.n_dev > spec.corpus_size)
        throw ArgumentError("synth: split sizes exceed corpus size");
    if (!spec.multi_label && sp.n_labeled < K)
        throw ArgumentError("synth: n_labeled must be at least K for multi-class corpora");
    if (spec.multi_label && (spec.avg_labels < 1.0 || spec.avg_labels > static_cast<double>(K)))
        throw ArgumentError("synth: avg_labels must lie in [1, K]");

    Rng rng(mix_seed(sp.seed, 0x5e17));

    std::vector<std::string> label_names(K);
    for (std::size_t k = 0; k < K; ++k)
        label_names[k] = "label" + std::to_string(k);

    std::vector<std::string> token_names(spec.vocab_size);
    for (std::size_t t = 0; t < spec.vocab_size; ++t)
        token_names[t] = "w" + detail::pad_number(t, 4);

    // Background: Zipf(1) over a random permutation of the whole vocabulary.
    std::vector<std::size_t> perm(spec.vocab_size);
    for (std::size_t t = 0; t < perm.size(); ++t)
        perm[t] = t;
    rng.shuffle(perm);
    std::vector<double> background(spec.vocab_size);
    for (std::size_t r = 0; r < perm.size(); ++r)
        background[perm[r]] = 1.0 / static_cast<double>(r + 1);

    // Topic profile: mild Zipf within the label's token block.
    std::vector<double> topic(spec.topic_size);
    for (std::size_t r = 0; r < topic.size(); ++r)
        topic[r] = 1.0 / std::pow(static_cast<double>(r + 1), 0.5);

    const double extra_rate =
        K > 1 ? (spec.avg_labels - 1.0) / static_cast<double>(K - 1) : 0.0;

    std::vector<Document> all;
    std::vector<std::size_t> first_label;
    all.reserve(spec.corpus_size);
    for (std::size_t i = 0; i < spec.corpus_size; ++i) {
        std::vector<std::size_t> labels;
        const std::size_t first = rng.below(K);
        labels.push_back(first);
        first_label.push_back(first);
        if (spec.multi_label) {
            for (std::size_t k = 0; k < K; ++k)
                if (k != first && rng.bernoulli(extra_rate))
                    labels.push_back(k);
            std::sort(labels.begin(), labels.end());
        }
        double noise = 0.0;
        for (auto k : labels)
            noise += spec.dispersion[k];
        noise /= static_cast<double>(labels.size());
        noise = kNoiseCeiling * (1.0 - std::exp(-2.0 * noise / kNoiseCeiling)) * rng.uniform();

        const std::size_t len =
            spec.doc_len_min + rng.below(spec.doc_len_max - spec.doc_len_min + 1);
        std::string text;
        for (std::size_t j = 0; j < len; ++j) {
            std::size_t tok;
            if (rng.bernoulli(noise)) {
                tok = rng.categorical(background);
            } else {
                const std::size_t k = labels[rng.below(labels.size())];
                tok = k * spec.topic_size + rng.categorical(topic);
            }
            if (j)
                text.push_back(' ');
            text += token_names[tok];
        }
        Document d;
        d.id = "d" + detail::pad_number(i, 6);
        d.text = std::move(text);
        for (auto k : labels)
            d.labels.push_back(label_names[k]);
        all.push_back(std::move(d));
    }

    std::vector<std::size_t> order(all.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    Rng split_rng(mix_seed(sp.seed, 0x5b17));
    split_rng.shuffle(order);

    // Multi-class labeled sets are stratified (n_labeled / K per class, the
    // remainder to the lowest label indices); the rest keeps shuffled order.
    if (!spec.multi_label) {
        std::vector<std::size_t> quota(K, sp.n_labeled / K);
        for (std::size_t k = 0; k < sp.n_labeled % K; ++k)
            ++quota[k];
        std::vector<std::size_t> head, tail;
        for (auto i : order) {
            auto &q = quota[first_label[i]];
            if (q > 0) {
                --q;
                head.push_back(i);
            } else {
                tail.push_back(i);
            }
        }
        if (head.size() != sp.n_labeled)
            throw ArgumentError("synth: corpus too small to stratify the labeled split");
        order = std::move(head);
        order.insert(order.end(), tail.begin(), tail.end());
    }

    SynthCorpus out;
    std::size_t pos = 0;
    auto take = [&](std::size_t n, std::vector<Document> &dst) {
        for (std::size_t j = 0; j < n; ++j)
            dst.push_back(all[order[pos++]]);
    };
    take(sp.n_labeled, out.labeled);
    take(sp.n_unlabeled, out.unlabeled);
    take(sp.n_dev, out.dev);
    take(spec.corpus_size - pos, out.test);
    out.vocab = LabelVocab(label_names);
    return out;
}

// Dense label matrix rows (multi-hot) for documents, one row per document.
inline std::vector<std::vector<double>> label_rows(const std::vector<Document> &docs,
                                                   const LabelVocab &vocab) {
    std::vector<std::vector<double>> rows;
    rows.reserve(docs.size());
    for (const auto &d : docs) {
        std::vector<double> row(vocab.size(), 0.0);
        for (const auto &l : d.labels)
            row[vocab.index_of(l)] = 1.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace bdd
