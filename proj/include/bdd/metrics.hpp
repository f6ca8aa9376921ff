#pragma once

#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "error.hpp"

namespace bdd {

class UndefinedMetricError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct F1Scores {
    double micro = 0.0;
    double macro = 0.0;
    std::vector<ClassScores> per_class;
};

namespace detail {

inline double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

inline double f1_from_counts(double tp, double fp, double fn) {
    return safe_div(2.0 * tp, 2.0 * tp + fp + fn);
}

} // namespace detail

// Inputs are 0/1 matrices (N x K); anything > 0.5 counts as positive.
inline F1Scores micro_macro_f1(const Eigen::MatrixXd &y_true, const Eigen::MatrixXd &y_pred) {
    if (y_true.rows() != y_pred.rows() || y_true.cols() != y_pred.cols())
        throw ContractViolation("micro_macro_f1: shape mismatch");
    const Eigen::Index K = y_true.cols();
    F1Scores out;
    out.per_class.resize(static_cast<std::size_t>(K));
    double TP = 0, FP = 0, FN = 0, f1_sum = 0;
    for (Eigen::Index k = 0; k < K; ++k) {
        double tp = 0, fp = 0, fn = 0;
        for (Eigen::Index i = 0; i < y_true.rows(); ++i) {
            const bool t = y_true(i, k) > 0.5, p = y_pred(i, k) > 0.5;
            tp += (t && p);
            fp += (!t && p);
            fn += (t && !p);
        }
        auto &cs = out.per_class[static_cast<std::size_t>(k)];
        cs.precision = detail::safe_div(tp, tp + fp);
        cs.recall = detail::safe_div(tp, tp + fn);
        cs.f1 = detail::f1_from_counts(tp, fp, fn);
        cs.support = static_cast<std::size_t>(tp + fn);
        f1_sum += cs.f1;
        TP += tp;
        FP += fp;
        FN += fn;
    }
    out.micro = detail::f1_from_counts(TP, FP, FN);
    out.macro = K > 0 ? f1_sum / static_cast<double>(K) : 0.0;
    return out;
}

struct RankingValue {
    double value = 0.0;
    std::size_t rows_used = 0;
    std::size_t rows_excluded = 0;
};

// Fraction of (relevant, irrelevant) pairs with score_rel <= score_irrel,
// averaged over rows that have at least one of each.
inline RankingValue ranking_loss(const Eigen::MatrixXd &y_true, const Eigen::MatrixXd &scores) {
    if (y_true.rows() != scores.rows() || y_true.cols() != scores.cols())
        throw ContractViolation("ranking_loss: shape mismatch");
    RankingValue out;
    double total = 0.0;
    for (Eigen::Index i = 0; i < y_true.rows(); ++i) {
        double bad = 0.0, nrel = 0.0, nirr = 0.0;
        for (Eigen::Index a = 0; a < y_true.cols(); ++a) {
            if (y_true(i, a) > 0.5)
                nrel += 1;
            else
                nirr += 1;
        }
        if (nrel == 0 || nirr == 0) {
            ++out.rows_excluded;
            continue;
        }
        for (Eigen::Index a = 0; a < y_true.cols(); ++a) {
            if (!(y_true(i, a) > 0.5))
                continue;
            for (Eigen::Index b = 0; b < y_true.cols(); ++b)
                if (!(y_true(i, b) > 0.5) && scores(i, a) <= scores(i, b))
                    bad += 1;
        }
        total += bad / (nrel * nirr);
        ++out.rows_used;
    }
    if (out.rows_used == 0)
        throw UndefinedMetricError("ranking_loss: no row has both relevant and irrelevant labels");
    out.value = total / static_cast<double>(out.rows_used);
    return out;
}

// Label-ranking average precision with worst-rank tie handling:
// rank(l) = #{j : score_j >= score_l}.
inline RankingValue average_precision(const Eigen::MatrixXd &y_true, const Eigen::MatrixXd &scores) {
    if (y_true.rows() != scores.rows() || y_true.cols() != scores.cols())
        throw ContractViolation("average_precision: shape mismatch");
    RankingValue out;
    double total = 0.0;
    const Eigen::Index K = y_true.cols();
    for (Eigen::Index i = 0; i < y_true.rows(); ++i) {
        double nrel = 0.0;
        for (Eigen::Index a = 0; a < K; ++a)
            nrel += y_true(i, a) > 0.5;
        if (nrel == 0 || nrel == static_cast<double>(K)) {
            ++out.rows_excluded;
            continue;
        }
        double row = 0.0;
        for (Eigen::Index l = 0; l < K; ++l) {
            if (!(y_true(i, l) > 0.5))
                continue;
            double rank = 0.0, rel_above = 0.0;
            for (Eigen::Index j = 0; j < K; ++j) {
                if (scores(i, j) >= scores(i, l)) {
                    rank += 1;
                    rel_above += y_true(i, j) > 0.5;
                }
            }
            row += rel_above / rank;
        }
        total += row / nrel;
        ++out.rows_used;
    }
    if (out.rows_used == 0)
        throw UndefinedMetricError("average_precision: no row has both relevant and irrelevant labels");
    out.value = total / static_cast<double>(out.rows_used);
    return out;
}

struct EvalReport {
    double micro_f1 = 0.0;
    double macro_f1 = 0.0;
    std::optional<double> ranking_loss;
    std::optional<double> average_precision;
    std::size_t ranking_rows_excluded = 0;
    std::vector<ClassScores> per_class;
    std::vector<std::string> class_names;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["micro_f1"] = micro_f1;
        j["macro_f1"] = macro_f1;
        j["ranking_loss"] = ranking_loss ? nlohmann::ordered_json(*ranking_loss) : nlohmann::ordered_json();
        j["average_precision"] =
            average_precision ? nlohmann::ordered_json(*average_precision) : nlohmann::ordered_json();
        j["ranking_rows_excluded"] = ranking_rows_excluded;
        auto &pc = j["per_class"] = nlohmann::ordered_json::array();
        for (std::size_t k = 0; k < per_class.size(); ++k) {
            pc.push_back({{"label", k < class_names.size() ? class_names[k] : std::to_string(k)},
                          {"precision", per_class[k].precision},
                          {"recall", per_class[k].recall},
                          {"f1", per_class[k].f1},
                          {"support", per_class[k].support}});
        }
        return j;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os.precision(17);
        os << "label,precision,recall,f1,support\n";
        for (std::size_t k = 0; k < per_class.size(); ++k)
            os << (k < class_names.size() ? class_names[k] : std::to_string(k)) << ',' << per_class[k].precision
               << ',' << per_class[k].recall << ',' << per_class[k].f1 << ',' << per_class[k].support << '\n';
        os << "micro,,," << micro_f1 << ",\n";
        os << "macro,,," << macro_f1 << ",\n";
        if (ranking_loss)
            os << "ranking_loss,,," << *ranking_loss << ",\n";
        if (average_precision)
            os << "average_precision,,," << *average_precision << ",\n";
        return os.str();
    }
};

inline EvalReport evaluate(const Eigen::MatrixXd &y_true, const Eigen::MatrixXd &y_pred,
                           const Eigen::MatrixXd &scores, std::vector<std::string> class_names = {}) {
    EvalReport r;
    const auto f1 = micro_macro_f1(y_true, y_pred);
    r.micro_f1 = f1.micro;
    r.macro_f1 = f1.macro;
    r.per_class = f1.per_class;
    r.class_names = std::move(class_names);
    try {
        const auto rl = ranking_loss(y_true, scores);
        r.ranking_loss = rl.value;
        r.ranking_rows_excluded = rl.rows_excluded;
        r.average_precision = average_precision(y_true, scores).value;
    } catch (const UndefinedMetricError &) {
        // no includable rows; ranking metrics stay empty
    }
    return r;
}

} // namespace bdd
