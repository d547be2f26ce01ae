#include "savehr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace savehr {

namespace {

void check_two_classes(const ScoredSet& s, const char* what) {
    int pos = 0, neg = 0;
    for (const Scored& x : s) (x.label ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw std::invalid_argument(std::string(what) +
                                    ": needs at least one positive and one negative");
}

}  // namespace

double auc_roc(const ScoredSet& s) {
    check_two_classes(s, "auc_roc");
    std::vector<Scored> v = s;
    std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score < b.score; });

    // Average ranks across tie groups, then Mann-Whitney U.
    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < v.size()) {
        std::size_t j = i;
        while (j < v.size() && v[j].score == v[i].score) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t k = i; k < j; ++k)
            if (v[k].label) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        i = j;
    }
    const std::size_t n_neg = v.size() - n_pos;
    const double u = rank_sum_pos - 0.5 * n_pos * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_pr(const ScoredSet& s) {
    check_two_classes(s, "auc_pr");
    std::vector<Scored> v = s;
    std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });

    double total_pos = 0;
    for (const Scored& x : v) total_pos += x.label;

    double area = 0.0;
    double tp = 0.0, fp = 0.0, prev_recall = 0.0;
    std::size_t i = 0;
    while (i < v.size()) {
        std::size_t j = i;
        while (j < v.size() && v[j].score == v[i].score) ++j;
        for (std::size_t k = i; k < j; ++k) (v[k].label ? tp : fp) += 1.0;
        const double recall = tp / total_pos;
        const double precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return area;
}

CvResult cross_validate(const std::vector<int>& labels, const FoldEvaluator& evaluate, int k,
                        std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("cross_validate: k must be >= 2");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
    if (static_cast<int>(pos.size()) < k || static_cast<int>(neg.size()) < k)
        throw std::invalid_argument("cross_validate: a fold would receive a single class");

    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    std::vector<std::vector<std::size_t>> folds(k);
    for (std::size_t i = 0; i < pos.size(); ++i) folds[i % k].push_back(pos[i]);
    for (std::size_t i = 0; i < neg.size(); ++i) folds[i % k].push_back(neg[i]);

    CvResult res;
    for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx;
        for (int g = 0; g < k; ++g)
            if (g != f) train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
        ScoredSet scored = evaluate(train_idx, folds[f]);
        res.folds.push_back(FoldMetrics{auc_pr(scored), auc_roc(scored)});
    }

    auto mean_std = [&](auto get) {
        double mean = 0.0;
        for (const FoldMetrics& m : res.folds) mean += get(m);
        mean /= res.folds.size();
        double var = 0.0;
        for (const FoldMetrics& m : res.folds) var += (get(m) - mean) * (get(m) - mean);
        var /= res.folds.size();  // population std over folds
        return std::make_pair(mean, std::sqrt(var));
    };
    std::tie(res.mean_auc_pr, res.std_auc_pr) =
        mean_std([](const FoldMetrics& m) { return m.auc_pr; });
    std::tie(res.mean_auc_roc, res.std_auc_roc) =
        mean_std([](const FoldMetrics& m) { return m.auc_roc; });
    return res;
}

std::string eval_report_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream out;
    out.precision(6);
    out << "model,condition,population,split,auc_pr,auc_roc,cv_mean_auc_pr,cv_std_auc_pr,"
           "n_case,n_control\n";
    for (const EvalRow& r : rows) {
        out << r.model << ',' << r.condition << ',' << r.population << ',' << r.split << ','
            << r.auc_pr << ',' << r.auc_roc << ',';
        if (r.cv_mean_auc_pr >= 0.0)
            out << r.cv_mean_auc_pr << ',' << r.cv_std_auc_pr;
        else
            out << ',';
        out << ',' << r.n_case << ',' << r.n_control << '\n';
    }
    return out.str();
}

}  // namespace savehr
