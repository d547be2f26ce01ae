#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace savehr {

struct Scored {
    double score{0.0};
    int label{0};
};
using ScoredSet = std::vector<Scored>;

// Mann-Whitney formulation: P(random positive outscores random negative),
// ties counted half.
double auc_roc(const ScoredSet& s);

// Descending-score sweep, tie groups atomic, step interpolation
// sum_k (R_k - R_{k-1}) * P_k.
double auc_pr(const ScoredSet& s);

struct FoldMetrics {
    double auc_pr{0.0};
    double auc_roc{0.0};
};

struct CvResult {
    std::vector<FoldMetrics> folds;
    double mean_auc_pr{0.0}, std_auc_pr{0.0};
    double mean_auc_roc{0.0}, std_auc_roc{0.0};
};

// Stratified k-fold over items identified by (index, label); the factory
// trains on the given train indices and returns per-index scores for the
// eval indices.
using FoldEvaluator = std::function<ScoredSet(const std::vector<std::size_t>& train_idx,
                                              const std::vector<std::size_t>& eval_idx)>;

CvResult cross_validate(const std::vector<int>& labels, const FoldEvaluator& evaluate, int k,
                        std::uint64_t seed);

struct EvalRow {
    std::string model;
    std::string condition;
    std::string population;
    std::string split;
    double auc_pr{0.0};
    double auc_roc{0.0};
    double cv_mean_auc_pr{-1.0};  // negative when CV was not run
    double cv_std_auc_pr{-1.0};
    int n_case{0};
    int n_control{0};
};

std::string eval_report_csv(const std::vector<EvalRow>& rows);

}  // namespace savehr
