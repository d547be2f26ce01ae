#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "savehr/cohort.hpp"
#include "savehr/matrix.hpp"
#include "savehr/model.hpp"

namespace savehr {

struct PairwiseImportance {
    std::vector<int> token_ids;       // global token ids, one per row/column
    std::vector<std::string> labels;
    Matrix matrix;                    // symmetric, nonnegative
    std::int64_t patient_id{0};
    double predicted_risk{0.0};
    int quarter{0};                   // 1..4, or 0 for the averaged view
};

enum class PairAggregation { PerQuarter, Averaged };

// Human-readable token names: codes by vocabulary entry, then demographics.
std::vector<std::string> token_labels(const std::vector<int>& vocab, const ModelConfig& cfg);

// Quarter t importance: M_t(i,j) = alpha_t * mean over hops of a[i]*a[j],
// symmetrized; the averaged view sums quarters over the union token set.
std::vector<PairwiseImportance> pairwise_from_trace(const ForwardTrace& trace,
                                                    PairAggregation aggregation,
                                                    const std::vector<std::string>& all_labels);

PairwiseImportance population_heatmap(ModelParams& params,
                                      const std::vector<PatientTensor>& cases,
                                      const std::vector<std::string>& all_labels, int top_k);

struct QuarterAttentionSummary {
    std::array<double, kNumQuarters> mean_alpha{};
    // Diagnosis-count statistics per quarter, split by predicted label at 0.5.
    std::array<double, kNumQuarters> case_count_mean{}, case_count_std{};
    std::array<double, kNumQuarters> control_count_mean{}, control_count_std{};
    int n_predicted_cases{0};
    int n_predicted_controls{0};
};

QuarterAttentionSummary quarter_attention_summary(ModelParams& params,
                                                  const std::vector<PatientTensor>& patients);

void export_heatmap(const PairwiseImportance& p, const std::string& path);
PairwiseImportance import_heatmap(const std::string& path);

std::string format_quarter_summary(const QuarterAttentionSummary& s);

}  // namespace savehr
