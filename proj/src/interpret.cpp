#include "savehr/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace savehr {

std::vector<std::string> token_labels(const std::vector<int>& vocab, const ModelConfig& cfg) {
    if (static_cast<int>(vocab.size()) != cfg.vocab)
        throw std::invalid_argument("token_labels: vocabulary size disagrees with config");
    std::vector<std::string> labels;
    labels.reserve(cfg.token_rows());
    for (int c : vocab) labels.push_back("C" + std::to_string(c));
    for (int g = 0; g < kNumGenders; ++g) labels.push_back("gender=" + std::to_string(g));
    for (int r = 0; r < kNumRaces; ++r) labels.push_back("race=" + std::to_string(r));
    for (int a = 0; a < kNumAgeBins; ++a) {
        const int lo = 30 + a * kAgeBinYears;
        labels.push_back("age=" + std::to_string(lo) + "-" + std::to_string(lo + kAgeBinYears - 1));
    }
    return labels;
}

namespace {

PairwiseImportance quarter_importance(const ForwardTrace& trace, int q,
                                      const std::vector<std::string>& all_labels) {
    const QuarterTokens& toks = trace.tokens[q];
    const Matrix& A = trace.annotations[q];
    const double alpha = trace.alpha.at(0, q);
    const int n = toks.n();
    const int r = A.rows;

    PairwiseImportance p;
    p.quarter = q + 1;
    p.predicted_risk = trace.p_case();
    p.token_ids = toks.ids;
    for (int id : toks.ids) p.labels.push_back(all_labels.at(id));
    p.matrix = Matrix::zeros(n, n);
    for (int h = 0; h < r; ++h)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                p.matrix.at(i, j) += A.at(h, i) * A.at(h, j);
    const double scale = alpha / r;
    for (double& v : p.matrix.data) v *= scale;
    // The outer-product form is already symmetric; make it exact anyway.
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double m = 0.5 * (p.matrix.at(i, j) + p.matrix.at(j, i));
            p.matrix.at(i, j) = m;
            p.matrix.at(j, i) = m;
        }
    return p;
}

}  // namespace

std::vector<PairwiseImportance> pairwise_from_trace(const ForwardTrace& trace,
                                                    PairAggregation aggregation,
                                                    const std::vector<std::string>& all_labels) {
    std::vector<PairwiseImportance> per_quarter;
    for (int q = 0; q < kNumQuarters; ++q)
        per_quarter.push_back(quarter_importance(trace, q, all_labels));
    if (aggregation == PairAggregation::PerQuarter) return per_quarter;

    // Union of token ids across quarters; absent tokens contribute 0.
    std::vector<int> ids;
    for (const auto& p : per_quarter) ids.insert(ids.end(), p.token_ids.begin(), p.token_ids.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    std::vector<int> pos(all_labels.size(), -1);
    for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = static_cast<int>(i);

    PairwiseImportance avg;
    avg.quarter = 0;
    avg.predicted_risk = trace.p_case();
    avg.token_ids = ids;
    for (int id : ids) avg.labels.push_back(all_labels.at(id));
    avg.matrix = Matrix::zeros(static_cast<int>(ids.size()), static_cast<int>(ids.size()));
    for (const auto& p : per_quarter)
        for (int i = 0; i < p.matrix.rows; ++i)
            for (int j = 0; j < p.matrix.cols; ++j)
                avg.matrix.at(pos[p.token_ids[i]], pos[p.token_ids[j]]) += p.matrix.at(i, j);
    return {avg};
}

PairwiseImportance population_heatmap(ModelParams& params,
                                      const std::vector<PatientTensor>& cases,
                                      const std::vector<std::string>& all_labels, int top_k) {
    if (cases.empty()) throw std::invalid_argument("population_heatmap: empty patient set");
    const int n_tokens = params.cfg.token_rows();
    Matrix total = Matrix::zeros(n_tokens, n_tokens);
    double risk_sum = 0.0;
    for (const PatientTensor& t : cases) {
        ForwardTrace trace = predict(t, params);
        risk_sum += trace.p_case();
        auto avg = pairwise_from_trace(trace, PairAggregation::Averaged, all_labels);
        const PairwiseImportance& p = avg.front();
        for (int i = 0; i < p.matrix.rows; ++i)
            for (int j = 0; j < p.matrix.cols; ++j)
                total.at(p.token_ids[i], p.token_ids[j]) += p.matrix.at(i, j);
    }
    const double inv = 1.0 / static_cast<double>(cases.size());
    for (double& v : total.data) v *= inv;

    // Rank tokens by diagonal mass, keep the strongest top_k.
    std::vector<int> order(n_tokens);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return total.at(a, a) > total.at(b, b); });
    const int k = std::min(top_k, n_tokens);
    std::vector<int> keep(order.begin(), order.begin() + k);
    std::sort(keep.begin(), keep.end());

    PairwiseImportance out;
    out.quarter = 0;
    out.predicted_risk = risk_sum * inv;
    out.token_ids = keep;
    for (int id : keep) out.labels.push_back(all_labels.at(id));
    out.matrix = Matrix::zeros(k, k);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) out.matrix.at(i, j) = total.at(keep[i], keep[j]);
    return out;
}

QuarterAttentionSummary quarter_attention_summary(ModelParams& params,
                                                  const std::vector<PatientTensor>& patients) {
    if (patients.empty())
        throw std::invalid_argument("quarter_attention_summary: empty patient set");
    QuarterAttentionSummary s;
    std::array<std::vector<double>, kNumQuarters> case_counts, control_counts;
    for (const PatientTensor& t : patients) {
        ForwardTrace trace = predict(t, params);
        const bool predicted_case = trace.p_case() >= 0.5;
        for (int q = 0; q < kNumQuarters; ++q) {
            s.mean_alpha[q] += trace.alpha.at(0, q);
            double total = 0.0;
            for (const auto& [idx, cnt] : t.quarter_counts[q]) total += cnt;
            (predicted_case ? case_counts : control_counts)[q].push_back(total);
        }
        (predicted_case ? s.n_predicted_cases : s.n_predicted_controls)++;
    }
    for (int q = 0; q < kNumQuarters; ++q) s.mean_alpha[q] /= patients.size();

    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
        if (v.empty()) {
            mean = sd = 0.0;
            return;
        }
        mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        sd = std::sqrt(var / v.size());
    };
    for (int q = 0; q < kNumQuarters; ++q) {
        mean_std(case_counts[q], s.case_count_mean[q], s.case_count_std[q]);
        mean_std(control_counts[q], s.control_count_mean[q], s.control_count_std[q]);
    }
    return s;
}

namespace {

std::string csv_quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void export_heatmap(const PairwiseImportance& p, const std::string& path) {
    if (p.matrix.rows == 0 || p.matrix.cols == 0)
        throw std::invalid_argument("export_heatmap: empty matrix");
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "label";
    for (const std::string& l : p.labels) f << ',' << csv_quote(l);
    f << '\n';
    char buf[64];
    for (int i = 0; i < p.matrix.rows; ++i) {
        f << csv_quote(p.labels[i]);
        for (int j = 0; j < p.matrix.cols; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", p.matrix.at(i, j));
            f << ',' << buf;
        }
        f << '\n';
    }
}

PairwiseImportance import_heatmap(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(path + ": empty heatmap file");
    std::vector<std::string> header = csv_split(line);
    PairwiseImportance p;
    for (std::size_t i = 1; i < header.size(); ++i) p.labels.push_back(header[i]);
    const int n = static_cast<int>(p.labels.size());
    p.matrix = Matrix::zeros(n, n);
    for (int i = 0; i < n; ++i) {
        if (!std::getline(f, line)) throw std::runtime_error(path + ": truncated heatmap");
        std::vector<std::string> cells = csv_split(line);
        if (static_cast<int>(cells.size()) != n + 1)
            throw std::runtime_error(path + ": ragged heatmap row");
        for (int j = 0; j < n; ++j) p.matrix.at(i, j) = std::stod(cells[j + 1]);
    }
    return p;
}

std::string format_quarter_summary(const QuarterAttentionSummary& s) {
    std::ostringstream out;
    out.precision(6);
    out << "quarter mean_alpha case_count_mean case_count_std control_count_mean control_count_std\n";
    for (int q = 0; q < kNumQuarters; ++q)
        out << 't' << (q + 1) << ' ' << s.mean_alpha[q] << ' ' << s.case_count_mean[q] << ' '
            << s.case_count_std[q] << ' ' << s.control_count_mean[q] << ' '
            << s.control_count_std[q] << '\n';
    out << "predicted_cases " << s.n_predicted_cases << " predicted_controls "
        << s.n_predicted_controls << '\n';
    return out.str();
}

}  // namespace savehr
