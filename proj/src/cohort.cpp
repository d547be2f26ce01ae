#include "savehr/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace savehr {

namespace {

bool carries_target(const Encounter& e, const CohortSpec& spec) {
    for (int c : e.codes)
        if (spec.target_codes.count(c)) return true;
    return false;
}

}  // namespace

int age_years_at(const EncounterStream& stream, int day) {
    return static_cast<int>(std::floor((day - stream.birth_offset) / kDaysPerYear));
}

int age_bin_of(int age_years, const CohortSpec& spec) {
    int bin = (age_years - spec.age_min_years) / kAgeBinYears;
    return std::clamp(bin, 0, kNumAgeBins - 1);
}

std::optional<IndexDate> find_index_date(const EncounterStream& stream, const CohortSpec& spec) {
    std::vector<int> hit_days;
    for (const Encounter& e : stream.encounters)
        if (carries_target(e, spec)) hit_days.push_back(e.day);

    std::optional<IndexDate> result;
    if (!hit_days.empty()) {
        // Case rule: the first case_min_hits target hits must fall inside one
        // case window, since no target code may precede the qualifying window.
        const int k = spec.case_min_hits;
        const int window_days = spec.case_window_months * kDaysPerMonth;
        if (static_cast<int>(hit_days.size()) >= k &&
            hit_days[k - 1] - hit_days[0] <= window_days) {
            result = IndexDate{hit_days[0], true};
        } else {
            return std::nullopt;  // has target codes but does not qualify
        }
    } else {
        if (stream.encounters.empty()) return std::nullopt;
        const int span_days = spec.control_span_months * kDaysPerMonth;
        bool dense_enough = false;
        std::size_t lo = 0;
        for (std::size_t hi = 0; hi < stream.encounters.size(); ++hi) {
            while (stream.encounters[hi].day - stream.encounters[lo].day > span_days) ++lo;
            if (static_cast<int>(hi - lo + 1) >= spec.control_min_encounters) {
                dense_enough = true;
                break;
            }
        }
        if (!dense_enough) return std::nullopt;
        result = IndexDate{stream.encounters.back().day, false};
    }

    const int age = age_years_at(stream, result->day);
    if (age < spec.age_min_years || age >= spec.age_max_years) return std::nullopt;
    return result;
}

PatientTensor extract_tensor(const EncounterStream& stream, int index_day, int label,
                             const CohortSpec& spec, const std::vector<int>& vocab) {
    if (vocab.empty()) throw std::invalid_argument("extract_tensor: empty vocabulary");
    std::map<int, int> code_to_idx;
    for (std::size_t i = 0; i < vocab.size(); ++i) code_to_idx[vocab[i]] = static_cast<int>(i);

    PatientTensor t;
    t.patient_id = stream.patient_id;
    t.label = label;
    t.gender = stream.gender;
    t.race = stream.race;
    t.age_bin = age_bin_of(age_years_at(stream, index_day), spec);

    const int obs_start = index_day - spec.observation_start_day();
    const int obs_end = index_day - spec.observation_end_day();  // half-open
    const int quarter_days = spec.quarter_months * kDaysPerMonth;

    for (const Encounter& e : stream.encounters) {
        if (e.day < obs_start || e.day >= obs_end) continue;
        const int q = (e.day - obs_start) / quarter_days;
        if (q < 0 || q >= kNumQuarters) continue;
        for (int c : e.codes) {
            auto it = code_to_idx.find(c);
            if (it != code_to_idx.end()) t.quarter_counts[q][it->second] += 1;
        }
    }
    return t;
}

std::vector<int> build_vocab(const std::vector<EncounterStream>& streams, const CohortSpec& spec) {
    if (streams.empty()) throw std::invalid_argument("build_vocab: no streams");
    std::map<int, int> counts;
    for (const EncounterStream& s : streams) {
        auto idx = find_index_date(s, spec);
        if (!idx) continue;
        if (idx->day < spec.observation_start_day()) continue;  // short pre-index history
        const int obs_start = idx->day - spec.observation_start_day();
        const int obs_end = idx->day - spec.observation_end_day();
        for (const Encounter& e : s.encounters) {
            if (e.day < obs_start || e.day >= obs_end) continue;
            for (int c : e.codes) counts[c] += 1;
        }
    }
    std::vector<int> vocab;
    for (const auto& [code, n] : counts)
        if (n >= spec.min_code_occurrences) vocab.push_back(code);
    if (vocab.empty())
        throw std::runtime_error(
            "build_vocab: no code reaches min_code_occurrences=" +
            std::to_string(spec.min_code_occurrences) + "; lower the threshold");
    return vocab;  // std::map iteration is already ascending
}

EnrolledCohort enroll(const std::vector<EncounterStream>& streams, const CohortSpec& spec,
                      const std::vector<int>& vocab) {
    EnrolledCohort out;
    for (const EncounterStream& s : streams) {
        auto idx = find_index_date(s, spec);
        if (!idx) {
            ++out.stats.skipped_no_rule;
            continue;
        }
        if (idx->day < spec.observation_start_day()) {
            ++out.stats.skipped_short_history;
            continue;
        }
        out.tensors.push_back(extract_tensor(s, idx->day, idx->is_case ? 1 : 0, spec, vocab));
        if (idx->is_case)
            ++out.stats.n_cases;
        else
            ++out.stats.n_controls;
    }
    return out;
}

CohortSplit split_cohort(const std::vector<PatientTensor>& tensors, std::uint64_t seed,
                         double train_frac, double val_frac, double test_frac) {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw std::invalid_argument("split_cohort: fractions must sum to 1");

    std::vector<std::size_t> cases, controls;
    for (std::size_t i = 0; i < tensors.size(); ++i)
        (tensors[i].label == 1 ? cases : controls).push_back(i);

    std::mt19937_64 rng(seed);
    std::shuffle(cases.begin(), cases.end(), rng);
    std::shuffle(controls.begin(), controls.end(), rng);

    CohortSplit split;
    auto assign = [&](const std::vector<std::size_t>& stratum) {
        const std::size_t n = stratum.size();
        const std::size_t n_tr = static_cast<std::size_t>(std::llround(train_frac * n));
        const std::size_t n_va = static_cast<std::size_t>(std::llround(val_frac * n));
        for (std::size_t i = 0; i < n; ++i) {
            const PatientTensor& t = tensors[stratum[i]];
            if (i < n_tr)
                split.train.push_back(t);
            else if (i < n_tr + n_va)
                split.val.push_back(t);
            else
                split.test.push_back(t);
        }
    };
    assign(cases);
    assign(controls);

    auto case_count = [](const std::vector<PatientTensor>& v) {
        int n = 0;
        for (const auto& t : v) n += t.label;
        return n;
    };
    if ((train_frac > 0 && case_count(split.train) == 0) ||
        (val_frac > 0 && case_count(split.val) == 0) ||
        (test_frac > 0 && case_count(split.test) == 0))
        throw std::runtime_error("split_cohort: a requested split received zero cases");
    return split;
}

}  // namespace savehr
