#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace savehr {

// Calendar months are fixed 30-day blocks throughout.
constexpr int kDaysPerMonth = 30;
constexpr double kDaysPerYear = 365.0;

constexpr int kNumQuarters = 4;
constexpr int kNumGenders = 2;
constexpr int kNumRaces = 5;
constexpr int kNumAgeBins = 10;  // 5-year bins over [30, 80)
constexpr int kAgeBinYears = 5;
constexpr int kDemoTokens = 3;
constexpr int kDemoOneHotDim = kNumGenders + kNumRaces + kNumAgeBins;

struct Encounter {
    int day{0};
    std::vector<int> codes;  // sorted, nonempty
};

struct EncounterStream {
    std::int64_t patient_id{0};
    int gender{0};
    int race{0};
    int birth_offset{0};  // day offset of birth relative to stream origin (negative)
    std::vector<Encounter> encounters;  // sorted by day
};

struct CohortSpec {
    std::set<int> target_codes;
    int case_min_hits{3};
    int case_window_months{6};
    int buffer_months{3};
    int observation_span_months{12};
    int observation_end_months_before_index{15};
    int prediction_window_months{15};
    int control_min_encounters{5};
    int control_span_months{24};
    int age_min_years{30};
    int age_max_years{80};
    int min_code_occurrences{50};
    int quarter_months{3};

    int observation_start_day() const {
        return (observation_span_months + observation_end_months_before_index) * kDaysPerMonth;
    }
    int observation_end_day() const {
        return observation_end_months_before_index * kDaysPerMonth;
    }
};

struct PatientTensor {
    std::int64_t patient_id{0};
    int label{0};  // case=1, control=0
    int gender{0};
    int race{0};
    int age_bin{0};
    // quarter_counts[q][code_index], q=0..3 maps to paper quarters 1..4
    // (q=3 nearest the index date).
    std::vector<std::map<int, int>> quarter_counts;

    PatientTensor() : quarter_counts(kNumQuarters) {}
};

struct IndexDate {
    int day{0};
    bool is_case{false};
};

struct CohortStats {
    int n_cases{0};
    int n_controls{0};
    int skipped_no_rule{0};  // neither case nor control rule, or age outside bounds
    int skipped_short_history{0};  // less than 27 months of pre-index history
};

// Applies the case/control index-date rules; returns nullopt when the
// patient qualifies as neither (or fails the age bound at index).
std::optional<IndexDate> find_index_date(const EncounterStream& stream, const CohortSpec& spec);

int age_years_at(const EncounterStream& stream, int day);
int age_bin_of(int age_years, const CohortSpec& spec);

PatientTensor extract_tensor(const EncounterStream& stream, int index_day, int label,
                             const CohortSpec& spec, const std::vector<int>& vocab);

// Codes with >= min_code_occurrences occurrences inside enrolled patients'
// observation windows, ascending code order.
std::vector<int> build_vocab(const std::vector<EncounterStream>& streams, const CohortSpec& spec);

struct CohortSplit {
    std::vector<PatientTensor> train;
    std::vector<PatientTensor> val;
    std::vector<PatientTensor> test;
};

CohortSplit split_cohort(const std::vector<PatientTensor>& tensors, std::uint64_t seed,
                         double train_frac, double val_frac, double test_frac);

// Convenience: enroll every usable patient of a population.
struct EnrolledCohort {
    std::vector<PatientTensor> tensors;
    CohortStats stats;
};
EnrolledCohort enroll(const std::vector<EncounterStream>& streams, const CohortSpec& spec,
                      const std::vector<int>& vocab);

}  // namespace savehr
