#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "savehr/cohort.hpp"

namespace savehr {

struct PlantedPair {
    int code_a{0};
    int code_b{0};
    double weight{0.0};
};

struct PopulationShift {
    std::map<int, double> prevalence_scale;  // per-code sampling rate factor
    std::map<int, int> code_alias_map;       // injective substitution
    double gender_delta{0.0};                // shift of P(gender=1)
    std::array<double, kNumRaces> race_delta{};
    double age_shift_years{0.0};

    bool is_noop() const {
        return prevalence_scale.empty() && code_alias_map.empty() && gender_delta == 0.0 &&
               race_delta == std::array<double, kNumRaces>{} && age_shift_years == 0.0;
    }
};

struct ConditionGen {
    std::string name;
    std::vector<int> target_codes;
    std::vector<PlantedPair> planted_pairs;
    // Relative probability of placing an expressed pair in each quarter
    // (quarter 4 = nearest the eventual index date).
    std::array<double, kNumQuarters> temporal_profile{1.0, 1.0, 1.0, 1.0};
    double base_logit{-1.7};
};

struct GeneratorConfig {
    std::uint64_t seed{0};
    int n_patients{1000};
    int vocab_size{100};
    std::vector<ConditionGen> conditions;
    double age_coeff{0.5};
    double pair_express_prob{0.45};
    int span_months{48};
    int min_encounters{24};
    int max_encounters{72};
    PopulationShift shift;
};

// Onset risk is logistic in planted pairwise co-occurrence inside the
// would-be observation window plus an age effect; deterministic per seed.
std::vector<EncounterStream> generate_population(const GeneratorConfig& config);

// Single-condition convenience.
std::vector<EncounterStream> generate_population(
    std::uint64_t seed, int n_patients, int vocab_size,
    const std::vector<PlantedPair>& planted_pairs,
    const std::array<double, kNumQuarters>& temporal_profile,
    const std::vector<int>& target_codes,
    const std::optional<PopulationShift>& shift = std::nullopt);

}  // namespace savehr
