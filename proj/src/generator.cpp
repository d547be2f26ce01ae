#include "savehr/generator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>

namespace savehr {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
    // splitmix64 finalizer over seed^index
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (i + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void validate(const GeneratorConfig& cfg) {
    if (cfg.vocab_size < 10) throw std::invalid_argument("generator: vocab_size must be >= 10");
    if (cfg.n_patients <= 0) throw std::invalid_argument("generator: n_patients must be positive");
    for (const ConditionGen& c : cfg.conditions) {
        if (c.target_codes.empty())
            throw std::invalid_argument("generator: condition '" + c.name + "' has no target codes");
        double profile_sum = 0.0;
        for (double w : c.temporal_profile) {
            if (!std::isfinite(w) || w < 0.0)
                throw std::invalid_argument("generator: temporal_profile entries must be finite and >= 0");
            profile_sum += w;
        }
        if (profile_sum <= 0.0)
            throw std::invalid_argument("generator: all-zero temporal_profile for '" + c.name + "'");
        for (const PlantedPair& p : c.planted_pairs) {
            if (!std::isfinite(p.weight)) throw std::invalid_argument("generator: non-finite pair weight");
            if (p.code_a < 0 || p.code_a >= cfg.vocab_size || p.code_b < 0 || p.code_b >= cfg.vocab_size)
                throw std::invalid_argument("generator: planted pair code outside vocabulary");
        }
    }
    std::set<int> alias_targets;
    for (const auto& [from, to] : cfg.shift.code_alias_map)
        if (!alias_targets.insert(to).second)
            throw std::invalid_argument("generator: code_alias_map must be injective");
}

}  // namespace

std::vector<EncounterStream> generate_population(const GeneratorConfig& cfg) {
    validate(cfg);

    std::set<int> all_targets;
    for (const ConditionGen& c : cfg.conditions)
        for (int t : c.target_codes) all_targets.insert(t);

    // Zipf-like background code weights, target codes never emitted as background.
    std::vector<double> code_weight(cfg.vocab_size, 0.0);
    for (int c = 0; c < cfg.vocab_size; ++c) {
        if (all_targets.count(c)) continue;
        double w = 1.0 / (c + 2.0);
        auto it = cfg.shift.prevalence_scale.find(c);
        if (it != cfg.shift.prevalence_scale.end()) w *= it->second;
        code_weight[c] = std::max(0.0, w);
    }

    std::array<double, kNumRaces> race_weight{0.40, 0.25, 0.15, 0.12, 0.08};
    for (int r = 0; r < kNumRaces; ++r) race_weight[r] = std::max(1e-6, race_weight[r] + cfg.shift.race_delta[r]);

    const int span_days = cfg.span_months * kDaysPerMonth;
    const int obs_total = 27 * kDaysPerMonth;
    const int obs_end_gap = 15 * kDaysPerMonth;
    const int quarter_days = 3 * kDaysPerMonth;
    const int anchor_lo = obs_total;
    const int anchor_hi = span_days - 6 * kDaysPerMonth;
    if (anchor_hi <= anchor_lo) throw std::invalid_argument("generator: span_months too short");

    std::vector<EncounterStream> out;
    out.reserve(cfg.n_patients);

    for (int i = 0; i < cfg.n_patients; ++i) {
        std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);

        EncounterStream s;
        s.patient_id = i;
        s.gender = u01(rng) < 0.5 + cfg.shift.gender_delta ? 1 : 0;
        {
            double total = 0.0;
            for (double w : race_weight) total += w;
            double x = u01(rng) * total;
            s.race = kNumRaces - 1;
            for (int r = 0; r < kNumRaces; ++r) {
                if (x < race_weight[r]) {
                    s.race = r;
                    break;
                }
                x -= race_weight[r];
            }
        }

        const int anchor = anchor_lo + static_cast<int>(u01(rng) * (anchor_hi - anchor_lo));
        const double age = 28.0 + u01(rng) * 56.0 + cfg.shift.age_shift_years;
        s.birth_offset = anchor - static_cast<int>(std::lround(age * kDaysPerYear));

        // Background encounters.
        std::uniform_int_distribution<int> n_enc_dist(cfg.min_encounters, cfg.max_encounters);
        std::uniform_int_distribution<int> day_dist(0, span_days - 1);
        std::uniform_int_distribution<int> n_codes_dist(1, 3);
        std::discrete_distribution<int> code_dist(code_weight.begin(), code_weight.end());
        const int n_enc = n_enc_dist(rng);
        for (int e = 0; e < n_enc; ++e) {
            Encounter enc;
            enc.day = day_dist(rng);
            const int nc = n_codes_dist(rng);
            std::set<int> cs;
            for (int c = 0; c < nc; ++c) cs.insert(code_dist(rng));
            enc.codes.assign(cs.begin(), cs.end());
            s.encounters.push_back(std::move(enc));
        }

        // Express planted pairs in profile-weighted quarters of the would-be
        // observation window [anchor-27m, anchor-15m).
        const int obs_start = anchor - obs_total;
        for (const ConditionGen& cond : cfg.conditions) {
            for (const PlantedPair& p : cond.planted_pairs) {
                if (u01(rng) >= cfg.pair_express_prob) continue;
                std::discrete_distribution<int> q_dist(cond.temporal_profile.begin(),
                                                       cond.temporal_profile.end());
                const int q = q_dist(rng);
                const int q_start = obs_start + q * quarter_days;
                std::uniform_int_distribution<int> q_day(q_start, q_start + quarter_days - 1);
                Encounter enc;
                enc.day = q_day(rng);
                enc.codes = {std::min(p.code_a, p.code_b), std::max(p.code_a, p.code_b)};
                if (enc.codes[0] == enc.codes[1]) enc.codes.pop_back();
                s.encounters.push_back(std::move(enc));
            }
        }

        std::stable_sort(s.encounters.begin(), s.encounters.end(),
                         [](const Encounter& a, const Encounter& b) { return a.day < b.day; });

        // Quarterly code presence inside the observation window.
        std::array<std::set<int>, kNumQuarters> present;
        const int obs_end = anchor - obs_end_gap;
        for (const Encounter& e : s.encounters) {
            if (e.day < obs_start || e.day >= obs_end) continue;
            const int q = (e.day - obs_start) / quarter_days;
            for (int c : e.codes) present[q].insert(c);
        }

        // Onset draw per condition; first condition that fires wins (the CLI
        // uses disjoint target sets, so cross-condition hits stay disjoint).
        for (const ConditionGen& cond : cfg.conditions) {
            double logit = cond.base_logit + cfg.age_coeff * (age - 55.0) / 25.0;
            for (const PlantedPair& p : cond.planted_pairs) {
                bool co = false;
                for (int q = 0; q < kNumQuarters; ++q)
                    if (present[q].count(p.code_a) && present[q].count(p.code_b)) {
                        co = true;
                        break;
                    }
                if (co) logit += p.weight;
            }
            if (u01(rng) < sigmoid(logit)) {
                // Plant the qualifying target hits: onset at the anchor, two
                // more inside the case window.
                const int target = cond.target_codes[static_cast<std::size_t>(
                    u01(rng) * cond.target_codes.size())];
                std::uniform_int_distribution<int> gap(20, 80);
                int day = anchor;
                for (int h = 0; h < 3; ++h) {
                    Encounter enc;
                    enc.day = std::min(day, span_days - 1);
                    enc.codes = {target};
                    s.encounters.push_back(std::move(enc));
                    day += gap(rng);
                }
                std::stable_sort(s.encounters.begin(), s.encounters.end(),
                                 [](const Encounter& a, const Encounter& b) { return a.day < b.day; });
            }
        }

        // Apply code aliases last so the whole stream is renamed consistently.
        if (!cfg.shift.code_alias_map.empty()) {
            for (Encounter& e : s.encounters) {
                std::set<int> renamed;
                for (int c : e.codes) {
                    auto it = cfg.shift.code_alias_map.find(c);
                    renamed.insert(it == cfg.shift.code_alias_map.end() ? c : it->second);
                }
                e.codes.assign(renamed.begin(), renamed.end());
            }
        }

        out.push_back(std::move(s));
    }
    return out;
}

std::vector<EncounterStream> generate_population(
    std::uint64_t seed, int n_patients, int vocab_size,
    const std::vector<PlantedPair>& planted_pairs,
    const std::array<double, kNumQuarters>& temporal_profile,
    const std::vector<int>& target_codes, const std::optional<PopulationShift>& shift) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    cfg.n_patients = n_patients;
    cfg.vocab_size = vocab_size;
    ConditionGen cond;
    cond.name = "condition";
    cond.target_codes = target_codes;
    cond.planted_pairs = planted_pairs;
    cond.temporal_profile = temporal_profile;
    cfg.conditions.push_back(std::move(cond));
    if (shift) cfg.shift = *shift;
    return generate_population(cfg);
}

}  // namespace savehr
