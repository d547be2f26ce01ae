#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>
#include <sstream>

#include "savehr/cohort.hpp"
#include "savehr/generator.hpp"

using namespace savehr;

namespace {

GeneratorConfig base_config(std::uint64_t seed, int n) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    cfg.n_patients = n;
    cfg.vocab_size = 40;
    ConditionGen cond;
    cond.name = "X";
    cond.target_codes = {39};
    cfg.conditions.push_back(cond);
    return cfg;
}

bool has_target(const EncounterStream& s, int target) {
    for (const Encounter& e : s.encounters)
        for (int c : e.codes)
            if (c == target) return true;
    return false;
}

std::string serialize(const std::vector<EncounterStream>& pop) {
    std::ostringstream ss;
    for (const auto& s : pop) {
        ss << s.patient_id << '|' << s.gender << '|' << s.race << '|' << s.birth_offset;
        for (const auto& e : s.encounters) {
            ss << ';' << e.day;
            for (int c : e.codes) ss << ',' << c;
        }
        ss << '\n';
    }
    return ss.str();
}

}  // namespace

TEST_CASE("same seed produces byte-identical streams") {
    GeneratorConfig cfg = base_config(123, 200);
    auto p1 = generate_population(cfg);
    auto p2 = generate_population(cfg);
    CHECK(serialize(p1) == serialize(p2));
    auto p3 = generate_population(base_config(124, 200));
    CHECK(serialize(p1) != serialize(p3));
}

TEST_CASE("no planted pairs: case rate matches the base rate (binomial oracle)") {
    GeneratorConfig cfg = base_config(9, 5000);
    cfg.age_coeff = 0.0;  // isolate the base logit
    cfg.conditions[0].base_logit = -1.5;
    auto pop = generate_population(cfg);
    int cases = 0;
    for (const auto& s : pop) cases += has_target(s, 39);
    const double p = 1.0 / (1.0 + std::exp(1.5));
    const double se = std::sqrt(p * (1.0 - p) / cfg.n_patients);
    const double observed = static_cast<double>(cases) / cfg.n_patients;
    CHECK(std::abs(observed - p) <= 2.0 * se);
}

TEST_CASE("planted pair raises case rate for co-occurring patients (two-proportion oracle)") {
    GeneratorConfig cfg = base_config(11, 5000);
    cfg.age_coeff = 0.0;
    cfg.conditions[0].base_logit = -2.0;
    cfg.conditions[0].planted_pairs = {{30, 35, 3.0}};
    auto pop = generate_population(cfg);

    int n_both = 0, cases_both = 0, n_neither = 0, cases_neither = 0;
    for (const auto& s : pop) {
        std::set<int> seen;
        for (const auto& e : s.encounters)
            for (int c : e.codes) seen.insert(c);
        const bool both = seen.count(30) && seen.count(35);
        const bool neither = !seen.count(30) && !seen.count(35);
        const bool is_case = has_target(s, 39);
        if (both) {
            ++n_both;
            cases_both += is_case;
        } else if (neither) {
            ++n_neither;
            cases_neither += is_case;
        }
    }
    REQUIRE(n_both > 100);
    REQUIRE(n_neither > 100);
    const double p1 = static_cast<double>(cases_both) / n_both;
    const double p2 = static_cast<double>(cases_neither) / n_neither;
    const double pooled = static_cast<double>(cases_both + cases_neither) / (n_both + n_neither);
    const double se = std::sqrt(pooled * (1 - pooled) * (1.0 / n_both + 1.0 / n_neither));
    const double z = (p1 - p2) / se;
    CHECK(z > 2.33);  // one-sided 99% confidence
}

TEST_CASE("degenerate all-zero temporal profile rejected") {
    GeneratorConfig cfg = base_config(1, 10);
    cfg.conditions[0].temporal_profile = {0.0, 0.0, 0.0, 0.0};
    CHECK_THROWS_WITH_AS(generate_population(cfg), doctest::Contains("temporal_profile"),
                         std::invalid_argument);
}

TEST_CASE("tiny vocabulary rejected") {
    GeneratorConfig cfg = base_config(1, 10);
    cfg.vocab_size = 5;
    CHECK_THROWS_AS(generate_population(cfg), std::invalid_argument);
}

TEST_CASE("non-injective alias map rejected") {
    GeneratorConfig cfg = base_config(1, 10);
    cfg.shift.code_alias_map = {{1, 5}, {2, 5}};
    CHECK_THROWS_WITH_AS(generate_population(cfg), doctest::Contains("injective"),
                         std::invalid_argument);
}

TEST_CASE("alias map renames codes consistently") {
    GeneratorConfig cfg = base_config(5, 300);
    auto plain = generate_population(cfg);
    cfg.shift.code_alias_map = {{0, 100}};
    auto aliased = generate_population(cfg);
    bool saw_alias = false;
    for (const auto& s : aliased)
        for (const auto& e : s.encounters)
            for (int c : e.codes) {
                CHECK(c != 0);
                if (c == 100) saw_alias = true;
            }
    CHECK(saw_alias);
    // The rename is the only difference.
    bool code0_present = false;
    for (const auto& s : plain)
        for (const auto& e : s.encounters)
            for (int c : e.codes) code0_present |= (c == 0);
    CHECK(code0_present);
}

TEST_CASE("generated cases pass the cohort case rule; controls have no target hits") {
    GeneratorConfig cfg = base_config(17, 400);
    auto pop = generate_population(cfg);
    CohortSpec spec;
    spec.target_codes = {39};
    int cases = 0, controls = 0;
    for (const auto& s : pop) {
        auto idx = find_index_date(s, spec);
        if (!idx) continue;
        if (idx->is_case) {
            ++cases;
            // First qualifying hit carries the index.
            int first_hit = -1;
            for (const auto& e : s.encounters) {
                for (int c : e.codes)
                    if (c == 39) {
                        first_hit = e.day;
                        break;
                    }
                if (first_hit >= 0) break;
            }
            CHECK(idx->day == first_hit);
        } else {
            ++controls;
            CHECK_FALSE(has_target(s, 39));
        }
    }
    CHECK(cases > 10);
    CHECK(controls > 100);
}

TEST_CASE("prevalence scaling shifts code frequency") {
    GeneratorConfig cfg = base_config(23, 2000);
    auto count_code = [](const std::vector<EncounterStream>& pop, int code) {
        int n = 0;
        for (const auto& s : pop)
            for (const auto& e : s.encounters)
                for (int c : e.codes) n += (c == code);
        return n;
    };
    auto plain = generate_population(cfg);
    cfg.shift.prevalence_scale = {{5, 4.0}};
    auto scaled = generate_population(cfg);
    CHECK(count_code(scaled, 5) > count_code(plain, 5) * 2);
}
