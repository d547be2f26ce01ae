#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>

#include "savehr/cohort.hpp"
#include "savehr/cohort_io.hpp"

using namespace savehr;

namespace {

// Patient aged ~50 at any plausible index day, born well before the stream.
EncounterStream make_stream(std::vector<Encounter> encounters) {
    EncounterStream s;
    s.patient_id = 1;
    s.gender = 0;
    s.race = 0;
    s.birth_offset = -50 * 365;
    s.encounters = std::move(encounters);
    return s;
}

CohortSpec spec_with_target(int code) {
    CohortSpec spec;
    spec.target_codes = {code};
    return spec;
}

}  // namespace

TEST_CASE("case rule: three hits within six months, none before") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{100, {99}}, {160, {99}}, {250, {99}}});
    auto idx = find_index_date(s, spec);
    REQUIRE(idx.has_value());
    CHECK(idx->is_case);
    CHECK(idx->day == 100);
}

TEST_CASE("two target hits only: neither case nor control") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{100, {99}}, {160, {99}}, {200, {5}}, {300, {6}}, {400, {7}}, {500, {8}}});
    CHECK_FALSE(find_index_date(s, spec).has_value());
}

TEST_CASE("three hits spread beyond the case window do not qualify") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{100, {99}}, {300, {99}}, {400, {99}}});  // 300 days > 180
    CHECK_FALSE(find_index_date(s, spec).has_value());
}

TEST_CASE("prior target hit disqualifies a later dense cluster") {
    CohortSpec spec = spec_with_target(99);
    // First hit at day 0, next three clustered much later: window containing
    // the first hit spans too far.
    auto s = make_stream({{0, {99}}, {800, {99}}, {820, {99}}, {840, {99}}});
    CHECK_FALSE(find_index_date(s, spec).has_value());
}

TEST_CASE("control rule: five encounters in two years, zero target codes") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream(
        {{0, {1}}, {100, {2}}, {250, {3}}, {380, {4}}, {500, {5}}, {600, {6}}});  // 20 months
    auto idx = find_index_date(s, spec);
    REQUIRE(idx.has_value());
    CHECK_FALSE(idx->is_case);
    CHECK(idx->day == 600);  // last encounter
}

TEST_CASE("four encounters only: not a control") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{0, {1}}, {100, {2}}, {250, {3}}, {380, {4}}});
    CHECK_FALSE(find_index_date(s, spec).has_value());
}

TEST_CASE("five encounters never within one 2-year span: not a control") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{0, {1}}, {400, {2}}, {800, {3}}, {1200, {4}}, {1600, {5}}});
    CHECK_FALSE(find_index_date(s, spec).has_value());
}

TEST_CASE("age bounds at index date are enforced") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{100, {99}}, {160, {99}}, {250, {99}}});
    s.birth_offset = 100 - 25 * 365;  // age 25 at index
    CHECK_FALSE(find_index_date(s, spec).has_value());
    s.birth_offset = 100 - 85 * 365;  // age 85
    CHECK_FALSE(find_index_date(s, spec).has_value());
    s.birth_offset = 100 - 79 * 365;  // age 79: inside [30, 80)
    CHECK(find_index_date(s, spec).has_value());
}

TEST_CASE("extract_tensor: window boundaries and buffer exclusion") {
    CohortSpec spec = spec_with_target(99);
    const int index_day = 900;
    std::vector<int> vocab = {7};
    const int obs_start = index_day - 27 * 30;  // 90
    const int obs_end = index_day - 15 * 30;    // 450

    auto tensor_for_day = [&](int day) {
        auto s = make_stream({{day, {7}}});
        return extract_tensor(s, index_day, 0, spec, vocab);
    };

    // Encounter exactly at index - 15 months: excluded (half-open end).
    PatientTensor at_end = tensor_for_day(obs_end);
    for (int q = 0; q < kNumQuarters; ++q) CHECK(at_end.quarter_counts[q].empty());

    // One day earlier: included, in the last quarter.
    PatientTensor inside = tensor_for_day(obs_end - 1);
    CHECK(inside.quarter_counts[3].at(0) == 1);

    // Window start is inclusive, first quarter.
    PatientTensor at_start = tensor_for_day(obs_start);
    CHECK(at_start.quarter_counts[0].at(0) == 1);

    // Buffer period (index - 1 month) contributes nothing.
    PatientTensor buffered = tensor_for_day(index_day - 30);
    for (int q = 0; q < kNumQuarters; ++q) CHECK(buffered.quarter_counts[q].empty());

    // Prediction-window encounters contribute nothing.
    PatientTensor pred = tensor_for_day(index_day - 200);
    for (int q = 0; q < kNumQuarters; ++q) CHECK(pred.quarter_counts[q].empty());
}

TEST_CASE("extract_tensor: counting within a quarter") {
    CohortSpec spec = spec_with_target(99);
    const int index_day = 900;
    std::vector<int> vocab = {7, 8};
    // Quarter 2 spans [obs_start + 90, obs_start + 180) = [180, 270).
    auto s = make_stream({{200, {7}}, {250, {7, 8}}});
    PatientTensor t = extract_tensor(s, index_day, 1, spec, vocab);
    CHECK(t.quarter_counts[1].at(0) == 2);
    CHECK(t.quarter_counts[1].at(1) == 1);
    CHECK(t.label == 1);
}

TEST_CASE("extract_tensor rejects empty vocabulary") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{100, {7}}});
    CHECK_THROWS_AS(extract_tensor(s, 900, 0, spec, {}), std::invalid_argument);
}

TEST_CASE("leakage: deleting post-observation encounters leaves tensors identical") {
    CohortSpec spec = spec_with_target(99);
    std::vector<int> vocab = {5, 7};
    auto idx_day = 1000;
    auto full = make_stream({{200, {5}}, {400, {7}}, {700, {5}}, {900, {7}}, {990, {5, 7}}});
    auto trimmed = full;
    trimmed.encounters.erase(
        std::remove_if(trimmed.encounters.begin(), trimmed.encounters.end(),
                       [&](const Encounter& e) { return e.day >= idx_day - 15 * 30; }),
        trimmed.encounters.end());
    PatientTensor a = extract_tensor(full, idx_day, 0, spec, vocab);
    PatientTensor b = extract_tensor(trimmed, idx_day, 0, spec, vocab);
    for (int q = 0; q < kNumQuarters; ++q) CHECK(a.quarter_counts[q] == b.quarter_counts[q]);
}

TEST_CASE("quarters partition the observation window") {
    CohortSpec spec = spec_with_target(99);
    std::vector<int> vocab = {5};
    const int idx_day = 900;
    std::vector<Encounter> encs;
    int total_in_window = 0;
    for (int day = 0; day < 1000; day += 17) {
        encs.push_back({day, {5}});
        if (day >= idx_day - 810 && day < idx_day - 450) ++total_in_window;
    }
    PatientTensor t = extract_tensor(make_stream(std::move(encs)), idx_day, 0, spec, vocab);
    int summed = 0;
    for (int q = 0; q < kNumQuarters; ++q)
        for (const auto& [i, c] : t.quarter_counts[q]) summed += c;
    CHECK(summed == total_in_window);
}

TEST_CASE("build_vocab: 50-occurrence boundary and determinism") {
    CohortSpec spec = spec_with_target(99);
    // One control patient whose observation window holds exactly N hits of a code.
    auto build_stream = [&](int code, int hits) {
        std::vector<Encounter> encs;
        // Controls: last encounter far out, >=5 encounters in 2 years.
        // Observation window will be [last-810, last-450).
        const int last = 1200;
        for (int h = 0; h < hits; ++h)
            encs.push_back({last - 810 + h, {code}});
        for (int d = 0; d < 5; ++d) encs.push_back({last - 200 + d * 40, {1}});
        std::sort(encs.begin(), encs.end(),
                  [](const Encounter& a, const Encounter& b) { return a.day < b.day; });
        auto s = make_stream(std::move(encs));
        return s;
    };
    std::vector<EncounterStream> streams = {build_stream(10, 49), build_stream(11, 50)};
    streams[1].patient_id = 2;
    std::vector<int> vocab = build_vocab(streams, spec);
    CHECK(std::find(vocab.begin(), vocab.end(), 10) == vocab.end());  // 49 occurrences
    CHECK(std::find(vocab.begin(), vocab.end(), 11) != vocab.end());  // 50 occurrences
    CHECK(vocab == build_vocab(streams, spec));
}

TEST_CASE("build_vocab: empty result suggests lowering the threshold") {
    CohortSpec spec = spec_with_target(99);
    auto s = make_stream({{0, {1}}, {100, {2}}, {250, {3}}, {380, {4}}, {900, {5}}});
    CHECK_THROWS_WITH_AS(build_vocab({s}, spec), doctest::Contains("threshold"),
                         std::runtime_error);
}

TEST_CASE("split_cohort: stratified, disjoint, deterministic") {
    std::vector<PatientTensor> tensors;
    for (int i = 0; i < 1000; ++i) {
        PatientTensor t;
        t.patient_id = i;
        t.label = i < 100 ? 1 : 0;
        tensors.push_back(t);
    }
    CohortSplit s = split_cohort(tensors, 42, 0.8, 0.1, 0.1);
    auto cases_in = [](const std::vector<PatientTensor>& v) {
        int n = 0;
        for (const auto& t : v) n += t.label;
        return n;
    };
    CHECK(s.train.size() == 800);
    CHECK(s.val.size() == 100);
    CHECK(s.test.size() == 100);
    CHECK(cases_in(s.train) == 80);
    CHECK(cases_in(s.val) == 10);
    CHECK(cases_in(s.test) == 10);

    // Union of splits is the input set.
    std::set<std::int64_t> ids;
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (const auto& t : *part) CHECK(ids.insert(t.patient_id).second);
    CHECK(ids.size() == tensors.size());

    CohortSplit s2 = split_cohort(tensors, 42, 0.8, 0.1, 0.1);
    for (std::size_t i = 0; i < s.train.size(); ++i)
        CHECK(s.train[i].patient_id == s2.train[i].patient_id);
}

TEST_CASE("split_cohort: fractions must sum to 1, zero-case split rejected") {
    std::vector<PatientTensor> tensors(20);
    CHECK_THROWS_AS(split_cohort(tensors, 1, 0.5, 0.2, 0.2), std::invalid_argument);
    // All controls: every split with a positive fraction lacks cases.
    CHECK_THROWS_AS(split_cohort(tensors, 1, 0.8, 0.1, 0.1), std::runtime_error);
}

TEST_CASE("population and cohort files round-trip") {
    CohortSpec spec = spec_with_target(99);
    auto s1 = make_stream({{100, {1, 2}}, {300, {3}}});
    auto s2 = make_stream({{50, {2}}});
    s2.patient_id = 2;
    s2.gender = 1;
    s2.race = 3;

    const std::string pop_path = "test_population.txt";
    write_population(pop_path, {s1, s2});
    auto loaded = read_population(pop_path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].encounters[0].codes == std::vector<int>{1, 2});
    CHECK(loaded[1].gender == 1);
    CHECK(loaded[1].race == 3);
    CHECK(loaded[1].birth_offset == s2.birth_offset);

    PatientTensor t;
    t.patient_id = 9;
    t.label = 1;
    t.gender = 1;
    t.race = 2;
    t.age_bin = 4;
    t.quarter_counts[0][3] = 2;
    t.quarter_counts[3][0] = 1;
    const std::string coh_path = "test_cohort.txt";
    write_cohort(coh_path, {10, 20, 30, 40}, {t});
    CohortFile cf = read_cohort(coh_path);
    CHECK(cf.vocab == std::vector<int>{10, 20, 30, 40});
    REQUIRE(cf.tensors.size() == 1);
    CHECK(cf.tensors[0].quarter_counts[0].at(3) == 2);
    CHECK(cf.tensors[0].quarter_counts[3].at(0) == 1);
    CHECK(cf.tensors[0].age_bin == 4);
    std::remove(pop_path.c_str());
    std::remove(coh_path.c_str());
}

TEST_CASE("files reject missing schema version") {
    const std::string path = "test_bad_version.txt";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("not-a-version\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(read_population(path), doctest::Contains("schema"), std::runtime_error);
    std::remove(path.c_str());
}
