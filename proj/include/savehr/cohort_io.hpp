#pragma once

#include <string>
#include <vector>

#include "savehr/cohort.hpp"

namespace savehr {

// First line of every data file.
inline constexpr const char* kCohortSchemaVersion = "savehr-cohort/1";

void write_population(const std::string& path, const std::vector<EncounterStream>& streams);
std::vector<EncounterStream> read_population(const std::string& path);

struct CohortFile {
    std::vector<int> vocab;
    std::vector<PatientTensor> tensors;
};

void write_cohort(const std::string& path, const std::vector<int>& vocab,
                  const std::vector<PatientTensor>& tensors);
CohortFile read_cohort(const std::string& path);

}  // namespace savehr
