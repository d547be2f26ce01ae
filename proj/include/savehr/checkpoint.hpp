#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "savehr/matrix.hpp"

namespace savehr {

// Versioned text checkpoint: header, kind, config key=value lines, the
// vocabulary hash, then named parameter arrays as decimal text.
struct CheckpointData {
    std::string kind;
    std::map<std::string, std::string> config;
    std::uint64_t vocab_hash{0};
    std::vector<std::pair<std::string, Matrix>> arrays;

    const Matrix& array(const std::string& name) const;
    int config_int(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace savehr
