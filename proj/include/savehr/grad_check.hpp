#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "savehr/tape.hpp"

namespace savehr {

struct GradCheckReport {
    struct PerParam {
        std::string name;
        double max_rel_err{0.0};
        int tested{0};
    };
    std::vector<PerParam> per_param;
    double tolerance{0.0};
    bool pass{false};

    double worst() const {
        double w = 0.0;
        for (const auto& p : per_param) w = std::max(w, p.max_rel_err);
        return w;
    }
};

// loss(accumulate): runs one forward pass; when accumulate is true it must
// also run backward so gradients land in the slots. Must be deterministic
// for fixed parameter values.
using LossFn = std::function<double(bool accumulate)>;

GradCheckReport grad_check(const LossFn& loss, const std::vector<ParamSlot*>& params,
                           int entries_per_param, double tolerance,
                           std::uint64_t seed = 0, double h = 1e-5);

}  // namespace savehr
