#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "savehr/cohort.hpp"
#include "savehr/model.hpp"
#include "savehr/tape.hpp"

namespace savehr {

struct TrainHyper {
    double lr{1e-3};
    int epochs{50};
    int batch{32};
    int patience{5};
    bool class_weighting{true};
    double grad_clip{5.0};
    double penalty_coeff{0.0};
    std::uint64_t seed{0};
};

struct EpochLog {
    int epoch{0};
    double train_loss{0.0};
    double val_auc_pr{0.0};
};

struct TrainingLog {
    std::vector<EpochLog> epochs;
    int best_epoch{-1};
    double best_val_auc_pr{0.0};
};

// Builds the per-example loss on a fresh tape; weight is the class weight
// for this example's label. The rng feeds stochastic layers (dropout).
using LossBuilder =
    std::function<Tape::Var(Tape&, const PatientTensor&, double weight, std::mt19937_64& rng)>;
// Deterministic P(case) under the current parameters.
using Scorer = std::function<double(const PatientTensor&)>;

// Adam over the given slots with global-norm clipping; early-stops on
// validation AUC-PR and restores the best-validation parameters.
TrainingLog train_generic(const std::vector<PatientTensor>& train,
                          const std::vector<PatientTensor>& val, const TrainHyper& hyper,
                          const LossBuilder& build_loss, const Scorer& score,
                          const std::vector<ParamSlot*>& params);

double class_weight_for_cases(const std::vector<PatientTensor>& train);

// SAVEHR-specific wrapper.
TrainingLog train_savehr(ModelParams& params, const std::vector<PatientTensor>& train,
                         const std::vector<PatientTensor>& val, const TrainHyper& hyper);

}  // namespace savehr
