#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "savehr/cohort.hpp"
#include "savehr/model.hpp"
#include "savehr/tape.hpp"
#include "savehr/train.hpp"

namespace savehr {

enum class BaselineKind { LR, MLP, BG, BG_A, CNN1G, CNN1G_A, CNNLK, CNNLK_A, DENSE_A };

std::string baseline_name(BaselineKind kind);
BaselineKind baseline_from_name(const std::string& name);
bool baseline_has_attention(BaselineKind kind);

// Demographics one-hots followed by the 4 concatenated quarter count vectors.
std::vector<double> flat_features(const PatientTensor& t, int vocab);
int flat_dim(int vocab);

struct BaselineConfig {
    int vocab{0};
    int e{16};
    int d_h{32};
    int d_att{32};
    int max_code_tokens{32};  // padded slot count for CNN-LK / Dense-A
    int cnn_filters{64};      // CNN-1G filter count
    int lk_filters{4};        // CNN-LK slot-weight filters
    int dense_width{64};
    int bg_width{64};
    int mlp_hidden{64};
    double dropout{0.3};
    std::uint64_t seed{0};
};

struct LogisticModel {
    std::vector<double> weights;
    double bias{0.0};
    bool converged{false};
    int epochs_run{0};

    double score(const std::vector<double>& x) const;
    double score(const PatientTensor& t, int vocab) const;
};

struct LogisticHyper {
    double lr{0.1};
    int max_epochs{500};
    double tol{1e-7};
};

LogisticModel fit_logistic(const std::vector<PatientTensor>& train, int vocab,
                           const LogisticHyper& hyper = {});

struct MlpModel {
    BaselineConfig cfg;
    ParamSlot W1, b1, W2, b2;

    static MlpModel init(const BaselineConfig& cfg);
    std::vector<ParamSlot*> all();
    Tape::Var build_loss(Tape& tape, const PatientTensor& t, double weight, std::mt19937_64& rng,
                         bool training);
    double score(const PatientTensor& t);
};

TrainingLog fit_mlp(MlpModel& model, const std::vector<PatientTensor>& train,
                    const std::vector<PatientTensor>& val, const TrainHyper& hyper);

struct SeqBaseline {
    BaselineKind kind{BaselineKind::BG};
    BaselineConfig cfg;
    ParamSlot embed;              // vocab x e (codes only; demographics join after the GRU)
    ParamSlot enc_W, enc_b;       // per-quarter encoder, shape depends on kind
    GruDirection fwd, bwd;
    ParamSlot W_att, b_att, v_att;  // attention variants only
    ParamSlot W_head, b_head;

    static SeqBaseline init(BaselineKind kind, const BaselineConfig& cfg);
    std::vector<ParamSlot*> all();

    // Token order matters only for the fixed-slot encoders (CNN-LK, Dense-A).
    Tape::Var encode_quarter(Tape& tape, Tape::Var table, const QuarterTokens& code_tokens,
                             const PatientTensor& t, int quarter_1based);
    Tape::Var build_logits(Tape& tape, const PatientTensor& t);
    Tape::Var build_loss(Tape& tape, const PatientTensor& t, double weight);
    double score(const PatientTensor& t);
};

// Active-code tokens of one quarter (no demographics), vocabulary order,
// truncated to max_code_tokens by highest count then vocab order.
QuarterTokens code_tokens_of_quarter(const PatientTensor& t, int quarter_1based,
                                     const BaselineConfig& cfg);

TrainingLog fit_sequence_baseline(SeqBaseline& model, const std::vector<PatientTensor>& train,
                                  const std::vector<PatientTensor>& val, const TrainHyper& hyper);

struct CheckpointData;
CheckpointData seq_baseline_to_checkpoint(const SeqBaseline& model, std::uint64_t vocab_hash_value);
SeqBaseline seq_baseline_from_checkpoint(const CheckpointData& data);

}  // namespace savehr
