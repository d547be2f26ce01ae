#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "savehr/cohort.hpp"
#include "savehr/tape.hpp"

namespace savehr {

inline constexpr const char* kModelSchemaVersion = "savehr-model/1";

struct ModelConfig {
    int vocab{0};
    int e{16};       // embedding dim (count channel makes rows e+1 wide)
    int d_a{16};     // attention hidden dim
    int r{4};        // attention hops
    int d_h{32};     // GRU hidden size per direction
    int d_att{32};   // MLP-attention hidden size
    int max_tokens{64};
    std::uint64_t seed{0};

    int token_rows() const { return vocab + kDemoOneHotDim; }
    int embed_width() const { return e + 1; }
    void validate() const;
};

struct QuarterTokens {
    std::vector<int> ids;     // demographic tokens first, then active codes
    std::vector<int> counts;  // 0 for demographics, >=1 for codes
    int n() const { return static_cast<int>(ids.size()); }
};

struct GruDirection {
    ParamSlot Wz, Uz, bz, Wr, Ur, br, Wn, Un, bn;
    std::vector<ParamSlot*> slots();
};

struct ModelParams {
    ModelConfig cfg;
    ParamSlot embed;       // token_rows x e
    ParamSlot w_s1;        // d_a x (e+1)
    ParamSlot W_s2;        // r x d_a
    GruDirection fwd, bwd;
    ParamSlot W_att;       // d_att x 2d_h
    ParamSlot b_att;       // d_att x 1
    ParamSlot v_att;       // d_att x 1
    ParamSlot W_head;      // 2 x 2d_h
    ParamSlot b_head;      // 2 x 1

    static ModelParams init(const ModelConfig& cfg);
    std::vector<ParamSlot*> all();
    void zero_grads();
    std::vector<Matrix> snapshot() const;
    void restore(const std::vector<Matrix>& snap);
};

struct ForwardTrace {
    std::array<QuarterTokens, kNumQuarters> tokens;
    std::array<Matrix, kNumQuarters> annotations;  // A_t, r x n_t
    std::array<Matrix, kNumQuarters> quarter_encodings;  // Q_t, r x (e+1)
    Matrix alpha;    // 1 x 4
    Matrix patient_vector;  // 2d_h x 1
    Matrix yhat;     // 1 x 2, (p_control, p_case)
    double p_case() const { return yhat.at(0, 1); }
};

// Graph handles for one patient's forward pass on a live tape.
struct ForwardVars {
    std::array<QuarterTokens, kNumQuarters> tokens;
    std::array<Tape::Var, kNumQuarters> A;
    std::array<Tape::Var, kNumQuarters> Q;
    Tape::Var alpha;
    Tape::Var patient_vector;
    Tape::Var yhat;  // 1 x 2
};

QuarterTokens tokenize_quarter(const PatientTensor& tensor, int quarter_1based,
                               const ModelConfig& cfg);

Tape::Var embed_tokens(Tape& tape, Tape::Var table, const QuarterTokens& tokens);

// A = row_softmax(W_s2 tanh(w_s1 E^T)), Q = A E.
std::pair<Tape::Var, Tape::Var> self_attend(Tape& tape, Tape::Var E, Tape::Var w_s1,
                                            Tape::Var W_s2);

// r=1 specialization; identical arithmetic to self_attend with one hop.
std::pair<Tape::Var, Tape::Var> single_hop_attend(Tape& tape, Tape::Var E, Tape::Var w_s1,
                                                  Tape::Var w_s2_row);

Tape::Var gru_step(Tape& tape, Tape::Var x, Tape::Var h, GruDirection& dir);

// Bidirectional GRU over the 4 quarter encodings; h_q = [forward ; backward].
std::array<Tape::Var, kNumQuarters> gru_quarters(Tape& tape,
                                                 const std::array<Tape::Var, kNumQuarters>& xs,
                                                 ModelParams& params);

std::pair<Tape::Var, Tape::Var> mlp_attention(Tape& tape,
                                              const std::array<Tape::Var, kNumQuarters>& hs,
                                              Tape::Var W_att, Tape::Var b_att, Tape::Var v_att);

ForwardVars build_forward(Tape& tape, const PatientTensor& tensor, ModelParams& params);

ForwardTrace predict(const PatientTensor& tensor, ModelParams& params);

// Class-weighted cross-entropy, plus the optional multi-hop redundancy
// penalty lambda * sum_t ||A_t A_t^T - I||_F^2.
Tape::Var build_loss(Tape& tape, const PatientTensor& tensor, ModelParams& params,
                     double class_weight, double penalty_coeff);

std::uint64_t vocab_hash(const std::vector<int>& vocab);

struct CheckpointData;  // see checkpoint.hpp
CheckpointData to_checkpoint(const ModelParams& params, std::uint64_t vocab_hash_value);
ModelParams savehr_from_checkpoint(const CheckpointData& data);

}  // namespace savehr
