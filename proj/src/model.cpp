#include "savehr/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "savehr/checkpoint.hpp"

namespace savehr {

void ModelConfig::validate() const {
    if (vocab < 1 || e < 1 || d_a < 1 || r < 1 || d_h < 1 || d_att < 1)
        throw std::invalid_argument("ModelConfig: all dimensions must be >= 1");
    if (max_tokens < kDemoTokens + 1)
        throw std::invalid_argument("ModelConfig: max_tokens must exceed the demographic tokens");
}

namespace {

Matrix glorot(std::mt19937_64& rng, int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (double& v : m.data) v = dist(rng);
    return m;
}

GruDirection init_gru(std::mt19937_64& rng, const std::string& prefix, int d_in, int d_h) {
    GruDirection g{
        ParamSlot(prefix + ".Wz", glorot(rng, d_h, d_in)),
        ParamSlot(prefix + ".Uz", glorot(rng, d_h, d_h)),
        ParamSlot(prefix + ".bz", Matrix::zeros(d_h, 1)),
        ParamSlot(prefix + ".Wr", glorot(rng, d_h, d_in)),
        ParamSlot(prefix + ".Ur", glorot(rng, d_h, d_h)),
        ParamSlot(prefix + ".br", Matrix::zeros(d_h, 1)),
        ParamSlot(prefix + ".Wn", glorot(rng, d_h, d_in)),
        ParamSlot(prefix + ".Un", glorot(rng, d_h, d_h)),
        ParamSlot(prefix + ".bn", Matrix::zeros(d_h, 1)),
    };
    return g;
}

}  // namespace

std::vector<ParamSlot*> GruDirection::slots() {
    return {&Wz, &Uz, &bz, &Wr, &Ur, &br, &Wn, &Un, &bn};
}

ModelParams ModelParams::init(const ModelConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int w = cfg.embed_width();
    const int gru_in = cfg.r * w;
    ModelParams p{
        cfg,
        ParamSlot("embed", glorot(rng, cfg.token_rows(), cfg.e)),
        ParamSlot("w_s1", glorot(rng, cfg.d_a, w)),
        ParamSlot("W_s2", glorot(rng, cfg.r, cfg.d_a)),
        init_gru(rng, "gru_fwd", gru_in, cfg.d_h),
        init_gru(rng, "gru_bwd", gru_in, cfg.d_h),
        ParamSlot("W_att", glorot(rng, cfg.d_att, 2 * cfg.d_h)),
        ParamSlot("b_att", Matrix::zeros(cfg.d_att, 1)),
        ParamSlot("v_att", glorot(rng, cfg.d_att, 1)),
        ParamSlot("W_head", glorot(rng, 2, 2 * cfg.d_h)),
        ParamSlot("b_head", Matrix::zeros(2, 1)),
    };
    return p;
}

std::vector<ParamSlot*> ModelParams::all() {
    std::vector<ParamSlot*> out{&embed, &w_s1, &W_s2};
    for (ParamSlot* s : fwd.slots()) out.push_back(s);
    for (ParamSlot* s : bwd.slots()) out.push_back(s);
    out.push_back(&W_att);
    out.push_back(&b_att);
    out.push_back(&v_att);
    out.push_back(&W_head);
    out.push_back(&b_head);
    return out;
}

void ModelParams::zero_grads() {
    for (ParamSlot* s : all()) s->zero_grad();
}

std::vector<Matrix> ModelParams::snapshot() const {
    std::vector<Matrix> snap;
    for (ParamSlot* s : const_cast<ModelParams*>(this)->all()) snap.push_back(s->value);
    return snap;
}

void ModelParams::restore(const std::vector<Matrix>& snap) {
    auto slots = all();
    if (snap.size() != slots.size()) throw std::invalid_argument("restore: snapshot size mismatch");
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i]->value = snap[i];
}

QuarterTokens tokenize_quarter(const PatientTensor& tensor, int quarter_1based,
                               const ModelConfig& cfg) {
    if (quarter_1based < 1 || quarter_1based > kNumQuarters)
        throw std::invalid_argument("tokenize_quarter: quarter must be 1..4");
    QuarterTokens out;
    out.ids = {cfg.vocab + tensor.gender,
               cfg.vocab + kNumGenders + tensor.race,
               cfg.vocab + kNumGenders + kNumRaces + tensor.age_bin};
    out.counts = {0, 0, 0};

    const auto& counts = tensor.quarter_counts[quarter_1based - 1];
    std::vector<std::pair<int, int>> active(counts.begin(), counts.end());  // vocab order
    const int cap = cfg.max_tokens - kDemoTokens;
    if (static_cast<int>(active.size()) > cap) {
        // Keep the highest-count codes, ties broken by earlier vocab index.
        std::stable_sort(active.begin(), active.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        active.resize(cap);
        std::sort(active.begin(), active.end());
    }
    for (const auto& [idx, cnt] : active) {
        out.ids.push_back(idx);
        out.counts.push_back(cnt);
    }
    return out;
}

Tape::Var embed_tokens(Tape& tape, Tape::Var table, const QuarterTokens& tokens) {
    Tape::Var rows = tape.gather_rows(table, tokens.ids);
    std::vector<double> count_channel(tokens.counts.size());
    for (std::size_t i = 0; i < tokens.counts.size(); ++i)
        count_channel[i] = std::log1p(static_cast<double>(tokens.counts[i]));
    return tape.append_col_const(rows, count_channel);
}

std::pair<Tape::Var, Tape::Var> self_attend(Tape& tape, Tape::Var E, Tape::Var w_s1,
                                            Tape::Var W_s2) {
    Tape::Var scores = tape.matmul(W_s2, tape.tanh_elem(tape.matmul(w_s1, tape.transpose(E))));
    Tape::Var A = tape.row_softmax(scores);
    Tape::Var Q = tape.matmul(A, E);
    return {A, Q};
}

std::pair<Tape::Var, Tape::Var> single_hop_attend(Tape& tape, Tape::Var E, Tape::Var w_s1,
                                                  Tape::Var w_s2_row) {
    return self_attend(tape, E, w_s1, w_s2_row);
}

Tape::Var gru_step(Tape& tape, Tape::Var x, Tape::Var h, GruDirection& dir) {
    Tape::Var z = tape.sigmoid_elem(tape.add(
        tape.add(tape.matmul(tape.param(dir.Wz), x), tape.matmul(tape.param(dir.Uz), h)),
        tape.param(dir.bz)));
    Tape::Var r = tape.sigmoid_elem(tape.add(
        tape.add(tape.matmul(tape.param(dir.Wr), x), tape.matmul(tape.param(dir.Ur), h)),
        tape.param(dir.br)));
    Tape::Var n = tape.tanh_elem(tape.add(
        tape.add(tape.matmul(tape.param(dir.Wn), x),
                 tape.matmul(tape.param(dir.Un), tape.hadamard(r, h))),
        tape.param(dir.bn)));
    // h' = (1-z).n + z.h
    return tape.add(tape.hadamard(tape.affine(z, -1.0, 1.0), n), tape.hadamard(z, h));
}

std::array<Tape::Var, kNumQuarters> gru_quarters(Tape& tape,
                                                 const std::array<Tape::Var, kNumQuarters>& xs,
                                                 ModelParams& params) {
    const int d_h = params.cfg.d_h;
    std::array<Tape::Var, kNumQuarters> f, b;
    Tape::Var h = tape.constant(Matrix::zeros(d_h, 1));
    for (int q = 0; q < kNumQuarters; ++q) {
        h = gru_step(tape, xs[q], h, params.fwd);
        f[q] = h;
    }
    h = tape.constant(Matrix::zeros(d_h, 1));
    for (int q = kNumQuarters - 1; q >= 0; --q) {
        h = gru_step(tape, xs[q], h, params.bwd);
        b[q] = h;
    }
    std::array<Tape::Var, kNumQuarters> out;
    for (int q = 0; q < kNumQuarters; ++q) out[q] = tape.vconcat(f[q], b[q]);
    return out;
}

std::pair<Tape::Var, Tape::Var> mlp_attention(Tape& tape,
                                              const std::array<Tape::Var, kNumQuarters>& hs,
                                              Tape::Var W_att, Tape::Var b_att, Tape::Var v_att) {
    std::vector<Tape::Var> scores;
    scores.reserve(kNumQuarters);
    for (const Tape::Var& h : hs) {
        Tape::Var hidden = tape.tanh_elem(tape.add(tape.matmul(W_att, h), b_att));
        scores.push_back(tape.matmul(tape.transpose(v_att), hidden));
    }
    Tape::Var alpha = tape.row_softmax(tape.hstack_scalars(scores));
    Tape::Var v;
    for (int q = 0; q < kNumQuarters; ++q) {
        Tape::Var term = tape.scale_by(hs[q], tape.pick(alpha, 0, q));
        v = q == 0 ? term : tape.add(v, term);
    }
    return {alpha, v};
}

ForwardVars build_forward(Tape& tape, const PatientTensor& tensor, ModelParams& params) {
    const ModelConfig& cfg = params.cfg;
    ForwardVars fv;
    Tape::Var table = tape.param(params.embed);
    Tape::Var w_s1 = tape.param(params.w_s1);
    Tape::Var W_s2 = tape.param(params.W_s2);

    std::array<Tape::Var, kNumQuarters> xs;
    for (int q = 0; q < kNumQuarters; ++q) {
        fv.tokens[q] = tokenize_quarter(tensor, q + 1, cfg);
        Tape::Var E = embed_tokens(tape, table, fv.tokens[q]);
        auto [A, Q] = self_attend(tape, E, w_s1, W_s2);
        fv.A[q] = A;
        fv.Q[q] = Q;
        xs[q] = tape.reshape(Q, cfg.r * cfg.embed_width(), 1);
    }

    auto hs = gru_quarters(tape, xs, params);
    auto [alpha, v] = mlp_attention(tape, hs, tape.param(params.W_att), tape.param(params.b_att),
                                    tape.param(params.v_att));
    fv.alpha = alpha;
    fv.patient_vector = v;

    Tape::Var logits = tape.add(tape.matmul(tape.param(params.W_head), v), tape.param(params.b_head));
    fv.yhat = tape.row_softmax(tape.transpose(logits));
    return fv;
}

ForwardTrace predict(const PatientTensor& tensor, ModelParams& params) {
    Tape tape;
    ForwardVars fv = build_forward(tape, tensor, params);
    ForwardTrace tr;
    tr.tokens = fv.tokens;
    for (int q = 0; q < kNumQuarters; ++q) {
        tr.annotations[q] = tape.val(fv.A[q]);
        tr.quarter_encodings[q] = tape.val(fv.Q[q]);
    }
    tr.alpha = tape.val(fv.alpha);
    tr.patient_vector = tape.val(fv.patient_vector);
    tr.yhat = tape.val(fv.yhat);
    return tr;
}

Tape::Var build_loss(Tape& tape, const PatientTensor& tensor, ModelParams& params,
                     double class_weight, double penalty_coeff) {
    ForwardVars fv = build_forward(tape, tensor, params);
    Tape::Var nll = tape.scale(tape.pick(tape.log_elem(fv.yhat), 0, tensor.label), -class_weight);
    if (penalty_coeff != 0.0) {
        Tape::Var penalty;
        for (int q = 0; q < kNumQuarters; ++q) {
            Tape::Var gram = tape.matmul(fv.A[q], tape.transpose(fv.A[q]));
            Tape::Var diff = tape.sub(gram, tape.constant(Matrix::identity(params.cfg.r)));
            Tape::Var fro = tape.sum_all(tape.hadamard(diff, diff));
            penalty = q == 0 ? fro : tape.add(penalty, fro);
        }
        nll = tape.add(nll, tape.scale(penalty, penalty_coeff));
    }
    return nll;
}

std::uint64_t vocab_hash(const std::vector<int>& vocab) {
    std::uint64_t h = 14695981039346656037ULL;  // FNV-1a
    auto mix = [&h](unsigned char b) {
        h ^= b;
        h *= 1099511628211ULL;
    };
    for (int code : vocab) {
        for (const char c : std::to_string(code)) mix(static_cast<unsigned char>(c));
        mix(static_cast<unsigned char>(' '));
    }
    return h;
}

CheckpointData to_checkpoint(const ModelParams& params, std::uint64_t vocab_hash_value) {
    CheckpointData data;
    data.kind = "SAVEHR";
    const ModelConfig& c = params.cfg;
    data.config = {{"vocab", std::to_string(c.vocab)},     {"e", std::to_string(c.e)},
                   {"d_a", std::to_string(c.d_a)},         {"r", std::to_string(c.r)},
                   {"d_h", std::to_string(c.d_h)},         {"d_att", std::to_string(c.d_att)},
                   {"max_tokens", std::to_string(c.max_tokens)}};
    data.vocab_hash = vocab_hash_value;
    for (ParamSlot* s : const_cast<ModelParams&>(params).all())
        data.arrays.emplace_back(s->name, s->value);
    return data;
}

ModelParams savehr_from_checkpoint(const CheckpointData& data) {
    if (data.kind != "SAVEHR")
        throw std::runtime_error("checkpoint kind '" + data.kind + "' is not SAVEHR");
    ModelConfig cfg;
    cfg.vocab = data.config_int("vocab");
    cfg.e = data.config_int("e");
    cfg.d_a = data.config_int("d_a");
    cfg.r = data.config_int("r");
    cfg.d_h = data.config_int("d_h");
    cfg.d_att = data.config_int("d_att");
    cfg.max_tokens = data.config_int("max_tokens");
    ModelParams p = ModelParams::init(cfg);
    for (ParamSlot* s : p.all()) {
        const Matrix& m = data.array(s->name);
        if (!m.same_shape(s->value))
            throw std::runtime_error("checkpoint: array '" + s->name + "' has shape " +
                                     m.shape_str() + ", expected " + s->value.shape_str());
        s->value = m;
    }
    return p;
}

}  // namespace savehr
