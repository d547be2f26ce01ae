#include "savehr/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

#include "savehr/checkpoint.hpp"

namespace savehr {

std::string baseline_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::LR: return "LR";
        case BaselineKind::MLP: return "MLP";
        case BaselineKind::BG: return "BG";
        case BaselineKind::BG_A: return "BG-A";
        case BaselineKind::CNN1G: return "CNN-1G";
        case BaselineKind::CNN1G_A: return "CNN-1G-A";
        case BaselineKind::CNNLK: return "CNN-LK";
        case BaselineKind::CNNLK_A: return "CNN-LK-A";
        case BaselineKind::DENSE_A: return "Dense-A";
    }
    throw std::logic_error("baseline_name: unreachable");
}

BaselineKind baseline_from_name(const std::string& name) {
    for (BaselineKind k : {BaselineKind::LR, BaselineKind::MLP, BaselineKind::BG,
                           BaselineKind::BG_A, BaselineKind::CNN1G, BaselineKind::CNN1G_A,
                           BaselineKind::CNNLK, BaselineKind::CNNLK_A, BaselineKind::DENSE_A})
        if (baseline_name(k) == name) return k;
    throw std::invalid_argument("unknown baseline kind '" + name + "'");
}

bool baseline_has_attention(BaselineKind kind) {
    return kind == BaselineKind::BG_A || kind == BaselineKind::CNN1G_A ||
           kind == BaselineKind::CNNLK_A || kind == BaselineKind::DENSE_A;
}

int flat_dim(int vocab) { return kDemoOneHotDim + kNumQuarters * vocab; }

std::vector<double> flat_features(const PatientTensor& t, int vocab) {
    std::vector<double> x(flat_dim(vocab), 0.0);
    x[t.gender] = 1.0;
    x[kNumGenders + t.race] = 1.0;
    x[kNumGenders + kNumRaces + t.age_bin] = 1.0;
    for (int q = 0; q < kNumQuarters; ++q)
        for (const auto& [idx, cnt] : t.quarter_counts[q])
            x[kDemoOneHotDim + q * vocab + idx] = static_cast<double>(cnt);
    return x;
}

// ---------------------------------------------------------------- logistic

namespace {
double sigmoid(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
}  // namespace

double LogisticModel::score(const std::vector<double>& x) const {
    double z = bias;
    for (std::size_t i = 0; i < x.size(); ++i) z += weights[i] * x[i];
    return sigmoid(z);
}

double LogisticModel::score(const PatientTensor& t, int vocab) const {
    return score(flat_features(t, vocab));
}

LogisticModel fit_logistic(const std::vector<PatientTensor>& train, int vocab,
                           const LogisticHyper& hyper) {
    if (train.empty()) throw std::invalid_argument("fit_logistic: empty training set");
    const int dim = flat_dim(vocab);
    std::vector<std::vector<double>> xs;
    xs.reserve(train.size());
    for (const PatientTensor& t : train) xs.push_back(flat_features(t, vocab));

    LogisticModel model;
    model.weights.assign(dim, 0.0);

    const double n = static_cast<double>(train.size());
    std::vector<double> grad(dim);
    double prev_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_b = 0.0, loss = 0.0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double p = model.score(xs[i]);
            const int y = train[i].label;
            const double err = p - y;
            for (int j = 0; j < dim; ++j) grad[j] += err * xs[i][j];
            grad_b += err;
            loss -= y ? std::log(std::max(p, 1e-15)) : std::log(std::max(1.0 - p, 1e-15));
        }
        loss /= n;
        for (int j = 0; j < dim; ++j) model.weights[j] -= hyper.lr * grad[j] / n;
        model.bias -= hyper.lr * grad_b / n;
        model.epochs_run = epoch;
        if (std::abs(prev_loss - loss) < hyper.tol) {
            model.converged = true;
            break;
        }
        prev_loss = loss;
    }
    return model;
}

// --------------------------------------------------------------------- MLP

namespace {

Matrix glorot(std::mt19937_64& rng, int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Matrix m(rows, cols);
    for (double& v : m.data) v = dist(rng);
    return m;
}

Tape::Var softmax_head(Tape& tape, Tape::Var rep, Tape::Var W, Tape::Var b) {
    return tape.row_softmax(tape.transpose(tape.add(tape.matmul(W, rep), b)));
}

Tape::Var nll_of(Tape& tape, Tape::Var yhat, int label, double weight) {
    return tape.scale(tape.pick(tape.log_elem(yhat), 0, label), -weight);
}

}  // namespace

MlpModel MlpModel::init(const BaselineConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    const int dim = flat_dim(cfg.vocab);
    return MlpModel{cfg,
                    ParamSlot("W1", glorot(rng, cfg.mlp_hidden, dim)),
                    ParamSlot("b1", Matrix::zeros(cfg.mlp_hidden, 1)),
                    ParamSlot("W2", glorot(rng, 2, cfg.mlp_hidden)),
                    ParamSlot("b2", Matrix::zeros(2, 1))};
}

std::vector<ParamSlot*> MlpModel::all() { return {&W1, &b1, &W2, &b2}; }

Tape::Var MlpModel::build_loss(Tape& tape, const PatientTensor& t, double weight,
                               std::mt19937_64& rng, bool training) {
    std::vector<double> feats = flat_features(t, cfg.vocab);
    Tape::Var x = tape.constant(Matrix(static_cast<int>(feats.size()), 1, feats));
    Tape::Var hidden =
        tape.relu_elem(tape.add(tape.matmul(tape.param(W1), x), tape.param(b1)));
    if (training && cfg.dropout > 0.0) {
        const double keep = 1.0 - cfg.dropout;
        std::vector<double> mask(cfg.mlp_hidden);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        for (double& m : mask) m = u01(rng) < keep ? 1.0 : 0.0;
        hidden = tape.dropout_mask(hidden, mask, keep);
    }
    Tape::Var yhat = softmax_head(tape, hidden, tape.param(W2), tape.param(b2));
    return nll_of(tape, yhat, t.label, weight);
}

double MlpModel::score(const PatientTensor& t) {
    std::vector<double> feats = flat_features(t, cfg.vocab);
    Tape tape;
    Tape::Var x = tape.constant(Matrix(static_cast<int>(feats.size()), 1, feats));
    Tape::Var hidden = tape.relu_elem(tape.add(tape.matmul(tape.param(W1), x), tape.param(b1)));
    Tape::Var yhat = softmax_head(tape, hidden, tape.param(W2), tape.param(b2));
    return tape.val(yhat).at(0, 1);
}

TrainingLog fit_mlp(MlpModel& model, const std::vector<PatientTensor>& train,
                    const std::vector<PatientTensor>& val, const TrainHyper& hyper) {
    auto loss = [&model](Tape& tape, const PatientTensor& t, double w, std::mt19937_64& rng) {
        return model.build_loss(tape, t, w, rng, true);
    };
    auto score = [&model](const PatientTensor& t) { return model.score(t); };
    return train_generic(train, val, hyper, loss, score, model.all());
}

// ------------------------------------------------------- sequence baselines

QuarterTokens code_tokens_of_quarter(const PatientTensor& t, int quarter_1based,
                                     const BaselineConfig& cfg) {
    QuarterTokens out;
    const auto& counts = t.quarter_counts[quarter_1based - 1];
    std::vector<std::pair<int, int>> active(counts.begin(), counts.end());
    if (static_cast<int>(active.size()) > cfg.max_code_tokens) {
        std::stable_sort(active.begin(), active.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        active.resize(cfg.max_code_tokens);
        std::sort(active.begin(), active.end());
    }
    for (const auto& [idx, cnt] : active) {
        out.ids.push_back(idx);
        out.counts.push_back(cnt);
    }
    return out;
}

namespace {

int quarter_vec_dim(BaselineKind kind, const BaselineConfig& cfg) {
    switch (kind) {
        case BaselineKind::BG:
        case BaselineKind::BG_A: return cfg.bg_width;
        case BaselineKind::CNN1G:
        case BaselineKind::CNN1G_A: return cfg.cnn_filters;
        case BaselineKind::CNNLK:
        case BaselineKind::CNNLK_A: return cfg.lk_filters * (cfg.e + 1);
        case BaselineKind::DENSE_A: return cfg.dense_width;
        default: throw std::invalid_argument("not a sequence baseline");
    }
}

bool uses_embedding(BaselineKind kind) {
    return kind != BaselineKind::BG && kind != BaselineKind::BG_A;
}

}  // namespace

SeqBaseline SeqBaseline::init(BaselineKind kind, const BaselineConfig& cfg) {
    if (kind == BaselineKind::LR || kind == BaselineKind::MLP)
        throw std::invalid_argument("SeqBaseline: kind must be a sequence baseline");
    std::mt19937_64 rng(cfg.seed);
    const int ew = cfg.e + 1;
    const int L = cfg.max_code_tokens;
    int enc_rows, enc_cols;
    switch (kind) {
        case BaselineKind::BG:
        case BaselineKind::BG_A:
            enc_rows = cfg.bg_width;
            enc_cols = cfg.vocab;
            break;
        case BaselineKind::CNN1G:
        case BaselineKind::CNN1G_A:
            enc_rows = cfg.cnn_filters;
            enc_cols = ew;
            break;
        case BaselineKind::CNNLK:
        case BaselineKind::CNNLK_A:
            enc_rows = cfg.lk_filters;
            enc_cols = L;
            break;
        case BaselineKind::DENSE_A:
            enc_rows = cfg.dense_width;
            enc_cols = L * ew;
            break;
        default: throw std::logic_error("unreachable");
    }
    const int d_q = quarter_vec_dim(kind, cfg);
    SeqBaseline m{
        kind,
        cfg,
        ParamSlot("embed", glorot(rng, cfg.vocab, cfg.e)),
        ParamSlot("enc_W", glorot(rng, enc_rows, enc_cols)),
        ParamSlot("enc_b", Matrix::zeros(enc_rows, 1)),
        GruDirection{ParamSlot("gru_fwd.Wz", glorot(rng, cfg.d_h, d_q)),
                     ParamSlot("gru_fwd.Uz", glorot(rng, cfg.d_h, cfg.d_h)),
                     ParamSlot("gru_fwd.bz", Matrix::zeros(cfg.d_h, 1)),
                     ParamSlot("gru_fwd.Wr", glorot(rng, cfg.d_h, d_q)),
                     ParamSlot("gru_fwd.Ur", glorot(rng, cfg.d_h, cfg.d_h)),
                     ParamSlot("gru_fwd.br", Matrix::zeros(cfg.d_h, 1)),
                     ParamSlot("gru_fwd.Wn", glorot(rng, cfg.d_h, d_q)),
                     ParamSlot("gru_fwd.Un", glorot(rng, cfg.d_h, cfg.d_h)),
                     ParamSlot("gru_fwd.bn", Matrix::zeros(cfg.d_h, 1))},
        GruDirection{ParamSlot("gru_bwd.Wz", glorot(rng, cfg.d_h, d_q)),
                     ParamSlot("gru_bwd.Uz", glorot(rng, cfg.d_h, cfg.d_h)),
                     ParamSlot("gru_bwd.bz", Matrix::zeros(cfg.d_h, 1)),
                     ParamSlot("gru_bwd.Wr", glorot(rng, cfg.d_h, d_q)),
                     ParamSlot("gru_bwd.Ur", glorot(rng, cfg.d_h, cfg.d_h)),
                     ParamSlot("gru_bwd.br", Matrix::zeros(cfg.d_h, 1)),
                     ParamSlot("gru_bwd.Wn", glorot(rng, cfg.d_h, d_q)),
                     ParamSlot("gru_bwd.Un", glorot(rng, cfg.d_h, cfg.d_h)),
                     ParamSlot("gru_bwd.bn", Matrix::zeros(cfg.d_h, 1))},
        ParamSlot("W_att", glorot(rng, cfg.d_att, 2 * cfg.d_h)),
        ParamSlot("b_att", Matrix::zeros(cfg.d_att, 1)),
        ParamSlot("v_att", baseline_has_attention(kind) ? glorot(rng, cfg.d_att, 1)
                                                        : Matrix::zeros(cfg.d_att, 1)),
        ParamSlot("W_head", glorot(rng, 2, 2 * cfg.d_h + kDemoOneHotDim)),
        ParamSlot("b_head", Matrix::zeros(2, 1)),
    };
    return m;
}

std::vector<ParamSlot*> SeqBaseline::all() {
    std::vector<ParamSlot*> out;
    if (uses_embedding(kind)) out.push_back(&embed);
    out.push_back(&enc_W);
    out.push_back(&enc_b);
    for (ParamSlot* s : fwd.slots()) out.push_back(s);
    for (ParamSlot* s : bwd.slots()) out.push_back(s);
    if (baseline_has_attention(kind)) {
        out.push_back(&W_att);
        out.push_back(&b_att);
        out.push_back(&v_att);
    }
    out.push_back(&W_head);
    out.push_back(&b_head);
    return out;
}

Tape::Var SeqBaseline::encode_quarter(Tape& tape, Tape::Var table,
                                      const QuarterTokens& code_tokens, const PatientTensor& t,
                                      int quarter_1based) {
    const int ew = cfg.e + 1;
    switch (kind) {
        case BaselineKind::BG:
        case BaselineKind::BG_A: {
            std::vector<double> counts(cfg.vocab, 0.0);
            for (const auto& [idx, cnt] : t.quarter_counts[quarter_1based - 1])
                counts[idx] = static_cast<double>(cnt);
            Tape::Var x = tape.constant(Matrix(cfg.vocab, 1, counts));
            return tape.add(tape.matmul(tape.param(enc_W), x), tape.param(enc_b));
        }
        case BaselineKind::CNN1G:
        case BaselineKind::CNN1G_A: {
            // Shared linear map per token + relu, then sum-pool over tokens
            // (permutation invariant).
            if (code_tokens.ids.empty())
                return tape.constant(Matrix::zeros(cfg.cnn_filters, 1));  // empty sum-pool
            Tape::Var E = embed_tokens(tape, table, code_tokens);  // n x (e+1)
            Tape::Var mapped = tape.relu_elem(
                tape.add(tape.matmul(tape.param(enc_W), tape.transpose(E)),
                         tape.matmul(tape.param(enc_b),
                                     tape.constant(Matrix(1, code_tokens.n(),
                                                          std::vector<double>(code_tokens.n(), 1.0))))));
            // Sum-pool columns.
            Tape::Var ones = tape.constant(Matrix(code_tokens.n(), 1,
                                                  std::vector<double>(code_tokens.n(), 1.0)));
            return tape.matmul(mapped, ones);
        }
        case BaselineKind::CNNLK:
        case BaselineKind::CNNLK_A: {
            // Fixed-slot weighted combinations of all token embeddings.
            Tape::Var padded = code_tokens.ids.empty()
                                   ? tape.constant(Matrix::zeros(cfg.max_code_tokens, ew))
                                   : tape.pad_rows(embed_tokens(tape, table, code_tokens),
                                                   cfg.max_code_tokens);
            Tape::Var bias = tape.matmul(
                tape.param(enc_b),
                tape.constant(Matrix(1, ew, std::vector<double>(ew, 1.0))));  // F x ew broadcast
            Tape::Var combo =
                tape.relu_elem(tape.add(tape.matmul(tape.param(enc_W), padded), bias));
            return tape.reshape(combo, cfg.lk_filters * ew, 1);
        }
        case BaselineKind::DENSE_A: {
            Tape::Var padded = code_tokens.ids.empty()
                                   ? tape.constant(Matrix::zeros(cfg.max_code_tokens, ew))
                                   : tape.pad_rows(embed_tokens(tape, table, code_tokens),
                                                   cfg.max_code_tokens);
            Tape::Var flat = tape.reshape(padded, cfg.max_code_tokens * ew, 1);
            return tape.relu_elem(
                tape.add(tape.matmul(tape.param(enc_W), flat), tape.param(enc_b)));
        }
        default: throw std::logic_error("encode_quarter: unreachable");
    }
}

Tape::Var SeqBaseline::build_logits(Tape& tape, const PatientTensor& t) {
    Tape::Var table;
    if (uses_embedding(kind)) table = tape.param(embed);

    std::array<Tape::Var, kNumQuarters> xs;
    for (int q = 1; q <= kNumQuarters; ++q) {
        QuarterTokens toks = code_tokens_of_quarter(t, q, cfg);
        xs[q - 1] = encode_quarter(tape, table, toks, t, q);
    }

    // Bi-GRU over the 4 quarter vectors.
    std::array<Tape::Var, kNumQuarters> f, b;
    Tape::Var h = tape.constant(Matrix::zeros(cfg.d_h, 1));
    for (int q = 0; q < kNumQuarters; ++q) {
        h = gru_step(tape, xs[q], h, fwd);
        f[q] = h;
    }
    h = tape.constant(Matrix::zeros(cfg.d_h, 1));
    for (int q = kNumQuarters - 1; q >= 0; --q) {
        h = gru_step(tape, xs[q], h, bwd);
        b[q] = h;
    }
    std::array<Tape::Var, kNumQuarters> hs;
    for (int q = 0; q < kNumQuarters; ++q) hs[q] = tape.vconcat(f[q], b[q]);

    Tape::Var rep;
    if (baseline_has_attention(kind)) {
        auto [alpha, v] = mlp_attention(tape, hs, tape.param(W_att), tape.param(b_att),
                                        tape.param(v_att));
        (void)alpha;
        rep = v;
    } else {
        rep = hs[kNumQuarters - 1];  // quarter nearest the index date
    }

    std::vector<double> demo(kDemoOneHotDim, 0.0);
    demo[t.gender] = 1.0;
    demo[kNumGenders + t.race] = 1.0;
    demo[kNumGenders + kNumRaces + t.age_bin] = 1.0;
    Tape::Var full = tape.vconcat(rep, tape.constant(Matrix(kDemoOneHotDim, 1, demo)));
    return tape.add(tape.matmul(tape.param(W_head), full), tape.param(b_head));
}

Tape::Var SeqBaseline::build_loss(Tape& tape, const PatientTensor& t, double weight) {
    Tape::Var yhat = tape.row_softmax(tape.transpose(build_logits(tape, t)));
    return nll_of(tape, yhat, t.label, weight);
}

double SeqBaseline::score(const PatientTensor& t) {
    Tape tape;
    Tape::Var yhat = tape.row_softmax(tape.transpose(build_logits(tape, t)));
    return tape.val(yhat).at(0, 1);
}

TrainingLog fit_sequence_baseline(SeqBaseline& model, const std::vector<PatientTensor>& train,
                                  const std::vector<PatientTensor>& val,
                                  const TrainHyper& hyper) {
    auto loss = [&model](Tape& tape, const PatientTensor& t, double w, std::mt19937_64&) {
        return model.build_loss(tape, t, w);
    };
    auto score = [&model](const PatientTensor& t) { return model.score(t); };
    return train_generic(train, val, hyper, loss, score, model.all());
}

CheckpointData seq_baseline_to_checkpoint(const SeqBaseline& model,
                                          std::uint64_t vocab_hash_value) {
    CheckpointData data;
    data.kind = baseline_name(model.kind);
    const BaselineConfig& c = model.cfg;
    data.config = {{"vocab", std::to_string(c.vocab)},
                   {"e", std::to_string(c.e)},
                   {"d_h", std::to_string(c.d_h)},
                   {"d_att", std::to_string(c.d_att)},
                   {"max_code_tokens", std::to_string(c.max_code_tokens)},
                   {"cnn_filters", std::to_string(c.cnn_filters)},
                   {"lk_filters", std::to_string(c.lk_filters)},
                   {"dense_width", std::to_string(c.dense_width)},
                   {"bg_width", std::to_string(c.bg_width)},
                   {"mlp_hidden", std::to_string(c.mlp_hidden)}};
    data.vocab_hash = vocab_hash_value;
    for (ParamSlot* s : const_cast<SeqBaseline&>(model).all())
        data.arrays.emplace_back(s->name, s->value);
    return data;
}

SeqBaseline seq_baseline_from_checkpoint(const CheckpointData& data) {
    BaselineConfig cfg;
    cfg.vocab = data.config_int("vocab");
    cfg.e = data.config_int("e");
    cfg.d_h = data.config_int("d_h");
    cfg.d_att = data.config_int("d_att");
    cfg.max_code_tokens = data.config_int("max_code_tokens");
    cfg.cnn_filters = data.config_int("cnn_filters");
    cfg.lk_filters = data.config_int("lk_filters");
    cfg.dense_width = data.config_int("dense_width");
    cfg.bg_width = data.config_int("bg_width");
    cfg.mlp_hidden = data.config_int("mlp_hidden");
    SeqBaseline m = SeqBaseline::init(baseline_from_name(data.kind), cfg);
    for (ParamSlot* s : m.all()) {
        const Matrix& a = data.array(s->name);
        if (!a.same_shape(s->value))
            throw std::runtime_error("checkpoint: array '" + s->name + "' has shape " +
                                     a.shape_str() + ", expected " + s->value.shape_str());
        s->value = a;
    }
    return m;
}

}  // namespace savehr
