#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "savehr/baselines.hpp"
#include "savehr/checkpoint.hpp"
#include "savehr/grad_check.hpp"

using namespace savehr;

namespace {

PatientTensor demo_patient(std::int64_t id, int label) {
    PatientTensor t;
    t.patient_id = id;
    t.label = label;
    return t;
}

PatientTensor random_patient(std::uint64_t seed, int label, int vocab) {
    std::mt19937_64 rng(seed);
    PatientTensor t = demo_patient(static_cast<std::int64_t>(seed), label);
    t.gender = static_cast<int>(rng() % kNumGenders);
    t.race = static_cast<int>(rng() % kNumRaces);
    t.age_bin = static_cast<int>(rng() % kNumAgeBins);
    std::uniform_int_distribution<int> n_codes(1, 3), code(0, vocab - 1), cnt(1, 3);
    for (int q = 0; q < kNumQuarters; ++q) {
        const int n = n_codes(rng);
        for (int i = 0; i < n; ++i) t.quarter_counts[q][code(rng)] = cnt(rng);
    }
    return t;
}

BaselineConfig tiny_config(int vocab) {
    BaselineConfig cfg;
    cfg.vocab = vocab;
    cfg.e = 4;
    cfg.d_h = 3;
    cfg.d_att = 3;
    cfg.max_code_tokens = 5;
    cfg.cnn_filters = 4;
    cfg.lk_filters = 2;
    cfg.dense_width = 4;
    cfg.bg_width = 4;
    cfg.mlp_hidden = 16;
    cfg.dropout = 0.0;
    cfg.seed = 11;
    return cfg;
}

constexpr BaselineKind kSeqKinds[] = {BaselineKind::BG,      BaselineKind::BG_A,
                                      BaselineKind::CNN1G,   BaselineKind::CNN1G_A,
                                      BaselineKind::CNNLK,   BaselineKind::CNNLK_A,
                                      BaselineKind::DENSE_A};

}  // namespace

TEST_CASE("baseline names round-trip") {
    for (BaselineKind k : {BaselineKind::LR, BaselineKind::MLP, BaselineKind::BG,
                           BaselineKind::BG_A, BaselineKind::CNN1G, BaselineKind::CNN1G_A,
                           BaselineKind::CNNLK, BaselineKind::CNNLK_A, BaselineKind::DENSE_A})
        CHECK(baseline_from_name(baseline_name(k)) == k);
    CHECK_THROWS_AS(baseline_from_name("RF"), std::invalid_argument);
}

TEST_CASE("flat_features layout: demographics then per-quarter counts") {
    PatientTensor t = demo_patient(1, 0);
    t.gender = 1;
    t.race = 3;
    t.age_bin = 2;
    t.quarter_counts[0][4] = 2;
    t.quarter_counts[3][0] = 7;
    const int vocab = 6;
    std::vector<double> x = flat_features(t, vocab);
    REQUIRE(static_cast<int>(x.size()) == flat_dim(vocab));
    CHECK(x[1] == 1.0);
    CHECK(x[kNumGenders + 3] == 1.0);
    CHECK(x[kNumGenders + kNumRaces + 2] == 1.0);
    CHECK(x[kDemoOneHotDim + 4] == 2.0);
    CHECK(x[kDemoOneHotDim + 3 * vocab + 0] == 7.0);
    double total = 0.0;
    for (double v : x) total += v;
    CHECK(total == 3.0 + 2.0 + 7.0);
}

TEST_CASE("logistic: linearly separable toy reaches training accuracy 1.0") {
    const int vocab = 2;
    std::vector<PatientTensor> train;
    for (int i = 0; i < 40; ++i) {
        PatientTensor t = demo_patient(i, i % 2);
        if (t.label == 1) t.quarter_counts[0][0] = 1;  // code 0 marks cases
        else t.quarter_counts[0][1] = 1;
        train.push_back(t);
    }
    LogisticModel model = fit_logistic(train, vocab);
    int correct = 0;
    for (const PatientTensor& t : train)
        correct += (model.score(t, vocab) > 0.5) == (t.label == 1);
    CHECK(correct == 40);
}

TEST_CASE("logistic: slope of a 1-D relationship matches the ML grid oracle within 10%") {
    const int vocab = 1;
    const double a_true = -0.5, b_true = 1.2;
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> xd(0, 3);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<PatientTensor> train;
    // Cell counts n[x][y] let the oracle evaluate the exact log-likelihood.
    int cell[4][2] = {};
    for (int i = 0; i < 5000; ++i) {
        const int x = xd(rng);
        const double p = 1.0 / (1.0 + std::exp(-(a_true + b_true * x)));
        const int y = u01(rng) < p ? 1 : 0;
        PatientTensor t = demo_patient(i, y);
        if (x > 0) t.quarter_counts[0][0] = x;
        train.push_back(t);
        ++cell[x][y];
    }

    // Independent maximum-likelihood oracle: fine grid over (intercept, slope).
    double best_ll = -1e300, b_ml = 0.0;
    for (double a = -2.0; a <= 1.0; a += 0.01) {
        for (double b = 0.0; b <= 2.5; b += 0.01) {
            double ll = 0.0;
            for (int x = 0; x < 4; ++x) {
                const double z = a + b * x;
                const double lp = -std::log1p(std::exp(-z));   // log sigma(z)
                const double lq = -std::log1p(std::exp(z));    // log (1-sigma(z))
                ll += cell[x][1] * lp + cell[x][0] * lq;
            }
            if (ll > best_ll) {
                best_ll = ll;
                b_ml = b;
            }
        }
    }

    LogisticHyper hyper;
    hyper.lr = 0.5;
    hyper.max_epochs = 3000;
    LogisticModel model = fit_logistic(train, vocab, hyper);
    const double slope = model.weights[kDemoOneHotDim + 0];
    CHECK(std::abs(slope - b_ml) <= 0.10 * std::abs(b_ml));
}

TEST_CASE("logistic: all-constant feature keeps finite weights") {
    const int vocab = 2;
    std::mt19937_64 rng(3);
    std::vector<PatientTensor> train;
    for (int i = 0; i < 60; ++i) {
        PatientTensor t = demo_patient(i, static_cast<int>(rng() % 2));
        t.quarter_counts[0][1] = 1;  // constant feature
        train.push_back(t);
    }
    LogisticModel model = fit_logistic(train, vocab);
    CHECK(std::isfinite(model.bias));
    for (double w : model.weights) CHECK(std::isfinite(w));
}

TEST_CASE("mlp: dropout 0 makes training loss equal the deterministic path") {
    BaselineConfig cfg = tiny_config(4);
    cfg.dropout = 0.0;
    MlpModel model = MlpModel::init(cfg);
    PatientTensor t = random_patient(21, 1, cfg.vocab);
    std::mt19937_64 rng(1);
    Tape tape;
    Tape::Var l = model.build_loss(tape, t, 1.0, rng, true);
    const double train_loss = tape.val(l).at(0, 0);
    const double p = model.score(t);
    CHECK(train_loss == doctest::Approx(-std::log(p)).epsilon(1e-12));
}

TEST_CASE("mlp: same seed and dropout 0 reproduce identical trained parameters") {
    BaselineConfig cfg = tiny_config(4);
    cfg.dropout = 0.0;
    std::vector<PatientTensor> train, val;
    for (int i = 0; i < 12; ++i) train.push_back(random_patient(100 + i, i % 2, cfg.vocab));
    for (int i = 0; i < 6; ++i) val.push_back(random_patient(200 + i, i % 2, cfg.vocab));
    TrainHyper hyper;
    hyper.epochs = 4;
    hyper.seed = 5;
    MlpModel m1 = MlpModel::init(cfg);
    MlpModel m2 = MlpModel::init(cfg);
    fit_mlp(m1, train, val, hyper);
    fit_mlp(m2, train, val, hyper);
    auto s1 = m1.all(), s2 = m2.all();
    for (std::size_t i = 0; i < s1.size(); ++i)
        for (std::size_t j = 0; j < s1[i]->value.size(); ++j)
            CHECK(s1[i]->value.data[j] == s2[i]->value.data[j]);
}

TEST_CASE("mlp beats logistic on an XOR-style interaction") {
    const int vocab = 2;
    std::vector<PatientTensor> train;
    int id = 0;
    for (int x1 = 0; x1 <= 1; ++x1)
        for (int x2 = 0; x2 <= 1; ++x2)
            for (int rep = 0; rep < 50; ++rep) {
                PatientTensor t = demo_patient(id++, x1 ^ x2);
                if (x1) t.quarter_counts[0][0] = 1;
                if (x2) t.quarter_counts[0][1] = 1;
                train.push_back(t);
            }

    LogisticModel lr = fit_logistic(train, vocab);
    int lr_correct = 0;
    for (const PatientTensor& t : train)
        lr_correct += (lr.score(t, vocab) > 0.5) == (t.label == 1);
    CHECK(static_cast<double>(lr_correct) / train.size() < 0.65);

    BaselineConfig cfg = tiny_config(vocab);
    cfg.dropout = 0.0;
    MlpModel mlp = MlpModel::init(cfg);
    TrainHyper hyper;
    hyper.lr = 5e-3;
    hyper.epochs = 300;
    hyper.patience = 300;
    hyper.class_weighting = false;
    fit_mlp(mlp, train, train, hyper);
    int mlp_correct = 0;
    for (const PatientTensor& t : train) mlp_correct += (mlp.score(t) > 0.5) == (t.label == 1);
    CHECK(static_cast<double>(mlp_correct) / train.size() > 0.9);
}

TEST_CASE("mlp gradient check at 1e-4") {
    BaselineConfig cfg = tiny_config(5);
    cfg.dropout = 0.0;
    MlpModel model = MlpModel::init(cfg);
    PatientTensor t = random_patient(33, 1, cfg.vocab);
    auto loss = [&](bool accumulate) {
        Tape tape;
        std::mt19937_64 rng(0);
        Tape::Var l = model.build_loss(tape, t, 1.4, rng, true);
        if (accumulate) tape.backward(l);
        return tape.val(l).at(0, 0);
    };
    auto report = grad_check(loss, model.all(), 10, 1e-4, 7);
    CHECK(report.pass);
}

TEST_CASE("CNN-1G: identity embedding and unit map reproduce the token embedding") {
    BaselineConfig cfg = tiny_config(4);
    cfg.e = cfg.vocab;            // identity embedding possible
    cfg.cnn_filters = cfg.e + 1;  // unit map over the widened embedding
    SeqBaseline model = SeqBaseline::init(BaselineKind::CNN1G, cfg);
    model.embed.value = Matrix::identity(cfg.vocab);
    model.enc_W.value = Matrix::identity(cfg.e + 1);
    model.enc_b.value.fill(0.0);

    PatientTensor t = demo_patient(1, 0);
    t.quarter_counts[0][2] = 1;
    QuarterTokens toks = code_tokens_of_quarter(t, 1, cfg);
    REQUIRE(toks.n() == 1);
    Tape tape;
    Tape::Var pooled = model.encode_quarter(tape, tape.param(model.embed), toks, t, 1);
    const Matrix& v = tape.val(pooled);
    REQUIRE(v.rows == cfg.e + 1);
    for (int j = 0; j < cfg.e; ++j)
        CHECK(v.at(j, 0) == doctest::Approx(j == 2 ? 1.0 : 0.0));
    CHECK(v.at(cfg.e, 0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("CNN-1G pooling is permutation-invariant over quarter tokens") {
    BaselineConfig cfg = tiny_config(8);
    SeqBaseline model = SeqBaseline::init(BaselineKind::CNN1G, cfg);
    PatientTensor t = demo_patient(2, 0);
    QuarterTokens toks;
    toks.ids = {1, 4, 6};
    toks.counts = {2, 1, 3};
    QuarterTokens shuffled;
    shuffled.ids = {6, 1, 4};
    shuffled.counts = {3, 2, 1};
    Tape t1, t2;
    Tape::Var a = model.encode_quarter(t1, t1.param(model.embed), toks, t, 1);
    Tape::Var b = model.encode_quarter(t2, t2.param(model.embed), shuffled, t, 1);
    for (std::size_t i = 0; i < t1.val(a).size(); ++i)
        CHECK(t1.val(a).data[i] == doctest::Approx(t2.val(b).data[i]).epsilon(1e-13));
}

TEST_CASE("CNN-LK and Dense-A are not permutation-invariant") {
    BaselineConfig cfg = tiny_config(8);
    PatientTensor t = demo_patient(3, 0);
    QuarterTokens toks;
    toks.ids = {1, 4, 6};
    toks.counts = {2, 1, 3};
    QuarterTokens shuffled;
    shuffled.ids = {6, 1, 4};
    shuffled.counts = {3, 2, 1};
    for (BaselineKind kind : {BaselineKind::CNNLK, BaselineKind::DENSE_A}) {
        SeqBaseline model = SeqBaseline::init(kind, cfg);
        Tape t1, t2;
        Tape::Var a = model.encode_quarter(t1, t1.param(model.embed), toks, t, 1);
        Tape::Var b = model.encode_quarter(t2, t2.param(model.embed), shuffled, t, 1);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < t1.val(a).size(); ++i)
            max_diff = std::max(max_diff, std::abs(t1.val(a).data[i] - t2.val(b).data[i]));
        CHECK(max_diff > 1e-6);
    }
}

TEST_CASE("every sequence baseline emits a probability and passes grad_check at 1e-4") {
    BaselineConfig cfg = tiny_config(6);
    PatientTensor t = random_patient(55, 1, cfg.vocab);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> small(-0.1, 0.1);
    for (BaselineKind kind : kSeqKinds) {
        CAPTURE(baseline_name(kind));
        SeqBaseline model = SeqBaseline::init(kind, cfg);
        for (double& v : model.enc_b.value.data) v = small(rng);  // move relu off the kink
        const double p = model.score(t);
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        auto loss = [&](bool accumulate) {
            Tape tape;
            Tape::Var l = model.build_loss(tape, t, 1.2);
            if (accumulate) tape.backward(l);
            return tape.val(l).at(0, 0);
        };
        auto report = grad_check(loss, model.all(), 4, 1e-4, 70 + static_cast<int>(kind));
        CHECK(report.pass);
    }
}

TEST_CASE("BG-A with zero attention scorer averages hidden states; BG reads the last") {
    BaselineConfig cfg = tiny_config(6);
    SeqBaseline bga = SeqBaseline::init(BaselineKind::BG_A, cfg);
    bga.v_att.value.fill(0.0);  // uniform quarter weights -> V = mean(h)

    // Same weights reinterpreted as plain BG (shapes are identical).
    CheckpointData ckpt = seq_baseline_to_checkpoint(bga, 0);
    ckpt.kind = baseline_name(BaselineKind::BG);
    SeqBaseline bg = seq_baseline_from_checkpoint(ckpt);

    PatientTensor t = random_patient(77, 1, cfg.vocab);
    const double p_mean = bga.score(t);
    const double p_last = bg.score(t);
    CHECK(p_mean != doctest::Approx(p_last).epsilon(1e-9));
}

TEST_CASE("sequence baseline checkpoint round trip preserves kind and scores") {
    BaselineConfig cfg = tiny_config(6);
    SeqBaseline model = SeqBaseline::init(BaselineKind::CNN1G_A, cfg);
    const std::string path = "test_baseline_ckpt.txt";
    save_checkpoint(path, seq_baseline_to_checkpoint(model, 99));
    CheckpointData data = load_checkpoint(path);
    CHECK(data.kind == "CNN-1G-A");
    CHECK(data.vocab_hash == 99);
    SeqBaseline loaded = seq_baseline_from_checkpoint(data);
    PatientTensor t = random_patient(88, 0, cfg.vocab);
    CHECK(model.score(t) == loaded.score(t));
    std::remove(path.c_str());
}

TEST_CASE("training a sequence baseline with lr=0 is a no-op") {
    BaselineConfig cfg = tiny_config(6);
    SeqBaseline model = SeqBaseline::init(BaselineKind::BG, cfg);
    std::vector<Matrix> before;
    for (ParamSlot* s : model.all()) before.push_back(s->value);
    std::vector<PatientTensor> train, val;
    for (int i = 0; i < 8; ++i) train.push_back(random_patient(300 + i, i % 2, cfg.vocab));
    for (int i = 0; i < 4; ++i) val.push_back(random_patient(400 + i, i % 2, cfg.vocab));
    TrainHyper hyper;
    hyper.lr = 0.0;
    hyper.epochs = 2;
    fit_sequence_baseline(model, train, val, hyper);
    auto slots = model.all();
    for (std::size_t i = 0; i < slots.size(); ++i)
        for (std::size_t j = 0; j < before[i].size(); ++j)
            CHECK(slots[i]->value.data[j] == before[i].data[j]);
}
