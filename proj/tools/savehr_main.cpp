// Command-line front end: gen / cohort / train / eval / explain.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "savehr/baselines.hpp"
#include "savehr/checkpoint.hpp"
#include "savehr/cohort.hpp"
#include "savehr/cohort_io.hpp"
#include "savehr/generator.hpp"
#include "savehr/interpret.hpp"
#include "savehr/metrics.hpp"
#include "savehr/model.hpp"
#include "savehr/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace savehr;

namespace {

// Exit code 2: bad configuration (caught before any filesystem writes).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// Exit code 3: data/runtime failure.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- settings

const std::map<std::string, std::string>& default_settings() {
    static const std::map<std::string, std::string> defaults = {
        // generation
        {"seed", "1"},
        {"p2_seed", "0"},  // 0 -> seed+1
        {"n_patients", "2000"},
        {"vocab_size", "100"},
        {"n_conditions", "4"},
        {"pair_weight", "3.0"},
        {"temporal_profile", "uniform"},  // uniform | q4
        {"shift", "none"},                // none | prevalence
        {"shift_codes", "0:2.0,1:0.5"},   // code:factor list for shift=prevalence
        {"base_logit", "-1.7"},
        {"age_coeff", "0.5"},
        // cohort
        {"condition", "cond1"},
        {"split_seed", "5"},
        {"train_frac", "0.7"},
        {"val_frac", "0.15"},
        {"test_frac", "0.15"},
        {"min_code_occurrences", "50"},
        // model / training
        {"model", "SAVEHR"},
        {"lr", "0.001"},
        {"lr_logistic", "0.1"},
        {"epochs", "20"},
        {"batch", "32"},
        {"patience", "5"},
        {"grad_clip", "5.0"},
        {"penalty", "0.0"},
        {"class_weighting", "1"},
        {"train_seed", "0"},
        {"e", "16"},
        {"d_a", "16"},
        {"r", "4"},
        {"d_h", "32"},
        {"d_att", "32"},
        {"max_tokens", "64"},
        {"max_code_tokens", "32"},
        {"cnn_filters", "64"},
        {"lk_filters", "4"},
        {"dense_width", "64"},
        {"bg_width", "64"},
        {"mlp_hidden", "64"},
        {"dropout", "0.3"},
        // eval
        {"cv", "0"},
        // explain
        {"top_k", "15"},
        {"patients", ""},
    };
    return defaults;
}

class Settings {
  public:
    Settings() : values_(default_settings()) {}

    void set(const std::string& key, const std::string& value) {
        if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
        values_[key] = value;
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto first = line.find_first_not_of(" \t");
            if (first == std::string::npos || line[first] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
            std::string key = line.substr(first, eq - first);
            while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
            std::string value = line.substr(eq + 1);
            const auto vfirst = value.find_first_not_of(" \t");
            value = vfirst == std::string::npos ? "" : value.substr(vfirst);
            while (!value.empty() && (value.back() == ' ' || value.back() == '\t' ||
                                      value.back() == '\r'))
                value.pop_back();
            set(key, value);
        }
    }

    void apply_overrides(const std::vector<std::string>& overrides) {
        for (const std::string& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
            set(o.substr(0, eq), o.substr(eq + 1));
        }
    }

    const std::string& str(const std::string& key) const { return values_.at(key); }

    long num(const std::string& key) const {
        try {
            std::size_t pos = 0;
            const long v = std::stol(values_.at(key), &pos);
            if (pos != values_.at(key).size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' must be an integer, got '" +
                              values_.at(key) + "'");
        }
    }

    double real(const std::string& key) const {
        try {
            std::size_t pos = 0;
            const double v = std::stod(values_.at(key), &pos);
            if (pos != values_.at(key).size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' must be a number, got '" +
                              values_.at(key) + "'");
        }
    }

    bool flag(const std::string& key) const { return num(key) != 0; }

    json to_json() const {
        json j;
        for (const auto& [k, v] : values_) j[k] = v;
        return j;
    }

  private:
    std::map<std::string, std::string> values_;
};

// -------------------------------------------------------------- conditions

struct Condition {
    std::string name;
    std::vector<int> target_codes;
    PlantedPair pair;
};

std::array<double, kNumQuarters> profile_of(const Settings& s) {
    const std::string& p = s.str("temporal_profile");
    if (p == "uniform") return {1.0, 1.0, 1.0, 1.0};
    if (p == "q4") return {0.0, 0.0, 0.0, 1.0};
    throw ConfigError("temporal_profile must be 'uniform' or 'q4', got '" + p + "'");
}

std::vector<Condition> conditions_of(const Settings& s) {
    const int n = static_cast<int>(s.num("n_conditions"));
    const int vocab_size = static_cast<int>(s.num("vocab_size"));
    if (n < 1 || n > 8) throw ConfigError("n_conditions must be in 1..8");
    // Pairs sit in the upper-middle of the frequency-ranked vocabulary: the
    // head codes co-occur in nearly every window, which would saturate risk.
    const int pair_base = 3 * vocab_size / 4;
    if (pair_base + 2 * n > vocab_size - n)
        throw ConfigError("vocab_size too small for " + std::to_string(n) + " conditions");
    std::vector<Condition> out;
    for (int i = 1; i <= n; ++i) {
        Condition c;
        c.name = "cond" + std::to_string(i);
        c.target_codes = {vocab_size - i};  // disjoint targets at the top of the vocabulary
        c.pair = PlantedPair{pair_base + 2 * (i - 1), pair_base + 2 * (i - 1) + 1,
                             s.real("pair_weight")};
        out.push_back(c);
    }
    return out;
}

const Condition& condition_by_name(const std::vector<Condition>& all, const std::string& name) {
    for (const Condition& c : all)
        if (c.name == name) return c;
    throw ConfigError("unknown condition '" + name + "'");
}

GeneratorConfig generator_config(const Settings& s, std::uint64_t seed, bool apply_shift) {
    GeneratorConfig cfg;
    cfg.seed = seed;
    cfg.n_patients = static_cast<int>(s.num("n_patients"));
    cfg.vocab_size = static_cast<int>(s.num("vocab_size"));
    cfg.age_coeff = s.real("age_coeff");
    const auto profile = profile_of(s);
    for (const Condition& c : conditions_of(s)) {
        ConditionGen g;
        g.name = c.name;
        g.target_codes = c.target_codes;
        g.planted_pairs = {c.pair};
        g.temporal_profile = profile;
        g.base_logit = s.real("base_logit");
        cfg.conditions.push_back(g);
    }
    if (apply_shift) {
        const std::string& kind = s.str("shift");
        if (kind == "prevalence") {
            std::stringstream ss(s.str("shift_codes"));
            std::string item;
            while (std::getline(ss, item, ',')) {
                const auto colon = item.find(':');
                if (colon == std::string::npos)
                    throw ConfigError("shift_codes entries must be code:factor, got '" + item + "'");
                cfg.shift.prevalence_scale[std::stoi(item.substr(0, colon))] =
                    std::stod(item.substr(colon + 1));
            }
            if (cfg.shift.prevalence_scale.empty())
                throw ConfigError("shift=prevalence requires nonempty shift_codes");
        } else if (kind != "none") {
            throw ConfigError("shift must be 'none' or 'prevalence', got '" + kind + "'");
        }
    }
    return cfg;
}

// ---------------------------------------------------------------- manifest

json read_manifest(const fs::path& run_dir) {
    const fs::path path = run_dir / "manifest.json";
    std::ifstream f(path);
    if (!f) throw DataError("missing manifest: " + path.string() + " (run 'gen' first)");
    json j;
    f >> j;
    return j;
}

void write_manifest(const fs::path& run_dir, const json& j) {
    std::ofstream f(run_dir / "manifest.json");
    if (!f) throw DataError("cannot write manifest in " + run_dir.string());
    f << j.dump(2) << '\n';
}

// -------------------------------------------------------------- file names

fs::path cohort_file(const fs::path& run_dir, const std::string& cond, const std::string& part) {
    return run_dir / ("cohort_" + cond + "_" + part + ".txt");
}

fs::path checkpoint_file(const fs::path& run_dir, const std::string& model,
                         const std::string& cond) {
    return run_dir / ("model_" + model + "_" + cond + ".txt");
}

// --------------------------------------------------------- model dispatch

ModelConfig model_config_of(const Settings& s, int vocab) {
    ModelConfig cfg;
    cfg.vocab = vocab;
    cfg.e = static_cast<int>(s.num("e"));
    cfg.d_a = static_cast<int>(s.num("d_a"));
    cfg.r = static_cast<int>(s.num("r"));
    cfg.d_h = static_cast<int>(s.num("d_h"));
    cfg.d_att = static_cast<int>(s.num("d_att"));
    cfg.max_tokens = static_cast<int>(s.num("max_tokens"));
    cfg.seed = static_cast<std::uint64_t>(s.num("train_seed"));
    return cfg;
}

BaselineConfig baseline_config_of(const Settings& s, int vocab) {
    BaselineConfig cfg;
    cfg.vocab = vocab;
    cfg.e = static_cast<int>(s.num("e"));
    cfg.d_h = static_cast<int>(s.num("d_h"));
    cfg.d_att = static_cast<int>(s.num("d_att"));
    cfg.max_code_tokens = static_cast<int>(s.num("max_code_tokens"));
    cfg.cnn_filters = static_cast<int>(s.num("cnn_filters"));
    cfg.lk_filters = static_cast<int>(s.num("lk_filters"));
    cfg.dense_width = static_cast<int>(s.num("dense_width"));
    cfg.bg_width = static_cast<int>(s.num("bg_width"));
    cfg.mlp_hidden = static_cast<int>(s.num("mlp_hidden"));
    cfg.dropout = s.real("dropout");
    cfg.seed = static_cast<std::uint64_t>(s.num("train_seed"));
    return cfg;
}

TrainHyper hyper_of(const Settings& s) {
    TrainHyper h;
    h.lr = s.real("lr");
    h.epochs = static_cast<int>(s.num("epochs"));
    h.batch = static_cast<int>(s.num("batch"));
    h.patience = static_cast<int>(s.num("patience"));
    h.class_weighting = s.flag("class_weighting");
    h.grad_clip = s.real("grad_clip");
    h.penalty_coeff = s.real("penalty");
    h.seed = static_cast<std::uint64_t>(s.num("train_seed"));
    return h;
}

// A trained or loaded model of any kind, with a uniform scoring interface.
struct AnyModel {
    std::string kind;
    std::optional<ModelParams> savehr;
    std::optional<LogisticModel> lr;
    int lr_vocab{0};
    std::optional<MlpModel> mlp;
    std::optional<SeqBaseline> seq;

    double score(const PatientTensor& t) {
        if (savehr) return predict(t, *savehr).p_case();
        if (lr) return lr->score(t, lr_vocab);
        if (mlp) return mlp->score(t);
        return seq->score(t);
    }
};

AnyModel train_any(const std::string& kind, const Settings& s,
                   const std::vector<PatientTensor>& train, const std::vector<PatientTensor>& val,
                   int vocab, TrainingLog* log_out) {
    AnyModel m;
    m.kind = kind;
    const TrainHyper hyper = hyper_of(s);
    if (kind == "SAVEHR") {
        m.savehr = ModelParams::init(model_config_of(s, vocab));
        TrainingLog log = train_savehr(*m.savehr, train, val, hyper);
        if (log_out) *log_out = log;
        return m;
    }
    const BaselineKind bk = baseline_from_name(kind);
    if (bk == BaselineKind::LR) {
        LogisticHyper lh;
        lh.lr = s.real("lr_logistic");
        lh.max_epochs = 500;
        m.lr = fit_logistic(train, vocab, lh);
        m.lr_vocab = vocab;
        if (log_out) *log_out = TrainingLog{};
        return m;
    }
    if (bk == BaselineKind::MLP) {
        m.mlp = MlpModel::init(baseline_config_of(s, vocab));
        TrainingLog log = fit_mlp(*m.mlp, train, val, hyper);
        if (log_out) *log_out = log;
        return m;
    }
    m.seq = SeqBaseline::init(bk, baseline_config_of(s, vocab));
    TrainingLog log = fit_sequence_baseline(*m.seq, train, val, hyper);
    if (log_out) *log_out = log;
    return m;
}

CheckpointData checkpoint_of(const AnyModel& m, std::uint64_t vh) {
    if (m.savehr) return to_checkpoint(*m.savehr, vh);
    if (m.seq) return seq_baseline_to_checkpoint(*m.seq, vh);
    CheckpointData data;
    data.vocab_hash = vh;
    if (m.lr) {
        data.kind = "LR";
        data.config = {{"vocab", std::to_string(m.lr_vocab)}};
        const int dim = static_cast<int>(m.lr->weights.size());
        data.arrays.emplace_back("weights", Matrix(dim, 1, m.lr->weights));
        data.arrays.emplace_back("bias", Matrix(1, 1, {m.lr->bias}));
        return data;
    }
    const MlpModel& mlp = *m.mlp;
    data.kind = "MLP";
    const BaselineConfig& c = mlp.cfg;
    data.config = {{"vocab", std::to_string(c.vocab)},
                   {"mlp_hidden", std::to_string(c.mlp_hidden)}};
    data.arrays.emplace_back("W1", mlp.W1.value);
    data.arrays.emplace_back("b1", mlp.b1.value);
    data.arrays.emplace_back("W2", mlp.W2.value);
    data.arrays.emplace_back("b2", mlp.b2.value);
    return data;
}

AnyModel load_any(const CheckpointData& data) {
    AnyModel m;
    m.kind = data.kind;
    if (data.kind == "SAVEHR") {
        m.savehr = savehr_from_checkpoint(data);
        return m;
    }
    if (data.kind == "LR") {
        LogisticModel lr;
        const Matrix& w = data.array("weights");
        lr.weights = w.data;
        lr.bias = data.array("bias").at(0, 0);
        m.lr = lr;
        m.lr_vocab = data.config_int("vocab");
        return m;
    }
    if (data.kind == "MLP") {
        BaselineConfig cfg;
        cfg.vocab = data.config_int("vocab");
        cfg.mlp_hidden = data.config_int("mlp_hidden");
        MlpModel mlp = MlpModel::init(cfg);
        mlp.W1.value = data.array("W1");
        mlp.b1.value = data.array("b1");
        mlp.W2.value = data.array("W2");
        mlp.b2.value = data.array("b2");
        m.mlp = mlp;
        return m;
    }
    m.seq = seq_baseline_from_checkpoint(data);
    return m;
}

// ----------------------------------------------------------------- cohort

struct StreamSplit {
    std::vector<const EncounterStream*> train, val, test;
    std::vector<int> train_label, val_label, test_label;
    std::vector<int> train_day, val_day, test_day;
};

// Stratified stream-level split so the vocabulary can come from the
// training split alone.
StreamSplit split_streams(const std::vector<EncounterStream>& streams, const CohortSpec& spec,
                          std::uint64_t seed, double train_frac, double val_frac,
                          double test_frac) {
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw ConfigError("train/val/test fractions must sum to 1");
    struct Enrollee {
        const EncounterStream* s;
        int day;
        int label;
    };
    std::vector<Enrollee> cases, controls;
    for (const EncounterStream& s : streams) {
        auto idx = find_index_date(s, spec);
        if (!idx) continue;
        if (idx->day < spec.observation_start_day()) continue;  // short history
        (idx->is_case ? cases : controls).push_back({&s, idx->day, idx->is_case ? 1 : 0});
    }
    if (cases.empty())
        throw DataError("cohort has zero cases (enrolled controls: " +
                        std::to_string(controls.size()) + "); check target codes and generator");

    std::mt19937_64 rng(seed);
    std::shuffle(cases.begin(), cases.end(), rng);
    std::shuffle(controls.begin(), controls.end(), rng);

    StreamSplit out;
    auto assign = [&](const std::vector<Enrollee>& stratum) {
        const std::size_t n = stratum.size();
        const std::size_t n_tr = static_cast<std::size_t>(std::llround(train_frac * n));
        const std::size_t n_va = static_cast<std::size_t>(std::llround(val_frac * n));
        for (std::size_t i = 0; i < n; ++i) {
            const Enrollee& e = stratum[i];
            if (i < n_tr) {
                out.train.push_back(e.s);
                out.train_label.push_back(e.label);
                out.train_day.push_back(e.day);
            } else if (i < n_tr + n_va) {
                out.val.push_back(e.s);
                out.val_label.push_back(e.label);
                out.val_day.push_back(e.day);
            } else {
                out.test.push_back(e.s);
                out.test_label.push_back(e.label);
                out.test_day.push_back(e.day);
            }
        }
    };
    assign(cases);
    assign(controls);
    return out;
}

std::vector<PatientTensor> extract_all(const std::vector<const EncounterStream*>& streams,
                                       const std::vector<int>& days,
                                       const std::vector<int>& labels, const CohortSpec& spec,
                                       const std::vector<int>& vocab) {
    std::vector<PatientTensor> out;
    for (std::size_t i = 0; i < streams.size(); ++i)
        out.push_back(extract_tensor(*streams[i], days[i], labels[i], spec, vocab));
    return out;
}

std::pair<int, int> count_labels(const std::vector<PatientTensor>& ts) {
    int c = 0, n = 0;
    for (const PatientTensor& t : ts) (t.label ? c : n)++;
    return {c, n};
}

// --------------------------------------------------------------- commands

int cmd_gen(const Settings& s, const fs::path& run_dir, bool force) {
    // Validate everything before touching the filesystem.
    GeneratorConfig p1_cfg = generator_config(s, static_cast<std::uint64_t>(s.num("seed")), false);
    std::uint64_t p2_seed = static_cast<std::uint64_t>(s.num("p2_seed"));
    if (p2_seed == 0) p2_seed = p1_cfg.seed + 1;
    GeneratorConfig p2_cfg = generator_config(s, p2_seed, true);

    fs::create_directories(run_dir);
    const fs::path p1_path = run_dir / "p1_population.txt";
    const fs::path p2_path = run_dir / "p2_population.txt";
    if (!force && (fs::exists(p1_path) || fs::exists(p2_path)))
        throw DataError("population files already exist in " + run_dir.string() +
                        " (use --force to overwrite)");

    write_population(p1_path.string(), generate_population(p1_cfg));
    write_population(p2_path.string(), generate_population(p2_cfg));

    json manifest;
    manifest["schema"] = {{"cohort", kCohortSchemaVersion}, {"model", kModelSchemaVersion}};
    manifest["gen"] = s.to_json();
    manifest["gen"]["resolved_p2_seed"] = std::to_string(p2_seed);
    json conds = json::array();
    for (const Condition& c : conditions_of(s))
        conds.push_back({{"name", c.name},
                         {"target_codes", c.target_codes},
                         {"pair", {c.pair.code_a, c.pair.code_b, c.pair.weight}}});
    manifest["conditions"] = conds;
    write_manifest(run_dir, manifest);
    std::printf("wrote %s, %s and manifest.json\n", p1_path.string().c_str(),
                p2_path.string().c_str());
    return 0;
}

CohortSpec cohort_spec_for(const json& manifest, const std::string& cond_name,
                           const Settings& s) {
    CohortSpec spec;
    spec.min_code_occurrences = static_cast<int>(s.num("min_code_occurrences"));
    bool found = false;
    for (const json& c : manifest.at("conditions")) {
        if (c.at("name") == cond_name) {
            for (int code : c.at("target_codes")) spec.target_codes.insert(code);
            found = true;
        }
    }
    if (!found) throw ConfigError("condition '" + cond_name + "' not in manifest");
    return spec;
}

int cmd_cohort(const Settings& s, const fs::path& run_dir) {
    const std::string cond = s.str("condition");
    const double tr = s.real("train_frac"), va = s.real("val_frac"), te = s.real("test_frac");
    if (std::abs(tr + va + te - 1.0) > 1e-9)
        throw ConfigError("train/val/test fractions must sum to 1");

    json manifest = read_manifest(run_dir);
    CohortSpec spec = cohort_spec_for(manifest, cond, s);

    auto p1 = read_population((run_dir / "p1_population.txt").string());
    auto p2 = read_population((run_dir / "p2_population.txt").string());

    StreamSplit split = split_streams(p1, spec, static_cast<std::uint64_t>(s.num("split_seed")),
                                      tr, va, te);

    // Vocabulary from the training split only; transfers to val/test/P2.
    std::vector<EncounterStream> train_streams;
    for (const EncounterStream* p : split.train) train_streams.push_back(*p);
    std::vector<int> vocab = build_vocab(train_streams, spec);

    auto train_t = extract_all(split.train, split.train_day, split.train_label, spec, vocab);
    auto val_t = extract_all(split.val, split.val_day, split.val_label, spec, vocab);
    auto test_t = extract_all(split.test, split.test_day, split.test_label, spec, vocab);
    EnrolledCohort p2_cohort = enroll(p2, spec, vocab);

    write_cohort(cohort_file(run_dir, cond, "p1_train").string(), vocab, train_t);
    write_cohort(cohort_file(run_dir, cond, "p1_val").string(), vocab, val_t);
    write_cohort(cohort_file(run_dir, cond, "p1_test").string(), vocab, test_t);
    write_cohort(cohort_file(run_dir, cond, "p2").string(), vocab, p2_cohort.tensors);

    auto print_row = [&](const char* name, const std::vector<PatientTensor>& ts) {
        auto [c, n] = count_labels(ts);
        std::printf("%s %s  %d : %d\n", cond.c_str(), name, c, n);
        return json{{"case", c}, {"control", n}};
    };
    json counts;
    counts["P1-train"] = print_row("P1-train", train_t);
    counts["P1-val"] = print_row("P1-val", val_t);
    counts["P1-test"] = print_row("P1-test", test_t);
    counts["P2"] = print_row("P2", p2_cohort.tensors);

    manifest["cohort_" + cond] = {{"settings", s.to_json()},
                                  {"vocab_size", vocab.size()},
                                  {"counts", counts}};
    write_manifest(run_dir, manifest);
    return 0;
}

int cmd_train(const Settings& s, const fs::path& run_dir) {
    const std::string cond = s.str("condition");
    const std::string kind = s.str("model");
    if (kind != "SAVEHR") baseline_from_name(kind);  // validates, throws on typos

    CohortFile train_f = read_cohort(cohort_file(run_dir, cond, "p1_train").string());
    CohortFile val_f = read_cohort(cohort_file(run_dir, cond, "p1_val").string());

    TrainingLog log;
    AnyModel model = train_any(kind, s, train_f.tensors, val_f.tensors,
                               static_cast<int>(train_f.vocab.size()), &log);
    for (const EpochLog& e : log.epochs)
        std::printf("epoch %d  train_loss %.6f  val_auc_pr %.6f\n", e.epoch, e.train_loss,
                    e.val_auc_pr);
    if (log.best_epoch >= 0)
        std::printf("best epoch %d  val_auc_pr %.6f\n", log.best_epoch, log.best_val_auc_pr);

    const fs::path out = checkpoint_file(run_dir, kind, cond);
    save_checkpoint(out.string(), checkpoint_of(model, vocab_hash(train_f.vocab)));
    std::printf("wrote %s\n", out.string().c_str());

    json manifest = read_manifest(run_dir);
    manifest["train_" + kind + "_" + cond] = {{"settings", s.to_json()},
                                              {"best_epoch", log.best_epoch},
                                              {"best_val_auc_pr", log.best_val_auc_pr}};
    write_manifest(run_dir, manifest);
    return 0;
}

ScoredSet score_tensors(AnyModel& model, const std::vector<PatientTensor>& ts) {
    ScoredSet out;
    for (const PatientTensor& t : ts) out.push_back({model.score(t), t.label});
    return out;
}

int cmd_eval(const Settings& s, const fs::path& run_dir) {
    const std::string cond = s.str("condition");
    const std::string kind = s.str("model");
    const int cv_k = static_cast<int>(s.num("cv"));

    CheckpointData data = load_checkpoint(checkpoint_file(run_dir, kind, cond).string());
    AnyModel model = load_any(data);

    CohortFile test_f = read_cohort(cohort_file(run_dir, cond, "p1_test").string());
    CohortFile p2_f = read_cohort(cohort_file(run_dir, cond, "p2").string());
    if (vocab_hash(test_f.vocab) != data.vocab_hash)
        throw DataError("vocabulary hash mismatch: checkpoint was trained on a different "
                        "vocabulary than cohort '" + cond + "'");
    if (vocab_hash(p2_f.vocab) != data.vocab_hash)
        throw DataError("vocabulary hash mismatch between checkpoint and P2 cohort");

    std::vector<EvalRow> rows;
    auto row_for = [&](const std::string& population, const std::string& split_name,
                       const std::vector<PatientTensor>& ts) {
        ScoredSet scored = score_tensors(model, ts);
        EvalRow r;
        r.model = kind;
        r.condition = cond;
        r.population = population;
        r.split = split_name;
        r.auc_pr = auc_pr(scored);
        r.auc_roc = auc_roc(scored);
        std::tie(r.n_case, r.n_control) = count_labels(ts);
        return r;
    };
    EvalRow p1_row = row_for("P1", "test", test_f.tensors);

    if (cv_k > 0) {
        // Pool all P1 splits and retrain per fold.
        CohortFile train_f = read_cohort(cohort_file(run_dir, cond, "p1_train").string());
        CohortFile val_f = read_cohort(cohort_file(run_dir, cond, "p1_val").string());
        std::vector<PatientTensor> pool = train_f.tensors;
        pool.insert(pool.end(), val_f.tensors.begin(), val_f.tensors.end());
        pool.insert(pool.end(), test_f.tensors.begin(), test_f.tensors.end());
        std::vector<int> labels;
        for (const PatientTensor& t : pool) labels.push_back(t.label);
        auto evaluate = [&](const std::vector<std::size_t>& train_idx,
                            const std::vector<std::size_t>& eval_idx) {
            std::vector<PatientTensor> fold_train;
            for (std::size_t i : train_idx) fold_train.push_back(pool[i]);
            AnyModel fold_model = train_any(kind, s, fold_train, fold_train,
                                            static_cast<int>(test_f.vocab.size()), nullptr);
            ScoredSet scored;
            for (std::size_t i : eval_idx) scored.push_back({fold_model.score(pool[i]),
                                                             labels[i]});
            return scored;
        };
        CvResult cv = cross_validate(labels, evaluate, cv_k,
                                     static_cast<std::uint64_t>(s.num("split_seed")));
        p1_row.cv_mean_auc_pr = cv.mean_auc_pr;
        p1_row.cv_std_auc_pr = cv.std_auc_pr;
    }
    rows.push_back(p1_row);
    rows.push_back(row_for("P2", "all", p2_f.tensors));

    const std::string csv = eval_report_csv(rows);
    const fs::path out = run_dir / ("eval_" + kind + "_" + cond + ".csv");
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out.string());
    f << csv;
    std::fputs(csv.c_str(), stdout);
    return 0;
}

int cmd_explain(const Settings& s, const fs::path& run_dir) {
    const std::string cond = s.str("condition");
    const std::string kind = s.str("model");
    const int top_k = static_cast<int>(s.num("top_k"));
    if (top_k < 1) throw ConfigError("top_k must be >= 1");

    CheckpointData data = load_checkpoint(checkpoint_file(run_dir, kind, cond).string());
    if (data.kind != "SAVEHR")
        throw ConfigError("explain requires a SAVEHR checkpoint; '" + data.kind +
                          "' has no attention trace");
    ModelParams params = savehr_from_checkpoint(data);

    CohortFile train_f = read_cohort(cohort_file(run_dir, cond, "p1_train").string());
    CohortFile val_f = read_cohort(cohort_file(run_dir, cond, "p1_val").string());
    CohortFile test_f = read_cohort(cohort_file(run_dir, cond, "p1_test").string());
    if (vocab_hash(train_f.vocab) != data.vocab_hash)
        throw DataError("vocabulary hash mismatch between checkpoint and cohort");
    std::vector<PatientTensor> all = train_f.tensors;
    all.insert(all.end(), val_f.tensors.begin(), val_f.tensors.end());
    all.insert(all.end(), test_f.tensors.begin(), test_f.tensors.end());

    std::vector<std::string> labels = token_labels(train_f.vocab, params.cfg);

    // Population heatmap over predicted cases.
    std::vector<PatientTensor> predicted_cases;
    for (const PatientTensor& t : all)
        if (predict(t, params).p_case() >= 0.5) predicted_cases.push_back(t);
    if (predicted_cases.empty())
        throw DataError("no patient is predicted as a case; population heatmap undefined");
    PairwiseImportance pop = population_heatmap(params, predicted_cases, labels, top_k);
    const fs::path pop_path = run_dir / ("heatmap_population_" + cond + ".csv");
    export_heatmap(pop, pop_path.string());
    std::printf("wrote %s (%d predicted cases)\n", pop_path.string().c_str(),
                static_cast<int>(predicted_cases.size()));

    // Per-patient heatmaps for requested ids.
    if (!s.str("patients").empty()) {
        std::stringstream ss(s.str("patients"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::int64_t id = std::stoll(item);
            const PatientTensor* found = nullptr;
            for (const PatientTensor& t : all)
                if (t.patient_id == id) found = &t;
            if (!found) throw DataError("patient id " + item + " not found in cohort " + cond);
            ForwardTrace tr = predict(*found, params);
            PairwiseImportance avg =
                pairwise_from_trace(tr, PairAggregation::Averaged, labels).front();
            avg.patient_id = id;
            const fs::path p = run_dir / ("heatmap_patient_" + item + "_" + cond + ".csv");
            export_heatmap(avg, p.string());
            std::printf("wrote %s (risk %.4f)\n", p.string().c_str(), tr.p_case());
        }
    }

    QuarterAttentionSummary summary = quarter_attention_summary(params, all);
    const fs::path sum_path = run_dir / ("quarter_summary_" + cond + ".txt");
    std::ofstream f(sum_path);
    if (!f) throw DataError("cannot write " + sum_path.string());
    f << format_quarter_summary(summary);
    std::printf("wrote %s\n", sum_path.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic EHR disease-onset pipeline"};
    app.require_subcommand(1);

    std::string run_dir_str = "run";
    std::string config_path;
    std::vector<std::string> overrides;
    bool force = false;
    app.add_option("--run-dir", run_dir_str, "directory for all artifacts");
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--set", overrides, "override a config key (key=value, repeatable)");

    CLI::App* gen = app.add_subcommand("gen", "generate P1/P2 populations and the manifest");
    gen->add_flag("--force", force, "overwrite existing population files");
    CLI::App* cohort = app.add_subcommand("cohort", "build cohort tensor files for a condition");
    CLI::App* train = app.add_subcommand("train", "train a model kind on a cohort");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on P1-test and P2");
    CLI::App* explain = app.add_subcommand("explain", "export heatmaps and attention summaries");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        Settings s;
        if (!config_path.empty()) s.load_file(config_path);
        s.apply_overrides(overrides);
        const fs::path run_dir(run_dir_str);
        if (gen->parsed()) return cmd_gen(s, run_dir, force);
        if (cohort->parsed()) return cmd_cohort(s, run_dir);
        if (train->parsed()) return cmd_train(s, run_dir);
        if (eval->parsed()) return cmd_eval(s, run_dir);
        if (explain->parsed()) return cmd_explain(s, run_dir);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
