#include "savehr/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "savehr/metrics.hpp"

namespace savehr {

namespace {

struct AdamState {
    std::vector<Matrix> m, v;
    double beta1{0.9}, beta2{0.999}, eps{1e-8};
    std::int64_t step{0};

    explicit AdamState(const std::vector<ParamSlot*>& params) {
        for (ParamSlot* p : params) {
            m.push_back(Matrix::zeros(p->value.rows, p->value.cols));
            v.push_back(Matrix::zeros(p->value.rows, p->value.cols));
        }
    }

    void update(const std::vector<ParamSlot*>& params, double lr) {
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < params.size(); ++i) {
            ParamSlot& p = *params[i];
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                const double g = p.grad.data[j];
                m[i].data[j] = beta1 * m[i].data[j] + (1.0 - beta1) * g;
                v[i].data[j] = beta2 * v[i].data[j] + (1.0 - beta2) * g * g;
                const double mhat = m[i].data[j] / bc1;
                const double vhat = v[i].data[j] / bc2;
                p.value.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

void clip_global_norm(const std::vector<ParamSlot*>& params, double max_norm) {
    if (max_norm <= 0.0) return;
    double sq = 0.0;
    for (ParamSlot* p : params)
        for (double g : p->grad.data) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const double scale = max_norm / norm;
    for (ParamSlot* p : params)
        for (double& g : p->grad.data) g *= scale;
}

std::vector<Matrix> snapshot_values(const std::vector<ParamSlot*>& params) {
    std::vector<Matrix> snap;
    for (ParamSlot* p : params) snap.push_back(p->value);
    return snap;
}

void restore_values(const std::vector<ParamSlot*>& params, const std::vector<Matrix>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

}  // namespace

double class_weight_for_cases(const std::vector<PatientTensor>& train) {
    double n_case = 0, n_control = 0;
    for (const PatientTensor& t : train) (t.label ? n_case : n_control) += 1.0;
    if (n_case == 0) return 1.0;
    return n_control / n_case;
}

TrainingLog train_generic(const std::vector<PatientTensor>& train,
                          const std::vector<PatientTensor>& val, const TrainHyper& hyper,
                          const LossBuilder& build_loss, const Scorer& score,
                          const std::vector<ParamSlot*>& params) {
    if (train.empty() || val.empty())
        throw std::invalid_argument("train: empty train or validation split");

    const double w_case = hyper.class_weighting ? class_weight_for_cases(train) : 1.0;
    std::mt19937_64 rng(hyper.seed);

    auto val_auc_pr = [&]() {
        ScoredSet scored;
        scored.reserve(val.size());
        for (const PatientTensor& t : val) scored.push_back({score(t), t.label});
        return auc_pr(scored);
    };

    AdamState adam(params);
    TrainingLog log;
    std::vector<Matrix> best = snapshot_values(params);
    log.best_val_auc_pr = val_auc_pr();
    log.best_epoch = 0;
    int since_best = 0;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            const std::size_t end = std::min(order.size(), start + hyper.batch);
            for (ParamSlot* p : params) p->zero_grad();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const PatientTensor& t = train[order[i]];
                Tape tape;
                Tape::Var loss = build_loss(tape, t, t.label ? w_case : 1.0, rng);
                tape.backward(loss);
                batch_loss += tape.val(loss).at(0, 0);
            }
            const double inv = 1.0 / static_cast<double>(end - start);
            for (ParamSlot* p : params)
                for (double& g : p->grad.data) g *= inv;
            if (!std::isfinite(batch_loss))
                throw std::runtime_error("train: loss diverged (NaN/Inf) at epoch " +
                                         std::to_string(epoch));
            clip_global_norm(params, hyper.grad_clip);
            adam.update(params, hyper.lr);
            epoch_loss += batch_loss;
        }
        epoch_loss /= static_cast<double>(train.size());

        const double v = val_auc_pr();
        log.epochs.push_back(EpochLog{epoch, epoch_loss, v});
        if (v >= log.best_val_auc_pr) {
            // Ties keep the later (more-trained) snapshot but still count
            // toward patience, so plateaus still stop early.
            const bool improved = v > log.best_val_auc_pr;
            log.best_val_auc_pr = v;
            log.best_epoch = epoch;
            best = snapshot_values(params);
            if (improved)
                since_best = 0;
            else if (++since_best >= hyper.patience)
                break;
        } else if (++since_best >= hyper.patience) {
            break;
        }
    }
    restore_values(params, best);
    return log;
}

TrainingLog train_savehr(ModelParams& params, const std::vector<PatientTensor>& train,
                         const std::vector<PatientTensor>& val, const TrainHyper& hyper) {
    const double lambda = hyper.penalty_coeff;
    auto loss = [&params, lambda](Tape& tape, const PatientTensor& t, double weight,
                                  std::mt19937_64&) {
        return build_loss(tape, t, params, weight, lambda);
    };
    auto score = [&params](const PatientTensor& t) { return predict(t, params).p_case(); };
    return train_generic(train, val, hyper, loss, score, params.all());
}

}  // namespace savehr
