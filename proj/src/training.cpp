#include "mmsense/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace mmsense {

std::array<Tensor, 4> per_task_loss(const TaskOutputs& outputs, const LabeledSample& sample) {
    if (sample.beam_label < 0 ||
        static_cast<std::size_t>(sample.beam_label) >= outputs.beam_logits.size())
        throw DataError("beam label " + std::to_string(sample.beam_label) + " out of range");
    if (sample.activity_label < 0 ||
        static_cast<std::size_t>(sample.activity_label) >= outputs.har_logits.size())
        throw DataError("activity label " + std::to_string(sample.activity_label) +
                        " out of range");
    if (sample.blockage_label != 0 && sample.blockage_label != 1)
        throw DataError("blockage label must be 0 or 1");
    if (sample.keypoints.size() != outputs.keypoints_pred.size())
        throw DataError("keypoint label size " + std::to_string(sample.keypoints.size()) +
                        " does not match prediction");
    return {cross_entropy(outputs.beam_logits, static_cast<std::size_t>(sample.beam_label)),
            cross_entropy(outputs.har_logits, static_cast<std::size_t>(sample.activity_label)),
            mse_loss(outputs.keypoints_pred, sample.keypoints),
            bce_with_logit(outputs.blockage_logit, static_cast<double>(sample.blockage_label))};
}

Tensor total_uncertainty_loss(const std::array<Tensor, 4>& losses, const Tensor& log_var) {
    if (log_var.size() != 4) throw ShapeError("log_var must hold one value per task");
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t t = 0; t < 4; ++t) {
        Tensor s = pick(log_var, t);
        Tensor weighted = scale(mul(exp_op(neg(s)), losses[t]), 0.5);
        total = add(total, add(weighted, scale(s, 0.5)));
    }
    return total;
}

namespace {

class Sgd : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(const NamedParams& params) override {
        for (const auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            auto& tt = const_cast<Tensor&>(t);
            for (std::size_t i = 0; i < tt.size(); ++i) tt.data()[i] -= lr_ * tt.grad()[i];
        }
    }

private:
    double lr_;
};

class Adam : public Optimizer {
public:
    explicit Adam(double lr) : lr_(lr) {}
    void step(const NamedParams& params) override {
        ++t_;
        if (m_.size() < params.size()) {
            m_.resize(params.size());
            v_.resize(params.size());
        }
        double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            const Tensor& t = params[p].second;
            if (!t.has_grad()) continue;
            auto& tt = const_cast<Tensor&>(t);
            if (m_[p].size() != tt.size()) {
                m_[p].assign(tt.size(), 0.0);
                v_[p].assign(tt.size(), 0.0);
            }
            for (std::size_t i = 0; i < tt.size(); ++i) {
                double g = tt.grad()[i];
                m_[p][i] = beta1_ * m_[p][i] + (1 - beta1_) * g;
                v_[p][i] = beta2_ * v_[p][i] + (1 - beta2_) * g * g;
                tt.data()[i] -= lr_ * (m_[p][i] / bc1) / (std::sqrt(v_[p][i] / bc2) + eps_);
            }
        }
    }

private:
    double lr_, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace

std::unique_ptr<Optimizer> Optimizer::make(const std::string& kind, double lr) {
    if (kind == "sgd") return std::make_unique<Sgd>(lr);
    if (kind == "adam") return std::make_unique<Adam>(lr);
    throw ConfigError("unknown optimizer '" + kind + "'");
}

std::size_t argmax_lowest(const Tensor& logits) {
    const auto& d = logits.data();
    return static_cast<std::size_t>(std::max_element(d.begin(), d.end()) - d.begin());
}

Metrics evaluate(const MMSenseModel& model, const std::vector<LabeledSample>& data) {
    if (data.empty()) throw DataError("evaluate: empty dataset");
    Metrics m;
    for (const auto& sample : data) {
        auto fwd = model.forward(sample);
        const auto& out = fwd.outputs;
        if (argmax_lowest(out.beam_logits) == static_cast<std::size_t>(sample.beam_label))
            m.top1_bp += 1;
        if (argmax_lowest(out.har_logits) == static_cast<std::size_t>(sample.activity_label))
            m.top1_har += 1;
        double se = 0;
        for (std::size_t i = 0; i < out.keypoints_pred.size(); ++i) {
            double d = out.keypoints_pred.data()[i] - sample.keypoints[i];
            se += d * d;
        }
        m.mse_hpe += se / static_cast<double>(out.keypoints_pred.size());
        double sig = 1.0 / (1.0 + std::exp(-out.blockage_logit.value()));
        int decided = sig > 0.5 ? 1 : 0;
        if (decided == sample.blockage_label) m.acc_fbp += 1;
    }
    double n = static_cast<double>(data.size());
    m.top1_bp /= n;
    m.top1_har /= n;
    m.mse_hpe /= n;
    m.acc_fbp /= n;
    return m;
}

TrainLog train(MMSenseModel& model, const std::vector<LabeledSample>& data,
               const TrainConfig& cfg, const std::vector<LabeledSample>* eval_data) {
    if (data.empty()) throw DataError("train: empty dataset");
    cfg.validate();
    const std::vector<LabeledSample>& eval_set = eval_data ? *eval_data : data;
    auto params = model.trainable_params();
    auto opt = Optimizer::make(cfg.optimizer, cfg.lr);

    Rng order_rng(mix_seed(cfg.seed, 0xba7c4u));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();  // forces a shuffle on first use

    TrainLog log;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        std::array<Tensor, 4> batch_losses = {Tensor::scalar(0), Tensor::scalar(0),
                                              Tensor::scalar(0), Tensor::scalar(0)};
        std::array<double, 3> gate_sum{};
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                for (std::size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
                cursor = 0;
            }
            const auto& sample = data[order[cursor++]];
            auto fwd = model.forward(sample);
            auto losses = per_task_loss(fwd.outputs, sample);
            for (std::size_t t = 0; t < 4; ++t) batch_losses[t] = add(batch_losses[t], losses[t]);
            for (std::size_t g = 0; g < 3; ++g) gate_sum[g] += fwd.gate.weights.data()[g];
        }
        double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        for (auto& l : batch_losses) l = scale(l, inv_b);
        Tensor total = total_uncertainty_loss(batch_losses, model.log_variances());
        if (!std::isfinite(total.value()))
            throw NumericError("training diverged: non-finite loss at step " +
                               std::to_string(step));
        backward(total);
        opt->step(params);
        for (auto& [name, t] : params) const_cast<Tensor&>(t).zero_grad();

        if (step % cfg.eval_interval == 0 || step == cfg.steps) {
            TrainRecord rec;
            rec.step = step;
            for (std::size_t t = 0; t < 4; ++t) rec.losses[t] = batch_losses[t].value();
            rec.metrics = evaluate(model, eval_set);
            for (std::size_t g = 0; g < 3; ++g) rec.gate_mean[g] = gate_sum[g] * inv_b;
            for (std::size_t t = 0; t < 4; ++t)
                rec.sigma2[t] = std::exp(model.log_variances().data()[t]);
            log.records.push_back(rec);
        }
    }
    log.final_metrics = log.records.empty() ? evaluate(model, eval_set)
                                            : log.records.back().metrics;
    return log;
}

Splits make_splits(const std::vector<LabeledSample>& data,
                   const std::vector<int>& holdout_subjects, double few_shot_fraction,
                   std::uint64_t seed) {
    if (few_shot_fraction <= 0.0 || few_shot_fraction > 1.0)
        throw ConfigError("few_shot_fraction must be in (0, 1]");
    std::set<int> subjects;
    for (const auto& s : data) subjects.insert(s.subject_id);
    if (subjects.size() < 2) throw DataError("splits need at least two distinct subjects");
    std::set<int> held(holdout_subjects.begin(), holdout_subjects.end());

    Splits out;
    std::vector<std::size_t> seen_idx, held_idx;
    for (std::size_t i = 0; i < data.size(); ++i)
        (held.count(data[i].subject_id) ? held_idx : seen_idx).push_back(i);

    Rng rng(mix_seed(seed, 0x59115u));
    auto shuffle = [&](std::vector<std::size_t>& idx) {
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    };
    shuffle(seen_idx);
    std::size_t n_val = seen_idx.size() / 10;
    for (std::size_t i = 0; i < seen_idx.size(); ++i)
        (i < n_val ? out.val : out.train).push_back(data[seen_idx[i]]);

    shuffle(held_idx);
    std::size_t n_few =
        static_cast<std::size_t>(few_shot_fraction * static_cast<double>(held_idx.size()));
    for (std::size_t i = 0; i < held_idx.size(); ++i)
        (i < n_few ? out.few_shot_pool : out.zero_shot).push_back(data[held_idx[i]]);
    return out;
}

double model_grad_check(MMSenseModel& model, const std::vector<LabeledSample>& batch) {
    if (batch.empty()) throw DataError("model_grad_check: empty batch");
    auto named = model.trainable_params();
    std::vector<Tensor> params;
    for (auto& [name, t] : named) params.push_back(t);
    auto f = [&]() {
        std::array<Tensor, 4> losses = {Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0),
                                        Tensor::scalar(0)};
        for (const auto& sample : batch) {
            auto per = per_task_loss(model.forward(sample).outputs, sample);
            for (std::size_t t = 0; t < 4; ++t) losses[t] = add(losses[t], per[t]);
        }
        double inv = 1.0 / static_cast<double>(batch.size());
        for (auto& l : losses) l = scale(l, inv);
        return total_uncertainty_loss(losses, model.log_variances());
    };
    return grad_check(f, params);
}

}  // namespace mmsense
