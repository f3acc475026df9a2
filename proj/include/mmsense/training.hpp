#pragma once

#include <array>
#include <memory>
#include <optional>

#include "mmsense/model.hpp"

namespace mmsense {

/// Differentiable per-task losses for one sample, in task order
/// [BP, HAR, HPE, FBP]: cross-entropy, cross-entropy, coordinate-mean
/// squared error, binary cross-entropy on the logit.
std::array<Tensor, 4> per_task_loss(const TaskOutputs& outputs, const LabeledSample& sample);

/// sum_t [ 1/2 * exp(-s_t) * L_t + 1/2 * s_t ] with s_t = log sigma_t^2.
Tensor total_uncertainty_loss(const std::array<Tensor, 4>& losses, const Tensor& log_var);

class Optimizer {
public:
    virtual ~Optimizer() = default;
    /// Applies one update from the accumulated gradients; leaves grads intact.
    virtual void step(const NamedParams& params) = 0;

    /// "sgd" or "adam".
    static std::unique_ptr<Optimizer> make(const std::string& kind, double lr);
};

struct Metrics {
    double top1_bp = 0, top1_har = 0, mse_hpe = 0, acc_fbp = 0;
};

/// Argmax over a 1 x n logit row; ties resolve to the lowest index.
std::size_t argmax_lowest(const Tensor& logits);

Metrics evaluate(const MMSenseModel& model, const std::vector<LabeledSample>& data);

struct TrainRecord {
    std::size_t step = 0;
    std::array<double, 4> losses{};   // batch means, task order
    Metrics metrics;                  // on the eval set
    std::array<double, 3> gate_mean{};  // image, radar, lidar
    std::array<double, 4> sigma2{};   // exp(s_t)
};

struct TrainLog {
    std::vector<TrainRecord> records;
    Metrics final_metrics;
};

/// Deterministic mini-batch loop over the model's trainable parameters.
/// eval_data defaults to the training data when null. Aborts with
/// NumericError if the total loss stops being finite.
TrainLog train(MMSenseModel& model, const std::vector<LabeledSample>& data,
               const TrainConfig& cfg, const std::vector<LabeledSample>* eval_data = nullptr);

struct Splits {
    std::vector<LabeledSample> train, val, zero_shot, few_shot_pool;
};

/// Subject-held-out splits: train/val cover the non-held-out subjects, the
/// held-out domain is divided into a seeded few-shot pool (floor(fraction*n)
/// samples) and the disjoint zero-shot evaluation set.
Splits make_splits(const std::vector<LabeledSample>& data,
                   const std::vector<int>& holdout_subjects, double few_shot_fraction,
                   std::uint64_t seed);

/// Max relative error of the analytic gradient of the batch uncertainty loss
/// against central finite differences over every trainable parameter.
double model_grad_check(MMSenseModel& model, const std::vector<LabeledSample>& batch);

}  // namespace mmsense
