#pragma once

#include <vector>

#include "mmsense/backbone.hpp"
#include "mmsense/config.hpp"
#include "mmsense/tensor.hpp"

namespace mmsense {

/// Predictions for all four tasks from one forward pass.
struct TaskOutputs {
    Tensor beam_logits;     // 1 x B
    Tensor har_logits;      // 1 x C_h
    Tensor keypoints_pred;  // J x 3, meters
    Tensor blockage_logit;  // scalar
};

/// One task's sequential attention chain over tapped hidden states,
/// followed by an affine output layer.
///
/// Stage k pools H^{l_k} over sequence positions, gates the MLP input
/// coordinate-wise with a learned sigmoid, and maps to a d_model feature.
/// Stage 1 reads pooled H^{l_1} alone; later stages read the previous
/// feature concatenated with the next pooled tap.
class TaskHead {
public:
    TaskHead(Task task, const std::vector<std::size_t>& taps, std::size_t layers,
             std::size_t d_model, std::size_t hidden, std::size_t out_dim, Rng& rng);

    /// z^t_K from the tapped hidden states.
    Tensor feature(const HiddenStates& hs) const;

    /// Feature path used by the no-task-attention ablation: pooled H^L only.
    Tensor pooled_last(const HiddenStates& hs) const;

    /// Affine output layer on a 1 x d_model feature.
    Tensor output(const Tensor& feature) const;

    Task task() const { return task_; }
    const std::vector<std::size_t>& taps() const { return taps_; }

    NamedParams attention_params(const std::string& prefix) const;
    NamedParams output_params(const std::string& prefix) const;

private:
    struct Stage {
        Tensor ln_g, ln_s;      // input normalization
        Tensor gate_w, gate_b;  // sigmoid coordinate gate
        Tensor w1, b1, w2, b2;  // two-layer MLP to d_model
    };

    Task task_;
    std::vector<std::size_t> taps_;
    std::vector<Stage> stages_;
    Tensor out_w_, out_b_;
};

/// Evenly spaced default taps over [1, L]: l_k = round(k·L/K) computed as
/// floor((k·L + K - 1)/K) for k = 1..K.
std::vector<std::size_t> default_taps(std::size_t layers, std::size_t k);

/// All four task heads plus assembly into TaskOutputs.
class TaskHeads {
public:
    TaskHeads(const GeneratorConfig& gen, const ModelConfig& model, Rng& rng);

    /// Per-task forward; no_task_attention swaps the chain for pooled H^L.
    Tensor task_output(Task task, const HiddenStates& hs, bool no_task_attention = false) const;

    TaskOutputs forward(const std::array<HiddenStates, 4>& per_task_hs,
                        bool no_task_attention = false) const;

    const TaskHead& head(Task task) const { return heads_[static_cast<std::size_t>(task)]; }
    NamedParams trainable_params(const std::string& prefix) const;

private:
    std::vector<TaskHead> heads_;
    std::size_t num_keypoints_;
};

}  // namespace mmsense
