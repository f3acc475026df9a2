#pragma once

#include <string>

#include "mmsense/fusion.hpp"
#include "mmsense/heads.hpp"
#include "mmsense/scenario.hpp"

namespace mmsense {

/// Full multi-task pipeline: three modality encoders, reliability gating,
/// gated fusion with cross-modal attention, the frozen adapted trunk, and
/// the four task heads plus per-task log-variance weights.
class MMSenseModel {
public:
    struct ForwardResult {
        TaskOutputs outputs;
        GateWeights gate;
    };

    MMSenseModel(const GeneratorConfig& gen, const ModelConfig& model, std::uint64_t init_seed,
                 bool no_gating = false, bool no_task_attention = false);

    /// attn_out, when non-null, collects every attention matrix evaluated in
    /// the forward pass (fusion plus all backbone layers for all four tasks).
    ForwardResult forward(const LabeledSample& sample,
                          std::vector<Tensor>* attn_out = nullptr) const;

    /// Everything updated by training: encoders, gate (unless ablated),
    /// fusion, adapters + prompt table, task heads, and the log-variances.
    NamedParams trainable_params() const;

    /// s_t = log sigma_t^2, one per task, init 0.
    const Tensor& log_variances() const { return log_var_; }
    Tensor& log_variances() { return log_var_; }

    const GeneratorConfig& generator_config() const { return gen_; }
    const ModelConfig& model_config() const { return cfg_; }
    const Backbone& backbone() const { return backbone_; }
    bool no_gating() const { return no_gating_; }
    bool no_task_attention() const { return no_task_attention_; }

    /// Writes <path>.json (shapes, seeds, config, parameter order) and
    /// <path>.bin (flat little-endian doubles in manifest order).
    void save_checkpoint(const std::string& path_base) const;
    void load_checkpoint(const std::string& path_base);

private:
    GeneratorConfig gen_;
    ModelConfig cfg_;
    std::uint64_t init_seed_;
    bool no_gating_, no_task_attention_;

    ImageEncoder image_enc_;
    PointEncoder radar_enc_, lidar_enc_;
    GatingNetwork gate_;
    CrossModalAttention cross_;
    Backbone backbone_;
    TaskHeads heads_;
    Tensor log_var_;
};

}  // namespace mmsense
