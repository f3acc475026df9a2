#pragma once

#include <array>

#include "mmsense/fusion.hpp"

namespace mmsense {

enum class Task { BP, HAR, HPE, FBP };

inline constexpr std::array<Task, 4> kAllTasks = {Task::BP, Task::HAR, Task::HPE, Task::FBP};

std::string task_name(Task t);
Task task_from_name(const std::string& name);

/// Additive low-rank update to one frozen projection:
/// delta_w = (alpha/rank) * b * a, rank <= r by construction, zero at init
/// because b starts at zero.
struct LoraAdapter {
    Tensor a;  // rank x d_in
    Tensor b;  // d_out x rank
    std::size_t rank = 4;
    double alpha = 8.0;
    std::size_t layer = 0;       // 0-based
    std::string target;          // "query" | "value"
};

Tensor lora_delta(const LoraAdapter& adapter);

/// Activations after each of the L transformer layers.
struct HiddenStates {
    std::vector<Tensor> layers;
    std::size_t prompt_len = 0;
};

/// Compact frozen stand-in for the pre-trained backbone: base weights are
/// drawn once from frozen_seed and never appear in any trainable set. Task
/// prompts are prefixed to the fused sequence and the whole sequence runs
/// through pre-norm self-attention layers; adapters add their deltas to the
/// query/value projections of every layer.
class Backbone {
public:
    explicit Backbone(const ModelConfig& cfg, Rng& rng);

    /// Word-level tokenization of the task's built-in prompt over the
    /// backbone vocabulary, mapped through the learned embedding table.
    Tensor embed_instruction(Task task) const;

    const std::vector<std::size_t>& prompt_token_ids(Task task) const;

    /// attn_out, when non-null, receives every layer's per-head attention
    /// matrices in depth order.
    HiddenStates forward(const FusedSequence& fused, Task task, bool with_adapters = true,
                         std::vector<Tensor>* attn_out = nullptr) const;

    std::size_t layer_count() const { return cfg_.layers; }

    /// Adapters + prompt embedding table (the only trainable state here).
    NamedParams trainable_params(const std::string& prefix) const;
    /// Frozen base weights, for checkpointing.
    NamedParams base_params(const std::string& prefix) const;

    std::uint64_t base_hash() const;

    std::vector<LoraAdapter>& adapters() { return adapters_; }

private:
    struct Layer {
        Tensor wq, wk, wv, wo;
        Tensor ln1_g, ln1_b, ln2_g, ln2_b;
        Tensor ffn1_w, ffn1_b, ffn2_w, ffn2_b;
    };

    ModelConfig cfg_;
    std::vector<std::string> vocab_;
    std::array<std::vector<std::size_t>, 4> prompt_ids_;
    Tensor prompt_table_;
    std::vector<Layer> layers_;
    std::vector<LoraAdapter> adapters_;
};

}  // namespace mmsense
