#pragma once

#include "mmsense/encoders.hpp"

namespace mmsense {

/// Softmax-normalized per-modality reliability weights; a 3-element tensor in
/// the fixed order [image, radar, lidar].
struct GateWeights {
    Tensor weights;

    double image() const { return weights.data()[0]; }
    double radar() const { return weights.data()[1]; }
    double lidar() const { return weights.data()[2]; }
};

/// Gated concatenation of the three embeddings: (3*n_f) x d_model with block
/// layout [image; radar; lidar].
struct FusedSequence {
    Tensor tokens;
    std::size_t tokens_per_modality = 0;
};

/// Mean-pools each embedding, concatenates the pooled vectors, and maps them
/// through a two-layer MLP into three softmax scores.
class GatingNetwork {
public:
    GatingNetwork(const ModelConfig& cfg, Rng& rng);

    GateWeights forward(const ModalityEmbedding& image, const ModalityEmbedding& radar,
                        const ModalityEmbedding& lidar) const;

    NamedParams named_params(const std::string& prefix) const;

private:
    Tensor w1_, b1_, w2_, b2_;
};

/// tokens = [w_img*z_img; w_radar*z_radar; w_lidar*z_lidar].
FusedSequence fuse(const ModalityEmbedding& image, const ModalityEmbedding& radar,
                   const ModalityEmbedding& lidar, const GateWeights& gate);

/// Multi-head self-attention over the fused sequence with residual
/// connection. Scores are scaled by 1/sqrt(d_model) — the embedding width,
/// not the per-head width.
class CrossModalAttention {
public:
    CrossModalAttention(const ModelConfig& cfg, Rng& rng);

    /// attn_out, when non-null, receives the per-head attention matrices.
    FusedSequence forward(const FusedSequence& fused,
                          std::vector<Tensor>* attn_out = nullptr) const;

    NamedParams named_params(const std::string& prefix) const;

private:
    std::size_t d_model_, n_heads_;
    Tensor wq_, wk_, wv_, wo_;
};

/// Shared building block: multi-head self-attention over token matrix x.
/// When attn_out is non-null it receives the per-head attention matrices
/// (diagnostic; rows sum to 1).
Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                            const Tensor& wv, std::size_t n_heads, double score_scale,
                            std::vector<Tensor>* attn_out = nullptr);

}  // namespace mmsense
