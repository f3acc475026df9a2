#include "mmsense/fusion.hpp"

#include <cmath>

namespace mmsense {

GatingNetwork::GatingNetwork(const ModelConfig& cfg, Rng& rng) {
    std::size_t in = 3 * cfg.d_model;
    w1_ = init_matrix(rng, {in, cfg.gate_hidden}, in);
    b1_ = Tensor::zeros({cfg.gate_hidden}, true);
    w2_ = init_matrix(rng, {cfg.gate_hidden, 3}, cfg.gate_hidden);
    b2_ = Tensor::zeros({3}, true);
}

GateWeights GatingNetwork::forward(const ModalityEmbedding& image,
                                   const ModalityEmbedding& radar,
                                   const ModalityEmbedding& lidar) const {
    std::vector<Tensor> pooled = {mean_rows(image.tokens), mean_rows(radar.tokens),
                                  mean_rows(lidar.tokens)};
    Tensor summary = concat_cols(pooled);
    Tensor scores = linear(relu(linear(summary, w1_, &b1_)), w2_, &b2_);
    return {reshape(softmax(scores, 1), {3})};
}

NamedParams GatingNetwork::named_params(const std::string& prefix) const {
    return {{prefix + ".w1", w1_}, {prefix + ".b1", b1_},
            {prefix + ".w2", w2_}, {prefix + ".b2", b2_}};
}

FusedSequence fuse(const ModalityEmbedding& image, const ModalityEmbedding& radar,
                   const ModalityEmbedding& lidar, const GateWeights& gate) {
    if (image.tokens.shape() != radar.tokens.shape() ||
        image.tokens.shape() != lidar.tokens.shape()) {
        throw ShapeError("fuse: modality embeddings must share a token shape");
    }
    std::vector<Tensor> blocks = {scale_by(image.tokens, pick(gate.weights, 0)),
                                  scale_by(radar.tokens, pick(gate.weights, 1)),
                                  scale_by(lidar.tokens, pick(gate.weights, 2))};
    return {concat_rows(blocks), image.tokens.rows()};
}

Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk,
                            const Tensor& wv, std::size_t n_heads, double score_scale,
                            std::vector<Tensor>* attn_out) {
    std::size_t d = x.cols();
    if (d % n_heads != 0) {
        throw ConfigError("d_model " + std::to_string(d) + " is not divisible by n_heads " +
                          std::to_string(n_heads));
    }
    std::size_t dk = d / n_heads;
    Tensor q = matmul(x, wq);
    Tensor k = matmul(x, wk);
    Tensor v = matmul(x, wv);
    std::vector<Tensor> heads;
    heads.reserve(n_heads);
    for (std::size_t h = 0; h < n_heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, dk);
        Tensor kh = slice_cols(k, h * dk, dk);
        Tensor vh = slice_cols(v, h * dk, dk);
        Tensor attn = softmax(scale(matmul(qh, transpose(kh)), score_scale), 1);
        if (attn_out != nullptr) attn_out->push_back(attn);
        heads.push_back(matmul(attn, vh));
    }
    return concat_cols(heads);
}

CrossModalAttention::CrossModalAttention(const ModelConfig& cfg, Rng& rng)
    : d_model_(cfg.d_model), n_heads_(cfg.n_heads) {
    if (cfg.d_model % cfg.n_heads != 0) {
        throw ConfigError("d_model must be divisible by n_heads");
    }
    wq_ = init_matrix(rng, {d_model_, d_model_}, 1);
    wk_ = init_matrix(rng, {d_model_, d_model_}, 1);
    wv_ = init_matrix(rng, {d_model_, d_model_}, d_model_);
    wo_ = init_matrix(rng, {d_model_, d_model_}, d_model_);
}

FusedSequence CrossModalAttention::forward(const FusedSequence& fused,
                                           std::vector<Tensor>* attn_out) const {
    // scale by 1/sqrt(d_model) as written in the fusion attention definition;
    // note this differs from the common per-head 1/sqrt(d_k)
    double score_scale = 1.0 / std::sqrt(static_cast<double>(d_model_));
    Tensor attended =
        multi_head_attention(fused.tokens, wq_, wk_, wv_, n_heads_, score_scale, attn_out);
    Tensor out = add(matmul(attended, wo_), fused.tokens);  // residual
    return {out, fused.tokens_per_modality};
}

NamedParams CrossModalAttention::named_params(const std::string& prefix) const {
    return {{prefix + ".wq", wq_}, {prefix + ".wk", wk_},
            {prefix + ".wv", wv_}, {prefix + ".wo", wo_}};
}

}  // namespace mmsense
