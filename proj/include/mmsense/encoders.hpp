#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmsense/config.hpp"
#include "mmsense/tensor.hpp"

namespace mmsense {

enum class Modality { image, radar, lidar };

std::string modality_name(Modality m);

/// Token matrix emitted by one modality encoder; n_f x d_model for every
/// modality so the fused sequence concatenates cleanly.
struct ModalityEmbedding {
    Tensor tokens;
    Modality tag;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialized matrix.
Tensor init_matrix(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                   bool requires_grad = true);

/// Small residual convolutional stack: stride-1 stem, two stride-2 residual
/// stages, then a linear projection of the flattened map into n_f tokens.
class ImageEncoder {
public:
    ImageEncoder(const ModelConfig& cfg, std::size_t image_size, Rng& rng);

    /// image is 3 x H x W row-major; H and W must match construction time and
    /// be divisible by the downsampling factor (4).
    ModalityEmbedding forward(const std::vector<double>& image, std::size_t height,
                              std::size_t width) const;

    NamedParams named_params(const std::string& prefix) const;

private:
    std::size_t image_size_;
    std::size_t n_f_, d_model_, channels_;
    Tensor stem_w_, stem_b_;
    Tensor s1a_w_, s1a_b_, s1b_w_, s1b_b_;
    Tensor s2a_w_, s2a_b_, s2b_w_, s2b_b_;
    Tensor proj_w_, proj_b_;
    Tensor ln_g_, ln_s_;
};

/// Per-point MLP, k-nearest-neighbor local attention on xyz, then attention
/// pooling into n_f learned query tokens. Input rows are canonically sorted
/// first, which makes permutation invariance bit-exact.
class PointEncoder {
public:
    PointEncoder(const ModelConfig& cfg, std::size_t point_features, Modality tag, Rng& rng);

    /// points: N x F flat row-major, xyz in the first three columns; N >= 1.
    ModalityEmbedding forward(const std::vector<double>& points) const;

    NamedParams named_params(const std::string& prefix) const;

private:
    std::size_t features_, d_model_, n_f_, knn_;
    Modality tag_;
    Tensor mlp1_w_, mlp1_b_, mlp2_w_, mlp2_b_;
    Tensor attn_q_, attn_k_, attn_v_;
    Tensor pool_queries_, pool_k_, pool_v_;
    Tensor out_w_, out_b_;
    Tensor ln1_g_, ln1_s_, ln2_g_, ln2_s_;
};

}  // namespace mmsense
