#include "mmsense/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmsense {

std::string modality_name(Modality m) {
    switch (m) {
        case Modality::image: return "image";
        case Modality::radar: return "radar";
        case Modality::lidar: return "lidar";
    }
    return "?";
}

Tensor init_matrix(Rng& rng, std::vector<std::size_t> shape, std::size_t fan_in,
                   bool requires_grad) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::vector<double> data(n);
    for (auto& v : data) v = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

// ---- ImageEncoder ----------------------------------------------------------

ImageEncoder::ImageEncoder(const ModelConfig& cfg, std::size_t image_size, Rng& rng)
    : image_size_(image_size),
      n_f_(cfg.n_f),
      d_model_(cfg.d_model),
      channels_(cfg.conv_channels) {
    if (image_size % 4 != 0) {
        throw ConfigError("image_size must be divisible by the downsampling factor 4");
    }
    std::size_t c = channels_;
    stem_w_ = init_matrix(rng, {c, 3, 3, 3}, 3 * 9);
    stem_b_ = init_matrix(rng, {c}, c);
    s1a_w_ = init_matrix(rng, {c, c, 3, 3}, c * 9);
    s1a_b_ = init_matrix(rng, {c}, c);
    s1b_w_ = init_matrix(rng, {c, c, 3, 3}, c * 9);
    s1b_b_ = init_matrix(rng, {c}, c);
    s2a_w_ = init_matrix(rng, {c, c, 3, 3}, c * 9);
    s2a_b_ = init_matrix(rng, {c}, c);
    s2b_w_ = init_matrix(rng, {c, c, 3, 3}, c * 9);
    s2b_b_ = init_matrix(rng, {c}, c);
    std::size_t flat = c * (image_size / 4) * (image_size / 4);
    proj_w_ = init_matrix(rng, {flat, n_f_ * d_model_}, flat);
    proj_b_ = Tensor::zeros({n_f_ * d_model_}, true);
    ln_g_ = Tensor::full({d_model_}, 1.0, true);
    ln_s_ = Tensor::zeros({d_model_}, true);
}

ModalityEmbedding ImageEncoder::forward(const std::vector<double>& image, std::size_t height,
                                        std::size_t width) const {
    if (height != image_size_ || width != image_size_ || image.size() != 3 * height * width) {
        throw ShapeError("image encoder expects 3x" + std::to_string(image_size_) + "x" +
                         std::to_string(image_size_) + " input, got " +
                         std::to_string(image.size()) + " values for " + std::to_string(height) +
                         "x" + std::to_string(width));
    }
    Tensor x = Tensor::from({3, height, width}, image);
    Tensor h = relu(conv2d(x, stem_w_, stem_b_, 1));
    // residual stage 1 (downsample x2)
    Tensor y1 = relu(conv2d(h, s1a_w_, s1a_b_, 2));
    Tensor h1 = add(relu(conv2d(y1, s1b_w_, s1b_b_, 1)), y1);
    // residual stage 2 (downsample x2)
    Tensor y2 = relu(conv2d(h1, s2a_w_, s2a_b_, 2));
    Tensor h2 = add(relu(conv2d(y2, s2b_w_, s2b_b_, 1)), y2);

    Tensor flat = reshape(h2, {1, h2.size()});
    Tensor tokens = reshape(linear(flat, proj_w_, &proj_b_), {n_f_, d_model_});
    return {layer_norm(tokens, ln_g_, ln_s_), Modality::image};
}

NamedParams ImageEncoder::named_params(const std::string& prefix) const {
    return {
        {prefix + ".stem.w", stem_w_}, {prefix + ".stem.b", stem_b_},
        {prefix + ".s1a.w", s1a_w_},   {prefix + ".s1a.b", s1a_b_},
        {prefix + ".s1b.w", s1b_w_},   {prefix + ".s1b.b", s1b_b_},
        {prefix + ".s2a.w", s2a_w_},   {prefix + ".s2a.b", s2a_b_},
        {prefix + ".s2b.w", s2b_w_},   {prefix + ".s2b.b", s2b_b_},
        {prefix + ".proj.w", proj_w_}, {prefix + ".proj.b", proj_b_},
        {prefix + ".ln.g", ln_g_},     {prefix + ".ln.s", ln_s_},
    };
}

// ---- PointEncoder ----------------------------------------------------------

PointEncoder::PointEncoder(const ModelConfig& cfg, std::size_t point_features, Modality tag,
                           Rng& rng)
    : features_(point_features),
      d_model_(cfg.d_model),
      n_f_(cfg.n_f),
      knn_(cfg.point_knn),
      tag_(tag) {
    std::size_t d = d_model_;
    mlp1_w_ = init_matrix(rng, {features_, d}, features_);
    mlp1_b_ = Tensor::zeros({d}, true);
    mlp2_w_ = init_matrix(rng, {d, d}, d);
    mlp2_b_ = Tensor::zeros({d}, true);
    attn_q_ = init_matrix(rng, {d, d}, 1);
    attn_k_ = init_matrix(rng, {d, d}, 1);
    attn_v_ = init_matrix(rng, {d, d}, d);
    pool_queries_ = init_matrix(rng, {n_f_, d}, 1);
    pool_k_ = init_matrix(rng, {d, d}, 1);
    pool_v_ = init_matrix(rng, {d, d}, d);
    out_w_ = init_matrix(rng, {d, d}, d);
    out_b_ = Tensor::zeros({d}, true);
    ln1_g_ = Tensor::full({d}, 1.0, true);
    ln1_s_ = Tensor::zeros({d}, true);
    ln2_g_ = Tensor::full({d}, 1.0, true);
    ln2_s_ = Tensor::zeros({d}, true);
}

ModalityEmbedding PointEncoder::forward(const std::vector<double>& points) const {
    if (points.empty() || points.size() % features_ != 0) {
        throw ShapeError("point encoder expects N x " + std::to_string(features_) +
                         " input, got " + std::to_string(points.size()) + " values");
    }
    std::size_t n = points.size() / features_;

    // canonical lexicographic pre-sort over all features: permutation
    // invariance becomes bit-exact
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        for (std::size_t f = 0; f < features_; ++f) {
            double va = points[a * features_ + f], vb = points[b * features_ + f];
            if (va != vb) return va < vb;
        }
        return false;
    });
    std::vector<double> sorted(points.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < features_; ++f) {
            sorted[i * features_ + f] = points[order[i] * features_ + f];
        }
    }

    // k nearest neighbors on xyz; ties broken by post-sort input index
    std::size_t k = std::min(knn_, n);
    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::pair<double, std::size_t>> cand;
        cand.reserve(n);
        for (std::size_t j = 0; j < n; ++j) {
            double d2 = 0;
            for (std::size_t f = 0; f < 3 && f < features_; ++f) {
                double diff = sorted[i * features_ + f] - sorted[j * features_ + f];
                d2 += diff * diff;
            }
            cand.emplace_back(d2, j);
        }
        std::sort(cand.begin(), cand.end());
        for (std::size_t j = 0; j < k; ++j) neighbors[i].push_back(cand[j].second);
    }

    Tensor x = Tensor::from({n, features_}, sorted);
    Tensor h = layer_norm(linear(relu(linear(x, mlp1_w_, &mlp1_b_)), mlp2_w_, &mlp2_b_),
                          ln1_g_, ln1_s_);

    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_model_));
    Tensor q = matmul(h, attn_q_);
    Tensor key = matmul(h, attn_k_);
    Tensor val = matmul(h, attn_v_);
    std::vector<Tensor> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor qi = gather_rows(q, {i});
        Tensor ki = gather_rows(key, neighbors[i]);
        Tensor vi = gather_rows(val, neighbors[i]);
        Tensor attn = softmax(scale(matmul(qi, transpose(ki)), inv_sqrt_d), 1);
        rows.push_back(matmul(attn, vi));
    }
    Tensor local = add(concat_rows(rows), h);

    // order-symmetric pooling: attention from n_f learned queries over points
    Tensor pk = matmul(local, pool_k_);
    Tensor pv = matmul(local, pool_v_);
    Tensor pool_attn = softmax(scale(matmul(pool_queries_, transpose(pk)), inv_sqrt_d), 1);
    Tensor tokens = layer_norm(linear(matmul(pool_attn, pv), out_w_, &out_b_), ln2_g_, ln2_s_);
    return {tokens, tag_};
}

NamedParams PointEncoder::named_params(const std::string& prefix) const {
    return {
        {prefix + ".mlp1.w", mlp1_w_}, {prefix + ".mlp1.b", mlp1_b_},
        {prefix + ".mlp2.w", mlp2_w_}, {prefix + ".mlp2.b", mlp2_b_},
        {prefix + ".attn.q", attn_q_}, {prefix + ".attn.k", attn_k_},
        {prefix + ".attn.v", attn_v_}, {prefix + ".pool.queries", pool_queries_},
        {prefix + ".pool.k", pool_k_}, {prefix + ".pool.v", pool_v_},
        {prefix + ".out.w", out_w_},   {prefix + ".out.b", out_b_},
        {prefix + ".ln1.g", ln1_g_},   {prefix + ".ln1.s", ln1_s_},
        {prefix + ".ln2.g", ln2_g_},   {prefix + ".ln2.s", ln2_s_},
    };
}

}  // namespace mmsense
