#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmsense/fusion.hpp"

using namespace mmsense;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.n_f = 4;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.gate_hidden = 8;
    return cfg;
}

ModalityEmbedding embedding(Modality tag, Rng& rng, std::size_t n_f = 4, std::size_t d = 8) {
    std::vector<double> data(n_f * d);
    for (auto& v : data) v = rng.normal();
    return {Tensor::from({n_f, d}, data), tag};
}

}  // namespace

TEST_CASE("gate with zero parameters is uniform") {
    Rng rng(1);
    auto cfg = tiny_model();
    GatingNetwork gate(cfg, rng);
    for (auto& [name, t] : gate.named_params("g")) {
        std::fill(t.data().begin(), t.data().end(), 0.0);
    }
    auto z1 = embedding(Modality::image, rng);
    auto z2 = embedding(Modality::radar, rng);
    auto z3 = embedding(Modality::lidar, rng);
    auto w = gate.forward(z1, z2, z3);
    CHECK(w.image() == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(w.radar() == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(w.lidar() == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("gate scores (1,2,3) give the softmax oracle values") {
    Rng rng(2);
    auto cfg = tiny_model();
    GatingNetwork gate(cfg, rng);
    auto params = gate.named_params("g");
    for (auto& [name, t] : params) {
        if (name == "g.b2") t.data() = {1.0, 2.0, 3.0};
        else std::fill(t.data().begin(), t.data().end(), 0.0);
    }
    auto w = gate.forward(embedding(Modality::image, rng), embedding(Modality::radar, rng),
                          embedding(Modality::lidar, rng));
    CHECK(w.image() == doctest::Approx(0.09003).epsilon(1e-4));
    CHECK(w.radar() == doctest::Approx(0.24473).epsilon(1e-4));
    CHECK(w.lidar() == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("gate simplex invariant over random parameter draws") {
    auto cfg = tiny_model();
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(1000 + trial);
        GatingNetwork gate(cfg, rng);
        auto w = gate.forward(embedding(Modality::image, rng), embedding(Modality::radar, rng),
                              embedding(Modality::lidar, rng));
        double total = w.image() + w.radar() + w.lidar();
        CHECK(std::abs(total - 1.0) < 1e-9);
        CHECK(w.image() >= 0.0);
        CHECK(w.radar() >= 0.0);
        CHECK(w.lidar() >= 0.0);
    }
}

TEST_CASE("fuse applies one-hot and uniform gates blockwise") {
    Rng rng(3);
    auto z1 = embedding(Modality::image, rng);
    auto z2 = embedding(Modality::radar, rng);
    auto z3 = embedding(Modality::lidar, rng);

    GateWeights onehot{Tensor::from({3}, {1, 0, 0})};
    auto fused = fuse(z1, z2, z3, onehot);
    CHECK(fused.tokens.rows() == 12);  // 3 * n_f
    for (std::size_t i = 0; i < 4 * 8; ++i) {
        CHECK(fused.tokens.data()[i] == z1.tokens.data()[i]);
        CHECK(fused.tokens.data()[4 * 8 + i] == 0.0);
        CHECK(fused.tokens.data()[8 * 8 + i] == 0.0);
    }

    ModalityEmbedding z1c = {z1.tokens, Modality::image};
    ModalityEmbedding z2c = {z1.tokens, Modality::radar};
    ModalityEmbedding z3c = {z1.tokens, Modality::lidar};
    GateWeights uniform{Tensor::from({3}, {1.0 / 3, 1.0 / 3, 1.0 / 3})};
    auto fu = fuse(z1c, z2c, z3c, uniform);
    for (std::size_t block = 0; block < 3; ++block) {
        for (std::size_t i = 0; i < 4 * 8; ++i) {
            CHECK(fu.tokens.data()[block * 32 + i] ==
                  doctest::Approx(z1.tokens.data()[i] / 3.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("fuse is bilinear in the gate weights") {
    Rng rng(4);
    auto z1 = embedding(Modality::image, rng);
    auto z2 = embedding(Modality::radar, rng);
    auto z3 = embedding(Modality::lidar, rng);
    GateWeights w{Tensor::from({3}, {0.2, 0.5, 0.3})};
    GateWeights w2{Tensor::from({3}, {0.4, 1.0, 0.6})};  // 2*w
    auto a = fuse(z1, z2, z3, w);
    auto b = fuse(z1, z2, z3, w2);
    for (std::size_t i = 0; i < a.tokens.size(); ++i) {
        CHECK(b.tokens.data()[i] == doctest::Approx(2.0 * a.tokens.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("uniform attention averages the value rows") {
    // W_Q = W_K = 0 makes every attention row uniform; with W_V = identity the
    // attended output is the column mean of the input.
    std::size_t n = 6, d = 8;
    Rng rng(5);
    std::vector<double> data(n * d);
    for (auto& v : data) v = rng.normal();
    Tensor x = Tensor::from({n, d}, data);
    Tensor zero = Tensor::zeros({d, d});
    std::vector<double> eye(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
    Tensor identity = Tensor::from({d, d}, eye);

    Tensor out = multi_head_attention(x, zero, zero, identity, 2, 1.0 / std::sqrt(8.0));
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0;
        for (std::size_t i = 0; i < n; ++i) mean += x.at(i, j);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(out.at(i, j) == doctest::Approx(mean).epsilon(1e-12));
        }
    }
}

TEST_CASE("attention rows sum to one") {
    Rng rng(6);
    auto cfg = tiny_model();
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> data(12 * 8);
        for (auto& v : data) v = rng.normal(0, 3);
        Tensor x = Tensor::from({12, 8}, data);
        Rng prng(trial);
        Tensor wq = init_matrix(prng, {8, 8}, 8);
        Tensor wk = init_matrix(prng, {8, 8}, 8);
        Tensor wv = init_matrix(prng, {8, 8}, 8);
        std::vector<Tensor> attn;
        multi_head_attention(x, wq, wk, wv, cfg.n_heads, 1.0 / std::sqrt(8.0), &attn);
        REQUIRE(attn.size() == cfg.n_heads);
        for (const Tensor& a : attn) {
            for (std::size_t i = 0; i < a.rows(); ++i) {
                double total = 0;
                for (std::size_t j = 0; j < a.cols(); ++j) total += a.at(i, j);
                CHECK(std::abs(total - 1.0) < 1e-9);
            }
        }
    }
}

TEST_CASE("cross-modal attention preserves shape and rejects bad head counts") {
    Rng rng(7);
    auto cfg = tiny_model();
    CrossModalAttention attn(cfg, rng);
    auto z1 = embedding(Modality::image, rng);
    auto z2 = embedding(Modality::radar, rng);
    auto z3 = embedding(Modality::lidar, rng);
    GateWeights w{Tensor::from({3}, {0.3, 0.3, 0.4})};
    auto fused = fuse(z1, z2, z3, w);
    auto out = attn.forward(fused);
    CHECK(out.tokens.shape() == fused.tokens.shape());

    auto bad = cfg;
    bad.n_heads = 3;  // does not divide d_model=8
    CHECK_THROWS_AS(CrossModalAttention(bad, rng), ConfigError);
}

TEST_CASE("gate + fuse + attention pass grad_check end to end") {
    Rng rng(8);
    auto cfg = tiny_model();
    GatingNetwork gate(cfg, rng);
    CrossModalAttention attn(cfg, rng);
    std::vector<double> d1(4 * 8), d2(4 * 8), d3(4 * 8);
    for (auto& v : d1) v = rng.normal();
    for (auto& v : d2) v = rng.normal();
    for (auto& v : d3) v = rng.normal();
    ModalityEmbedding z1 = {Tensor::from({4, 8}, d1, true), Modality::image};
    ModalityEmbedding z2 = {Tensor::from({4, 8}, d2, true), Modality::radar};
    ModalityEmbedding z3 = {Tensor::from({4, 8}, d3, true), Modality::lidar};

    std::vector<Tensor> params = {z1.tokens, z2.tokens, z3.tokens};
    for (auto& [name, t] : gate.named_params("g")) params.push_back(t);
    for (auto& [name, t] : attn.named_params("a")) params.push_back(t);

    auto f = [&]() {
        auto w = gate.forward(z1, z2, z3);
        auto fused = fuse(z1, z2, z3, w);
        auto out = attn.forward(fused);
        return mean_all(mul(out.tokens, out.tokens));
    };
    CHECK(grad_check(f, params) < 1e-4);
}
