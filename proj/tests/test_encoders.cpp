#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mmsense/encoders.hpp"

using namespace mmsense;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.n_f = 4;
    cfg.d_model = 16;
    cfg.n_heads = 4;
    cfg.conv_channels = 4;
    cfg.point_knn = 3;
    return cfg;
}

std::vector<Tensor> just_tensors(const NamedParams& named) {
    std::vector<Tensor> out;
    for (const auto& [name, t] : named) out.push_back(t);
    return out;
}

}  // namespace

TEST_CASE("image encoder output shape and zero propagation") {
    Rng rng(1);
    auto cfg = tiny_model();
    ImageEncoder enc(cfg, 8, rng);
    // with every bias cleared, an all-zero image maps to all-zero tokens
    for (auto& [name, t] : enc.named_params("enc")) {
        if (name.find(".b") != std::string::npos || name.find("_b") != std::string::npos ||
            name.ends_with("b")) {
            if (t.shape().size() == 1)
                for (auto& v : const_cast<Tensor&>(t).data()) v = 0.0;
        }
    }
    std::vector<double> zeros(3 * 8 * 8, 0.0);
    auto emb = enc.forward(zeros, 8, 8);
    CHECK(emb.tokens.shape() == std::vector<std::size_t>{4, 16});
    CHECK(emb.tag == Modality::image);
    for (double v : emb.tokens.data()) CHECK(v == 0.0);
}

TEST_CASE("image encoder rejects wrong input shape") {
    Rng rng(1);
    ImageEncoder enc(tiny_model(), 8, rng);
    std::vector<double> bad(2 * 8 * 8, 0.0);
    CHECK_THROWS_AS(enc.forward(bad, 8, 8), ShapeError);
    std::vector<double> wrong_size(3 * 16 * 16, 0.0);
    CHECK_THROWS_AS(enc.forward(wrong_size, 16, 16), ShapeError);
}

TEST_CASE("image encoder passes grad_check") {
    Rng rng(7);
    auto cfg = tiny_model();
    ImageEncoder enc(cfg, 8, rng);
    std::vector<double> img(3 * 8 * 8);
    for (auto& v : img) v = rng.uniform(0, 1);
    auto params = just_tensors(enc.named_params("img"));
    std::vector<double> rw(4 * 16);
    for (auto& v : rw) v = rng.uniform(-1, 1);
    Tensor probe = Tensor::from({4, 16}, rw);
    auto f = [&]() { return mean_all(mul(enc.forward(img, 8, 8).tokens, probe)); };
    CHECK(grad_check(f, params) < 1e-4);
}

TEST_CASE("point encoder is bit-exact under input permutation") {
    Rng rng(3);
    auto cfg = tiny_model();
    PointEncoder enc(cfg, 5, Modality::radar, rng);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 2 + trial % 9;
        std::vector<double> pts(n * 5);
        for (auto& v : pts) v = rng.uniform(-2, 2);
        auto base = enc.forward(pts).tokens;

        // random permutation of rows
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
        std::vector<double> shuffled(n * 5);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(pts.begin() + perm[i] * 5, 5, shuffled.begin() + i * 5);
        }
        auto permuted = enc.forward(shuffled).tokens;
        REQUIRE(base.data() == permuted.data());
    }
}

TEST_CASE("point encoder handles N=1 and clamps k") {
    Rng rng(5);
    auto cfg = tiny_model();
    cfg.point_knn = 8;
    PointEncoder enc(cfg, 4, Modality::lidar, rng);
    std::vector<double> single = {0.5, -0.3, 1.0, 0.2};
    auto emb = enc.forward(single);
    CHECK(emb.tokens.shape() == std::vector<std::size_t>{4, 16});
    for (double v : emb.tokens.data()) CHECK(std::isfinite(v));
}

TEST_CASE("point encoder rejects malformed input") {
    Rng rng(5);
    PointEncoder enc(tiny_model(), 5, Modality::radar, rng);
    CHECK_THROWS_AS(enc.forward({}), ShapeError);
    CHECK_THROWS_AS(enc.forward({1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("point encoder passes grad_check") {
    Rng rng(11);
    auto cfg = tiny_model();
    PointEncoder enc(cfg, 5, Modality::radar, rng);
    std::vector<double> pts(6 * 5);
    for (auto& v : pts) v = rng.uniform(-1, 1);
    auto params = just_tensors(enc.named_params("pt"));
    std::vector<double> rw(4 * 16);
    for (auto& v : rw) v = rng.uniform(-1, 1);
    Tensor probe = Tensor::from({4, 16}, rw);
    auto f = [&]() { return mean_all(mul(enc.forward(pts).tokens, probe)); };
    CHECK(grad_check(f, params) < 1e-4);
}

TEST_CASE("encoders emit finite values for large-magnitude inputs") {
    Rng rng(13);
    auto cfg = tiny_model();
    ImageEncoder ienc(cfg, 8, rng);
    PointEncoder penc(cfg, 4, Modality::lidar, rng);
    std::vector<double> img(3 * 8 * 8);
    for (auto& v : img) v = rng.uniform(-1000, 1000);
    for (double v : ienc.forward(img, 8, 8).tokens.data()) CHECK(std::isfinite(v));
    std::vector<double> pts(9 * 4);
    for (auto& v : pts) v = rng.uniform(-1000, 1000);
    for (double v : penc.forward(pts).tokens.data()) CHECK(std::isfinite(v));
}
