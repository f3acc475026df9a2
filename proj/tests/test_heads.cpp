#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mmsense/heads.hpp"

using namespace mmsense;

namespace {

HiddenStates random_hidden(Rng& rng, std::size_t layers, std::size_t seq, std::size_t d,
                           bool requires_grad = false) {
    HiddenStates hs;
    hs.prompt_len = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        std::vector<double> data(seq * d);
        for (auto& v : data) v = rng.normal();
        hs.layers.push_back(Tensor::from({seq, d}, data, requires_grad));
    }
    return hs;
}

}  // namespace

TEST_CASE("default taps are evenly spaced and end at the last layer") {
    CHECK(default_taps(6, 3) == std::vector<std::size_t>{2, 4, 6});
    CHECK(default_taps(2, 2) == std::vector<std::size_t>{1, 2});
    CHECK(default_taps(5, 3) == std::vector<std::size_t>{2, 4, 5});
    CHECK(default_taps(4, 1) == std::vector<std::size_t>{4});
}

TEST_CASE("tap validation") {
    Rng rng(1);
    CHECK_THROWS_AS(TaskHead(Task::BP, {3}, 2, 8, 8, 4, rng), ConfigError);   // tap > L
    CHECK_THROWS_AS(TaskHead(Task::BP, {0}, 2, 8, 8, 4, rng), ConfigError);   // tap 0
    CHECK_THROWS_AS(TaskHead(Task::BP, {2, 2}, 3, 8, 8, 4, rng), ConfigError);  // not increasing
    CHECK_THROWS_AS(TaskHead(Task::BP, {}, 3, 8, 8, 4, rng), ConfigError);    // K = 0
    CHECK_NOTHROW(TaskHead(Task::BP, {1, 3}, 3, 8, 8, 4, rng));
}

TEST_CASE("single-tap head is just the first MLP on the pooled state") {
    Rng rng(2);
    TaskHead one(Task::HAR, {2}, 3, 8, 8, 5, rng);
    Rng rng2(2);
    TaskHead two(Task::HAR, {2, 3}, 3, 8, 8, 5, rng2);  // same stage-0 params
    Rng data_rng(3);
    auto hs = random_hidden(data_rng, 3, 6, 8);
    auto f1 = one.feature(hs);
    // re-derive stage 0 of the two-tap head by hand through its params
    auto params = two.attention_params("h");
    auto find = [&](const std::string& suffix) {
        for (auto& [n, t] : params)
            if (n == "h.stage0." + suffix) return t;
        FAIL("missing param");
        return Tensor();
    };
    Tensor pooled = mean_rows(hs.layers[1]);
    Tensor gb = find("gate_b"), b1 = find("b1"), b2 = find("b2");
    Tensor x = layer_norm(pooled, find("ln_g"), find("ln_s"));
    Tensor gated = mul(x, sigmoid(linear(x, find("gate_w"), &gb)));
    Tensor z = linear(relu(linear(gated, find("w1"), &b1)), find("w2"), &b2);
    CHECK(f1.data() == z.data());
}

TEST_CASE("zeroed final projections collapse the feature to the bias") {
    Rng rng(5);
    TaskHead head(Task::HPE, {1, 2}, 2, 8, 8, 6, rng);
    for (auto& [name, t] : head.attention_params("h")) {
        if (name.find(".w2") != std::string::npos) {
            for (auto& v : t.data()) v = 0.0;
        }
        if (name.find("stage1.b2") != std::string::npos) {
            for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = 0.5 + 0.1 * i;
        }
    }
    Rng d1(7), d2(8);
    auto fa = head.feature(random_hidden(d1, 2, 5, 8));
    auto fb = head.feature(random_hidden(d2, 2, 5, 8));
    CHECK(fa.data() == fb.data());
    CHECK(fa.at(0, 0) == doctest::Approx(0.5));
    CHECK(fa.at(0, 3) == doctest::Approx(0.8));
}

TEST_CASE("layers above the last tap do not influence the feature") {
    Rng rng(11);
    TaskHead head(Task::BP, {1, 2}, 4, 8, 8, 4, rng);
    Rng data_rng(13);
    auto hs = random_hidden(data_rng, 4, 6, 8);
    auto base = head.feature(hs).data();
    for (auto& v : hs.layers[3].data()) v += 100.0;  // perturb H^4, taps stop at 2
    for (auto& v : hs.layers[2].data()) v -= 50.0;   // and untapped H^3
    CHECK(head.feature(hs).data() == base);
}

TEST_CASE("output shapes cover all four tasks") {
    GeneratorConfig gen;
    gen.num_beams = 8;
    gen.num_activities = 5;
    gen.num_keypoints = 4;
    ModelConfig model;
    model.d_model = 8;
    model.layers = 3;
    model.taps = 2;
    Rng rng(17);
    TaskHeads heads(gen, model, rng);
    Rng data_rng(19);
    std::array<HiddenStates, 4> hs;
    for (auto& h : hs) h = random_hidden(data_rng, 3, 6, 8);
    auto out = heads.forward(hs);
    CHECK(out.beam_logits.shape() == std::vector<std::size_t>{1, 8});
    CHECK(out.har_logits.shape() == std::vector<std::size_t>{1, 5});
    CHECK(out.keypoints_pred.shape() == std::vector<std::size_t>{4, 3});
    CHECK(out.blockage_logit.size() == 1);
    for (double v : out.keypoints_pred.data()) CHECK(std::isfinite(v));
}

TEST_CASE("disabling task attention reads only the last hidden state") {
    GeneratorConfig gen;
    gen.num_keypoints = 3;
    ModelConfig model;
    model.d_model = 8;
    model.layers = 3;
    model.taps = 2;
    Rng rng(23);
    TaskHeads heads(gen, model, rng);
    Rng data_rng(29);
    auto hs = random_hidden(data_rng, 3, 6, 8);
    auto base = heads.task_output(Task::HAR, hs, true).data();
    for (auto& v : hs.layers[0].data()) v += 10.0;  // earlier layers ignored
    CHECK(heads.task_output(Task::HAR, hs, true).data() == base);
    for (auto& v : hs.layers[2].data()) v += 1.0;
    CHECK(heads.task_output(Task::HAR, hs, true).data() != base);
}

TEST_CASE("each task's loss only reaches its own head parameters") {
    GeneratorConfig gen;
    gen.num_beams = 4;
    gen.num_activities = 3;
    gen.num_keypoints = 2;
    ModelConfig model;
    model.d_model = 8;
    model.layers = 2;
    model.taps = 2;
    Rng rng(31);
    TaskHeads heads(gen, model, rng);
    Rng data_rng(37);
    auto hs = random_hidden(data_rng, 2, 5, 8);

    auto loss = mean_all(mul(heads.task_output(Task::HPE, hs), heads.task_output(Task::HPE, hs)));
    backward(loss);
    for (auto& [name, t] : heads.trainable_params("heads")) {
        double norm = 0;
        if (t.has_grad())
            for (double g : t.grad()) norm += std::abs(g);
        if (name.find(".HPE.") != std::string::npos) continue;
        CHECK(norm == 0.0);
    }
    double hpe_norm = 0;
    for (auto& [name, t] : heads.trainable_params("heads")) {
        if (name.find(".HPE.") != std::string::npos && t.has_grad())
            for (double g : t.grad()) hpe_norm += std::abs(g);
    }
    CHECK(hpe_norm > 0.0);
}

TEST_CASE("two-stage chain passes grad_check") {
    Rng rng(41);
    TaskHead head(Task::FBP, {1, 2}, 2, 8, 8, 1, rng);
    Rng data_rng(43);
    auto hs = random_hidden(data_rng, 2, 4, 8, true);
    std::vector<Tensor> params = {hs.layers[0], hs.layers[1]};
    for (auto& [n, t] : head.attention_params("h")) params.push_back(t);
    for (auto& [n, t] : head.output_params("h")) params.push_back(t);
    auto f = [&]() {
        auto out = head.output(head.feature(hs));
        return mean_all(mul(out, out));
    };
    CHECK(grad_check(f, params) < 1e-4);
}
