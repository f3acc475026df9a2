#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "mmsense/training.hpp"

using namespace mmsense;

namespace {

GeneratorConfig tiny_gen() {
    GeneratorConfig g;
    g.num_beams = 4;
    g.num_activities = 3;
    g.num_keypoints = 3;
    g.num_subjects = 4;
    g.image_size = 8;
    g.radar_points = 6;
    g.lidar_points = 8;
    return g;
}

ModelConfig tiny_model() {
    ModelConfig m;
    m.n_f = 2;
    m.d_model = 16;
    m.layers = 2;
    m.n_heads = 4;
    m.ffn_width = 16;
    m.taps = 2;
    m.lora_rank = 2;
    m.gate_hidden = 8;
    m.conv_channels = 4;
    m.point_knn = 4;
    return m;
}

TaskOutputs outputs_from(const MMSenseModel& model, const LabeledSample& s) {
    return model.forward(s).outputs;
}

}  // namespace

TEST_CASE("per-task losses match hand values") {
    LabeledSample s;
    s.beam_label = 1;
    s.activity_label = 0;
    s.blockage_label = 1;
    s.keypoints = {0.1, 0.2, 0.3, -0.1, 0.0, 0.4};
    TaskOutputs out;
    out.beam_logits = Tensor::from({1, 3}, {-30, 30, -30});
    out.har_logits = Tensor::from({1, 2}, {30, -30});
    out.keypoints_pred = Tensor::from({2, 3}, s.keypoints);
    out.blockage_logit = Tensor::scalar(0.0);
    auto l = per_task_loss(out, s);
    CHECK(l[0].value() < 1e-9);
    CHECK(l[1].value() < 1e-9);
    CHECK(l[2].value() == 0.0);
    CHECK(l[3].value() == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    s.beam_label = 5;
    CHECK_THROWS_AS(per_task_loss(out, s), DataError);
    s.beam_label = 1;
    s.blockage_label = 2;
    CHECK_THROWS_AS(per_task_loss(out, s), DataError);
}

TEST_CASE("per-task losses are nonnegative on arbitrary outputs") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        LabeledSample s;
        s.beam_label = static_cast<int>(rng.uniform_int(5));
        s.activity_label = static_cast<int>(rng.uniform_int(4));
        s.blockage_label = static_cast<int>(rng.uniform_int(2));
        for (int i = 0; i < 9; ++i) s.keypoints.push_back(rng.normal());
        TaskOutputs out;
        std::vector<double> b(5), h(4), k(9);
        for (auto& v : b) v = 10 * rng.normal();
        for (auto& v : h) v = 10 * rng.normal();
        for (auto& v : k) v = rng.normal();
        out.beam_logits = Tensor::from({1, 5}, b);
        out.har_logits = Tensor::from({1, 4}, h);
        out.keypoints_pred = Tensor::from({3, 3}, k);
        out.blockage_logit = Tensor::scalar(10 * rng.normal());
        for (const auto& l : per_task_loss(out, s)) CHECK(l.value() >= 0.0);
    }
}

TEST_CASE("uncertainty loss algebra") {
    std::array<Tensor, 4> losses = {Tensor::scalar(1.0), Tensor::scalar(2.0),
                                    Tensor::scalar(0.5), Tensor::scalar(0.25)};
    Tensor s = Tensor::zeros({4}, true);
    auto total = total_uncertainty_loss(losses, s);
    CHECK(total.value() == doctest::Approx((1.0 + 2.0 + 0.5 + 0.25) / 2).epsilon(1e-12));

    backward(total);
    // d/ds_t = (1 - L_t * exp(-s_t)) / 2; at s=0, L=2 this is -0.5
    CHECK(s.grad()[1] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(s.grad()[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("log-variances converge to the per-task loss constants") {
    std::array<double, 4> c = {2.0, 0.5, 1.0, 0.25};
    std::array<Tensor, 4> losses = {Tensor::scalar(c[0]), Tensor::scalar(c[1]),
                                    Tensor::scalar(c[2]), Tensor::scalar(c[3])};
    Tensor s = Tensor::zeros({4}, true);
    NamedParams params = {{"s", s}};
    auto opt = Optimizer::make("sgd", 0.05);
    for (int step = 0; step < 5000; ++step) {
        auto total = total_uncertainty_loss(losses, s);
        backward(total);
        opt->step(params);
        s.zero_grad();
    }
    for (std::size_t t = 0; t < 4; ++t) {
        CHECK(std::exp(s.data()[t]) == doctest::Approx(c[t]).epsilon(0).scale(1).epsilon(1e-3));
    }
    // term value at the optimum for L = 2: 1/2 + 1/2 ln 2
    double term = 0.5 * std::exp(-s.data()[0]) * c[0] + 0.5 * s.data()[0];
    CHECK(term == doctest::Approx(0.5 + 0.5 * std::log(2.0)).epsilon(1e-3));
}

TEST_CASE("argmax breaks ties toward the lowest index") {
    CHECK(argmax_lowest(Tensor::from({1, 4}, {1, 3, 3, 2})) == 1);
    CHECK(argmax_lowest(Tensor::from({1, 3}, {5, 5, 5})) == 0);
}

TEST_CASE("evaluate on a single sample yields 0/1 classification metrics") {
    auto gen = tiny_gen();
    auto data = generate_dataset(gen, 11, 1);
    MMSenseModel model(gen, tiny_model(), 5);
    auto m = evaluate(model, data);
    CHECK((m.top1_bp == 0.0 || m.top1_bp == 1.0));
    CHECK((m.top1_har == 0.0 || m.top1_har == 1.0));
    CHECK((m.acc_fbp == 0.0 || m.acc_fbp == 1.0));
    CHECK(m.mse_hpe >= 0.0);
    CHECK_THROWS_AS(evaluate(model, {}), DataError);
}

TEST_CASE("subject splits partition the data deterministically") {
    auto gen = tiny_gen();
    gen.num_subjects = 10;
    auto data = generate_dataset(gen, 21, 200);
    auto sp = make_splits(data, {8, 9}, 0.10, 77);
    for (const auto& s : sp.train) CHECK((s.subject_id != 8 && s.subject_id != 9));
    for (const auto& s : sp.val) CHECK((s.subject_id != 8 && s.subject_id != 9));
    std::size_t n_held = 0;
    for (const auto& s : data) n_held += (s.subject_id == 8 || s.subject_id == 9);
    CHECK(sp.few_shot_pool.size() == n_held / 10);
    CHECK(sp.zero_shot.size() + sp.few_shot_pool.size() == n_held);
    CHECK(sp.train.size() + sp.val.size() + n_held == data.size());

    std::set<std::uint64_t> zero_seeds;
    for (const auto& s : sp.zero_shot) zero_seeds.insert(s.scene_seed);
    for (const auto& s : sp.few_shot_pool) CHECK(zero_seeds.count(s.scene_seed) == 0);

    auto sp2 = make_splits(data, {8, 9}, 0.10, 77);
    CHECK(sp2.train.size() == sp.train.size());
    for (std::size_t i = 0; i < sp.train.size(); ++i)
        CHECK(sp2.train[i].scene_seed == sp.train[i].scene_seed);

    GeneratorConfig one = gen;
    one.num_subjects = 1;
    CHECK_THROWS_AS(make_splits(generate_dataset(one, 3, 10), {0}, 0.1, 1), DataError);
    CHECK_THROWS_AS(make_splits(data, {9}, 0.0, 1), ConfigError);
}

TEST_CASE("one repeated-batch step decreases that batch's loss") {
    auto gen = tiny_gen();
    auto data = generate_dataset(gen, 31, 4);
    MMSenseModel model(gen, tiny_model(), 13);
    auto batch_loss = [&]() {
        std::array<Tensor, 4> ls = {Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0),
                                    Tensor::scalar(0)};
        for (const auto& s : data) {
            auto per = per_task_loss(outputs_from(model, s), s);
            for (std::size_t t = 0; t < 4; ++t) ls[t] = add(ls[t], per[t]);
        }
        for (auto& l : ls) l = scale(l, 1.0 / 4.0);
        return total_uncertainty_loss(ls, model.log_variances());
    };
    double before = batch_loss().value();
    TrainConfig cfg;
    cfg.optimizer = "sgd";
    cfg.lr = 1e-3;
    cfg.batch_size = 4;
    cfg.steps = 1;
    cfg.eval_interval = 1;
    train(model, data, cfg);
    CHECK(batch_loss().value() < before);
}

TEST_CASE("training is deterministic and never touches the frozen trunk") {
    auto gen = tiny_gen();
    auto data = generate_dataset(gen, 41, 12);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.steps = 10;
    cfg.eval_interval = 5;
    cfg.seed = 3;

    MMSenseModel m1(gen, tiny_model(), 17);
    MMSenseModel m2(gen, tiny_model(), 17);
    std::uint64_t hash_before = m1.backbone().base_hash();
    auto l1 = train(m1, data, cfg);
    auto l2 = train(m2, data, cfg);
    CHECK(m1.backbone().base_hash() == hash_before);
    CHECK(l1.records.size() == l2.records.size());
    CHECK(l1.final_metrics.top1_bp == l2.final_metrics.top1_bp);
    CHECK(l1.final_metrics.mse_hpe == l2.final_metrics.mse_hpe);
    for (std::size_t i = 0; i < l1.records.size(); ++i) {
        for (std::size_t t = 0; t < 4; ++t) {
            CHECK(l1.records[i].losses[t] == l2.records[i].losses[t]);
            CHECK(l1.records[i].sigma2[t] == l2.records[i].sigma2[t]);
        }
    }
}

TEST_CASE("no_gating excludes gate parameters and fixes uniform weights") {
    auto gen = tiny_gen();
    auto data = generate_dataset(gen, 51, 2);
    MMSenseModel model(gen, tiny_model(), 19, /*no_gating=*/true);
    for (const auto& [name, t] : model.trainable_params())
        CHECK(name.rfind("gate", 0) != 0);
    auto fwd = model.forward(data[0]);
    for (double w : fwd.gate.weights.data()) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("divergence aborts with a numeric error") {
    auto gen = tiny_gen();
    auto data = generate_dataset(gen, 61, 4);
    MMSenseModel model(gen, tiny_model(), 23);
    TrainConfig cfg;
    cfg.optimizer = "sgd";
    cfg.lr = 1e12;
    cfg.batch_size = 2;
    cfg.steps = 50;
    cfg.eval_interval = 50;
    CHECK_THROWS_AS(train(model, data, cfg), NumericError);
}

TEST_CASE("full-model gradients match finite differences") {
    auto gen = tiny_gen();
    auto data = generate_dataset(gen, 218, 2);
    ModelConfig mc = tiny_model();
    MMSenseModel model(gen, mc, 218);
    CHECK(model_grad_check(model, data) < 1e-4);
}
