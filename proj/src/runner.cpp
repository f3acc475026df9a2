#include "mmsense/runner.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mmsense/training.hpp"

namespace mmsense {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

void echo_config(const RunConfig& cfg, const fs::path& out_dir) {
    std::ofstream f(out_dir / "config.json");
    f << json(cfg).dump(2) << "\n";
}

/// dataset_path wins over synthesis; the returned generator config is the
/// one the samples were actually produced with.
std::pair<GeneratorConfig, std::vector<LabeledSample>> obtain_dataset(const RunConfig& cfg,
                                                                      const std::string& path) {
    if (!path.empty()) return read_dataset(path);
    return {cfg.gen, generate_dataset(cfg.gen, cfg.seed, cfg.num_samples)};
}

void write_metrics_csv(const Metrics& m, const fs::path& path) {
    std::ofstream f(path);
    f << "top1_bp,top1_har,mse_hpe,acc_fbp\n";
    f << fmt(m.top1_bp) << "," << fmt(m.top1_har) << "," << fmt(m.mse_hpe) << ","
      << fmt(m.acc_fbp) << "\n";
}

void write_log_jsonl(const TrainLog& log, const fs::path& path) {
    std::ofstream f(path);
    for (const auto& r : log.records) {
        json j;
        j["step"] = r.step;
        j["losses"] = r.losses;
        j["metrics"] = {{"top1_bp", r.metrics.top1_bp},
                        {"top1_har", r.metrics.top1_har},
                        {"mse_hpe", r.metrics.mse_hpe},
                        {"acc_fbp", r.metrics.acc_fbp}};
        j["gate_mean"] = r.gate_mean;
        j["sigma2"] = r.sigma2;
        f << j.dump() << "\n";
    }
}

/// Rebuilds a model from a checkpoint manifest (configs, seed, ablation
/// flags) and loads its weights.
MMSenseModel model_from_checkpoint(const std::string& path_base) {
    std::ifstream mf(path_base + ".json");
    if (!mf) throw DataError("cannot open checkpoint manifest: " + path_base + ".json");
    json manifest = json::parse(mf);
    GeneratorConfig gen = manifest.at("generator").get<GeneratorConfig>();
    ModelConfig mc = manifest.at("model").get<ModelConfig>();
    MMSenseModel model(gen, mc, manifest.at("init_seed").get<std::uint64_t>(),
                       manifest.at("no_gating").get<bool>(),
                       manifest.at("no_task_attention").get<bool>());
    model.load_checkpoint(path_base);
    return model;
}

int cmd_gen(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    auto samples = generate_dataset(cfg.gen, cfg.seed, cfg.num_samples);
    write_dataset(samples, cfg.gen, (out_dir / "dataset.jsonl").string());
    out << "wrote " << samples.size() << " samples to " << (out_dir / "dataset.jsonl").string()
        << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    auto [gen, data] = obtain_dataset(cfg, cfg.dataset_path);
    MMSenseModel model(gen, cfg.model, cfg.seed, cfg.train.no_gating,
                       cfg.train.no_task_attention);

    TrainLog log;
    if (!cfg.train.holdout_subjects.empty()) {
        Splits s = make_splits(data, cfg.train.holdout_subjects, cfg.train.few_shot_fraction,
                               cfg.seed);
        log = train(model, s.train, cfg.train, &s.val);
    } else if (!cfg.eval_dataset_path.empty()) {
        auto eval_set = read_dataset(cfg.eval_dataset_path).second;
        log = train(model, data, cfg.train, &eval_set);
    } else {
        log = train(model, data, cfg.train);
    }

    model.save_checkpoint((out_dir / "checkpoint").string());
    write_log_jsonl(log, out_dir / "log.jsonl");
    write_metrics_csv(log.final_metrics, out_dir / "metrics.csv");
    out << "final: top1_bp=" << fmt(log.final_metrics.top1_bp)
        << " top1_har=" << fmt(log.final_metrics.top1_har)
        << " mse_hpe=" << fmt(log.final_metrics.mse_hpe)
        << " acc_fbp=" << fmt(log.final_metrics.acc_fbp) << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    if (cfg.checkpoint_path.empty()) throw ConfigError("eval requires checkpoint_path");
    MMSenseModel model = model_from_checkpoint(cfg.checkpoint_path);
    std::string path = cfg.eval_dataset_path.empty() ? cfg.dataset_path : cfg.eval_dataset_path;
    auto [gen, data] = obtain_dataset(cfg, path);
    Metrics m = evaluate(model, data);
    write_metrics_csv(m, out_dir / "metrics.csv");
    out << "top1_bp=" << fmt(m.top1_bp) << " top1_har=" << fmt(m.top1_har)
        << " mse_hpe=" << fmt(m.mse_hpe) << " acc_fbp=" << fmt(m.acc_fbp) << "\n";
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    auto [gen, data] = obtain_dataset(cfg, cfg.dataset_path);
    std::vector<LabeledSample> eval_set =
        cfg.eval_dataset_path.empty() ? data : read_dataset(cfg.eval_dataset_path).second;

    struct Variant {
        const char* name;
        bool no_gating, no_task_attention;
    };
    const Variant variants[] = {{"full", false, false},
                                {"no_gating", true, false},
                                {"no_task_attention", false, true}};

    std::ofstream f(out_dir / "ablation.csv");
    f << "variant,top1_bp,top1_har,mse_hpe,acc_fbp\n";
    for (const Variant& v : variants) {
        MMSenseModel model(gen, cfg.model, cfg.seed, v.no_gating, v.no_task_attention);
        TrainConfig tc = cfg.train;
        tc.no_gating = v.no_gating;
        tc.no_task_attention = v.no_task_attention;
        TrainLog log = train(model, data, tc, &eval_set);
        const Metrics& m = log.final_metrics;
        f << v.name << "," << fmt(m.top1_bp) << "," << fmt(m.top1_har) << "," << fmt(m.mse_hpe)
          << "," << fmt(m.acc_fbp) << "\n";
        out << v.name << ": top1_bp=" << fmt(m.top1_bp) << " top1_har=" << fmt(m.top1_har)
            << " mse_hpe=" << fmt(m.mse_hpe) << " acc_fbp=" << fmt(m.acc_fbp) << "\n";
    }
    return 0;
}

int cmd_gradcheck(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    (void)out_dir;
    auto [gen, data] = obtain_dataset(cfg, cfg.dataset_path);
    MMSenseModel model(gen, cfg.model, cfg.seed, cfg.train.no_gating,
                       cfg.train.no_task_attention);
    std::size_t n = std::min<std::size_t>(cfg.train.batch_size, data.size());
    std::vector<LabeledSample> batch(data.begin(), data.begin() + static_cast<long>(n));
    double err = model_grad_check(model, batch);
    out << "max relative error = " << fmt(err) << "\n";
    return err < 1e-4 ? 0 : 1;
}

int cmd_splits(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
    auto [gen, data] = obtain_dataset(cfg, cfg.dataset_path);
    Splits s = make_splits(data, cfg.train.holdout_subjects, cfg.train.few_shot_fraction,
                           cfg.seed);
    auto subjects = [](const std::vector<LabeledSample>& v) {
        std::vector<int> ids;
        for (const auto& x : v)
            if (std::find(ids.begin(), ids.end(), x.subject_id) == ids.end())
                ids.push_back(x.subject_id);
        std::sort(ids.begin(), ids.end());
        return ids;
    };
    json j;
    j["train"] = {{"count", s.train.size()}, {"subjects", subjects(s.train)}};
    j["val"] = {{"count", s.val.size()}, {"subjects", subjects(s.val)}};
    j["zero_shot"] = {{"count", s.zero_shot.size()}, {"subjects", subjects(s.zero_shot)}};
    j["few_shot_pool"] = {{"count", s.few_shot_pool.size()},
                          {"subjects", subjects(s.few_shot_pool)}};
    std::ofstream f(out_dir / "splits.json");
    f << j.dump(2) << "\n";
    out << "train=" << s.train.size() << " val=" << s.val.size()
        << " zero_shot=" << s.zero_shot.size() << " few_shot_pool=" << s.few_shot_pool.size()
        << "\n";
    return 0;
}

}  // namespace

RunConfig default_config(const std::string& command) {
    RunConfig cfg;
    if (command == "gradcheck") {
        // Sized so the central-difference sweep over every trainable value
        // finishes in well under two minutes on one core.
        cfg.gen.num_beams = 4;
        cfg.gen.num_activities = 4;
        cfg.gen.num_keypoints = 3;
        cfg.gen.num_subjects = 4;
        cfg.gen.image_size = 8;
        cfg.gen.radar_points = 6;
        cfg.gen.lidar_points = 8;
        cfg.model.n_f = 4;
        cfg.model.d_model = 16;
        cfg.model.layers = 2;
        cfg.model.n_heads = 4;
        cfg.model.ffn_width = 32;
        cfg.model.taps = 2;
        cfg.model.lora_rank = 2;
        cfg.model.gate_hidden = 16;
        cfg.model.conv_channels = 4;
        cfg.model.point_knn = 8;
        cfg.num_samples = 4;
        cfg.train.batch_size = 4;
        cfg.seed = 171;
    }
    return cfg;
}

int run_command(const std::string& command, const RunConfig& cfg, const std::string& out_dir,
                std::ostream& out) {
    cfg.validate();
    fs::path dir = out_dir.empty() ? fs::path(".") : fs::path(out_dir);
    fs::create_directories(dir);
    echo_config(cfg, dir);

    if (command == "gen") return cmd_gen(cfg, dir, out);
    if (command == "train") return cmd_train(cfg, dir, out);
    if (command == "eval") return cmd_eval(cfg, dir, out);
    if (command == "ablate") return cmd_ablate(cfg, dir, out);
    if (command == "gradcheck") return cmd_gradcheck(cfg, dir, out);
    if (command == "splits") return cmd_splits(cfg, dir, out);
    throw ConfigError("unknown command '" + command + "'");
}

}  // namespace mmsense
