#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "mmsense/runner.hpp"
#include "mmsense/training.hpp"

namespace py = pybind11;
using namespace mmsense;

namespace {

py::dict outputs_to_dict(const TaskOutputs& o) {
    py::dict d;
    d["beam_logits"] = o.beam_logits.data();
    d["har_logits"] = o.har_logits.data();
    d["keypoints"] = o.keypoints_pred.data();
    d["blockage_logit"] = o.blockage_logit.value();
    return d;
}

}  // namespace

PYBIND11_MODULE(_mmsense, m) {
    m.doc() = "Multi-modal multi-task wireless sensing: synthetic scenes, "
              "gated fusion over a frozen adapted trunk, and four task heads.";

    py::class_<GeneratorConfig>(m, "GeneratorConfig")
        .def(py::init<>())
        .def_readwrite("num_beams", &GeneratorConfig::num_beams)
        .def_readwrite("num_activities", &GeneratorConfig::num_activities)
        .def_readwrite("num_keypoints", &GeneratorConfig::num_keypoints)
        .def_readwrite("num_subjects", &GeneratorConfig::num_subjects)
        .def_readwrite("num_obstacles", &GeneratorConfig::num_obstacles)
        .def_readwrite("image_size", &GeneratorConfig::image_size)
        .def_readwrite("radar_points", &GeneratorConfig::radar_points)
        .def_readwrite("lidar_points", &GeneratorConfig::lidar_points)
        .def_readwrite("sigma_radar", &GeneratorConfig::sigma_radar)
        .def_readwrite("sigma_lidar", &GeneratorConfig::sigma_lidar)
        .def_readwrite("radar_corrupt_prob", &GeneratorConfig::radar_corrupt_prob)
        .def("validate", &GeneratorConfig::validate);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("n_f", &ModelConfig::n_f)
        .def_readwrite("d_model", &ModelConfig::d_model)
        .def_readwrite("layers", &ModelConfig::layers)
        .def_readwrite("n_heads", &ModelConfig::n_heads)
        .def_readwrite("ffn_width", &ModelConfig::ffn_width)
        .def_readwrite("taps", &ModelConfig::taps)
        .def_readwrite("lora_rank", &ModelConfig::lora_rank)
        .def_readwrite("lora_alpha", &ModelConfig::lora_alpha)
        .def_readwrite("gate_hidden", &ModelConfig::gate_hidden)
        .def_readwrite("conv_channels", &ModelConfig::conv_channels)
        .def_readwrite("point_knn", &ModelConfig::point_knn)
        .def_readwrite("frozen_seed", &ModelConfig::frozen_seed)
        .def("validate", &ModelConfig::validate);

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("optimizer", &TrainConfig::optimizer)
        .def_readwrite("lr", &TrainConfig::lr)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("steps", &TrainConfig::steps)
        .def_readwrite("eval_interval", &TrainConfig::eval_interval)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("no_gating", &TrainConfig::no_gating)
        .def_readwrite("no_task_attention", &TrainConfig::no_task_attention)
        .def_readwrite("holdout_subjects", &TrainConfig::holdout_subjects)
        .def_readwrite("few_shot_fraction", &TrainConfig::few_shot_fraction);

    py::class_<RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("gen", &RunConfig::gen)
        .def_readwrite("model", &RunConfig::model)
        .def_readwrite("train", &RunConfig::train)
        .def_readwrite("num_samples", &RunConfig::num_samples)
        .def_readwrite("seed", &RunConfig::seed)
        .def_readwrite("dataset_path", &RunConfig::dataset_path)
        .def_readwrite("eval_dataset_path", &RunConfig::eval_dataset_path)
        .def_readwrite("checkpoint_path", &RunConfig::checkpoint_path);

    py::class_<LabeledSample>(m, "LabeledSample")
        .def_readonly("image", &LabeledSample::image)
        .def_readonly("radar", &LabeledSample::radar)
        .def_readonly("lidar", &LabeledSample::lidar)
        .def_readonly("beam_label", &LabeledSample::beam_label)
        .def_readonly("activity_label", &LabeledSample::activity_label)
        .def_readonly("keypoints", &LabeledSample::keypoints)
        .def_readonly("blockage_label", &LabeledSample::blockage_label)
        .def_readonly("subject_id", &LabeledSample::subject_id)
        .def_readonly("scene_seed", &LabeledSample::scene_seed);

    py::class_<Metrics>(m, "Metrics")
        .def_readonly("top1_bp", &Metrics::top1_bp)
        .def_readonly("top1_har", &Metrics::top1_har)
        .def_readonly("mse_hpe", &Metrics::mse_hpe)
        .def_readonly("acc_fbp", &Metrics::acc_fbp)
        .def("__repr__", [](const Metrics& x) {
            std::ostringstream os;
            os << "Metrics(top1_bp=" << x.top1_bp << ", top1_har=" << x.top1_har
               << ", mse_hpe=" << x.mse_hpe << ", acc_fbp=" << x.acc_fbp << ")";
            return os.str();
        });

    py::class_<TrainRecord>(m, "TrainRecord")
        .def_readonly("step", &TrainRecord::step)
        .def_readonly("losses", &TrainRecord::losses)
        .def_readonly("metrics", &TrainRecord::metrics)
        .def_readonly("gate_mean", &TrainRecord::gate_mean)
        .def_readonly("sigma2", &TrainRecord::sigma2);

    py::class_<TrainLog>(m, "TrainLog")
        .def_readonly("records", &TrainLog::records)
        .def_readonly("final_metrics", &TrainLog::final_metrics);

    py::class_<Splits>(m, "Splits")
        .def_readonly("train", &Splits::train)
        .def_readonly("val", &Splits::val)
        .def_readonly("zero_shot", &Splits::zero_shot)
        .def_readonly("few_shot_pool", &Splits::few_shot_pool);

    py::class_<MMSenseModel>(m, "Model")
        .def(py::init<const GeneratorConfig&, const ModelConfig&, std::uint64_t, bool, bool>(),
             py::arg("gen"), py::arg("model"), py::arg("init_seed"),
             py::arg("no_gating") = false, py::arg("no_task_attention") = false)
        .def("forward",
             [](const MMSenseModel& self, const LabeledSample& s) {
                 auto r = self.forward(s);
                 py::dict d = outputs_to_dict(r.outputs);
                 d["gate"] = r.gate.weights.data();
                 return d;
             })
        .def("save_checkpoint", &MMSenseModel::save_checkpoint)
        .def("load_checkpoint", &MMSenseModel::load_checkpoint)
        .def("num_trainable_values", [](const MMSenseModel& self) {
            std::size_t n = 0;
            for (const auto& [name, t] : self.trainable_params()) n += t.size();
            return n;
        });

    m.def("generate_dataset", &generate_dataset, py::arg("cfg"), py::arg("seed"),
          py::arg("count"));
    m.def("write_dataset", &write_dataset);
    m.def("read_dataset", &read_dataset);
    m.def("train", [](MMSenseModel& model, const std::vector<LabeledSample>& data,
                      const TrainConfig& cfg) { return train(model, data, cfg); });
    m.def("evaluate", &evaluate);
    m.def("make_splits", &make_splits, py::arg("data"), py::arg("holdout_subjects"),
          py::arg("few_shot_fraction"), py::arg("seed"));
    m.def("model_grad_check", &model_grad_check);
    m.def("default_config", &default_config);
    m.def("run_command",
          [](const std::string& command, const RunConfig& cfg, const std::string& out_dir) {
              std::ostringstream out;
              int rc = run_command(command, cfg, out_dir, out);
              return py::make_tuple(rc, out.str());
          },
          py::arg("command"), py::arg("cfg"), py::arg("out_dir"));

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<ShapeError>(m, "ShapeError");
    py::register_exception<DataError>(m, "DataError");
    py::register_exception<NumericError>(m, "NumericError");
}
