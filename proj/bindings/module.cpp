// Python surface over the core: schedules, datasets, the toy backbone,
// steering modules, training, the closed-form mixture oracle, and the
// evaluation utilities. Long-running calls release the GIL; nothing here
// calls back into Python.

#include "diffsteer/conditions.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/diffusion.hpp"
#include "diffsteer/eval.hpp"
#include "diffsteer/io.hpp"
#include "diffsteer/oracle.hpp"
#include "diffsteer/rng.hpp"
#include "diffsteer/schedule.hpp"
#include "diffsteer/steering.hpp"
#include "diffsteer/training.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace diffsteer;

PYBIND11_MODULE(_diffsteer, m) {
  m.doc() = "Frozen-backbone diffusion steering: toy denoiser, feature-injection "
            "adapters, closed-form mixture oracle, and evaluation helpers.";
  m.attr("__version__") = kVersion;

  py::register_exception<ParamError>(m, "ParamError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  // ---- schedule ----------------------------------------------------------
  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_readonly("T", &NoiseSchedule::T)
      .def_readonly("betas", &NoiseSchedule::betas)
      .def_readonly("alpha_bars", &NoiseSchedule::alpha_bars)
      .def("alpha_bar", &NoiseSchedule::alpha_bar, py::arg("t"))
      .def("__repr__", [](const NoiseSchedule& s) {
        return "NoiseSchedule(T=" + std::to_string(s.T) + ")";
      });
  py::enum_<ScheduleKind>(m, "ScheduleKind").value("linear", ScheduleKind::linear);
  m.def("make_schedule", &make_schedule, py::arg("T"), py::arg("beta_start"),
        py::arg("beta_end"), py::arg("kind") = ScheduleKind::linear);
  m.def("default_schedule", &default_schedule);

  py::class_<StepCoeffs>(m, "StepCoeffs")
      .def_readonly("beta", &StepCoeffs::beta)
      .def_readonly("sigma", &StepCoeffs::sigma);
  m.def("derived_coefficients", &derived_coefficients, py::arg("sched"), py::arg("t"));

  // ---- diffusion ---------------------------------------------------------
  m.def(
      "forward_sample",
      [](const Matrix& z0, int t, const NoiseSchedule& sched, std::uint64_t seed) {
        Rng rng(seed);
        return forward_sample(z0, t, sched, rng);
      },
      py::arg("z0"), py::arg("t"), py::arg("sched"), py::arg("seed"));
  m.def("sample_timesteps", &sample_timesteps, py::arg("T"), py::arg("steps"));
  py::enum_<SamplerKind>(m, "SamplerKind")
      .value("ddpm", SamplerKind::ddpm)
      .value("ddim", SamplerKind::ddim);

  // ---- datasets ----------------------------------------------------------
  py::class_<Ring>(m, "Ring")
      .def(py::init([](double cx, double cy, double r_inner, double r_outer) {
             Ring r;
             r.center << cx, cy;
             r.r_inner = r_inner;
             r.r_outer = r_outer;
             return r;
           }),
           py::arg("cx"), py::arg("cy"), py::arg("r_inner"), py::arg("r_outer"))
      .def_property_readonly("center", [](const Ring& r) { return RowVec(r.center); })
      .def_readwrite("r_inner", &Ring::r_inner)
      .def_readwrite("r_outer", &Ring::r_outer);
  py::class_<RingMixtureSpec>(m, "RingMixtureSpec")
      .def(py::init<>())
      .def_readwrite("rings", &RingMixtureSpec::rings)
      .def_readwrite("weights", &RingMixtureSpec::weights)
      .def("validate", &RingMixtureSpec::validate);
  m.def("default_ring_spec", &default_ring_spec);

  py::class_<GaussianComponent>(m, "GaussianComponent")
      .def(py::init([](const RowVec& mean, double variance) {
             GaussianComponent c;
             c.mean = mean;
             c.variance = variance;
             return c;
           }),
           py::arg("mean"), py::arg("variance"))
      .def_readwrite("mean", &GaussianComponent::mean)
      .def_readwrite("variance", &GaussianComponent::variance);
  py::class_<GaussianMixtureSpec>(m, "GaussianMixtureSpec")
      .def(py::init<>())
      .def_readwrite("components", &GaussianMixtureSpec::components)
      .def_readwrite("weights", &GaussianMixtureSpec::weights)
      .def("validate", &GaussianMixtureSpec::validate);

  py::class_<LabeledDataset>(m, "LabeledDataset")
      .def(py::init<>())
      .def_readwrite("points", &LabeledDataset::points)
      .def_readwrite("labels", &LabeledDataset::labels)
      .def_readwrite("num_classes", &LabeledDataset::num_classes)
      .def("__len__", &LabeledDataset::size);
  m.def("sample_ring_mixture", &sample_ring_mixture, py::arg("spec"), py::arg("n"),
        py::arg("seed"));
  m.def("sample_gaussian_mixture", &sample_gaussian_mixture, py::arg("spec"),
        py::arg("n"), py::arg("seed"));

  // ---- conditions --------------------------------------------------------
  py::class_<LayoutBox>(m, "LayoutBox")
      .def(py::init([](int label, int x0, int y0, int x1, int y1) {
             return LayoutBox{label, x0, y0, x1, y1};
           }),
           py::arg("label"), py::arg("x0"), py::arg("y0"), py::arg("x1"),
           py::arg("y1"));
  py::class_<Condition>(m, "Condition")
      .def("flatten", &Condition::flatten)
      .def_property_readonly("flat_dim", &Condition::flat_dim)
      .def_property_readonly("layout_labels", &Condition::layout_labels)
      .def_property_readonly("layout_counts", &Condition::layout_counts);
  m.def("encode_ring_label", &encode_ring_label, py::arg("k"), py::arg("K"));
  m.def("encode_layout", &encode_layout, py::arg("boxes"), py::arg("H"), py::arg("W"));

  // ---- backbone ----------------------------------------------------------
  py::class_<UNetConfig>(m, "UNetConfig")
      .def(py::init<>())
      .def_readwrite("input_dim", &UNetConfig::input_dim)
      .def_readwrite("feature_dims", &UNetConfig::feature_dims)
      .def_readwrite("time_embed_dim", &UNetConfig::time_embed_dim)
      .def_readwrite("condition_dim", &UNetConfig::condition_dim);
  py::class_<DenoiserModel>(m, "DenoiserModel")
      .def_readonly("config", &DenoiserModel::config)
      .def(
          "denoise",
          [](const DenoiserModel& mdl, const Matrix& zt, int t,
             const Condition* cond) { return mdl.denoise(zt, t, cond); },
          py::arg("zt"), py::arg("t"), py::arg("cond") = nullptr)
      .def("site_names",
           [](const DenoiserModel& mdl) {
             std::vector<std::string> names;
             for (const auto& sd : mdl.topology) names.push_back(to_string(sd.id));
             return names;
           })
      .def_property("frozen", &DenoiserModel::frozen, &DenoiserModel::set_frozen)
      .def_property_readonly("fingerprint", &DenoiserModel::fingerprint);
  m.def("build_toy_unet", &build_toy_unet, py::arg("config"), py::arg("seed"));
  m.def("time_embedding", &time_embedding, py::arg("ts"), py::arg("dim"));

  // ---- steering ----------------------------------------------------------
  py::enum_<IntegrationMode>(m, "IntegrationMode")
      .value("ALL", IntegrationMode::ALL)
      .value("EMD", IntegrationMode::EMD)
      .value("E", IntegrationMode::E)
      .value("EM", IntegrationMode::EM)
      .value("D", IntegrationMode::D)
      .value("MD", IntegrationMode::MD)
      .value("ED_ONLY", IntegrationMode::ED_ONLY)
      .value("ME_D", IntegrationMode::ME_D)
      .value("M", IntegrationMode::M);
  m.def("parse_integration_mode", &parse_integration_mode, py::arg("name"));
  py::enum_<WeightPolicy>(m, "WeightPolicy")
      .value("uniform", WeightPolicy::uniform)
      .value("head_heavy", WeightPolicy::head_heavy);
  py::class_<SteeringModule>(m, "SteeringModule")
      .def_readonly("mode", &SteeringModule::mode)
      .def_readonly("condition_dim", &SteeringModule::condition_dim)
      .def_readwrite("fixed_time", &SteeringModule::fixed_time)
      .def("site_names",
           [](const SteeringModule& sm) {
             std::vector<std::string> names;
             for (const auto& sd : sm.sites) names.push_back(to_string(sd.id));
             return names;
           });
  m.def("build_steering_module", &build_steering_module, py::arg("backbone"),
        py::arg("mode"), py::arg("condition_dim"), py::arg("policy"), py::arg("seed"));
  m.def("integrated_denoise", &integrated_denoise, py::arg("backbone"),
        py::arg("module"), py::arg("zt"), py::arg("t"), py::arg("cond"));

  // ---- training ----------------------------------------------------------
  py::enum_<OptimizerKind>(m, "OptimizerKind")
      .value("adam", OptimizerKind::adam)
      .value("adamw", OptimizerKind::adamw);
  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("grad_accum", &TrainConfig::grad_accum)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("optimizer", &TrainConfig::optimizer)
      .def_readwrite("weight_decay", &TrainConfig::weight_decay)
      .def_readwrite("seed", &TrainConfig::seed);
  m.def(
      "pretrain",
      [](LabeledDataset& data, DenoiserModel& model, const NoiseSchedule& sched,
         const TrainConfig& cfg) {
        py::gil_scoped_release nogil;
        return pretrain(data, model, sched, cfg).loss_history;
      },
      py::arg("data"), py::arg("model"), py::arg("sched"), py::arg("cfg"));
  m.def(
      "finetune",
      [](const DenoiserModel& backbone, SteeringModule& module,
         const LabeledDataset& labeled, const NoiseSchedule& sched,
         const TrainConfig& cfg) {
        const int K = labeled.num_classes;
        py::gil_scoped_release nogil;
        return finetune(backbone, module, labeled, sched, cfg,
                        [K](int label) { return encode_ring_label(label, K); })
            .loss_history;
      },
      py::arg("backbone"), py::arg("module"), py::arg("labeled"), py::arg("sched"),
      py::arg("cfg"),
      "Labels are one-hot encoded over the dataset's class count.");
  m.def("denoising_loss", &denoising_loss, py::arg("eps_pred"), py::arg("eta"));
  m.def("evaluate_loss", &evaluate_loss, py::arg("model"), py::arg("points"),
        py::arg("sched"), py::arg("seed"));

  // ---- oracle ------------------------------------------------------------
  py::class_<DiffusedMixture>(m, "DiffusedMixture")
      .def(py::init([](const GaussianMixtureSpec& base, const NoiseSchedule& sched) {
             DiffusedMixture dm;
             dm.base = base;
             dm.sched = sched;
             dm.validate();
             return dm;
           }),
           py::arg("base"), py::arg("sched"));
  m.def("gm_log_density", &gm_log_density, py::arg("mixture"), py::arg("z"),
        py::arg("t"));
  m.def("gm_score", &gm_score, py::arg("mixture"), py::arg("z"), py::arg("t"));
  m.def("gm_conditional_score", &gm_conditional_score, py::arg("mixture"),
        py::arg("z"), py::arg("t"), py::arg("c"));
  m.def("gm_responsibilities", &gm_responsibilities, py::arg("mixture"), py::arg("z"),
        py::arg("t"));
  m.def("steering_residual", &steering_residual, py::arg("mixture"), py::arg("z"),
        py::arg("t"), py::arg("c"));
  m.def("check_bayes_identity", &check_bayes_identity, py::arg("mixture"),
        py::arg("points"), py::arg("ts"));
  m.def("square_grid", &square_grid, py::arg("lo"), py::arg("hi"), py::arg("side"));

  // ---- evaluation --------------------------------------------------------
  py::class_<SupportMetrics>(m, "SupportMetrics")
      .def_readonly("accuracy", &SupportMetrics::accuracy)
      .def_readonly("precision", &SupportMetrics::precision);
  m.def("ring_membership", &ring_membership, py::arg("p"), py::arg("spec"),
        py::arg("band"));
  m.def("support_accuracy", &support_accuracy, py::arg("samples"), py::arg("target"),
        py::arg("spec"), py::arg("band"));
  m.def("spearman", &spearman, py::arg("xs"), py::arg("ys"));
  m.def(
      "sample_steered",
      [](const DenoiserModel& backbone, const SteeringModule& module,
         const NoiseSchedule& sched, int target_ring, int num_rings, int n,
         SamplerKind sampler, int steps, std::uint64_t seed) {
        py::gil_scoped_release nogil;
        return sample_steered(backbone, module, sched, target_ring, num_rings, n,
                              sampler, steps, seed);
      },
      py::arg("backbone"), py::arg("module"), py::arg("sched"), py::arg("target_ring"),
      py::arg("num_rings"), py::arg("n"), py::arg("sampler"), py::arg("steps"),
      py::arg("seed"));

  py::class_<MetricsRecord>(m, "MetricsRecord")
      .def_readonly("run_id", &MetricsRecord::run_id)
      .def_readonly("mode", &MetricsRecord::mode)
      .def_readonly("n_labeled", &MetricsRecord::n_labeled)
      .def_readonly("epoch", &MetricsRecord::epoch)
      .def_readonly("seed", &MetricsRecord::seed)
      .def_readonly("accuracy", &MetricsRecord::accuracy)
      .def_readonly("precision", &MetricsRecord::precision)
      .def_readonly("wall_time_s", &MetricsRecord::wall_time_s);
  py::class_<SweepGrid>(m, "SweepGrid")
      .def(py::init<>())
      .def_readwrite("modes", &SweepGrid::modes)
      .def_readwrite("n_labeled", &SweepGrid::n_labeled)
      .def_readwrite("seeds", &SweepGrid::seeds)
      .def_readwrite("checkpoint_epochs", &SweepGrid::checkpoint_epochs);
  py::class_<SweepConfig>(m, "SweepConfig")
      .def(py::init<>())
      .def_readwrite("grid", &SweepConfig::grid)
      .def_readwrite("finetune", &SweepConfig::finetune)
      .def_readwrite("policy", &SweepConfig::policy)
      .def_readwrite("target_ring", &SweepConfig::target_ring)
      .def_readwrite("eval_samples", &SweepConfig::eval_samples)
      .def_readwrite("band", &SweepConfig::band)
      .def_readwrite("sampler_steps", &SweepConfig::sampler_steps)
      .def_readwrite("threads", &SweepConfig::threads);
  m.def(
      "run_sweep",
      [](const DenoiserModel& backbone, const RingMixtureSpec& rings,
         const NoiseSchedule& sched, const SweepConfig& cfg,
         const std::string& metrics_path) {
        py::gil_scoped_release nogil;
        return run_sweep(backbone, rings, sched, cfg, metrics_path);
      },
      py::arg("backbone"), py::arg("rings"), py::arg("sched"), py::arg("cfg"),
      py::arg("metrics_path"));

  // ---- checkpoints -------------------------------------------------------
  m.def("save_backbone", &save_backbone, py::arg("model"), py::arg("path"));
  m.def("load_backbone", &load_backbone, py::arg("path"));
  m.def("save_steering", &save_steering, py::arg("module"), py::arg("path"));
  m.def("load_steering", &load_steering, py::arg("path"), py::arg("backbone"));
  m.def("save_dataset", &save_dataset, py::arg("data"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("dataset_hash", &dataset_hash, py::arg("data"));
}
