// Command-line entry point: wires datasets, training, steering, the analytic
// oracle, and the sweep harness into reproducible runs. One JSON config per
// experiment; flags override config fields; every non-dry run writes a
// manifest with the effective config, master seed, and code version.

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

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace diffsteer;

namespace {

json default_config() {
  return json{
      {"seed", 0},
      {"out_dir", ""},
      {"schedule", {{"timesteps", 1000}, {"beta_start", 1e-4}, {"beta_end", 0.02}}},
      {"model",
       {{"input_dim", 2},
        {"feature_dims", {2, 4, 8, 16, 32}},
        {"time_embed_dim", 32},
        {"condition_dim", 0}}},
      {"rings",
       {{"components",
         {{{"center", {0.0, 0.0}}, {"r_inner", 0.6}, {"r_outer", 1.0}, {"weight", 0.7}},
          {{"center", {5.0, 0.0}},
           {"r_inner", 0.6},
           {"r_outer", 1.0},
           {"weight", 0.3}}}}}},
      {"pretrain",
       {{"samples", 50000},
        {"epochs", 200},
        {"batch_size", 256},
        {"grad_accum", 1},
        {"learning_rate", 1e-3},
        {"optimizer", "adam"},
        {"weight_decay", 0.0}}},
      {"finetune",
       {{"n_labeled", 100},
        {"epochs", 2500},
        {"batch_size", 256},
        {"grad_accum", 1},
        {"learning_rate", 1e-3},
        {"optimizer", "adam"},
        {"weight_decay", 0.0}}},
      {"steering", {{"mode", "EMD"}, {"policy", "uniform"}, {"fixed_time", nullptr}}},
      {"sample", {{"n", 1000}, {"steps", 50}, {"sampler", "ddim"}, {"target_ring", 1}}},
      {"eval", {{"band", 0.1}, {"target_ring", 1}}},
      {"sweep",
       {{"modes", {"ALL", "EMD", "E", "EM", "D", "MD", "ED_ONLY", "ME_D", "M"}},
        {"n_labeled", {12}},
        {"seeds", {0, 1, 2, 3, 4}},
        {"checkpoint_epochs", {2500}},
        {"eval_samples", 1000},
        {"sampler_steps", 50},
        {"band", 0.1},
        {"threads", 0},
        {"target_ring", 1}}},
  };
}

// Overlay user values onto the defaults; unknown keys are typos, not options.
void merge_config(json& base, const json& over, const std::string& path) {
  for (const auto& [key, val] : over.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ParamError("unknown config key: " + here);
    if (base[key].is_object() && val.is_object())
      merge_config(base[key], val, here);
    else
      base[key] = val;
  }
}

SamplerKind parse_sampler(const std::string& s) {
  if (s == "ddpm") return SamplerKind::ddpm;
  if (s == "ddim") return SamplerKind::ddim;
  throw ParamError("unknown sampler '" + s + "' (expected ddpm or ddim)");
}

std::string sampler_name(SamplerKind k) {
  return k == SamplerKind::ddpm ? "ddpm" : "ddim";
}

RingMixtureSpec rings_from_json(const json& j) {
  RingMixtureSpec spec;
  for (const auto& c : j.at("components")) {
    Ring r;
    const auto& ctr = c.at("center");
    if (ctr.size() != 2) throw ParamError("ring center must have 2 coordinates");
    r.center << ctr[0].get<double>(), ctr[1].get<double>();
    r.r_inner = c.at("r_inner").get<double>();
    r.r_outer = c.at("r_outer").get<double>();
    spec.rings.push_back(r);
    spec.weights.push_back(c.at("weight").get<double>());
  }
  spec.validate();
  return spec;
}

TrainConfig train_from_json(const json& j) {
  TrainConfig tc;
  tc.epochs = j.at("epochs").get<int>();
  tc.batch_size = j.at("batch_size").get<int>();
  tc.grad_accum = j.at("grad_accum").get<int>();
  tc.learning_rate = j.at("learning_rate").get<double>();
  tc.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  tc.weight_decay = j.at("weight_decay").get<double>();
  return tc;
}

// Everything a subcommand needs, parsed once from the merged config.
struct Experiment {
  json effective;  // merged config as written to manifests
  std::uint64_t seed = 0;
  std::string out_dir;
  NoiseSchedule sched;
  UNetConfig model;
  RingMixtureSpec rings;
  int num_rings = 0;
  TrainConfig pre, ft;
  int pretrain_samples = 0;
  int n_labeled = 0;
  IntegrationMode mode = IntegrationMode::EMD;
  WeightPolicy policy = WeightPolicy::uniform;
  std::optional<int> fixed_time;
  int sample_n = 0, sample_steps = 0, sample_target = 0;
  SamplerKind sampler = SamplerKind::ddim;
  double band = 0.0;
  int eval_target = 0;
  SweepConfig sweep;
};

Experiment parse_experiment(const json& cfg) {
  Experiment e;
  e.effective = cfg;
  e.seed = cfg.at("seed").get<std::uint64_t>();
  e.out_dir = cfg.at("out_dir").get<std::string>();

  const json& js = cfg.at("schedule");
  e.sched = make_schedule(js.at("timesteps").get<int>(),
                          js.at("beta_start").get<double>(),
                          js.at("beta_end").get<double>());

  const json& jm = cfg.at("model");
  e.model.input_dim = jm.at("input_dim").get<int>();
  e.model.feature_dims = jm.at("feature_dims").get<std::vector<int>>();
  e.model.time_embed_dim = jm.at("time_embed_dim").get<int>();
  e.model.condition_dim = jm.at("condition_dim").get<int>();
  e.model.validate();

  e.rings = rings_from_json(cfg.at("rings"));
  e.num_rings = static_cast<int>(e.rings.rings.size());

  e.pre = train_from_json(cfg.at("pretrain"));
  e.pretrain_samples = cfg.at("pretrain").at("samples").get<int>();
  e.ft = train_from_json(cfg.at("finetune"));
  e.n_labeled = cfg.at("finetune").at("n_labeled").get<int>();

  const json& st = cfg.at("steering");
  e.mode = parse_integration_mode(st.at("mode").get<std::string>());
  e.policy = parse_weight_policy(st.at("policy").get<std::string>());
  if (!st.at("fixed_time").is_null()) e.fixed_time = st.at("fixed_time").get<int>();

  const json& sa = cfg.at("sample");
  e.sample_n = sa.at("n").get<int>();
  e.sample_steps = sa.at("steps").get<int>();
  e.sampler = parse_sampler(sa.at("sampler").get<std::string>());
  e.sample_target = sa.at("target_ring").get<int>();

  e.band = cfg.at("eval").at("band").get<double>();
  e.eval_target = cfg.at("eval").at("target_ring").get<int>();

  const json& sw = cfg.at("sweep");
  for (const auto& m : sw.at("modes"))
    e.sweep.grid.modes.push_back(parse_integration_mode(m.get<std::string>()));
  e.sweep.grid.n_labeled = sw.at("n_labeled").get<std::vector<int>>();
  e.sweep.grid.seeds = sw.at("seeds").get<std::vector<std::uint64_t>>();
  e.sweep.grid.checkpoint_epochs = sw.at("checkpoint_epochs").get<std::vector<int>>();
  e.sweep.finetune = e.ft;
  e.sweep.policy = e.policy;
  e.sweep.target_ring = sw.at("target_ring").get<int>();
  e.sweep.eval_samples = sw.at("eval_samples").get<int>();
  e.sweep.band = sw.at("band").get<double>();
  e.sweep.sampler_steps = sw.at("sampler_steps").get<int>();
  e.sweep.threads = sw.at("threads").get<int>();
  return e;
}

void write_manifest(const Experiment& e, const std::string& command, json extras) {
  json m{{"command", command},
         {"version", kVersion},
         {"seed", e.seed},
         {"config", e.effective}};
  m.update(extras);
  std::ofstream f(fs::path(e.out_dir) / ("manifest_" + command + ".json"));
  f << m.dump(2) << "\n";
}

void write_samples_csv(const std::string& path, const Matrix& samples) {
  std::ofstream f(path);
  f.precision(17);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    for (Eigen::Index j = 0; j < samples.cols(); ++j)
      f << (j ? "," : "") << samples(i, j);
    f << "\n";
  }
}

Matrix read_samples_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open samples file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::istringstream is(line);
    std::string cell;
    while (std::getline(is, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError("malformed samples file at line " +
                          std::to_string(rows.size() + 1) + ": " + path);
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError("ragged samples file: " + path);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("empty samples file: " + path);
  Matrix m(static_cast<Eigen::Index>(rows.size()),
           static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return m;
}

// "label x0 y0 x1 y1" per line; blank lines and '#' comments skipped.
std::vector<LayoutBox> read_boxes(std::istream& in, const std::string& name) {
  std::vector<LayoutBox> boxes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream is(line);
    LayoutBox b;
    if (!(is >> b.label >> b.x0 >> b.y0 >> b.x1 >> b.y1))
      throw ParamError("malformed box at " + name + ":" + std::to_string(lineno) +
                       " (expected: label x0 y0 x1 y1)");
    boxes.push_back(b);
  }
  return boxes;
}

EpochCallback progress_printer(int epochs, const std::string& label) {
  const int stride = std::max(1, epochs / 10);
  return [=](int epoch, double loss) {
    if (epoch % stride == stride - 1 || epoch == 0 || epoch == epochs - 1)
      std::cout << label << " epoch " << (epoch + 1) << "/" << epochs << "  loss "
                << loss << "\n";
  };
}

// The toy mixtures the closed-form identity is checked on: well-separated
// pair, a triangle with unequal spreads, and a tight/wide pair that stresses
// the log-sum-exp path.
std::vector<std::pair<std::string, GaussianMixtureSpec>> oracle_fixtures() {
  auto comp = [](double x, double y, double var) {
    GaussianComponent c;
    c.mean = RowVec(2);
    c.mean << x, y;
    c.variance = var;
    return c;
  };
  std::vector<std::pair<std::string, GaussianMixtureSpec>> out;
  GaussianMixtureSpec pair;
  pair.components = {comp(0, 0, 1.0), comp(4, 1, 0.5)};
  pair.weights = {0.6, 0.4};
  out.emplace_back("separated-pair", pair);
  GaussianMixtureSpec tri;
  tri.components = {comp(-3, 0, 0.5), comp(3, 0, 1.0), comp(0, 3, 2.0)};
  tri.weights = {0.3, 0.3, 0.4};
  out.emplace_back("triangle", tri);
  GaussianMixtureSpec tw;
  tw.components = {comp(0, 0, 0.05), comp(1, 1, 5.0)};
  tw.weights = {0.5, 0.5};
  out.emplace_back("tight-wide", tw);
  return out;
}

struct Ctx {
  Experiment exp;
  bool dry_run = false;
  std::string backbone_path, module_path;
};

int cmd_pretrain(Ctx& c) {
  const Experiment& e = c.exp;
  if (c.dry_run) {
    std::cout << "pretrain: " << e.pretrain_samples << " samples, " << e.pre.epochs
              << " epochs, batch " << e.pre.batch_size << " x" << e.pre.grad_accum
              << ", lr " << e.pre.learning_rate << ", out " << e.out_dir << "\n";
    return 0;
  }
  const LabeledDataset data =
      sample_ring_mixture(e.rings, e.pretrain_samples, Rng::derive(e.seed, "pretrain-data"));
  DenoiserModel model = build_toy_unet(e.model, Rng::derive(e.seed, "model-init"));
  TrainConfig tc = e.pre;
  tc.seed = Rng::derive(e.seed, "pretrain");
  const auto res = pretrain(data, model, e.sched, tc,
                            progress_printer(tc.epochs, "pretrain"));
  model.set_frozen(true);  // downstream fine-tuning requires a frozen backbone
  save_backbone(model, c.backbone_path);
  append_loss_history((fs::path(e.out_dir) / "loss_history.csv").string(), "pretrain",
                      res.loss_history);
  write_manifest(e, "pretrain",
                 {{"dataset_hash", dataset_hash(data)},
                  {"outputs", {c.backbone_path}}});
  std::cout << "final loss " << res.loss_history.back() << "\nwrote "
            << c.backbone_path << "\n";
  return 0;
}

int cmd_finetune(Ctx& c) {
  const Experiment& e = c.exp;
  const std::string run_id = sweep_run_id(e.mode, e.n_labeled, e.seed);
  if (c.dry_run) {
    std::cout << "finetune " << run_id << ": mode " << to_string(e.mode) << ", n "
              << e.n_labeled << ", " << e.ft.epochs << " epochs, backbone "
              << c.backbone_path << "\n";
    return 0;
  }
  const DenoiserModel backbone = load_backbone(c.backbone_path);
  const LabeledDataset labeled =
      sample_ring_mixture(e.rings, e.n_labeled, Rng::derive(e.seed, "labeled-data"));
  SteeringModule module =
      build_steering_module(backbone, e.mode, e.num_rings, e.policy,
                            Rng::derive(e.seed, "module-" + to_string(e.mode)));
  module.fixed_time = e.fixed_time;
  TrainConfig tc = e.ft;
  tc.seed = Rng::derive(e.seed, "finetune-" + run_id);
  const int K = e.num_rings;
  const auto res = finetune(backbone, module, labeled, e.sched, tc,
                            [K](int label) { return encode_ring_label(label, K); },
                            progress_printer(tc.epochs, run_id));
  save_steering(module, c.module_path);
  append_loss_history((fs::path(e.out_dir) / "loss_history.csv").string(), run_id,
                      res.loss_history);
  write_manifest(e, "finetune",
                 {{"run_id", run_id},
                  {"dataset_hash", dataset_hash(labeled)},
                  {"backbone", c.backbone_path},
                  {"outputs", {c.module_path}}});
  std::cout << "final loss " << res.loss_history.back() << "\nwrote "
            << c.module_path << "\n";
  return 0;
}

int cmd_sample(Ctx& c) {
  const Experiment& e = c.exp;
  const bool steered = !c.module_path.empty();
  if (c.dry_run) {
    std::cout << "sample: n=" << e.sample_n << " steps=" << e.sample_steps << " "
              << sampler_name(e.sampler)
              << (steered ? " module " + c.module_path : std::string(" (plain backbone)"))
              << "\n";
    return 0;
  }
  const DenoiserModel backbone = load_backbone(c.backbone_path);
  Matrix samples;
  if (steered) {
    const SteeringModule module = load_steering(c.module_path, backbone);
    samples = sample_steered(backbone, module, e.sched, e.sample_target, e.num_rings,
                             e.sample_n, e.sampler, e.sample_steps,
                             Rng::derive(e.seed, "sample"));
  } else {
    const DenoiserModel& bb = backbone;
    samples = sample(
        [&bb](const Matrix& z, int t, const Condition* cond) {
          return bb.denoise(z, t, cond);
        },
        e.sched, e.sample_n, e.model.input_dim, nullptr, e.sampler, e.sample_steps,
        Rng::derive(e.seed, "sample"));
  }
  const std::string out_path = (fs::path(e.out_dir) / "samples.csv").string();
  write_samples_csv(out_path, samples);
  write_manifest(e, "sample",
                 {{"backbone", c.backbone_path},
                  {"module", steered ? json(c.module_path) : json(nullptr)},
                  {"samples_hash", fnv1a(samples)},
                  {"outputs", {out_path}}});
  std::cout << "wrote " << samples.rows() << " samples to " << out_path << "\n";
  return 0;
}

int cmd_evaluate(Ctx& c, const std::string& samples_path) {
  const Experiment& e = c.exp;
  if (c.dry_run) {
    std::cout << "evaluate: samples=" << samples_path << " target=" << e.eval_target
              << " band=" << e.band << "\n";
    return 0;
  }
  const Matrix samples = read_samples_csv(samples_path);
  const SupportMetrics m = support_accuracy(samples, e.eval_target, e.rings, e.band);
  std::cout << "n=" << samples.rows() << " target_ring=" << e.eval_target
            << " accuracy=" << m.accuracy << " precision=" << m.precision << "\n";
  json metrics{{"n", samples.rows()},
               {"target_ring", e.eval_target},
               {"band", e.band},
               {"accuracy", m.accuracy},
               {"precision", m.precision}};
  const std::string out_path = (fs::path(e.out_dir) / "evaluate_metrics.json").string();
  std::ofstream(out_path) << metrics.dump(2) << "\n";
  write_manifest(e, "evaluate",
                 {{"samples", samples_path},
                  {"samples_hash", fnv1a(samples)},
                  {"outputs", {out_path}}});
  return 0;
}

int cmd_sweep(Ctx& c) {
  const Experiment& e = c.exp;
  e.sweep.validate();
  if (c.dry_run) {
    int cells = 0;
    for (const auto mode : e.sweep.grid.modes)
      for (const int n : e.sweep.grid.n_labeled)
        for (const auto seed : e.sweep.grid.seeds) {
          std::cout << sweep_run_id(mode, n, seed) << "  mode=" << to_string(mode)
                    << " n=" << n << " seed=" << seed << " checkpoints=";
          for (std::size_t i = 0; i < e.sweep.grid.checkpoint_epochs.size(); ++i)
            std::cout << (i ? "," : "") << e.sweep.grid.checkpoint_epochs[i];
          std::cout << "\n";
          ++cells;
        }
    std::cout << cells << " cells\n";
    return 0;
  }
  const DenoiserModel backbone = load_backbone(c.backbone_path);
  const std::string metrics_path = (fs::path(e.out_dir) / "metrics.csv").string();
  const auto records = run_sweep(backbone, e.rings, e.sched, e.sweep, metrics_path);
  const auto plots = emit_plots(records, Matrix(0, e.model.input_dim), e.rings,
                                e.out_dir);

  // per-mode mean accuracy at the final checkpoint
  const int last = e.sweep.grid.checkpoint_epochs.back();
  for (const auto mode : e.sweep.grid.modes) {
    double sum = 0.0;
    int count = 0;
    for (const auto& r : records)
      if (r.mode == mode && r.epoch == last) {
        sum += r.accuracy;
        ++count;
      }
    if (count)
      std::cout << to_string(mode) << ": mean accuracy " << (sum / count) << " over "
                << count << " runs\n";
  }
  json outputs = json::array({metrics_path});
  for (const auto& p : plots) outputs.push_back(p);
  write_manifest(e, "sweep",
                 {{"backbone", c.backbone_path},
                  {"records", records.size()},
                  {"outputs", outputs}});
  std::cout << "wrote " << records.size() << " records to " << metrics_path << "\n";
  return 0;
}

int cmd_oracle_check(Ctx& c, double tol) {
  const Experiment& e = c.exp;
  const auto fixtures = oracle_fixtures();
  const auto grid = square_grid(-6.0, 6.0, 21);
  const std::vector<int> ts{1, 250, 500, 750, 1000};
  if (c.dry_run) {
    std::cout << "oracle-check: " << fixtures.size() << " mixtures, " << grid.size()
              << " grid points, " << ts.size() << " timesteps, tol " << tol << "\n";
    return 0;
  }
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (const auto& [name, spec] : fixtures) {
    DiffusedMixture m;
    m.base = spec;
    m.sched = e.sched;
    const double err = check_bayes_identity(m, grid, ts);
    std::cout << "mixture " << name << ": max |delta| = " << err << "\n";
    worst = std::max(worst, err);
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool ok = worst <= tol;
  std::cout << "overall max |delta| = " << worst << " (tol " << tol << ") in " << secs
            << " s: " << (ok ? "OK" : "FAIL") << "\n";
  write_manifest(e, "oracle-check",
                 {{"max_error", worst}, {"tol", tol}, {"passed", ok}});
  return ok ? 0 : 1;
}

int cmd_encode_layout(Ctx& c, const std::string& boxes_path, int height, int width,
                      const std::string& save_path) {
  const Experiment& e = c.exp;
  if (c.dry_run) {
    std::cout << "encode-layout: " << height << "x" << width << " grid, boxes from "
              << (boxes_path.empty() ? "stdin" : boxes_path) << "\n";
    return 0;
  }
  std::vector<LayoutBox> boxes;
  if (boxes_path.empty()) {
    boxes = read_boxes(std::cin, "<stdin>");
  } else {
    std::ifstream f(boxes_path);
    if (!f) throw ConfigError("cannot open boxes file: " + boxes_path);
    boxes = read_boxes(f, boxes_path);
  }
  const Condition cond = encode_layout(boxes, height, width);
  const auto& labels = cond.layout_labels();
  const auto& counts = cond.layout_counts();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x)
      std::cout << (x ? " " : "") << labels(y, x) << "/" << counts(y, x);
    std::cout << "\n";
  }
  json extras{{"boxes", boxes_path.empty() ? "<stdin>" : boxes_path},
              {"grid", {height, width}}};
  if (!save_path.empty()) {
    json enc{{"height", height}, {"width", width}};
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        enc["labels"][y][x] = labels(y, x);
        enc["counts"][y][x] = counts(y, x);
      }
    const Eigen::VectorXd flat = cond.flatten();
    enc["flat"] = std::vector<double>(flat.data(), flat.data() + flat.size());
    std::ofstream(save_path) << enc.dump() << "\n";
    extras["outputs"] = {save_path};
    std::cout << "wrote " << save_path << "\n";
  }
  write_manifest(e, "encode-layout", extras);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frozen-backbone diffusion steering: pretrain a toy denoiser, "
               "fine-tune feature-injection adapters, sample, and evaluate."};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_flag, device = "cpu";
  std::uint64_t seed_flag = 0;
  bool dry_run = false;
  app.add_option("--config", config_path, "JSON experiment config; flags override");
  app.add_option("--seed", seed_flag, "master seed; overrides the config seed");
  app.add_option("--out", out_flag,
                 "output directory (default: config out_dir, then $DIFFSTEER_OUT, "
                 "then ./runs)");
  app.add_option("--device", device, "compute device")
      ->check(CLI::IsMember({"cpu", "accelerator"}));
  app.add_flag("--dry-run", dry_run, "validate and print the plan; run nothing");

  std::string backbone_flag, module_flag, samples_flag, boxes_path, save_path;
  int pre_epochs = -1, ft_epochs = -1, pre_samples = -1, ft_n = -1;
  std::string mode_flag;
  int sample_n = -1, sample_steps = -1, target_flag = -1;
  std::string sampler_flag;
  double band_flag = -1.0, tol = 1e-8;
  int height = 8, width = 8;

  auto* c_pre = app.add_subcommand("pretrain", "train the backbone on ring data");
  c_pre->add_option("--epochs", pre_epochs, "override pretrain.epochs");
  c_pre->add_option("--samples", pre_samples, "override pretrain.samples");

  auto* c_ft = app.add_subcommand("finetune", "train steering adapters, backbone frozen");
  c_ft->add_option("--backbone", backbone_flag, "backbone checkpoint path");
  c_ft->add_option("--mode", mode_flag, "integration mode (ALL, EMD, E, EM, D, MD, "
                                        "ED_ONLY, ME_D, M)");
  c_ft->add_option("--epochs", ft_epochs, "override finetune.epochs");
  c_ft->add_option("--n", ft_n, "override finetune.n_labeled");

  auto* c_sa = app.add_subcommand("sample", "draw samples; steered when --module given");
  c_sa->add_option("--backbone", backbone_flag, "backbone checkpoint path");
  c_sa->add_option("--module", module_flag, "steering checkpoint path");
  c_sa->add_option("--n", sample_n, "override sample.n");
  c_sa->add_option("--steps", sample_steps, "override sample.steps");
  c_sa->add_option("--sampler", sampler_flag, "ddpm or ddim");
  c_sa->add_option("--target", target_flag, "target ring index");

  auto* c_ev = app.add_subcommand("evaluate", "score a samples file against the rings");
  c_ev->add_option("--samples", samples_flag, "samples csv (default <out>/samples.csv)");
  c_ev->add_option("--target", target_flag, "target ring index");
  c_ev->add_option("--band", band_flag, "membership band around each annulus");

  auto* c_sw = app.add_subcommand("sweep", "run the (mode, n, seed) grid");
  c_sw->add_option("--backbone", backbone_flag, "backbone checkpoint path");

  auto* c_or = app.add_subcommand("oracle-check",
                                  "closed-form steering identity on toy mixtures");
  c_or->add_option("--tol", tol, "max allowed |delta|");

  auto* c_el = app.add_subcommand("encode-layout", "rasterize labeled boxes to a grid");
  c_el->add_option("--boxes", boxes_path, "box file, 'label x0 y0 x1 y1' per line "
                                          "(default: stdin)");
  c_el->add_option("--height", height, "grid height");
  c_el->add_option("--width", width, "grid width");
  c_el->add_option("--save", save_path, "also write the encoding as json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }

  try {
    if (device == "accelerator")
      throw ConfigError("no accelerator support in this build; use --device cpu");

    json cfg = default_config();
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw ConfigError("cannot open config: " + config_path);
      json user;
      try {
        user = json::parse(f);
      } catch (const json::exception& ex) {
        throw ConfigError("config is not valid json: " + std::string(ex.what()));
      }
      merge_config(cfg, user, "");
    }
    if (app.count("--seed")) cfg["seed"] = seed_flag;
    if (pre_epochs >= 0) cfg["pretrain"]["epochs"] = pre_epochs;
    if (pre_samples >= 0) cfg["pretrain"]["samples"] = pre_samples;
    if (ft_epochs >= 0) cfg["finetune"]["epochs"] = ft_epochs;
    if (ft_n >= 0) cfg["finetune"]["n_labeled"] = ft_n;
    if (!mode_flag.empty()) cfg["steering"]["mode"] = mode_flag;
    if (sample_n >= 0) cfg["sample"]["n"] = sample_n;
    if (sample_steps >= 0) cfg["sample"]["steps"] = sample_steps;
    if (!sampler_flag.empty()) cfg["sample"]["sampler"] = sampler_flag;
    if (target_flag >= 0) {
      cfg["sample"]["target_ring"] = target_flag;
      cfg["eval"]["target_ring"] = target_flag;
    }
    if (band_flag >= 0.0) cfg["eval"]["band"] = band_flag;

    Ctx c;
    c.exp = parse_experiment(cfg);
    c.dry_run = dry_run;
    if (!out_flag.empty()) c.exp.out_dir = out_flag;
    if (c.exp.out_dir.empty()) {
      const char* env = std::getenv("DIFFSTEER_OUT");
      c.exp.out_dir = env && *env ? env : "runs";
    }
    c.exp.effective["out_dir"] = c.exp.out_dir;
    if (!dry_run) fs::create_directories(c.exp.out_dir);

    const fs::path out(c.exp.out_dir);
    c.backbone_path = backbone_flag.empty() ? (out / "backbone.json").string()
                                            : backbone_flag;
    c.module_path = module_flag;
    if (*c_ft)
      c.module_path = module_flag.empty()
                          ? (out / ("module_" + to_string(c.exp.mode) + ".json")).string()
                          : module_flag;

    if (*c_pre) return cmd_pretrain(c);
    if (*c_ft) return cmd_finetune(c);
    if (*c_sa) return cmd_sample(c);
    if (*c_ev)
      return cmd_evaluate(c, samples_flag.empty() ? (out / "samples.csv").string()
                                                  : samples_flag);
    if (*c_sw) return cmd_sweep(c);
    if (*c_or) return cmd_oracle_check(c, tol);
    if (*c_el) return cmd_encode_layout(c, boxes_path, height, width, save_path);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}
