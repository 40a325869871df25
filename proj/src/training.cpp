#include "diffsteer/training.hpp"

#include <algorithm>
#include <cmath>

namespace diffsteer {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::adam ? "adam" : "adamw";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ParamError("unknown optimizer: " + s);
}

void TrainConfig::validate() const {
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(grad_accum >= 1, "grad_accum must be >= 1");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
}

Optimizer::Optimizer(const ParamStore& params, const TrainConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  m_.reserve(params.count());
  v_.reserve(params.count());
  for (const auto& [name, p] : params.items()) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Optimizer::step(ParamStore& params, const std::vector<Matrix>& grads) {
  require(grads.size() == m_.size(), "gradient list does not match parameter store");
  ++t_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, t_);
  const double bc2 = 1.0 - std::pow(b2, t_);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    Matrix& p = params.items()[i].second;
    const Matrix& g = grads[i];
    require(g.rows() == p.rows() && g.cols() == p.cols(), "gradient shape mismatch");
    if (cfg_.optimizer == OptimizerKind::adamw && cfg_.weight_decay > 0.0)
      p *= (1.0 - cfg_.learning_rate * cfg_.weight_decay);
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= cfg_.learning_rate * (m_[i].array() / bc1) /
                 ((v_[i].array() / bc2).sqrt() + eps);
  }
}

double denoising_loss(const Matrix& eps_pred, const Matrix& eta) {
  require(eps_pred.rows() == eta.rows() && eps_pred.cols() == eta.cols(),
          "prediction and noise shapes differ");
  require(eps_pred.rows() >= 1, "empty batch");
  return (eps_pred - eta).rowwise().squaredNorm().mean();
}

namespace {

// One effective batch drawn up front so that micro-batching consumes the
// rng stream identically to a single large batch.
struct StepDraw {
  std::vector<int> indices;
  std::vector<int> ts;
  Matrix eta;
  Matrix zt;
};

StepDraw draw_step(Rng& rng, const std::vector<int>& perm, int start, int m,
                   const Matrix& points, const NoiseSchedule& sched) {
  StepDraw d;
  d.indices.assign(perm.begin() + start, perm.begin() + start + m);
  d.ts.resize(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i)
    d.ts[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(1, sched.T));
  d.eta = rng.normal_matrix(m, points.cols());
  d.zt.resize(m, points.cols());
  for (int i = 0; i < m; ++i) {
    const double ab = sched.alpha_bar(d.ts[static_cast<std::size_t>(i)]);
    d.zt.row(i) = std::sqrt(ab) * points.row(d.indices[static_cast<std::size_t>(i)]) +
                  std::sqrt(1.0 - ab) * d.eta.row(i);
  }
  return d;
}

// Per-label condition rows, built once.
std::vector<RowVec> condition_table(const ConditionFn& fn, int num_classes,
                                    int expect_dim) {
  std::vector<RowVec> rows;
  rows.reserve(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    Eigen::VectorXd flat = fn(k).flatten();
    require(flat.size() == expect_dim, "condition width does not match model");
    rows.push_back(flat.transpose());
  }
  return rows;
}

void accumulate(std::vector<Matrix>& acc, const std::vector<Matrix>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace

TrainResult pretrain(const LabeledDataset& data, DenoiserModel& model,
                     const NoiseSchedule& sched, const TrainConfig& cfg,
                     const EpochCallback& on_epoch, const ConditionFn& condition_fn) {
  cfg.validate();
  data.validate();
  sched.validate();
  if (model.frozen()) throw ConfigError("cannot pretrain a frozen model");
  require(data.dim() == model.config.input_dim,
          "dataset dimension does not match model input_dim");

  std::vector<RowVec> cond_rows_by_label;
  if (model.config.condition_dim > 0) {
    require(static_cast<bool>(condition_fn),
            "model takes a condition input; condition_fn required");
    cond_rows_by_label =
        condition_table(condition_fn, data.num_classes, model.config.condition_dim);
  }

  Rng rng(Rng::derive(cfg.seed, "pretrain"));
  Optimizer opt(model.params, cfg);
  const int N = data.size();
  const int effective = cfg.batch_size * cfg.grad_accum;

  TrainResult res;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    const std::vector<int> perm = rng.permutation(N);
    double epoch_loss = 0.0;
    int n_steps = 0;
    for (int start = 0; start < N; start += effective) {
      const int m = std::min(effective, N - start);
      const StepDraw d = draw_step(rng, perm, start, m, data.points, sched);

      std::vector<Matrix> acc;
      double step_loss = 0.0;
      int micros = 0;
      for (int ms = 0; ms < m; ms += cfg.batch_size) {
        const int mm = std::min(cfg.batch_size, m - ms);
        tape::Tape tp(true);
        TapeParams P = TapeParams::make(tp, model.params, true);
        const std::vector<int> ts_micro(d.ts.begin() + ms, d.ts.begin() + ms + mm);
        const Matrix temb = time_embedding(ts_micro, model.config.time_embed_dim);

        Matrix cr_store;
        const Matrix* cr = nullptr;
        if (model.config.condition_dim > 0) {
          cr_store.resize(mm, model.config.condition_dim);
          for (int i = 0; i < mm; ++i) {
            const int lbl = data.labels[static_cast<std::size_t>(
                d.indices[static_cast<std::size_t>(ms + i)])];
            cr_store.row(i) = cond_rows_by_label[static_cast<std::size_t>(lbl)];
          }
          cr = &cr_store;
        }

        tape::Value out = unet_forward(tp, model, P, tp.leaf(d.zt.middleRows(ms, mm), false),
                                       temb, cr);
        tape::Value loss = tp.sq_error_sum_mean(out, d.eta.middleRows(ms, mm));
        tp.backward(loss);
        accumulate(acc, P.collect_grads(tp));
        step_loss += tp.value(loss)(0, 0);
        ++micros;
      }
      for (Matrix& g : acc) g /= micros;
      step_loss /= micros;
      if (!std::isfinite(step_loss))
        throw NumericalError("non-finite loss at epoch " + std::to_string(ep) +
                             " step " + std::to_string(n_steps));
      opt.step(model.params, acc);
      epoch_loss += step_loss;
      ++n_steps;
    }
    res.loss_history.push_back(epoch_loss / n_steps);
    if (on_epoch) on_epoch(ep, res.loss_history.back());
  }
  return res;
}

TrainResult finetune(const DenoiserModel& backbone, SteeringModule& module,
                     const LabeledDataset& labeled, const NoiseSchedule& sched,
                     const TrainConfig& cfg, const ConditionFn& condition_fn,
                     const EpochCallback& on_epoch) {
  cfg.validate();
  labeled.validate();
  sched.validate();
  if (!backbone.frozen()) throw ConfigError("fine-tuning requires a frozen backbone");
  if (module.backbone_fingerprint != backbone.fingerprint())
    throw ConfigError("steering module was built for a different backbone");
  require(backbone.config.condition_dim == 0,
          "steered fine-tuning expects an unconditional backbone");
  require(labeled.dim() == backbone.config.input_dim,
          "dataset dimension does not match model input_dim");
  require(static_cast<bool>(condition_fn), "condition_fn required");

  const std::vector<RowVec> cond_rows_by_label =
      condition_table(condition_fn, labeled.num_classes, module.condition_dim);

  Rng rng(Rng::derive(cfg.seed, "finetune"));
  Optimizer opt(module.phi, cfg);
  const int N = labeled.size();
  const int effective = cfg.batch_size * cfg.grad_accum;

  TrainResult res;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    const std::vector<int> perm = rng.permutation(N);
    double epoch_loss = 0.0;
    int n_steps = 0;
    for (int start = 0; start < N; start += effective) {
      const int m = std::min(effective, N - start);
      const StepDraw d = draw_step(rng, perm, start, m, labeled.points, sched);

      std::vector<Matrix> acc;
      double step_loss = 0.0;
      int micros = 0;
      for (int ms = 0; ms < m; ms += cfg.batch_size) {
        const int mm = std::min(cfg.batch_size, m - ms);
        tape::Tape tp(true);
        TapeParams theta = TapeParams::make(tp, backbone.params, false);
        TapeParams phi = TapeParams::make(tp, module.phi, true);
        const std::vector<int> ts_micro(d.ts.begin() + ms, d.ts.begin() + ms + mm);
        const Matrix temb = time_embedding(ts_micro, backbone.config.time_embed_dim);
        const Matrix temb_adapter =
            module.fixed_time
                ? time_embedding(std::vector<int>(static_cast<std::size_t>(mm),
                                                  *module.fixed_time),
                                 module.time_embed_dim)
                : temb;

        Matrix cr(mm, module.condition_dim);
        for (int i = 0; i < mm; ++i) {
          const int lbl = labeled.labels[static_cast<std::size_t>(
              d.indices[static_cast<std::size_t>(ms + i)])];
          cr.row(i) = cond_rows_by_label[static_cast<std::size_t>(lbl)];
        }

        tape::Value out =
            steered_forward(tp, backbone, theta, module, phi,
                            tp.leaf(d.zt.middleRows(ms, mm), false), temb,
                            temb_adapter, cr);
        tape::Value loss = tp.sq_error_sum_mean(out, d.eta.middleRows(ms, mm));
        tp.backward(loss);
        accumulate(acc, phi.collect_grads(tp));
        step_loss += tp.value(loss)(0, 0);
        ++micros;
      }
      for (Matrix& g : acc) g /= micros;
      step_loss /= micros;
      if (!std::isfinite(step_loss))
        throw NumericalError("non-finite loss at epoch " + std::to_string(ep) +
                             " step " + std::to_string(n_steps));
      opt.step(module.phi, acc);
      epoch_loss += step_loss;
      ++n_steps;
    }
    res.loss_history.push_back(epoch_loss / n_steps);
    if (on_epoch) on_epoch(ep, res.loss_history.back());
  }
  return res;
}

double evaluate_loss(const DenoiserModel& model, const Matrix& points,
                     const NoiseSchedule& sched, std::uint64_t seed) {
  require(points.rows() >= 1, "empty dataset");
  require(points.cols() == model.config.input_dim,
          "dataset dimension does not match model input_dim");
  require(model.config.condition_dim == 0, "evaluate_loss expects an unconditional model");
  sched.validate();

  Rng rng(Rng::derive(seed, "eval-loss"));
  const Eigen::Index n = points.rows();
  std::vector<int> ts(static_cast<std::size_t>(n));
  for (auto& t : ts) t = static_cast<int>(rng.uniform_int(1, sched.T));
  const Matrix eta = rng.normal_matrix(n, points.cols());
  Matrix zt(n, points.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ab = sched.alpha_bar(ts[static_cast<std::size_t>(i)]);
    zt.row(i) = std::sqrt(ab) * points.row(i) + std::sqrt(1.0 - ab) * eta.row(i);
  }
  tape::Tape tp(false);
  TapeParams P = TapeParams::make(tp, model.params, false);
  const Matrix temb = time_embedding(ts, model.config.time_embed_dim);
  tape::Value out = unet_forward(tp, model, P, tp.leaf(zt, false), temb, nullptr);
  return denoising_loss(tp.value(out), eta);
}

}  // namespace diffsteer
