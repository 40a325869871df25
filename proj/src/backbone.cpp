#include "diffsteer/backbone.hpp"

#include <cmath>
#include <cstdio>

namespace diffsteer {

std::string to_string(const SiteId& id) {
  const char* cat = nullptr;
  switch (id.category) {
    case SiteCategory::E: cat = "E"; break;
    case SiteCategory::MB: cat = "MB"; break;
    case SiteCategory::D: cat = "D"; break;
    case SiteCategory::ED: cat = "ED"; break;
  }
  return std::string(cat) + "." + std::to_string(id.index);
}

SiteId parse_site_id(const std::string& s) {
  auto dot = s.find('.');
  require(dot != std::string::npos && dot + 1 < s.size(), "bad site id: " + s);
  std::string cat = s.substr(0, dot);
  int index = 0;
  try {
    std::size_t used = 0;
    index = std::stoi(s.substr(dot + 1), &used);
    require(used == s.size() - dot - 1, "bad site id: " + s);
  } catch (const std::exception&) {
    throw ParamError("bad site id: " + s);
  }
  require(index >= 0, "bad site id: " + s);
  SiteCategory c;
  if (cat == "E") c = SiteCategory::E;
  else if (cat == "MB") c = SiteCategory::MB;
  else if (cat == "D") c = SiteCategory::D;
  else if (cat == "ED") c = SiteCategory::ED;
  else throw ParamError("bad site id: " + s);
  return SiteId{c, index};
}

void UNetConfig::validate() const {
  require(input_dim >= 1, "input_dim must be >= 1");
  require(feature_dims.size() >= 2, "feature_dims needs at least input and one level");
  for (int w : feature_dims) require(w >= 1, "feature widths must be >= 1");
  require(feature_dims.front() == input_dim,
          "feature_dims must start at input_dim (residual blocks keep width)");
  require(time_embed_dim >= 2 && time_embed_dim % 2 == 0,
          "time_embed_dim must be even and >= 2");
  require(condition_dim >= 0, "condition_dim must be >= 0");
}

Matrix time_embedding(const std::vector<int>& ts, int dim) {
  require(dim >= 2 && dim % 2 == 0, "embedding dim must be even and >= 2");
  require(!ts.empty(), "no timesteps given");
  const int half = dim / 2;
  Matrix out(static_cast<Eigen::Index>(ts.size()), dim);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double a = ts[i] * freq;
      out(static_cast<Eigen::Index>(i), k) = std::sin(a);
      out(static_cast<Eigen::Index>(i), half + k) = std::cos(a);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

namespace {

// residual transform at constant width, then a width-changing affine
tape::Value block_forward(tape::Tape& tp, const TapeParams& P, tape::Value x,
                          tape::Value temb, const std::string& prefix) {
  const int w = static_cast<int>(tp.value(x).cols());
  tape::Value h1 = tp.add_rowvec(tp.matmul(x, P.at(prefix + ".res.w1")),
                                 P.at(prefix + ".res.b1"));
  tape::Value sc = tp.add_rowvec(tp.matmul(temb, P.at(prefix + ".res.tw")),
                                 P.at(prefix + ".res.tb"));
  tape::Value s = tp.slice_cols(sc, 0, w);
  tape::Value c = tp.slice_cols(sc, w, w);
  tape::Value h2 = tp.silu(tp.scale_shift(h1, s, c));
  tape::Value h3 = tp.add_rowvec(tp.matmul(h2, P.at(prefix + ".res.w2")),
                                 P.at(prefix + ".res.b2"));
  tape::Value r = tp.add(x, h3);
  return tp.add_rowvec(tp.matmul(r, P.at(prefix + ".out.w")),
                       P.at(prefix + ".out.b"));
}

void add_block_params(ParamStore& ps, const std::string& prefix, int w_in,
                      int w_out, int te_dim, Rng& rng) {
  ps.add(prefix + ".res.w1", glorot(w_in, w_in, rng));
  ps.add(prefix + ".res.b1", Matrix::Zero(1, w_in));
  ps.add(prefix + ".res.tw", glorot(te_dim, 2 * w_in, rng));
  ps.add(prefix + ".res.tb", Matrix::Zero(1, 2 * w_in));
  ps.add(prefix + ".res.w2", glorot(w_in, w_in, rng));
  ps.add(prefix + ".res.b2", Matrix::Zero(1, w_in));
  ps.add(prefix + ".out.w", glorot(w_in, w_out, rng));
  ps.add(prefix + ".out.b", Matrix::Zero(1, w_out));
}

}  // namespace

tape::Value unet_forward(tape::Tape& tp, const DenoiserModel& model,
                         const TapeParams& params, tape::Value zt,
                         const Matrix& temb, const Matrix* cond_rows,
                         const SiteHook* hook, ForwardTrace* trace) {
  const UNetConfig& cfg = model.config;
  const int L = cfg.levels();
  const auto& fd = cfg.feature_dims;

  auto at_site = [&](SiteId id, tape::Value raw) {
    tape::Value post = raw;
    if (hook != nullptr && *hook) post = (*hook)(id, raw, tp);
    if (trace != nullptr) {
      trace->pre[id] = tp.value(raw);
      trace->post[id] = tp.value(post);
    }
    return post;
  };

  tape::Value x = zt;
  if (cfg.condition_dim > 0) {
    require(cond_rows != nullptr, "model expects a condition input");
    require(cond_rows->rows() == tp.value(zt).rows() &&
                cond_rows->cols() == cfg.condition_dim,
            "condition input has the wrong shape");
    x = tp.concat_cols(zt, tp.leaf(*cond_rows, false));
  } else {
    require(cond_rows == nullptr, "model takes no condition input");
  }
  require(temb.rows() == tp.value(zt).rows() && temb.cols() == cfg.time_embed_dim,
          "time embedding has the wrong shape");
  tape::Value te = tp.leaf(temb, false);

  std::vector<tape::Value> skips(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    x = block_forward(tp, params, x, te, "enc." + std::to_string(i));
    x = at_site(SiteId{SiteCategory::E, i}, x);
    skips[static_cast<std::size_t>(i)] = x;
  }
  x = block_forward(tp, params, x, te, "mid");
  x = at_site(SiteId{SiteCategory::MB, 0}, x);
  for (int i = 0; i < L; ++i) {
    const int k = L - 1 - i;
    tape::Value skip =
        at_site(SiteId{SiteCategory::ED, k}, skips[static_cast<std::size_t>(k)]);
    x = tp.concat_cols(x, skip);
    x = block_forward(tp, params, x, te, "dec." + std::to_string(i));
    x = at_site(SiteId{SiteCategory::D, i}, x);
  }
  (void)fd;
  return x;
}

DenoiserModel build_toy_unet(const UNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DenoiserModel model;
  model.config = cfg;
  const int L = cfg.levels();
  const auto& fd = cfg.feature_dims;
  Rng rng(Rng::derive(seed, "unet-init"));

  for (int i = 0; i < L; ++i) {
    const int w_in = fd[static_cast<std::size_t>(i)] + (i == 0 ? cfg.condition_dim : 0);
    add_block_params(model.params, "enc." + std::to_string(i), w_in,
                     fd[static_cast<std::size_t>(i) + 1], cfg.time_embed_dim, rng);
  }
  add_block_params(model.params, "mid", fd.back(), fd.back(), cfg.time_embed_dim, rng);
  for (int i = 0; i < L; ++i) {
    const int half = fd[static_cast<std::size_t>(L - i)];
    add_block_params(model.params, "dec." + std::to_string(i), 2 * half,
                     fd[static_cast<std::size_t>(L - 1 - i)], cfg.time_embed_dim, rng);
  }

  // traversal order; decoder-side skip taps sit right before their consumer
  for (int i = 0; i < L; ++i)
    model.topology.push_back({SiteId{SiteCategory::E, i}, fd[static_cast<std::size_t>(i) + 1]});
  model.topology.push_back({SiteId{SiteCategory::MB, 0}, fd.back()});
  for (int i = 0; i < L; ++i) {
    const int k = L - 1 - i;
    model.topology.push_back(
        {SiteId{SiteCategory::ED, k}, fd[static_cast<std::size_t>(k) + 1]});
    model.topology.push_back(
        {SiteId{SiteCategory::D, i}, fd[static_cast<std::size_t>(L - 1 - i)]});
  }
  return model;
}

const SiteDesc& DenoiserModel::site(const SiteId& id) const {
  for (const SiteDesc& sd : topology)
    if (sd.id == id) return sd;
  throw ParamError("unknown site: " + to_string(id));
}

std::uint64_t DenoiserModel::fingerprint() const {
  std::string desc = "unet:" + std::to_string(config.input_dim) + ":";
  for (int w : config.feature_dims) desc += std::to_string(w) + ",";
  desc += ":" + std::to_string(config.time_embed_dim) + ":" +
          std::to_string(config.condition_dim);
  const std::uint64_t pc = params.checksum();
  return fnv1a(&pc, sizeof(pc), fnv1a(desc));
}

namespace {

Matrix condition_rows(const UNetConfig& cfg, const Condition* cond, Eigen::Index n) {
  require(cond != nullptr, "model expects a condition");
  Eigen::VectorXd flat = cond->flatten();
  require(flat.size() == cfg.condition_dim, "condition width does not match model");
  return flat.transpose().replicate(n, 1);
}

[[noreturn]] void throw_nonfinite(const DenoiserModel& model, const Matrix& zt,
                                  const Matrix& temb, const Matrix* cr) {
  // rerun with capture to name the first offending site
  tape::Tape tp(false);
  TapeParams P = TapeParams::make(tp, model.params, false);
  ForwardTrace trace;
  tape::Value out = unet_forward(tp, model, P, tp.leaf(zt, false), temb, cr,
                                 nullptr, &trace);
  for (const SiteDesc& sd : model.topology) {
    if (!trace.pre.at(sd.id).allFinite())
      throw NumericalError("non-finite feature at site " + to_string(sd.id));
  }
  (void)out;
  throw NumericalError("non-finite output at final decoder layer");
}

}  // namespace

Matrix DenoiserModel::denoise(const Matrix& zt, int t, const Condition* cond) const {
  require(zt.cols() == config.input_dim, "batch width does not match input_dim");
  require(zt.rows() >= 1, "empty batch");
  require(t >= 1, "timestep must be >= 1");

  Matrix cr_store;
  const Matrix* cr = nullptr;
  if (config.condition_dim > 0) {
    cr_store = condition_rows(config, cond, zt.rows());
    cr = &cr_store;
  } else {
    require(cond == nullptr, "model takes no condition input");
  }
  const Matrix temb =
      time_embedding(std::vector<int>(static_cast<std::size_t>(zt.rows()), t),
                     config.time_embed_dim);

  tape::Tape tp(false);
  TapeParams P = TapeParams::make(tp, params, false);
  tape::Value out = unet_forward(tp, *this, P, tp.leaf(zt, false), temb, cr);
  Matrix eps = tp.value(out);
  if (!eps.allFinite()) throw_nonfinite(*this, zt, temb, cr);
  return eps;
}

std::map<SiteId, Matrix> DenoiserModel::hidden_features(const Matrix& zt, int t,
                                                        const Condition* cond) const {
  require(zt.cols() == config.input_dim, "batch width does not match input_dim");
  require(zt.rows() >= 1, "empty batch");
  require(t >= 1, "timestep must be >= 1");

  Matrix cr_store;
  const Matrix* cr = nullptr;
  if (config.condition_dim > 0) {
    cr_store = condition_rows(config, cond, zt.rows());
    cr = &cr_store;
  } else {
    require(cond == nullptr, "model takes no condition input");
  }
  const Matrix temb =
      time_embedding(std::vector<int>(static_cast<std::size_t>(zt.rows()), t),
                     config.time_embed_dim);

  tape::Tape tp(false);
  TapeParams P = TapeParams::make(tp, params, false);
  ForwardTrace trace;
  unet_forward(tp, *this, P, tp.leaf(zt, false), temb, cr, nullptr, &trace);
  return trace.pre;
}

}  // namespace diffsteer
