#include "diffsteer/steering.hpp"

#include <algorithm>
#include <cmath>

namespace diffsteer {

std::string to_string(IntegrationMode m) {
  switch (m) {
    case IntegrationMode::ALL: return "ALL";
    case IntegrationMode::EMD: return "EMD";
    case IntegrationMode::E: return "E";
    case IntegrationMode::EM: return "EM";
    case IntegrationMode::D: return "D";
    case IntegrationMode::MD: return "MD";
    case IntegrationMode::ED_ONLY: return "ED_ONLY";
    case IntegrationMode::ME_D: return "ME_D";
    case IntegrationMode::M: return "M";
  }
  throw ParamError("bad integration mode value");
}

IntegrationMode parse_integration_mode(const std::string& s) {
  for (IntegrationMode m : all_integration_modes())
    if (to_string(m) == s) return m;
  throw ParamError("unknown integration mode: " + s);
}

const std::vector<IntegrationMode>& all_integration_modes() {
  static const std::vector<IntegrationMode> modes = {
      IntegrationMode::ALL, IntegrationMode::EMD,     IntegrationMode::E,
      IntegrationMode::EM,  IntegrationMode::D,       IntegrationMode::MD,
      IntegrationMode::ED_ONLY, IntegrationMode::ME_D, IntegrationMode::M};
  return modes;
}

std::set<SiteCategory> mode_sites(IntegrationMode m) {
  using C = SiteCategory;
  switch (m) {
    case IntegrationMode::ALL: return {C::E, C::MB, C::D, C::ED};
    case IntegrationMode::EMD: return {C::E, C::MB, C::D};
    case IntegrationMode::E: return {C::E};
    case IntegrationMode::EM: return {C::E, C::MB};
    case IntegrationMode::D: return {C::D};
    case IntegrationMode::MD: return {C::MB, C::D};
    case IntegrationMode::ED_ONLY: return {C::ED};
    case IntegrationMode::ME_D: return {C::MB, C::ED};
    case IntegrationMode::M: return {C::MB};
  }
  throw ParamError("bad integration mode value");
}

std::string to_string(WeightPolicy p) {
  return p == WeightPolicy::uniform ? "uniform" : "head_heavy";
}

WeightPolicy parse_weight_policy(const std::string& s) {
  if (s == "uniform") return WeightPolicy::uniform;
  if (s == "head_heavy") return WeightPolicy::head_heavy;
  throw ParamError("unknown weight policy: " + s);
}

bool SteeringModule::selects(const SiteId& id) const {
  return std::any_of(sites.begin(), sites.end(),
                     [&](const SiteDesc& sd) { return sd.id == id; });
}

std::map<SiteId, double> default_weight_schedule(const std::vector<SiteDesc>& sites,
                                                 WeightPolicy policy) {
  std::map<SiteId, double> w;
  for (const SiteDesc& sd : sites) {
    if (policy == WeightPolicy::uniform) {
      w[sd.id] = 1.0;
    } else {
      const bool contracting = sd.id.category == SiteCategory::E ||
                               sd.id.category == SiteCategory::MB;
      w[sd.id] = contracting ? sd.width / 4.0 : 1.0;
    }
  }
  return w;
}

namespace {

std::string adapter_prefix(const SiteId& id) { return "adapter." + to_string(id); }

// input -> 2s -> 2s -> s, SiLU between; last layer all-zero
void add_adapter_params(ParamStore& ps, const SiteId& id, int in_dim, int width,
                        Rng& rng) {
  const std::string p = adapter_prefix(id);
  const int hidden = 2 * width;
  ps.add(p + ".w1", glorot(in_dim, hidden, rng));
  ps.add(p + ".b1", Matrix::Zero(1, hidden));
  ps.add(p + ".w2", glorot(hidden, hidden, rng));
  ps.add(p + ".b2", Matrix::Zero(1, hidden));
  ps.add(p + ".w3", Matrix::Zero(hidden, width));
  ps.add(p + ".b3", Matrix::Zero(1, width));
}

tape::Value adapter_forward(tape::Tape& tp, const TapeParams& phi,
                            const SiteId& id, tape::Value x) {
  const std::string p = adapter_prefix(id);
  tape::Value a1 = tp.silu(
      tp.add_rowvec(tp.matmul(x, phi.at(p + ".w1")), phi.at(p + ".b1")));
  tape::Value a2 = tp.silu(
      tp.add_rowvec(tp.matmul(a1, phi.at(p + ".w2")), phi.at(p + ".b2")));
  return tp.add_rowvec(tp.matmul(a2, phi.at(p + ".w3")), phi.at(p + ".b3"));
}

}  // namespace

SteeringModule build_steering_module(const DenoiserModel& backbone,
                                     IntegrationMode mode, int condition_dim,
                                     WeightPolicy policy, std::uint64_t seed) {
  require(condition_dim >= 1, "steering requires a condition (condition_dim >= 1)");
  SteeringModule mod;
  mod.mode = mode;
  mod.condition_dim = condition_dim;
  mod.time_embed_dim = backbone.config.time_embed_dim;
  mod.backbone_fingerprint = backbone.fingerprint();

  const std::set<SiteCategory> cats = mode_sites(mode);
  for (const SiteDesc& sd : backbone.topology)
    if (cats.count(sd.id.category)) mod.sites.push_back(sd);

  mod.weights = default_weight_schedule(mod.sites, policy);
  for (const auto& [id, w] : mod.weights)
    require(std::isfinite(w) && w >= 0.0, "site weight must be finite and >= 0");

  Rng rng(Rng::derive(seed, "steering-init"));
  const int in_dim = mod.time_embed_dim + condition_dim;
  for (const SiteDesc& sd : mod.sites)
    add_adapter_params(mod.phi, sd.id, in_dim, sd.width, rng);
  return mod;
}

Matrix steer_features(const Matrix& h, const Matrix& v, double w) {
  require(h.rows() == v.rows() && h.cols() == v.cols(),
          "feature and adapter output shapes differ");
  return h + w * v;
}

namespace {

Matrix adapter_temb(const SteeringModule& module, int t, Eigen::Index n) {
  const int ta = module.fixed_time.value_or(t);
  return time_embedding(std::vector<int>(static_cast<std::size_t>(n), ta),
                        module.time_embed_dim);
}

Matrix condition_rows(const SteeringModule& module, const Condition& cond,
                      Eigen::Index n) {
  Eigen::VectorXd flat = cond.flatten();
  require(flat.size() == module.condition_dim,
          "condition width does not match steering module");
  return flat.transpose().replicate(n, 1);
}

}  // namespace

Matrix adapter_output(const SteeringModule& module, const SiteId& site, int t,
                      const Condition& cond, Eigen::Index n) {
  require(module.selects(site), "site not selected by this module: " + to_string(site));
  require(t >= 1, "timestep must be >= 1");
  tape::Tape tp(false);
  TapeParams phi = TapeParams::make(tp, module.phi, false);
  Matrix in(n, module.time_embed_dim + module.condition_dim);
  in << adapter_temb(module, t, n), condition_rows(module, cond, n);
  return tp.value(adapter_forward(tp, phi, site, tp.leaf(in, false)));
}

tape::Value steered_forward(tape::Tape& tp, const DenoiserModel& backbone,
                            const TapeParams& theta, const SteeringModule& module,
                            const TapeParams& phi, tape::Value zt,
                            const Matrix& temb, const Matrix& temb_adapter,
                            const Matrix& cond_rows, ForwardTrace* trace) {
  Matrix adapter_in(cond_rows.rows(), temb_adapter.cols() + cond_rows.cols());
  adapter_in << temb_adapter, cond_rows;
  tape::Value ain = tp.leaf(adapter_in, false);

  SiteHook hook = [&](const SiteId& id, tape::Value raw, tape::Tape& t2) {
    if (!module.selects(id)) return raw;
    tape::Value v = adapter_forward(t2, phi, id, ain);
    return t2.add_scaled(raw, v, module.weights.at(id));
  };
  return unet_forward(tp, backbone, theta, zt, temb, nullptr, &hook, trace);
}

namespace {

Matrix integrated_impl(const DenoiserModel& backbone, const SteeringModule& module,
                       const Matrix& zt, int t, const Condition& cond,
                       ForwardTrace* trace) {
  require(module.backbone_fingerprint != 0, "steering module not built");
  if (module.backbone_fingerprint != backbone.fingerprint())
    throw ConfigError("steering module was built for a different backbone");
  require(backbone.config.condition_dim == 0,
          "steered inference expects an unconditional backbone");
  require(zt.cols() == backbone.config.input_dim, "batch width does not match input_dim");
  require(zt.rows() >= 1, "empty batch");
  require(t >= 1, "timestep must be >= 1");

  const Eigen::Index n = zt.rows();
  const Matrix temb = time_embedding(
      std::vector<int>(static_cast<std::size_t>(n), t), backbone.config.time_embed_dim);
  const Matrix ta = adapter_temb(module, t, n);
  const Matrix cr = condition_rows(module, cond, n);

  tape::Tape tp(false);
  TapeParams theta = TapeParams::make(tp, backbone.params, false);
  TapeParams phi = TapeParams::make(tp, module.phi, false);
  tape::Value out = steered_forward(tp, backbone, theta, module, phi,
                                    tp.leaf(zt, false), temb, ta, cr, trace);
  Matrix eps = tp.value(out);
  if (!eps.allFinite())
    throw NumericalError("non-finite steered output at t=" + std::to_string(t));
  return eps;
}

}  // namespace

Matrix integrated_denoise(const DenoiserModel& backbone, const SteeringModule& module,
                          const Matrix& zt, int t, const Condition& cond) {
  return integrated_impl(backbone, module, zt, t, cond, nullptr);
}

Matrix integrated_denoise_traced(const DenoiserModel& backbone,
                                 const SteeringModule& module, const Matrix& zt,
                                 int t, const Condition& cond, ForwardTrace* trace) {
  return integrated_impl(backbone, module, zt, t, cond, trace);
}

}  // namespace diffsteer
