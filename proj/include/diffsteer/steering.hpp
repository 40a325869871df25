#pragma once

#include "diffsteer/backbone.hpp"
#include "diffsteer/common.hpp"
#include "diffsteer/conditions.hpp"
#include "diffsteer/params.hpp"

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace diffsteer {

// Which backbone stages receive feature injections.
enum class IntegrationMode { ALL, EMD, E, EM, D, MD, ED_ONLY, ME_D, M };

std::string to_string(IntegrationMode m);
IntegrationMode parse_integration_mode(const std::string& s);
const std::vector<IntegrationMode>& all_integration_modes();

std::set<SiteCategory> mode_sites(IntegrationMode m);

enum class WeightPolicy { uniform, head_heavy };
std::string to_string(WeightPolicy p);
WeightPolicy parse_weight_policy(const std::string& s);

// Learnable add-on trained while the backbone stays frozen. One small
// adapter per selected site maps (time embedding, condition vector) to a
// feature-width vector; the site feature becomes h + w * v. Final adapter
// layers start at zero, so an untrained module is an exact no-op.
struct SteeringModule {
  IntegrationMode mode = IntegrationMode::ALL;
  int condition_dim = 0;
  int time_embed_dim = 0;
  std::vector<SiteDesc> sites;          // expanded selection, traversal order
  std::map<SiteId, double> weights;
  ParamStore phi;
  std::uint64_t backbone_fingerprint = 0;

  // ablation: adapters see this fixed timestep instead of the sampler's t
  std::optional<int> fixed_time;

  bool selects(const SiteId& id) const;
};

// uniform: every site 1.0. head_heavy: contracting-path sites (E, MB) get
// width/4, expansive-path and skip sites (D, ED) get 1.0.
std::map<SiteId, double> default_weight_schedule(const std::vector<SiteDesc>& sites,
                                                 WeightPolicy policy);

SteeringModule build_steering_module(const DenoiserModel& backbone,
                                     IntegrationMode mode, int condition_dim,
                                     WeightPolicy policy, std::uint64_t seed);

// h + w * v
Matrix steer_features(const Matrix& h, const Matrix& v, double w);

// One adapter's output for a batch sharing one (t, condition); n rows.
Matrix adapter_output(const SteeringModule& module, const SiteId& site, int t,
                      const Condition& cond, Eigen::Index n = 1);

// Forward pass with injections at the module's sites. zt is n x input_dim;
// temb is the backbone's time embedding, temb_adapter the one adapters see
// (differs only under the fixed_time ablation). Shared by inference and the
// fine-tuning loss.
tape::Value steered_forward(tape::Tape& tp, const DenoiserModel& backbone,
                            const TapeParams& theta, const SteeringModule& module,
                            const TapeParams& phi, tape::Value zt,
                            const Matrix& temb, const Matrix& temb_adapter,
                            const Matrix& cond_rows, ForwardTrace* trace = nullptr);

Matrix integrated_denoise(const DenoiserModel& backbone, const SteeringModule& module,
                          const Matrix& zt, int t, const Condition& cond);

// Same pass, also reporting every site's feature before/after injection.
Matrix integrated_denoise_traced(const DenoiserModel& backbone,
                                 const SteeringModule& module, const Matrix& zt,
                                 int t, const Condition& cond, ForwardTrace* trace);

}  // namespace diffsteer
