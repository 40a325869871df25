#pragma once

#include "diffsteer/common.hpp"
#include "diffsteer/conditions.hpp"
#include "diffsteer/params.hpp"
#include "diffsteer/tape.hpp"

#include <compare>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace diffsteer {

// ---------------------------------------------------------------------------
// Injection sites
// ---------------------------------------------------------------------------

enum class SiteCategory { E, MB, D, ED };

struct SiteId {
  SiteCategory category = SiteCategory::E;
  int index = 0;
  auto operator<=>(const SiteId&) const = default;
};

std::string to_string(const SiteId& id);
SiteId parse_site_id(const std::string& s);

struct SiteDesc {
  SiteId id;
  int width = 0;  // feature columns observable at this site
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct UNetConfig {
  int input_dim = 2;
  // widths per level, input first; adjacent entries give each block's in/out
  std::vector<int> feature_dims = {2, 4, 8, 16, 32};
  int time_embed_dim = 32;
  int condition_dim = 0;  // >0: condition vector is concatenated to the input

  void validate() const;
  int levels() const { return static_cast<int>(feature_dims.size()) - 1; }
};

// n x dim matrix; row i embeds ts[i]: first half sin(t * f_k), second half
// cos(t * f_k) with f_k = exp(-ln(10000) * k / (dim/2)).
Matrix time_embedding(const std::vector<int>& ts, int dim);

// Optional per-site rewrite applied during a forward pass. Receives the raw
// feature leaving a site and returns the feature that flows onward.
using SiteHook =
    std::function<tape::Value(const SiteId&, tape::Value, tape::Tape&)>;

// Per-site capture of one forward pass: feature before the hook ran ("pre")
// and after ("post"); identical when no hook touched the site.
struct ForwardTrace {
  std::map<SiteId, Matrix> pre;
  std::map<SiteId, Matrix> post;
};

class DenoiserModel {
 public:
  UNetConfig config;
  ParamStore params;
  std::vector<SiteDesc> topology;  // traversal order; every site exactly once

  // noise prediction for a batch (n x input_dim), one t for all rows
  Matrix denoise(const Matrix& zt, int t, const Condition* cond = nullptr) const;
  // features observable at every site for probing
  std::map<SiteId, Matrix> hidden_features(const Matrix& zt, int t,
                                           const Condition* cond = nullptr) const;

  const SiteDesc& site(const SiteId& id) const;

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  // identifies topology + exact parameter bytes
  std::uint64_t fingerprint() const;

 private:
  bool frozen_ = false;
};

DenoiserModel build_toy_unet(const UNetConfig& cfg, std::uint64_t seed);

// Shared forward pass: used directly by training (gradients w.r.t. params)
// and by steering (hooks inject adapter output at masked sites).
//
// zt:    leaf for the n x input_dim batch
// temb:  n x time_embed_dim embedding matrix (per-row timesteps allowed)
// cond_rows: n x condition_dim, required iff config.condition_dim > 0
// Returns the n x input_dim noise prediction.
tape::Value unet_forward(tape::Tape& tp, const DenoiserModel& model,
                         const TapeParams& params, tape::Value zt,
                         const Matrix& temb, const Matrix* cond_rows,
                         const SiteHook* hook = nullptr,
                         ForwardTrace* trace = nullptr);

}  // namespace diffsteer
