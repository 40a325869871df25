#include "diffsteer/backbone.hpp"
#include "diffsteer/steering.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace diffsteer;

namespace {

std::vector<std::string> site_strings(const std::vector<SiteDesc>& sites) {
  std::vector<std::string> out;
  for (const SiteDesc& sd : sites) out.push_back(to_string(sd.id));
  return out;
}

}  // namespace

TEST_CASE("site ids round-trip through their string form") {
  const std::vector<SiteId> ids = {{SiteCategory::E, 0},
                                   {SiteCategory::MB, 0},
                                   {SiteCategory::D, 3},
                                   {SiteCategory::ED, 2}};
  for (const SiteId& id : ids) CHECK(parse_site_id(to_string(id)) == id);
  CHECK(to_string(SiteId{SiteCategory::ED, 1}) == "ED.1");
  CHECK_THROWS_AS(parse_site_id("X.0"), ParamError);
  CHECK_THROWS_AS(parse_site_id("E"), ParamError);
  CHECK_THROWS_AS(parse_site_id("E."), ParamError);
  CHECK_THROWS_AS(parse_site_id("E.-1"), ParamError);
  CHECK_THROWS_AS(parse_site_id("E.1x"), ParamError);
}

TEST_CASE("config validation") {
  UNetConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.feature_dims = {3, 4};
  CHECK_THROWS_AS(cfg.validate(), ParamError);  // must start at input_dim
  cfg = UNetConfig{};
  cfg.time_embed_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), ParamError);
  cfg = UNetConfig{};
  cfg.feature_dims = {2};
  CHECK_THROWS_AS(cfg.validate(), ParamError);
}

TEST_CASE("default topology: 4 E, 1 MB, 4 D, 4 ED in traversal order") {
  const DenoiserModel m = build_toy_unet(UNetConfig{}, 1);
  REQUIRE(m.topology.size() == 13);
  std::map<SiteCategory, int> counts;
  for (const SiteDesc& sd : m.topology) counts[sd.id.category]++;
  CHECK(counts[SiteCategory::E] == 4);
  CHECK(counts[SiteCategory::MB] == 1);
  CHECK(counts[SiteCategory::D] == 4);
  CHECK(counts[SiteCategory::ED] == 4);

  CHECK(site_strings(m.topology) ==
        std::vector<std::string>{"E.0", "E.1", "E.2", "E.3", "MB.0", "ED.3",
                                 "D.0", "ED.2", "D.1", "ED.1", "D.2", "ED.0",
                                 "D.3"});

  // widths follow the feature ladder on both paths
  CHECK(m.site(SiteId{SiteCategory::E, 0}).width == 4);
  CHECK(m.site(SiteId{SiteCategory::E, 3}).width == 32);
  CHECK(m.site(SiteId{SiteCategory::MB, 0}).width == 32);
  CHECK(m.site(SiteId{SiteCategory::ED, 0}).width == 4);
  CHECK(m.site(SiteId{SiteCategory::ED, 3}).width == 32);
  CHECK(m.site(SiteId{SiteCategory::D, 0}).width == 16);
  CHECK(m.site(SiteId{SiteCategory::D, 3}).width == 2);
  CHECK_THROWS_AS(m.site(SiteId{SiteCategory::E, 9}), ParamError);
}

TEST_CASE("minimal topology has one site per category") {
  UNetConfig cfg;
  cfg.feature_dims = {2, 4};
  const DenoiserModel m = build_toy_unet(cfg, 1);
  CHECK(site_strings(m.topology) ==
        std::vector<std::string>{"E.0", "MB.0", "ED.0", "D.0"});
}

TEST_CASE("builds are deterministic in the seed") {
  const DenoiserModel a = build_toy_unet(UNetConfig{}, 7);
  const DenoiserModel b = build_toy_unet(UNetConfig{}, 7);
  const DenoiserModel c = build_toy_unet(UNetConfig{}, 8);
  CHECK(a.params.checksum() == b.params.checksum());
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.params.checksum() != c.params.checksum());
  CHECK(a.fingerprint() != c.fingerprint());
}

TEST_CASE("time embedding shape and base frequencies") {
  const Matrix e = time_embedding({0, 1}, 8);
  REQUIRE(e.rows() == 2);
  REQUIRE(e.cols() == 8);
  for (int k = 0; k < 4; ++k) {
    CHECK(e(0, k) == 0.0);        // sin(0)
    CHECK(e(0, 4 + k) == 1.0);    // cos(0)
  }
  CHECK(e(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(e(1, 4) == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(e.cwiseAbs().maxCoeff() <= 1.0);
  CHECK_THROWS_AS(time_embedding({1}, 7), ParamError);
  CHECK_THROWS_AS(time_embedding({}, 8), ParamError);
}

TEST_CASE("all-zero parameters predict zero noise") {
  DenoiserModel m = build_toy_unet(UNetConfig{}, 3);
  for (auto& [name, mat] : m.params.items()) mat.setZero();
  Matrix z(2, 2);
  z << 0.3, -0.7, 1.5, 2.5;
  CHECK(m.denoise(z, 100).isZero(0.0));
}

TEST_CASE("batched denoise matches per-row calls") {
  const DenoiserModel m = build_toy_unet(UNetConfig{}, 5);
  Rng rng(12);
  const Matrix z = rng.normal_matrix(6, 2);
  const Matrix batch = m.denoise(z, 250);
  for (int i = 0; i < 6; ++i) {
    const Matrix one = m.denoise(z.row(i), 250);
    for (int j = 0; j < 2; ++j)
      CHECK(testutil::rel_err(batch(i, j), one(0, j), 1e-9) <= 1e-9);
  }
}

TEST_CASE("denoise input contracts") {
  const DenoiserModel m = build_toy_unet(UNetConfig{}, 5);
  const Matrix z = Matrix::Zero(1, 2);
  CHECK_THROWS_AS(m.denoise(Matrix::Zero(1, 3), 10), ParamError);
  CHECK_THROWS_AS(m.denoise(Matrix::Zero(0, 2), 10), ParamError);
  CHECK_THROWS_AS(m.denoise(z, 0), ParamError);
  const Condition c = encode_ring_label(0, 2);
  CHECK_THROWS_AS(m.denoise(z, 10, &c), ParamError);  // unconditional model
}

TEST_CASE("non-finite forward names the first bad site") {
  DenoiserModel m = build_toy_unet(UNetConfig{}, 5);
  m.params.at("enc.1.out.w")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    m.denoise(Matrix::Zero(1, 2), 10);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("E.1") != std::string::npos);
  }
}

TEST_CASE("hidden features: widths, skip identity, purity") {
  const DenoiserModel m = build_toy_unet(UNetConfig{}, 9);
  Rng rng(1);
  const Matrix z = rng.normal_matrix(3, 2);
  const auto feats = m.hidden_features(z, 77);
  REQUIRE(feats.size() == m.topology.size());
  for (const SiteDesc& sd : m.topology) {
    REQUIRE(feats.count(sd.id) == 1);
    CHECK(feats.at(sd.id).cols() == sd.width);
    CHECK(feats.at(sd.id).rows() == 3);
  }
  // the skip tap carries the encoder output unchanged
  for (int k = 0; k < 4; ++k)
    CHECK(feats.at(SiteId{SiteCategory::ED, k}) ==
          feats.at(SiteId{SiteCategory::E, k}));
  const auto again = m.hidden_features(z, 77);
  for (const auto& [id, f] : feats) CHECK(again.at(id) == f);
  // same pass as denoise: final decoder feature is the prediction
  CHECK(feats.at(SiteId{SiteCategory::D, 3}) == m.denoise(z, 77));
}

TEST_CASE("conditional backbone concatenates the condition at the input") {
  UNetConfig cfg;
  cfg.condition_dim = 2;
  const DenoiserModel m = build_toy_unet(cfg, 4);
  const Matrix z = Matrix::Ones(2, 2);
  const Condition c0 = encode_ring_label(0, 2);
  const Condition c1 = encode_ring_label(1, 2);
  const Matrix e0 = m.denoise(z, 40, &c0);
  const Matrix e1 = m.denoise(z, 40, &c1);
  CHECK(e0.rows() == 2);
  CHECK(e0 != e1);  // condition must reach the output
  CHECK_THROWS_AS(m.denoise(z, 40), ParamError);  // condition required
  const Condition wide = encode_ring_label(0, 5);
  CHECK_THROWS_AS(m.denoise(z, 40, &wide), ParamError);
}

TEST_CASE("integration-mode site masks") {
  using C = SiteCategory;
  CHECK(mode_sites(IntegrationMode::ALL) == std::set<C>{C::E, C::MB, C::D, C::ED});
  CHECK(mode_sites(IntegrationMode::EMD) == std::set<C>{C::E, C::MB, C::D});
  CHECK(mode_sites(IntegrationMode::E) == std::set<C>{C::E});
  CHECK(mode_sites(IntegrationMode::EM) == std::set<C>{C::E, C::MB});
  CHECK(mode_sites(IntegrationMode::D) == std::set<C>{C::D});
  CHECK(mode_sites(IntegrationMode::MD) == std::set<C>{C::MB, C::D});
  CHECK(mode_sites(IntegrationMode::ED_ONLY) == std::set<C>{C::ED});
  CHECK(mode_sites(IntegrationMode::ME_D) == std::set<C>{C::MB, C::ED});
  CHECK(mode_sites(IntegrationMode::M) == std::set<C>{C::MB});
  CHECK(all_integration_modes().size() == 9);
  for (IntegrationMode m : all_integration_modes())
    CHECK(parse_integration_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_integration_mode("EMDX"), ParamError);
  CHECK(parse_weight_policy("uniform") == WeightPolicy::uniform);
  CHECK(parse_weight_policy("head_heavy") == WeightPolicy::head_heavy);
  CHECK_THROWS_AS(parse_weight_policy("quadratic"), ParamError);
}

TEST_CASE("steering construction: adapter inventory and zero-init contract") {
  const DenoiserModel bb = build_toy_unet(UNetConfig{}, 21);
  const SteeringModule m_only =
      build_steering_module(bb, IntegrationMode::M, 2, WeightPolicy::uniform, 1);
  REQUIRE(m_only.sites.size() == 1);
  CHECK(m_only.sites[0].id == SiteId{SiteCategory::MB, 0});

  const SteeringModule all =
      build_steering_module(bb, IntegrationMode::ALL, 2, WeightPolicy::uniform, 1);
  CHECK(all.sites.size() == 13);
  // 6 parameter tensors per adapter
  CHECK(all.phi.count() == 13 * 6);

  const Condition cond = encode_ring_label(1, 2);
  for (const SiteDesc& sd : all.sites) {
    const Matrix v = adapter_output(all, sd.id, 500, cond, 3);
    CHECK(v.rows() == 3);
    CHECK(v.cols() == sd.width);
    CHECK(v.isZero(0.0));
  }
  CHECK_THROWS_AS(
      build_steering_module(bb, IntegrationMode::ALL, 0, WeightPolicy::uniform, 1),
      ParamError);
}

TEST_CASE("weight schedules") {
  const DenoiserModel bb = build_toy_unet(UNetConfig{}, 21);
  const auto uniform = default_weight_schedule(bb.topology, WeightPolicy::uniform);
  for (const auto& [id, w] : uniform) CHECK(w == 1.0);
  const auto heavy = default_weight_schedule(bb.topology, WeightPolicy::head_heavy);
  CHECK(heavy.at(SiteId{SiteCategory::E, 3}) == 8.0);   // width 32 / 4
  CHECK(heavy.at(SiteId{SiteCategory::E, 0}) == 1.0);   // width 4 / 4
  CHECK(heavy.at(SiteId{SiteCategory::MB, 0}) == 8.0);
  CHECK(heavy.at(SiteId{SiteCategory::D, 0}) == 1.0);
  CHECK(heavy.at(SiteId{SiteCategory::D, 3}) == 1.0);
  CHECK(heavy.at(SiteId{SiteCategory::ED, 3}) == 1.0);
}

TEST_CASE("feature update arithmetic") {
  Matrix h(1, 2), v(1, 2);
  h << 1.0, 2.0;
  v << 3.0, -1.0;
  Matrix out = steer_features(h, v, 2.0);
  CHECK(out(0, 0) == 7.0);
  CHECK(out(0, 1) == 0.0);
  CHECK(steer_features(h, Matrix::Zero(1, 2), 5.0) == h);
  CHECK(steer_features(h, v, 0.0) == h);
  CHECK_THROWS_AS(steer_features(h, Matrix::Zero(1, 3), 1.0), ParamError);
}

TEST_CASE("zero-init identity holds for every mode") {
  const DenoiserModel bb = build_toy_unet(UNetConfig{}, 33);
  const Condition cond = encode_ring_label(0, 2);
  Rng rng(2);
  const Matrix z = rng.normal_matrix(4, 2);
  for (IntegrationMode mode : all_integration_modes()) {
    const SteeringModule sm =
        build_steering_module(bb, mode, 2, WeightPolicy::head_heavy, 77);
    for (int t : {1, 300, 1000}) {
      const Matrix plain = bb.denoise(z, t);
      const Matrix steered = integrated_denoise(bb, sm, z, t, cond);
      for (int i = 0; i < plain.rows(); ++i)
        for (int j = 0; j < plain.cols(); ++j)
          CHECK(testutil::rel_err(steered(i, j), plain(i, j)) <= 1e-6);
    }
  }
}

TEST_CASE("injection deltas stay inside the mode mask") {
  const DenoiserModel bb = build_toy_unet(UNetConfig{}, 33);
  const Condition cond = encode_ring_label(0, 2);
  Rng rng(3);
  const Matrix z = rng.normal_matrix(2, 2);
  const int t = 321;
  const auto plain = bb.hidden_features(z, t);

  for (IntegrationMode mode :
       {IntegrationMode::EMD, IntegrationMode::ED_ONLY, IntegrationMode::M,
        IntegrationMode::ALL}) {
    SteeringModule sm = build_steering_module(bb, mode, 2, WeightPolicy::uniform, 9);
    // wake the adapters up: nonzero final layers so injections fire
    Rng prng(55);
    for (auto& [name, mat] : sm.phi.items())
      if (name.ends_with(".w3") || name.ends_with(".b3"))
        mat = 0.05 * prng.normal_matrix(mat.rows(), mat.cols());

    ForwardTrace trace;
    integrated_denoise_traced(bb, sm, z, t, cond, &trace);

    bool any_selected_differs = false;
    bool before_first_injection = true;
    for (const SiteDesc& sd : bb.topology) {
      const Matrix& pre = trace.pre.at(sd.id);
      const Matrix& post = trace.post.at(sd.id);
      if (before_first_injection) CHECK(pre == plain.at(sd.id));
      if (sm.selects(sd.id)) {
        if (pre != post) any_selected_differs = true;
        before_first_injection = false;
      } else {
        // untouched sites pass features through bit-identically
        CHECK(pre == post);
      }
    }
    CHECK(any_selected_differs);
  }
}

TEST_CASE("module/backbone pairing is fingerprint-checked") {
  const DenoiserModel a = build_toy_unet(UNetConfig{}, 1);
  const DenoiserModel b = build_toy_unet(UNetConfig{}, 2);
  const SteeringModule sm =
      build_steering_module(a, IntegrationMode::EMD, 2, WeightPolicy::uniform, 5);
  const Condition cond = encode_ring_label(0, 2);
  const Matrix z = Matrix::Zero(1, 2);
  CHECK_NOTHROW(integrated_denoise(a, sm, z, 10, cond));
  CHECK_THROWS_AS(integrated_denoise(b, sm, z, 10, cond), ConfigError);

  // conditional backbones cannot take steered inference
  UNetConfig ccfg;
  ccfg.condition_dim = 2;
  const DenoiserModel cm = build_toy_unet(ccfg, 1);
  const SteeringModule sm2 =
      build_steering_module(cm, IntegrationMode::M, 2, WeightPolicy::uniform, 5);
  CHECK_THROWS_AS(integrated_denoise(cm, sm2, z, 10, cond), ParamError);
}

TEST_CASE("adapter access contracts") {
  const DenoiserModel bb = build_toy_unet(UNetConfig{}, 1);
  const SteeringModule sm =
      build_steering_module(bb, IntegrationMode::M, 2, WeightPolicy::uniform, 5);
  const Condition cond = encode_ring_label(0, 2);
  CHECK_THROWS_AS(adapter_output(sm, SiteId{SiteCategory::E, 0}, 10, cond), ParamError);
  CHECK_THROWS_AS(adapter_output(sm, SiteId{SiteCategory::MB, 0}, 0, cond), ParamError);
  const Condition wide = encode_ring_label(0, 3);
  CHECK_THROWS_AS(adapter_output(sm, SiteId{SiteCategory::MB, 0}, 10, wide), ParamError);
}

TEST_CASE("fixed-time ablation pins the adapter clock") {
  const DenoiserModel bb = build_toy_unet(UNetConfig{}, 1);
  SteeringModule sm =
      build_steering_module(bb, IntegrationMode::M, 2, WeightPolicy::uniform, 5);
  Rng prng(8);
  for (auto& [name, mat] : sm.phi.items())
    if (name.ends_with(".w3"))
      mat = 0.1 * prng.normal_matrix(mat.rows(), mat.cols());
  const Condition cond = encode_ring_label(1, 2);
  const SiteId mb{SiteCategory::MB, 0};

  const Matrix v10 = adapter_output(sm, mb, 10, cond);
  const Matrix v900 = adapter_output(sm, mb, 900, cond);
  CHECK(v10 != v900);  // live clock: outputs move with t

  sm.fixed_time = 500;
  const Matrix f10 = adapter_output(sm, mb, 10, cond);
  const Matrix f900 = adapter_output(sm, mb, 900, cond);
  CHECK(f10 == f900);
  CHECK(f10 == adapter_output(sm, mb, 500, cond));
}
