#include "diffsteer/oracle.hpp"
#include "diffsteer/training.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

using namespace diffsteer;

namespace {

UNetConfig small_config() {
  UNetConfig cfg;
  cfg.feature_dims = {2, 4, 8};
  cfg.time_embed_dim = 8;
  return cfg;
}

ConditionFn ring_condition_fn(int K) {
  return [K](int label) { return encode_ring_label(label, K); };
}

double max_param_rel_diff(const ParamStore& a, const ParamStore& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.count(); ++i) {
    const Matrix& ma = a.items()[i].second;
    const Matrix& mb = b.items()[i].second;
    for (Eigen::Index r = 0; r < ma.rows(); ++r)
      for (Eigen::Index c = 0; c < ma.cols(); ++c)
        worst = std::max(worst, testutil::rel_err(ma(r, c), mb(r, c)));
  }
  return worst;
}

}  // namespace

TEST_CASE("denoising loss: sum over coordinates, mean over rows") {
  Matrix eta(2, 2);
  eta << 3.0, 4.0, 1.0, -1.0;
  CHECK(denoising_loss(eta, eta) == 0.0);
  Matrix zero = Matrix::Zero(1, 2);
  Matrix e1(1, 2);
  e1 << 3.0, 4.0;
  CHECK(denoising_loss(zero, e1) == 25.0);

  Rng rng(7);
  const Matrix p = rng.normal_matrix(17, 3);
  const Matrix q = rng.normal_matrix(17, 3);
  double naive = 0.0;
  for (int i = 0; i < 17; ++i)
    for (int j = 0; j < 3; ++j) naive += (p(i, j) - q(i, j)) * (p(i, j) - q(i, j));
  naive /= 17.0;
  CHECK(denoising_loss(p, q) == doctest::Approx(naive).epsilon(1e-10));
  CHECK_THROWS_AS(denoising_loss(p, rng.normal_matrix(17, 2)), ParamError);
  CHECK_THROWS_AS(denoising_loss(Matrix(0, 2), Matrix(0, 2)), ParamError);
}

TEST_CASE("train config validation and optimizer parsing") {
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ParamError);
  cfg = TrainConfig{};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParamError);
  cfg = TrainConfig{};
  cfg.grad_accum = 0;
  CHECK_THROWS_AS(cfg.validate(), ParamError);
  CHECK(parse_optimizer("adam") == OptimizerKind::adam);
  CHECK(parse_optimizer("adamw") == OptimizerKind::adamw);
  CHECK_THROWS_AS(parse_optimizer("sgd"), ParamError);
  CHECK(to_string(OptimizerKind::adamw) == "adamw");
}

TEST_CASE("first optimizer step against the closed-form update") {
  ParamStore ps;
  ps.add("p", Matrix::Constant(1, 1, 1.0));
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.epochs = 1;

  const double g = 0.5, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double mhat = (1.0 - b1) * g / (1.0 - b1);
  const double vhat = (1.0 - b2) * g * g / (1.0 - b2);
  const double adam_step = cfg.learning_rate * mhat / (std::sqrt(vhat) + eps);

  Optimizer opt(ps, cfg);
  opt.step(ps, {Matrix::Constant(1, 1, g)});
  CHECK(ps.at("p")(0, 0) == doctest::Approx(1.0 - adam_step).epsilon(1e-14));

  // adam ignores weight_decay entirely
  ParamStore ps2;
  ps2.add("p", Matrix::Constant(1, 1, 1.0));
  TrainConfig cfg2 = cfg;
  cfg2.weight_decay = 0.5;
  Optimizer opt2(ps2, cfg2);
  opt2.step(ps2, {Matrix::Constant(1, 1, g)});
  CHECK(ps2.at("p")(0, 0) == ps.at("p")(0, 0));

  // adamw decays decoupled, before the adam update
  ParamStore ps3;
  ps3.add("p", Matrix::Constant(1, 1, 1.0));
  TrainConfig cfg3 = cfg;
  cfg3.optimizer = OptimizerKind::adamw;
  cfg3.weight_decay = 0.5;
  Optimizer opt3(ps3, cfg3);
  opt3.step(ps3, {Matrix::Constant(1, 1, g)});
  const double decayed = 1.0 * (1.0 - cfg.learning_rate * 0.5);
  CHECK(ps3.at("p")(0, 0) == doctest::Approx(decayed - adam_step).epsilon(1e-14));

  CHECK_THROWS_AS(opt.step(ps, {}), ParamError);
}

TEST_CASE("pretrain: zero epochs is a no-op; histories are reproducible") {
  const NoiseSchedule sched = default_schedule();
  const LabeledDataset data = sample_ring_mixture(default_ring_spec(), 128, 1);

  DenoiserModel m = build_toy_unet(small_config(), 10);
  const std::uint64_t before = m.params.checksum();
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r0 = pretrain(data, m, sched, cfg);
  CHECK(r0.loss_history.empty());
  CHECK(m.params.checksum() == before);

  cfg.epochs = 3;
  cfg.batch_size = 64;
  cfg.seed = 99;
  DenoiserModel m1 = build_toy_unet(small_config(), 10);
  DenoiserModel m2 = build_toy_unet(small_config(), 10);
  const TrainResult r1 = pretrain(data, m1, sched, cfg);
  const TrainResult r2 = pretrain(data, m2, sched, cfg);
  REQUIRE(r1.loss_history.size() == 3);
  CHECK(r1.loss_history == r2.loss_history);
  CHECK(m1.params.checksum() == m2.params.checksum());
  for (double l : r1.loss_history) CHECK(std::isfinite(l));

  cfg.seed = 100;
  DenoiserModel m3 = build_toy_unet(small_config(), 10);
  pretrain(data, m3, sched, cfg);
  CHECK(m3.params.checksum() != m1.params.checksum());
}

TEST_CASE("pretrain refuses frozen models and aborts on poisoned parameters") {
  const NoiseSchedule sched = default_schedule();
  const LabeledDataset data = sample_ring_mixture(default_ring_spec(), 64, 1);
  DenoiserModel m = build_toy_unet(small_config(), 10);
  m.set_frozen(true);
  TrainConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(pretrain(data, m, sched, cfg), ConfigError);

  DenoiserModel bad = build_toy_unet(small_config(), 10);
  bad.params.at("enc.0.res.w1")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    pretrain(data, bad, sched, cfg);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("short pretraining beats the zero-predictor baseline") {
  const NoiseSchedule sched = default_schedule();
  const LabeledDataset train = sample_ring_mixture(default_ring_spec(), 512, 21);
  const LabeledDataset held = sample_ring_mixture(default_ring_spec(), 2000, 22);

  DenoiserModel m = build_toy_unet(small_config(), 5);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 64;
  cfg.seed = 7;
  const TrainResult r = pretrain(train, m, sched, cfg);
  CHECK(r.loss_history.back() < r.loss_history.front());
  // zero predictor scores E|eta|^2 = input_dim = 2
  CHECK(evaluate_loss(m, held.points, sched, 1) < 2.0);
}

TEST_CASE("evaluate_loss: zero model scores the noise energy, deterministically") {
  const NoiseSchedule sched = default_schedule();
  DenoiserModel m = build_toy_unet(small_config(), 3);
  for (auto& [name, mat] : m.params.items()) mat.setZero();
  const LabeledDataset held = sample_ring_mixture(default_ring_spec(), 2000, 9);
  const double l = evaluate_loss(m, held.points, sched, 123);
  // |eta|^2 has mean 2 and variance 4 per row
  CHECK(std::abs(l - 2.0) < 3.0 * std::sqrt(4.0 / 2000.0));
  CHECK(evaluate_loss(m, held.points, sched, 123) == l);
  CHECK(evaluate_loss(m, held.points, sched, 124) != l);
}

TEST_CASE("gradient accumulation reproduces the large-batch update") {
  const NoiseSchedule sched = default_schedule();
  const LabeledDataset data = sample_ring_mixture(default_ring_spec(), 64, 13);

  TrainConfig big;
  big.epochs = 2;
  big.batch_size = 64;
  big.grad_accum = 1;
  big.seed = 5;
  TrainConfig split = big;
  split.batch_size = 16;
  split.grad_accum = 4;

  DenoiserModel ma = build_toy_unet(small_config(), 30);
  DenoiserModel mb = build_toy_unet(small_config(), 30);
  const TrainResult ra = pretrain(data, ma, sched, big);
  const TrainResult rb = pretrain(data, mb, sched, split);
  CHECK(max_param_rel_diff(ma.params, mb.params) <= 1e-6);
  for (std::size_t i = 0; i < ra.loss_history.size(); ++i)
    CHECK(ra.loss_history[i] ==
          doctest::Approx(rb.loss_history[i]).epsilon(1e-9));
}

TEST_CASE("finetune moves only the steering parameters") {
  const NoiseSchedule sched = default_schedule();
  const LabeledDataset labeled = sample_ring_mixture(default_ring_spec(), 12, 40);
  DenoiserModel bb = build_toy_unet(small_config(), 50);
  const SteeringModule fresh =
      build_steering_module(bb, IntegrationMode::EMD, 2, WeightPolicy::head_heavy, 6);

  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.seed = 77;

  // contract: the backbone must be frozen first
  SteeringModule sm = fresh;
  CHECK_THROWS_AS(finetune(bb, sm, labeled, sched, cfg, ring_condition_fn(2)),
                  ConfigError);
  bb.set_frozen(true);

  // zero epochs: adapters stay exactly zero
  TrainConfig none = cfg;
  none.epochs = 0;
  SteeringModule sm0 = fresh;
  const TrainResult r0 = finetune(bb, sm0, labeled, sched, none, ring_condition_fn(2));
  CHECK(r0.loss_history.empty());
  CHECK(sm0.phi.checksum() == fresh.phi.checksum());

  const std::uint64_t theta_before = bb.params.checksum();
  SteeringModule sm1 = fresh;
  const TrainResult r1 = finetune(bb, sm1, labeled, sched, cfg, ring_condition_fn(2));
  CHECK(bb.params.checksum() == theta_before);        // frozen contract
  CHECK(sm1.phi.checksum() != fresh.phi.checksum());  // phi trained
  REQUIRE(r1.loss_history.size() == 10);
  for (double l : r1.loss_history) CHECK(std::isfinite(l));

  // training effect: the integrated denoiser now departs from the backbone
  Rng rng(3);
  const Matrix z = rng.normal_matrix(8, 2);
  const Condition target = encode_ring_label(1, 2);
  const Matrix plain = bb.denoise(z, 500);
  const Matrix steered = integrated_denoise(bb, sm1, z, 500, target);
  CHECK((steered - plain).cwiseAbs().maxCoeff() > 0.0);

  // reproducibility
  SteeringModule sm2 = fresh;
  const TrainResult r2 = finetune(bb, sm2, labeled, sched, cfg, ring_condition_fn(2));
  CHECK(r1.loss_history == r2.loss_history);
  CHECK(sm1.phi.checksum() == sm2.phi.checksum());

  // module/backbone pairing enforced
  DenoiserModel other = build_toy_unet(small_config(), 51);
  other.set_frozen(true);
  SteeringModule sm3 = fresh;
  CHECK_THROWS_AS(finetune(other, sm3, labeled, sched, cfg, ring_condition_fn(2)),
                  ConfigError);
  SteeringModule sm4 = fresh;
  CHECK_THROWS_AS(finetune(bb, sm4, labeled, sched, cfg, ConditionFn{}), ParamError);
}

// ---------------------------------------------------------------------------
// closed-form mixture oracle
// ---------------------------------------------------------------------------

namespace {

DiffusedMixture test_mixture() {
  GaussianMixtureSpec spec;
  RowVec m1(2), m2(2);
  m1 << 0.0, 0.0;
  m2 << 4.0, 1.0;
  spec.components = {{m1, 1.0}, {m2, 0.5}};
  spec.weights = {0.6, 0.4};
  return DiffusedMixture{spec, default_schedule()};
}

double fd_log_density(const DiffusedMixture& m, RowVec z, int t, int j, double h) {
  z(j) += h;
  const double up = gm_log_density(m, z, t);
  z(j) -= 2.0 * h;
  const double dn = gm_log_density(m, z, t);
  return (up - dn) / (2.0 * h);
}

}  // namespace

TEST_CASE("single-component oracle collapses to the Gaussian closed form") {
  GaussianMixtureSpec spec;
  RowVec mu(2);
  mu << 1.5, -0.5;
  spec.components = {{mu, 2.0}};
  spec.weights = {1.0};
  const DiffusedMixture m{spec, default_schedule()};

  const int t = 300;
  const double ab = m.sched.alpha_bar(t);
  RowVec z(2);
  z << 0.7, 0.9;
  const RowVec want = -(z - std::sqrt(ab) * mu) / (ab * 2.0 + 1.0 - ab);
  CHECK((gm_score(m, z, t) - want).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK(gm_score(m, z, t) == gm_conditional_score(m, z, t, 0));
  CHECK(steering_residual(m, z, t, 0).isZero(0.0));
  CHECK(check_bayes_identity(m, {z}, {1, t, 1000}) <= 1e-12);
  CHECK(gm_responsibilities(m, z, t) == std::vector<double>{1.0});
}

TEST_CASE("scores match finite differences of the log-density") {
  const DiffusedMixture m = test_mixture();
  const double h = 1e-5;
  for (int t : {1, 400, 1000}) {
    for (const RowVec& z : square_grid(-1.0, 5.0, 5)) {
      if (std::exp(gm_log_density(m, z, t)) < 1e-12) continue;
      const RowVec analytic = gm_score(m, z, t);
      for (int j = 0; j < 2; ++j) {
        const double fd = fd_log_density(m, z, t, j, h);
        CHECK(testutil::rel_err(analytic(j), fd) <= 1e-6);
      }
    }
  }
}

TEST_CASE("conditional scores match finite differences, component-local") {
  const DiffusedMixture m = test_mixture();
  const int t = 250;
  RowVec z(2);
  z << 2.0, 0.5;
  for (int c = 0; c < 2; ++c) {
    const RowVec analytic = gm_conditional_score(m, z, t, c);
    for (int j = 0; j < 2; ++j) {
      RowVec zp = z, zm = z;
      zp(j) += 1e-5;
      zm(j) -= 1e-5;
      const double fd = (gm_conditional_log_density(m, zp, t, c) -
                         gm_conditional_log_density(m, zm, t, c)) /
                        2e-5;
      CHECK(testutil::rel_err(analytic(j), fd) <= 1e-6);
    }
  }

  // conditional ignores the other component: change it, score stays put
  DiffusedMixture altered = m;
  altered.base.components[1].mean << -9.0, 9.0;
  CHECK(gm_conditional_score(m, z, t, 0) ==
        gm_conditional_score(altered, z, t, 0));
}

TEST_CASE("symmetric mixture has zero score along the separating axis") {
  GaussianMixtureSpec spec;
  RowVec m1(2), m2(2);
  m1 << -2.0, 0.0;
  m2 << 2.0, 0.0;
  spec.components = {{m1, 1.0}, {m2, 1.0}};
  spec.weights = {0.5, 0.5};
  const DiffusedMixture m{spec, default_schedule()};
  const int t = 200;
  RowVec z(2);
  z << 0.0, 1.3;
  const RowVec s = gm_score(m, z, t);
  CHECK(s(0) == 0.0);
  const double var = m.sched.alpha_bar(t) * 1.0 + 1.0 - m.sched.alpha_bar(t);
  CHECK(s(1) == doctest::Approx(-1.3 / var).epsilon(1e-12));

  const auto r = gm_responsibilities(m, z, t);
  CHECK(r[0] == doctest::Approx(0.5).epsilon(1e-14));

  // at the midpoint the residual lies along the mean axis, by symmetry
  const RowVec res = steering_residual(m, z, t, 0);
  CHECK(std::abs(res(1)) <= 1e-14);
  CHECK(res(0) != 0.0);
}

TEST_CASE("residual equals the scaled posterior-gradient, by Bayes") {
  const DiffusedMixture m = test_mixture();
  for (int t : {50, 600}) {
    const double root = std::sqrt(1.0 - m.sched.alpha_bar(t));
    for (const RowVec& z : square_grid(0.0, 4.0, 4)) {
      for (int c = 0; c < 2; ++c) {
        const RowVec direct = steering_residual(m, z, t, c);
        const RowVec via = -root * (gm_conditional_score(m, z, t, c) - gm_score(m, z, t));
        CHECK((direct - via).cwiseAbs().maxCoeff() <= 1e-8);

        // finite differences of log p(c | z) via responsibilities
        const auto rc = gm_responsibilities(m, z, t)[static_cast<std::size_t>(c)];
        if (rc > 1e-6 && rc < 1.0 - 1e-6) {
          for (int j = 0; j < 2; ++j) {
            RowVec zp = z, zm = z;
            zp(j) += 1e-5;
            zm(j) -= 1e-5;
            const double fd =
                (std::log(gm_responsibilities(m, zp, t)[static_cast<std::size_t>(c)]) -
                 std::log(gm_responsibilities(m, zm, t)[static_cast<std::size_t>(c)])) /
                2e-5;
            CHECK(testutil::rel_err(direct(j), -root * fd, 1e-6) <= 1e-5);
          }
        }
      }
    }
  }
}

TEST_CASE("responsibilities are a proper posterior") {
  const DiffusedMixture m = test_mixture();
  for (const RowVec& z : square_grid(-3.0, 7.0, 6)) {
    const auto r = gm_responsibilities(m, z, 500);
    double sum = 0.0;
    for (double x : r) {
      CHECK(x >= 0.0);
      CHECK(x <= 1.0);
      sum += x;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("the two routes to the conditional denoiser agree on a grid") {
  const DiffusedMixture m = test_mixture();
  const std::vector<RowVec> grid = square_grid(-6.0, 6.0, 21);
  const std::vector<int> ts = {1, 250, 500, 750, 1000};
  const double err = check_bayes_identity(m, grid, ts);
  CHECK(err <= 1e-8);

  // relabeling the components cannot change the worst-case error
  DiffusedMixture swapped = m;
  std::swap(swapped.base.components[0], swapped.base.components[1]);
  std::swap(swapped.base.weights[0], swapped.base.weights[1]);
  CHECK(std::abs(check_bayes_identity(swapped, grid, ts) - err) <= 1e-12);
}

TEST_CASE("oracle stays finite far from every mode") {
  const DiffusedMixture m = test_mixture();
  RowVec far(2);
  far << 1e3, -1e3;
  CHECK(gm_log_density(m, far, 500) == std::log(1e-300));
  CHECK(gm_score(m, far, 500).allFinite());
  const auto r = gm_responsibilities(m, far, 500);
  CHECK(std::isfinite(r[0] + r[1]));
  CHECK(steering_residual(m, far, 500, 0).allFinite());
}

TEST_CASE("oracle query contracts") {
  const DiffusedMixture m = test_mixture();
  RowVec z(2);
  z << 0.0, 0.0;
  CHECK_THROWS_AS(gm_score(m, z, 0), ParamError);
  CHECK_THROWS_AS(gm_score(m, z, 1001), ParamError);
  CHECK_THROWS_AS(gm_conditional_score(m, z, 10, 2), ParamError);
  CHECK_THROWS_AS(gm_conditional_score(m, z, 10, -1), ParamError);
  RowVec z3(3);
  z3 << 0.0, 0.0, 0.0;
  CHECK_THROWS_AS(gm_score(m, z3, 10), ParamError);
  CHECK_THROWS_AS(check_bayes_identity(m, {}, {1}), ParamError);
  CHECK_THROWS_AS(check_bayes_identity(m, {z}, {}), ParamError);
}

TEST_CASE("square grids cover their bounds evenly") {
  const auto g = square_grid(-1.0, 1.0, 3);
  REQUIRE(g.size() == 9);
  CHECK(g.front() == RowVec::Constant(2, -1.0));
  CHECK(g.back() == RowVec::Constant(2, 1.0));
  CHECK(g[1](0) == -1.0);
  CHECK(g[1](1) == 0.0);
  CHECK(square_grid(0.0, 0.0, 1).size() == 1);
  CHECK_THROWS_AS(square_grid(0.0, 1.0, 0), ParamError);
  CHECK_THROWS_AS(square_grid(1.0, 0.0, 3), ParamError);
}
