#include "diffsteer/eval.hpp"

#include "diffsteer/conditions.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace diffsteer {

std::optional<int> ring_membership(const RowVec& p, const RingMixtureSpec& spec,
                                   double band) {
  require(band >= 0.0, "band must be >= 0");
  require(p.size() == 2, "ring membership is defined on the plane");
  int best = -1;
  double best_mid_dist = 0.0;
  for (std::size_t k = 0; k < spec.rings.size(); ++k) {
    const Ring& ring = spec.rings[k];
    const double r = (p - ring.center).norm();
    if (r < ring.r_inner - band || r > ring.r_outer + band) continue;
    const double mid = 0.5 * (ring.r_inner + ring.r_outer);
    const double d = std::abs(r - mid);
    if (best < 0 || d < best_mid_dist) {
      best = static_cast<int>(k);
      best_mid_dist = d;
    }
  }
  if (best < 0) return std::nullopt;
  return best;
}

SupportMetrics support_accuracy(const Matrix& samples, int target,
                                const RingMixtureSpec& spec, double band) {
  require(samples.rows() >= 1, "empty sample set");
  require(target >= 0 && target < static_cast<int>(spec.rings.size()),
          "target ring out of range");
  Eigen::Index on_target = 0, assigned = 0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const auto k = ring_membership(samples.row(i), spec, band);
    if (!k) continue;
    ++assigned;
    if (*k == target) ++on_target;
  }
  SupportMetrics out;
  out.accuracy = static_cast<double>(on_target) / static_cast<double>(samples.rows());
  out.precision = assigned > 0
                      ? static_cast<double>(on_target) / static_cast<double>(assigned)
                      : 0.0;
  return out;
}

void SweepConfig::validate() const {
  finetune.validate();
  require(eval_samples >= 1, "eval_samples must be >= 1");
  require(band >= 0.0, "band must be >= 0");
  require(sampler_steps >= 1, "sampler_steps must be >= 1");
  require(target_ring >= 0, "target_ring must be >= 0");
  require(threads >= 0, "threads must be >= 0");
  int prev = -1;
  for (int e : grid.checkpoint_epochs) {
    require(e >= 0, "checkpoint epochs must be >= 0");
    require(e > prev, "checkpoint epochs must be strictly ascending");
    prev = e;
  }
}

std::string sweep_run_id(IntegrationMode mode, int n_labeled, std::uint64_t seed) {
  return to_string(mode) + "_n" + std::to_string(n_labeled) + "_s" +
         std::to_string(seed);
}

Matrix sample_steered(const DenoiserModel& backbone, const SteeringModule& module,
                      const NoiseSchedule& sched, int target_ring, int num_rings,
                      int n, SamplerKind sampler, int steps, std::uint64_t seed) {
  const Condition cond = encode_ring_label(target_ring, num_rings);
  DenoiseFn fn = [&](const Matrix& z, int t, const Condition* c) {
    return c ? integrated_denoise(backbone, module, z, t, *c)
             : backbone.denoise(z, t);
  };
  return sample(fn, sched, n, backbone.config.input_dim, &cond, sampler, steps, seed);
}

// ---------------------------------------------------------------------------
// metrics persistence (line-delimited, header first)
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kMetricsHeader =
    "run_id,mode,n_labeled,epoch,seed,accuracy,precision,wall_time_s";

std::string format_record(const MetricsRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.run_id << ',' << to_string(r.mode) << ',' << r.n_labeled << ','
     << r.epoch << ',' << r.seed << ',' << r.accuracy << ',' << r.precision
     << ',' << r.wall_time_s;
  return os.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void append_metrics_record(const std::string& path, const MetricsRecord& rec) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw ConfigError("cannot open metrics file for append: " + path);
  if (fresh) f << kMetricsHeader << '\n';
  f << format_record(rec) << '\n';
}

std::vector<MetricsRecord> load_metrics_records(const std::string& path) {
  std::vector<MetricsRecord> out;
  std::ifstream f(path);
  if (!f) return out;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (first) {
      first = false;
      require(line == kMetricsHeader, "unrecognized metrics header in " + path);
      continue;
    }
    if (line.empty()) continue;
    const auto cols = split_csv(line);
    require(cols.size() == 8, "malformed metrics line in " + path + ": " + line);
    MetricsRecord r;
    try {
      r.run_id = cols[0];
      r.mode = parse_integration_mode(cols[1]);
      r.n_labeled = std::stoi(cols[2]);
      r.epoch = std::stoi(cols[3]);
      r.seed = std::stoull(cols[4]);
      r.accuracy = std::stod(cols[5]);
      r.precision = std::stod(cols[6]);
      r.wall_time_s = std::stod(cols[7]);
    } catch (const std::exception&) {
      throw ConfigError("malformed metrics line in " + path + ": " + line);
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

namespace {

struct SweepCell {
  IntegrationMode mode;
  int n_labeled;
  std::uint64_t seed;
  std::string run_id;
};

bool record_order(const MetricsRecord& a, const MetricsRecord& b) {
  const auto key = [](const MetricsRecord& r) {
    return std::tuple(to_string(r.mode), r.n_labeled, r.seed, r.epoch);
  };
  return key(a) < key(b);
}

}  // namespace

std::vector<MetricsRecord> run_sweep(const DenoiserModel& backbone,
                                     const RingMixtureSpec& rings,
                                     const NoiseSchedule& sched,
                                     const SweepConfig& cfg,
                                     const std::string& metrics_path) {
  cfg.validate();
  rings.validate();
  sched.validate();
  const int K = static_cast<int>(rings.rings.size());
  require(cfg.target_ring < K, "target ring out of range");
  require(backbone.frozen(), "sweep requires a frozen backbone");

  std::vector<SweepCell> cells;
  for (IntegrationMode mode : cfg.grid.modes)
    for (int n : cfg.grid.n_labeled)
      for (std::uint64_t seed : cfg.grid.seeds)
        cells.push_back({mode, n, seed, sweep_run_id(mode, n, seed)});
  if (cells.empty()) return {};
  require(!cfg.grid.checkpoint_epochs.empty(),
          "sweep grid needs at least one checkpoint epoch");

  // resume bookkeeping: epochs already on disk per run_id
  std::map<std::string, std::map<int, MetricsRecord>> done;
  for (const MetricsRecord& r : load_metrics_records(metrics_path))
    done[r.run_id][r.epoch] = r;

  const std::set<int> checkpoints(cfg.grid.checkpoint_epochs.begin(),
                                  cfg.grid.checkpoint_epochs.end());
  std::vector<MetricsRecord> results;
  std::vector<const SweepCell*> pending;
  for (const SweepCell& cell : cells) {
    const auto it = done.find(cell.run_id);
    const bool complete =
        it != done.end() &&
        std::all_of(checkpoints.begin(), checkpoints.end(),
                    [&](int e) { return it->second.count(e) != 0; });
    if (complete) {
      for (int e : checkpoints) results.push_back(it->second.at(e));
    } else {
      pending.push_back(&cell);
    }
  }

  std::mutex sink;
  std::atomic<std::size_t> cursor{0};
  std::exception_ptr failure;

  auto run_cell = [&](const SweepCell& cell) {
    const auto t0 = std::chrono::steady_clock::now();
    const LabeledDataset labeled = sample_ring_mixture(
        rings, cell.n_labeled, Rng::derive(cell.seed, "labeled-data"));
    SteeringModule module = build_steering_module(
        backbone, cell.mode, K, cfg.policy,
        Rng::derive(cell.seed, "module-" + to_string(cell.mode)));

    TrainConfig ft = cfg.finetune;
    ft.epochs = cfg.grid.checkpoint_epochs.back();
    ft.seed = Rng::derive(cell.seed, "finetune-" + cell.run_id);

    std::vector<MetricsRecord> local;
    auto record_at = [&](int completed_epochs) {
      const Matrix samples = sample_steered(
          backbone, module, sched, cfg.target_ring, K, cfg.eval_samples,
          SamplerKind::ddim, cfg.sampler_steps,
          Rng::derive(cell.seed, "sample-" + cell.run_id + "-ep" +
                                     std::to_string(completed_epochs)));
      const SupportMetrics met =
          support_accuracy(samples, cfg.target_ring, rings, cfg.band);
      MetricsRecord rec;
      rec.run_id = cell.run_id;
      rec.mode = cell.mode;
      rec.n_labeled = cell.n_labeled;
      rec.epoch = completed_epochs;
      rec.seed = cell.seed;
      rec.accuracy = met.accuracy;
      rec.precision = met.precision;
      rec.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      local.push_back(rec);
      std::lock_guard<std::mutex> lock(sink);
      const auto it = done.find(cell.run_id);
      const bool already = it != done.end() && it->second.count(rec.epoch) != 0;
      if (!already) append_metrics_record(metrics_path, rec);
    };

    if (checkpoints.count(0)) record_at(0);
    finetune(backbone, module, labeled, sched, ft,
             [K](int label) { return encode_ring_label(label, K); },
             [&](int ep, double) {
               if (checkpoints.count(ep + 1)) record_at(ep + 1);
             });
    std::lock_guard<std::mutex> lock(sink);
    results.insert(results.end(), local.begin(), local.end());
  };

  auto worker = [&] {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= pending.size()) break;
      try {
        run_cell(*pending[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(sink);
        if (!failure) failure = std::current_exception();
        break;
      }
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t nthreads =
      std::min(pending.size(),
               static_cast<std::size_t>(cfg.threads > 0
                                            ? static_cast<unsigned>(cfg.threads)
                                            : hw));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(nthreads);
    for (std::size_t i = 0; i < nthreads; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  std::sort(results.begin(), results.end(), record_order);
  return results;
}

// ---------------------------------------------------------------------------
// rank correlation
// ---------------------------------------------------------------------------

namespace {

std::vector<double> average_ranks(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  require(xs.size() == ys.size(), "spearman inputs differ in length");
  require(xs.size() >= 2, "spearman needs at least two points");
  const std::vector<double> rx = average_ranks(xs);
  const std::vector<double> ry = average_ranks(ys);
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;  // constant input: undefined, report 0
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace diffsteer
