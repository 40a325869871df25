#pragma once

#include "diffsteer/backbone.hpp"
#include "diffsteer/common.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/diffusion.hpp"
#include "diffsteer/steering.hpp"
#include "diffsteer/training.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace diffsteer {

// One evaluated checkpoint of one fine-tuning run.
struct MetricsRecord {
  std::string run_id;
  IntegrationMode mode = IntegrationMode::ALL;
  int n_labeled = 0;
  int epoch = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double precision = 0.0;
  double wall_time_s = 0.0;
};

// Analytic ring assignment: k if |p - center_k| lies in [r_inner - band,
// r_outer + band] for some ring; overlaps resolved toward the nearest
// annulus midline; nullopt when no ring matches.
std::optional<int> ring_membership(const RowVec& p, const RingMixtureSpec& spec,
                                   double band);

struct SupportMetrics {
  double accuracy = 0.0;   // fraction of all samples assigned to target
  double precision = 0.0;  // among ring-assigned samples, fraction on target
};

SupportMetrics support_accuracy(const Matrix& samples, int target,
                                const RingMixtureSpec& spec, double band);

struct SweepGrid {
  std::vector<IntegrationMode> modes;
  std::vector<int> n_labeled;
  std::vector<std::uint64_t> seeds;
  std::vector<int> checkpoint_epochs;  // ascending; metrics recorded at each
};

struct SweepConfig {
  SweepGrid grid;
  TrainConfig finetune;  // epochs is overridden by the last checkpoint epoch
  WeightPolicy policy = WeightPolicy::uniform;
  int target_ring = 1;
  int eval_samples = 1000;
  double band = 0.1;
  int sampler_steps = 50;  // DDIM
  int threads = 0;         // 0: hardware concurrency

  void validate() const;
};

std::string sweep_run_id(IntegrationMode mode, int n_labeled, std::uint64_t seed);

// Fine-tunes one module per (mode, n, seed) cell against the shared frozen
// backbone, samples with the target-ring condition at every checkpoint epoch,
// and appends each record to metrics_path as it completes. Cells already
// fully present in metrics_path are not recomputed; rerunning a partial
// sweep converges to the same record set. Returns all records sorted by
// (mode, n, seed, epoch). Cells run concurrently; the metrics file has a
// single writer.
std::vector<MetricsRecord> run_sweep(const DenoiserModel& backbone,
                                     const RingMixtureSpec& rings,
                                     const NoiseSchedule& sched,
                                     const SweepConfig& cfg,
                                     const std::string& metrics_path);

// Draw n points from the steered model under the target-ring condition.
Matrix sample_steered(const DenoiserModel& backbone, const SteeringModule& module,
                      const NoiseSchedule& sched, int target_ring, int num_rings,
                      int n, SamplerKind sampler, int steps, std::uint64_t seed);

// Appends one line to the metrics file, writing the header when the file is
// new; load returns an empty list for a missing file.
void append_metrics_record(const std::string& path, const MetricsRecord& rec);
std::vector<MetricsRecord> load_metrics_records(const std::string& path);

// Spearman rank correlation with average ranks on ties.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// Writes accuracy_vs_epoch.svg (one curve per mode), accuracy_vs_n.svg, and,
// when samples are provided, samples_scatter.svg over the ring outlines.
// Returns the created paths.
std::vector<std::string> emit_plots(const std::vector<MetricsRecord>& records,
                                    const Matrix& samples,
                                    const RingMixtureSpec& rings,
                                    const std::string& out_dir);

}  // namespace diffsteer
