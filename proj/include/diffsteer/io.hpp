#pragma once

#include "diffsteer/backbone.hpp"
#include "diffsteer/common.hpp"
#include "diffsteer/datasets.hpp"
#include "diffsteer/steering.hpp"

#include <string>
#include <vector>

namespace diffsteer {

// Checkpoints are versioned JSON: config record, parameter arrays in store
// order, and a checksum of the store. Loading rejects unknown format
// versions, checksum mismatches, and (for steering) a fingerprint that does
// not match the supplied backbone.

void save_backbone(const DenoiserModel& model, const std::string& path);
DenoiserModel load_backbone(const std::string& path);

void save_steering(const SteeringModule& module, const std::string& path);
SteeringModule load_steering(const std::string& path, const DenoiserModel& backbone);

// Plain-text dataset: header line "dataset <n> <d> <K>", then one line per
// point with d coordinates and the label.
void save_dataset(const LabeledDataset& data, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

// Line-delimited loss history: "run_id,epoch,loss", appended per call.
void append_loss_history(const std::string& path, const std::string& run_id,
                         const std::vector<double>& losses, int first_epoch = 0);

// Content hash of a dataset for run manifests.
std::uint64_t dataset_hash(const LabeledDataset& data);

}  // namespace diffsteer
