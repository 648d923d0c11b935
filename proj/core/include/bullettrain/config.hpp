#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bullettrain/dataset.hpp"
#include "bullettrain/evaluation.hpp"
#include "bullettrain/model.hpp"
#include "bullettrain/trainer.hpp"

namespace bt {

/// Everything needed to reproduce one run. Serialised as a sectioned
/// key/value document:
///
///   [run]
///   algorithm = "bullettrain"
///   seed = 7
///
/// JSON input uses the same layout, one object per section. Unknown sections
/// or keys are rejected by the parsers; validate() checks the values.
struct ExperimentConfig {
  // [run]
  std::string algorithm = "bullettrain";  // baseline | bullettrain | oracle
  std::uint64_t seed = 0;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;

  // [dataset]
  std::string dataset = "rings";  // blobs | rings | mnist
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  double noise = 0.1;
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;

  // [model]
  std::string arch = "mlp:2-64-64-2";

  // [optim]
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::string lr_decay_epochs;  // comma-separated epochs, may be empty
  double lr_decay_factor = 0.1;

  // [loss]
  std::string loss = "trades";  // at | trades | jsd
  double beta = 6.0;
  double jsd_weight = 12.0;

  // [attack]
  std::string generator = "pgd";  // pgd | fgsm | augment
  double epsilon = 0.15;
  double step_size = 0.0;  // 0 selects 1.7*epsilon/steps
  std::size_t steps = 10;
  bool random_init = true;
  double warmup_epochs = 0.0;  // linear epsilon ramp, in epochs

  // [budget] step size 0 selects 1.7*epsilon/N for that class.
  std::size_t outlier_steps = 0;
  std::size_t robust_steps = 2;
  std::size_t boundary_steps = 10;
  double outlier_step_size = 0.0;
  double robust_step_size = 0.0;
  double boundary_step_size = 0.0;

  // [mining]
  double mining_momentum = 0.9;
  double gamma = 0.8;
  std::size_t oracle_steps = 10;

  // [augment]
  std::size_t chain_length = 3;
  double noise_sigma = 0.05;
  std::size_t max_translate = 2;
  std::size_t cutout_size = 8;
  bool mix = true;

  // [eval]
  std::size_t eval_steps = 20;
  std::size_t eval_restarts = 1;
  double eval_step_size = 0.0;  // 0 selects 2.5*epsilon/eval_steps
  std::size_t eval_size = 0;    // test samples evaluated each epoch; 0 = all
  std::size_t eval_every = 1;   // robust accuracy every k epochs and the last (0 = summary only)

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  void validate() const;

  // Names of every "section.key" field, in serialisation order.
  static std::vector<std::string> field_names();
  // Sets one field from its textual value; throws ConfigError.
  void set(std::string_view name, std::string_view value);
  std::string get(std::string_view name) const;

  // Derived run settings.
  TrainConfig train_config(const Dataset& data) const;
  MiningConfig mining_config() const;
  ComputeBudget budget() const;
  EvalConfig eval_config(const Dataset& data) const;
  double attack_step_size() const;
};

ExperimentConfig parse_config(std::string_view text);  // key/value or JSON, sniffed
ExperimentConfig parse_config_kv(std::string_view text);
ExperimentConfig parse_config_json(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

std::string serialize_config(const ExperimentConfig& config);
std::string config_to_json(const ExperimentConfig& config);

// Train and test splits described by the config.
struct DataSplits {
  Dataset train;
  Dataset test;
};
DataSplits load_datasets(const ExperimentConfig& config);

}  // namespace bt
