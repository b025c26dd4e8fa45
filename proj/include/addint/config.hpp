#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "addint/autodiff.hpp"
#include "addint/precision.hpp"

namespace addint {

struct OptimizerConfig {
  std::string kind = "adam";  // "adam" | "sgd"
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

struct LayerConfig {
  std::string kind;  // "linear" | "conv2d" | "batchnorm" | "relu" | "flatten"
  MulMode mode = MulMode::Standard;
  int64_t in = 0, out = 0;                     // linear
  int64_t in_ch = 0, out_ch = 0;               // conv2d
  int kh = 0, kw = 0, stride = 1, pad = 0;     // conv2d
  int64_t features = 0;                        // batchnorm
};

struct TrainConfig {
  std::string name = "run";
  uint64_t seed = 1;
  int epochs = 1;
  int batch_size = 100;
  std::string data_dir = "data/mnist";
  int64_t max_train_samples = 0;  // 0 = full training set
  std::string metrics_path;       // empty = no metrics file
  std::string model_out;          // empty = no weight dump
  MulMode loss_mode = MulMode::Standard;
  OptimizerConfig optimizer;
  MixedPrecisionPolicy precision;
  std::vector<LayerConfig> layers;
};

TrainConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json config_to_json(const TrainConfig& c);
TrainConfig load_config(const std::string& path);

// CI preset: hidden linear widths above 256 shrink to 256 and epochs cap at 5.
void apply_fast_preset(TrainConfig& c);

// Run label: per layer kind (c/f/b plus e for the loss), a letter
// with E/a for the non-Standard mode used by that kind; "baseline(FP32)" (or
// "baseline(BF16)") when everything is Standard.
std::string mode_label(const TrainConfig& c);

const char* mul_format_name(MulFormat f);
MulFormat mul_format_from_name(const std::string& s);

}  // namespace addint
