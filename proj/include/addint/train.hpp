#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "addint/config.hpp"
#include "addint/layers.hpp"
#include "addint/mnist.hpp"

namespace addint {

struct MetricsRecord {
  int epoch = 0;
  int64_t step = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double wall_clock_seconds = 0.0;
  std::string mode_label;
  uint64_t seed = 0;
  std::string name;
};

nlohmann::ordered_json metrics_to_json(const MetricsRecord& r);

class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

Model build_model(const std::vector<LayerConfig>& layers);

struct TrainResult {
  std::vector<MetricsRecord> records;
  double final_test_accuracy = 0.0;
};

// Runs the configured schedule on MNIST from cfg.data_dir: seeded init,
// per-epoch shuffle, one metrics record per epoch (appended to
// cfg.metrics_path as JSON lines when set, followed by a summary line).
// Throws DivergenceError when the train loss leaves the finite range.
TrainResult train_model(const TrainConfig& cfg, std::ostream* log = nullptr);

// Accuracy of the model on a split, evaluated in inference mode.
double evaluate_accuracy(Model& model, const MnistSplit& split, const TrainConfig& cfg);

}  // namespace addint
