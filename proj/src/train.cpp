#include "addint/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <variant>

#include "addint/optim.hpp"

namespace addint {

using nlohmann::ordered_json;

ordered_json metrics_to_json(const MetricsRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["train_loss"] = r.train_loss;
  j["test_accuracy"] = r.test_accuracy;
  j["wall_clock_seconds"] = r.wall_clock_seconds;
  j["mode_label"] = r.mode_label;
  j["seed"] = r.seed;
  j["name"] = r.name;
  return j;
}

Model build_model(const std::vector<LayerConfig>& layers) {
  Model m;
  int idx = 0;
  for (const LayerConfig& l : layers) {
    if (l.kind == "linear") {
      auto layer = std::make_unique<LinearLayer>(l.in, l.out, l.mode);
      layer->w.name = "linear" + std::to_string(idx) + ".w";
      layer->b.name = "linear" + std::to_string(idx) + ".b";
      m.layers.push_back(std::move(layer));
    } else if (l.kind == "conv2d") {
      auto layer = std::make_unique<Conv2dLayer>(l.in_ch, l.out_ch, l.kh, l.kw, l.stride, l.pad,
                                                 l.mode);
      layer->w.name = "conv" + std::to_string(idx) + ".w";
      layer->b.name = "conv" + std::to_string(idx) + ".b";
      m.layers.push_back(std::move(layer));
    } else if (l.kind == "batchnorm") {
      auto layer = std::make_unique<BatchNormLayer>(l.features, l.mode);
      layer->gamma.name = "bn" + std::to_string(idx) + ".gamma";
      layer->beta.name = "bn" + std::to_string(idx) + ".beta";
      m.layers.push_back(std::move(layer));
    } else if (l.kind == "relu") {
      m.layers.push_back(std::make_unique<ReluLayer>());
    } else if (l.kind == "flatten") {
      m.layers.push_back(std::make_unique<FlattenLayer>());
    } else {
      throw std::invalid_argument("unknown layer kind: " + l.kind);
    }
    ++idx;
  }
  return m;
}

namespace {

using Optimizer = std::variant<MomentumSGD, Adam>;

Optimizer make_optimizer(const OptimizerConfig& o) {
  if (o.kind == "sgd") return MomentumSGD(o.lr, o.momentum, o.weight_decay);
  return Adam(o.lr, o.beta1, o.beta2, o.eps);
}

Tensor gather_rows(const Tensor& src, const std::vector<int64_t>& idx, int64_t lo, int64_t hi) {
  int64_t cols = src.shape[1];
  Tensor out;
  out.shape = {hi - lo, cols};
  out.data.resize(static_cast<size_t>((hi - lo) * cols));
  for (int64_t r = lo; r < hi; ++r) {
    const float* s = src.data.data() + idx[static_cast<size_t>(r)] * cols;
    std::copy(s, s + cols, out.data.data() + (r - lo) * cols);
  }
  return out;
}

void fisher_yates(std::vector<int64_t>& v, std::mt19937& rng) {
  for (size_t i = v.size() - 1; i > 0; --i) {
    size_t j = rng() % (i + 1);
    std::swap(v[i], v[j]);
  }
}

}  // namespace

double evaluate_accuracy(Model& model, const MnistSplit& split, const TrainConfig& cfg) {
  model.set_training(false);
  int64_t n = split.images.shape[0];
  int64_t correct = 0;
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t lo = 0; lo < n; lo += cfg.batch_size) {
    int64_t hi = std::min(n, lo + cfg.batch_size);
    Tape tape(cfg.precision.multiply_format);
    model.bind(tape);
    Var x = tape.leaf(gather_rows(split.images, idx, lo, hi));
    Var logits = model.forward(tape, x);
    std::vector<int64_t> labels(split.labels.begin() + lo, split.labels.begin() + hi);
    correct += count_correct(tape.value(logits), labels);
  }
  model.set_training(true);
  return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train_model(const TrainConfig& cfg, std::ostream* log) {
  MnistData data = load_mnist(cfg.data_dir);
  int64_t n = data.train.images.shape[0];
  if (cfg.max_train_samples > 0) n = std::min(n, cfg.max_train_samples);

  Model model = build_model(cfg.layers);
  std::mt19937 rng(static_cast<uint32_t>(cfg.seed));
  model.init(rng);
  Optimizer opt = make_optimizer(cfg.optimizer);
  std::vector<Parameter*> params = model.parameters();
  std::string label = mode_label(cfg);

  std::ofstream metrics;
  if (!cfg.metrics_path.empty()) {
    metrics.open(cfg.metrics_path, std::ios::app);
    if (!metrics) throw std::runtime_error("cannot open metrics path: " + cfg.metrics_path);
  }
  auto emit = [&](const ordered_json& j) {
    if (metrics.is_open()) metrics << j.dump() << "\n" << std::flush;
  };

  TrainResult result;
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  int64_t step = 0;
  auto t0 = std::chrono::steady_clock::now();

  auto run_epochs = [&]() {
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      fisher_yates(order, rng);
      double loss_sum = 0.0;
      int64_t batches = 0;
      for (int64_t lo = 0; lo < n; lo += cfg.batch_size) {
        int64_t hi = std::min(n, lo + cfg.batch_size);
        Tape tape(cfg.precision.multiply_format);
        model.bind(tape);
        Var x = tape.leaf(gather_rows(data.train.images, order, lo, hi));
        Var logits = model.forward(tape, x);
        if (has_nonfinite(tape.value(logits)))
          throw DivergenceError("non-finite logits at step " + std::to_string(step));
        std::vector<int64_t> labels;
        labels.reserve(static_cast<size_t>(hi - lo));
        for (int64_t r = lo; r < hi; ++r)
          labels.push_back(data.train.labels[static_cast<size_t>(order[static_cast<size_t>(r)])]);
        Var loss = softmax_xent(tape, logits, labels, cfg.loss_mode);
        double lv = tape.value(loss).data[0];
        if (!std::isfinite(lv) || std::fabs(lv) > 1e30)
          throw DivergenceError("train loss " + std::to_string(lv) + " at step " +
                                std::to_string(step));
        tape.backward(loss);
        std::vector<Tensor> grads;
        std::vector<Tensor*> values;
        grads.reserve(params.size());
        for (Parameter* p : params) {
          Tensor g = tape.grad(p->var);
          if (cfg.precision.grad_rounding == GradRounding::Bf16AfterAccumulation)
            round_tensor_bf16(g);
          grads.push_back(std::move(g));
          values.push_back(&p->value);
        }
        std::visit([&](auto& o) { o.step(values, grads); }, opt);
        loss_sum += lv;
        ++batches;
        ++step;
      }
      MetricsRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.train_loss = loss_sum / static_cast<double>(batches);
      rec.test_accuracy = evaluate_accuracy(model, data.test, cfg);
      rec.wall_clock_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rec.mode_label = label;
      rec.seed = cfg.seed;
      rec.name = cfg.name;
      result.records.push_back(rec);
      emit(metrics_to_json(rec));
      if (log)
        *log << cfg.name << " epoch " << epoch << "/" << cfg.epochs << " loss "
             << rec.train_loss << " acc " << rec.test_accuracy << "\n";
    }
  };

  try {
    run_epochs();
  } catch (const DivergenceError& e) {
    ordered_json j;
    j["summary"] = true;
    j["name"] = cfg.name;
    j["mode_label"] = label;
    j["seed"] = cfg.seed;
    j["diverged"] = true;
    j["reason"] = e.what();
    emit(j);
    throw;
  }

  result.final_test_accuracy =
      result.records.empty() ? 0.0 : result.records.back().test_accuracy;
  ordered_json j;
  j["summary"] = true;
  j["name"] = cfg.name;
  j["mode_label"] = label;
  j["seed"] = cfg.seed;
  j["diverged"] = false;
  j["final_test_accuracy"] = result.final_test_accuracy;
  emit(j);
  if (!cfg.model_out.empty()) save_parameters(cfg.model_out, params);
  return result;
}

}  // namespace addint
