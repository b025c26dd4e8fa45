#include "addint/config.hpp"

#include <fstream>
#include <stdexcept>

namespace addint {

using nlohmann::ordered_json;

const char* mul_format_name(MulFormat f) { return f == MulFormat::BF16 ? "bf16" : "fp32"; }

MulFormat mul_format_from_name(const std::string& s) {
  if (s == "fp32" || s == "FP32") return MulFormat::FP32;
  if (s == "bf16" || s == "BF16") return MulFormat::BF16;
  throw std::invalid_argument("unknown multiply format: " + s);
}

namespace {

const char* grad_rounding_name(GradRounding g) {
  return g == GradRounding::Bf16AfterAccumulation ? "bf16" : "none";
}

GradRounding grad_rounding_from_name(const std::string& s) {
  if (s == "none") return GradRounding::None;
  if (s == "bf16") return GradRounding::Bf16AfterAccumulation;
  throw std::invalid_argument("unknown grad rounding: " + s);
}

}  // namespace

TrainConfig config_from_json(const ordered_json& j) {
  TrainConfig c;
  c.name = j.value("name", c.name);
  c.seed = j.value("seed", c.seed);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.data_dir = j.value("data_dir", c.data_dir);
  c.max_train_samples = j.value("max_train_samples", c.max_train_samples);
  c.metrics_path = j.value("metrics_path", c.metrics_path);
  c.model_out = j.value("model_out", c.model_out);
  if (j.contains("loss_mode")) c.loss_mode = mul_mode_from_name(j.at("loss_mode"));
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.kind = o.value("kind", c.optimizer.kind);
    if (c.optimizer.kind != "adam" && c.optimizer.kind != "sgd")
      throw std::invalid_argument("unknown optimizer kind: " + c.optimizer.kind);
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
    c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
  }
  if (j.contains("precision")) {
    const auto& p = j.at("precision");
    if (p.contains("multiply_format"))
      c.precision.multiply_format = mul_format_from_name(p.at("multiply_format"));
    if (p.contains("grad_rounding"))
      c.precision.grad_rounding = grad_rounding_from_name(p.at("grad_rounding"));
  }
  for (const auto& lj : j.value("layers", ordered_json::array())) {
    LayerConfig l;
    l.kind = lj.at("kind");
    if (lj.contains("mode")) l.mode = mul_mode_from_name(lj.at("mode"));
    l.in = lj.value("in", l.in);
    l.out = lj.value("out", l.out);
    l.in_ch = lj.value("in_ch", l.in_ch);
    l.out_ch = lj.value("out_ch", l.out_ch);
    l.kh = lj.value("kh", l.kh);
    l.kw = lj.value("kw", l.kw);
    l.stride = lj.value("stride", l.stride);
    l.pad = lj.value("pad", l.pad);
    l.features = lj.value("features", l.features);
    c.layers.push_back(l);
  }
  if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (c.epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
  return c;
}

ordered_json config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["name"] = c.name;
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["data_dir"] = c.data_dir;
  j["max_train_samples"] = c.max_train_samples;
  j["metrics_path"] = c.metrics_path;
  j["model_out"] = c.model_out;
  j["loss_mode"] = mul_mode_name(c.loss_mode);
  j["optimizer"] = {{"kind", c.optimizer.kind},
                    {"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps},
                    {"momentum", c.optimizer.momentum},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["precision"] = {{"multiply_format", mul_format_name(c.precision.multiply_format)},
                    {"grad_rounding", grad_rounding_name(c.precision.grad_rounding)}};
  j["layers"] = ordered_json::array();
  for (const LayerConfig& l : c.layers) {
    ordered_json lj;
    lj["kind"] = l.kind;
    lj["mode"] = mul_mode_name(l.mode);
    if (l.kind == "linear") {
      lj["in"] = l.in;
      lj["out"] = l.out;
    } else if (l.kind == "conv2d") {
      lj["in_ch"] = l.in_ch;
      lj["out_ch"] = l.out_ch;
      lj["kh"] = l.kh;
      lj["kw"] = l.kw;
      lj["stride"] = l.stride;
      lj["pad"] = l.pad;
    } else if (l.kind == "batchnorm") {
      lj["features"] = l.features;
    }
    j["layers"].push_back(lj);
  }
  return j;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  ordered_json j;
  f >> j;
  return config_from_json(j);
}

void apply_fast_preset(TrainConfig& c) {
  // Shrinks hidden widths of a linear/relu MLP; input width and output head
  // are left alone.
  std::vector<size_t> lin;
  for (size_t i = 0; i < c.layers.size(); ++i)
    if (c.layers[i].kind == "linear") lin.push_back(i);
  for (size_t k = 0; k < lin.size(); ++k) {
    LayerConfig& l = c.layers[lin[k]];
    if (k + 1 < lin.size() && l.out > 256) l.out = 256;
    if (k > 0 && l.in > 256) l.in = 256;
  }
  if (c.epochs > 5) c.epochs = 5;
}

std::string mode_label(const TrainConfig& c) {
  // kind letter -> set of non-Standard modes used by that kind
  auto suffix = [](MulMode m) { return m == MulMode::ExactOp ? "E" : "a"; };
  std::string out;
  for (char letter : {'c', 'f', 'b', 'e'}) {
    bool has_exact = false, has_approx = false;
    auto note = [&](MulMode m) {
      if (m == MulMode::ExactOp) has_exact = true;
      if (m == MulMode::ApproxOp) has_approx = true;
    };
    if (letter == 'e') {
      note(c.loss_mode);
    } else {
      for (const LayerConfig& l : c.layers) {
        char k = l.kind == "conv2d" ? 'c' : l.kind == "linear" ? 'f' : l.kind == "batchnorm" ? 'b' : '\0';
        if (k == letter) note(l.mode);
      }
    }
    for (MulMode m : {MulMode::ExactOp, MulMode::ApproxOp}) {
      if ((m == MulMode::ExactOp && has_exact) || (m == MulMode::ApproxOp && has_approx)) {
        if (!out.empty()) out += '.';
        out += letter;
        out += suffix(m);
      }
    }
  }
  if (out.empty())
    return c.precision.multiply_format == MulFormat::BF16 ? "baseline(BF16)" : "baseline(FP32)";
  return out;
}

}  // namespace addint
