#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "addint/tensor.hpp"

namespace addint {

enum class MnistErrorKind { BadMagic, Truncated, CountMismatch };

class MnistError : public std::runtime_error {
 public:
  MnistError(MnistErrorKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  MnistErrorKind kind;
};

// One split: images [N, rows*cols] scaled to [0,1], labels as written.
struct MnistSplit {
  Tensor images;
  std::vector<int64_t> labels;
};

struct MnistData {
  MnistSplit train;
  MnistSplit test;
};

// Reads an IDX image/label pair. Files may be gzip-compressed or plain.
MnistSplit load_mnist_split(const std::string& images_path, const std::string& labels_path);

// Loads the four canonically named files from a directory.
MnistData load_mnist(const std::string& dir);

}  // namespace addint
