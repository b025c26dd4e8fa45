#include "addint/mnist.hpp"

#include <zlib.h>

#include <filesystem>
#include <memory>

namespace addint {

namespace {

struct GzCloser {
  void operator()(gzFile_s* f) const { gzclose(f); }
};
using GzFile = std::unique_ptr<gzFile_s, GzCloser>;

GzFile open_idx(const std::string& path) {
  GzFile f(gzopen(path.c_str(), "rb"));
  if (!f) throw MnistError(MnistErrorKind::Truncated, path + ": cannot open");
  return f;
}

uint32_t read_be32(gzFile f, const std::string& path) {
  unsigned char b[4];
  if (gzread(f, b, 4) != 4)
    throw MnistError(MnistErrorKind::Truncated, path + ": truncated header");
  return (uint32_t{b[0]} << 24) | (uint32_t{b[1]} << 16) | (uint32_t{b[2]} << 8) | uint32_t{b[3]};
}

std::vector<unsigned char> read_payload(gzFile f, size_t n, const std::string& path) {
  std::vector<unsigned char> buf(n);
  size_t got = 0;
  while (got < n) {
    unsigned chunk = static_cast<unsigned>(std::min<size_t>(n - got, 1u << 24));
    int r = gzread(f, buf.data() + got, chunk);
    if (r <= 0) throw MnistError(MnistErrorKind::Truncated, path + ": truncated payload");
    got += static_cast<size_t>(r);
  }
  return buf;
}

}  // namespace

MnistSplit load_mnist_split(const std::string& images_path, const std::string& labels_path) {
  GzFile imgf = open_idx(images_path);
  if (read_be32(imgf.get(), images_path) != 0x00000803u)
    throw MnistError(MnistErrorKind::BadMagic, images_path + ": bad image magic");
  uint32_t n = read_be32(imgf.get(), images_path);
  uint32_t rows = read_be32(imgf.get(), images_path);
  uint32_t cols = read_be32(imgf.get(), images_path);
  auto pixels = read_payload(imgf.get(), size_t{n} * rows * cols, images_path);

  GzFile labf = open_idx(labels_path);
  if (read_be32(labf.get(), labels_path) != 0x00000801u)
    throw MnistError(MnistErrorKind::BadMagic, labels_path + ": bad label magic");
  uint32_t nl = read_be32(labf.get(), labels_path);
  if (nl != n)
    throw MnistError(MnistErrorKind::CountMismatch,
                     images_path + ": " + std::to_string(n) + " images vs " +
                         std::to_string(nl) + " labels");
  auto raw_labels = read_payload(labf.get(), nl, labels_path);

  MnistSplit split;
  split.images.shape = {int64_t{n}, int64_t{rows} * cols};
  split.images.data.resize(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i)
    split.images.data[i] = static_cast<float>(pixels[i]) / 255.0f;
  split.labels.assign(raw_labels.begin(), raw_labels.end());
  return split;
}

MnistData load_mnist(const std::string& dir) {
  namespace fs = std::filesystem;
  auto p = [&](const char* name) { return (fs::path(dir) / name).string(); };
  MnistData d;
  d.train = load_mnist_split(p("train-images-idx3-ubyte.gz"), p("train-labels-idx1-ubyte.gz"));
  d.test = load_mnist_split(p("t10k-images-idx3-ubyte.gz"), p("t10k-labels-idx1-ubyte.gz"));
  return d;
}

}  // namespace addint
