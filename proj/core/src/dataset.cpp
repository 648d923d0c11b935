#include "bullettrain/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <vector>

#include "bullettrain/errors.hpp"
#include "bullettrain/io.hpp"
#include "bullettrain/rng.hpp"

namespace bt {

void Dataset::validate() const {
  if (inputs.rows() != labels.size()) throw ArgumentError("dataset: input and label counts differ");
  if (channels * height * width != inputs.cols()) throw ArgumentError("dataset: layout does not match rows");
  for (Label y : labels) {
    if (y >= classes) throw ArgumentError("dataset: label out of range");
  }
  for (double v : inputs.data()) {
    if (!(v >= low && v <= high)) throw ArgumentError("dataset: input outside declared bounds");
  }
}

Dataset Dataset::head(std::size_t n) const {
  std::vector<std::size_t> idx(std::min(n, size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return subset(idx);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out = *this;
  out.inputs = gather_rows(inputs, indices);
  out.labels.resize(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out.labels[i] = labels.at(indices[i]);
  return out;
}

SyntheticKind synthetic_kind_from_string(std::string_view text) {
  if (text == "blobs") return SyntheticKind::kBlobs;
  if (text == "rings") return SyntheticKind::kRings;
  throw ArgumentError("unknown synthetic dataset '" + std::string(text) + "' (expected blobs or rings)");
}

Dataset make_synthetic(SyntheticKind kind, std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("make_synthetic: need at least two samples");
  if (!(noise >= 0.0)) throw ArgumentError("make_synthetic: noise must be >= 0");
  constexpr double kBound = 2.0;
  Dataset data;
  data.classes = 2;
  data.width = 2;
  data.low = -kBound;
  data.high = kBound;
  data.provenance = kind == SyntheticKind::kBlobs ? "synthetic-blobs" : "synthetic-rings";
  data.inputs = Tensor(Shape{n, 2});
  data.labels.resize(n);
  Rng rng = make_rng({seed, tag(Stream::kData), static_cast<std::uint64_t>(kind)});
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < n; ++i) {
    const Label y = i % 2;
    double px = 0.0, py = 0.0;
    if (kind == SyntheticKind::kBlobs) {
      px = (y == 0 ? -0.5 : 0.5) + noise * gauss(rng);
      py = noise * gauss(rng);
    } else {
      const double radius = (y == 0 ? 0.5 : 1.0) + noise * gauss(rng);
      const double theta = angle(rng);
      px = radius * std::cos(theta);
      py = radius * std::sin(theta);
    }
    data.inputs.at(i, 0) = std::clamp(px, -kBound, kBound);
    data.inputs.at(i, 1) = std::clamp(py, -kBound, kBound);
    data.labels[i] = y;
  }
  return data;
}

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::uint32_t u32() {
    require(4, "header field");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes_[offset_++]);
    return v;
  }

  std::span<const unsigned char> take(std::size_t n, const char* what) {
    require(n, what);
    auto out = std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes_.data()) + offset_, n);
    offset_ += n;
    return out;
  }

  std::size_t offset() const { return offset_; }
  const std::string& name() const { return name_; }

 private:
  void require(std::size_t n, const char* what) {
    if (bytes_.size() - offset_ < n) {
      throw FormatError(name_ + ": truncated " + what + ": expected " + std::to_string(offset_ + n) +
                            " bytes, file has " + std::to_string(bytes_.size()),
                        bytes_.size());
    }
  }

  std::string bytes_;
  std::string name_;
  std::size_t offset_ = 0;
};

std::string read_all(const std::filesystem::path& path) {
  return read_file(path);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xff));
}

}  // namespace

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  ByteReader img(read_all(images), images.string());
  ByteReader lab(read_all(labels), labels.string());

  if (const auto magic = img.u32(); magic != kImageMagic) {
    throw FormatError(img.name() + ": bad image magic " + std::to_string(magic), 0);
  }
  const std::size_t count = img.u32();
  const std::size_t rows = img.u32();
  const std::size_t cols = img.u32();
  if (const auto magic = lab.u32(); magic != kLabelMagic) {
    throw FormatError(lab.name() + ": bad label magic " + std::to_string(magic), 0);
  }
  const std::size_t label_count = lab.u32();
  if (label_count != count) {
    throw FormatError("image count " + std::to_string(count) + " does not match label count " +
                          std::to_string(label_count),
                      lab.offset() - 4);
  }

  Dataset data;
  data.classes = 10;
  data.channels = 1;
  data.height = rows;
  data.width = cols;
  data.low = 0.0;
  data.high = 1.0;
  data.provenance = "mnist-idx";
  const auto pixels = img.take(count * rows * cols, "pixel data");
  const auto tags = lab.take(count, "label data");
  std::vector<double> values(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) values[i] = static_cast<double>(pixels[i]) / 255.0;
  data.inputs = Tensor(Shape{count, rows * cols}, std::move(values));
  data.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (tags[i] > 9) throw FormatError(lab.name() + ": label " + std::to_string(tags[i]) + " > 9", 8 + i);
    data.labels[i] = tags[i];
  }
  return data;
}

void write_mnist_idx(const Dataset& data, const std::filesystem::path& images,
                     const std::filesystem::path& labels) {
  std::string img;
  put_u32(img, kImageMagic);
  put_u32(img, static_cast<std::uint32_t>(data.size()));
  put_u32(img, static_cast<std::uint32_t>(data.height));
  put_u32(img, static_cast<std::uint32_t>(data.width * data.channels));
  for (double v : data.inputs.data()) {
    const double unit = (v - data.low) / (data.high - data.low);
    img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0))));
  }
  std::string lab;
  put_u32(lab, kLabelMagic);
  put_u32(lab, static_cast<std::uint32_t>(data.size()));
  for (Label y : data.labels) lab.push_back(static_cast<char>(static_cast<unsigned char>(y)));
  write_file_atomic(images, img);
  write_file_atomic(labels, lab);
}

}  // namespace bt
