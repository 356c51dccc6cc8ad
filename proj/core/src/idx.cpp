#include "mumoe/idx.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace mumoe {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::filesystem::path& path) {
  if (b.size() < at + 4) throw FormatError(path.string() + ": truncated header");
  return (std::uint32_t(b[at]) << 24) | (std::uint32_t(b[at + 1]) << 16) | (std::uint32_t(b[at + 2]) << 8) |
         std::uint32_t(b[at + 3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(bytes, 4);
}

std::string hex(std::uint32_t v) {
  static const char digits[] = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xf];
  return s;
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::uint32_t magic = be32(bytes, 0, path);
  if (magic != kImageMagic) throw FormatError(path.string() + ": bad image magic " + hex(magic));
  const std::size_t count = be32(bytes, 4, path), rows = be32(bytes, 8, path), cols = be32(bytes, 12, path);
  const std::size_t pixels = count * rows * cols;
  if (bytes.size() != 16 + pixels)
    throw FormatError(path.string() + ": expected " + std::to_string(pixels) + " pixel bytes, found " +
                      std::to_string(bytes.size() - 16));
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(path.string() + ": empty image file");
  IdxImages img;
  img.rows = rows;
  img.cols = cols;
  img.pixels = Tensor<double>({count, rows * cols});
  for (std::size_t k = 0; k < pixels; ++k) img.pixels[k] = double(bytes[16 + k]) / 255.0;
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::uint32_t magic = be32(bytes, 0, path);
  if (magic != kLabelMagic) throw FormatError(path.string() + ": bad label magic " + hex(magic));
  const std::size_t count = be32(bytes, 4, path);
  if (bytes.size() != 8 + count)
    throw FormatError(path.string() + ": expected " + std::to_string(count) + " label bytes, found " +
                      std::to_string(bytes.size() - 8));
  return {bytes.begin() + 8, bytes.end()};
}

void write_idx_images(const std::filesystem::path& path, std::size_t count, std::size_t rows, std::size_t cols,
                      const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != count * rows * cols) throw ShapeError("pixel count does not match image dimensions");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  put_be32(out, kImageMagic);
  put_be32(out, std::uint32_t(count));
  put_be32(out, std::uint32_t(rows));
  put_be32(out, std::uint32_t(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  put_be32(out, kLabelMagic);
  put_be32(out, std::uint32_t(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), std::streamsize(labels.size()));
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const std::filesystem::path& tags) {
  IdxImages img = read_idx_images(images);
  const auto lab = read_idx_labels(labels);
  if (lab.size() != img.pixels.rows())
    throw FormatError("image count " + std::to_string(img.pixels.rows()) + " differs from label count " +
                      std::to_string(lab.size()));
  Dataset data;
  data.inputs = std::move(img.pixels);
  for (auto y : lab) data.labels.push_back(int(y));
  if (!tags.empty()) {
    const auto t = read_idx_labels(tags);
    if (t.size() != lab.size()) throw FormatError("tag count differs from label count");
    for (auto v : t) data.tags.push_back(int(v));
  }
  data.test.assign(lab.size(), 0);
  data.classes = std::size_t(*std::max_element(lab.begin(), lab.end())) + 1;
  return data;
}

Dataset load_idx_dir(const std::filesystem::path& dir) {
  auto part = [&](const std::string& split) {
    const auto tags = dir / (split + "-tags.idx");
    return load_idx(dir / (split + "-images.idx"), dir / (split + "-labels.idx"),
                    std::filesystem::exists(tags) ? tags : std::filesystem::path{});
  };
  Dataset train = part("train");
  Dataset test = part("test");
  if (train.features() != test.features()) throw FormatError("train and test images differ in size");
  if (train.has_tags() != test.has_tags()) throw FormatError("tags present for only one split");
  Dataset data;
  data.classes = std::max(train.classes, test.classes);
  data.inputs = Tensor<double>({train.size() + test.size(), train.features()});
  std::copy(train.inputs.data().begin(), train.inputs.data().end(), data.inputs.data().begin());
  std::copy(test.inputs.data().begin(), test.inputs.data().end(),
            data.inputs.data().begin() + std::ptrdiff_t(train.inputs.size()));
  data.labels = train.labels;
  data.labels.insert(data.labels.end(), test.labels.begin(), test.labels.end());
  data.tags = train.tags;
  data.tags.insert(data.tags.end(), test.tags.begin(), test.tags.end());
  data.test.assign(train.size(), 0);
  data.test.resize(data.size(), 1);
  return data;
}

void save_idx_dir(const Dataset& data, const std::filesystem::path& dir) {
  data.validate();
  if (data.classes > 256) throw UsageError("IDX labels hold at most 256 classes");
  std::filesystem::create_directories(dir);
  const std::size_t f = data.features();
  std::vector<double> lo(f, 0.0), hi(f, 0.0);
  for (std::size_t i = 0; i < f; ++i) {
    lo[i] = hi[i] = data.inputs(0, i);
    for (std::size_t r = 1; r < data.size(); ++r) {
      lo[i] = std::min(lo[i], data.inputs(r, i));
      hi[i] = std::max(hi[i], data.inputs(r, i));
    }
  }
  for (bool is_test : {false, true}) {
    const auto idx = data.split_rows(is_test);
    const std::string split = is_test ? "test" : "train";
    std::vector<std::uint8_t> pixels, labels, tags;
    for (auto r : idx) {
      for (std::size_t i = 0; i < f; ++i) {
        const double span = hi[i] - lo[i];
        const double unit = span > 0.0 ? (data.inputs(r, i) - lo[i]) / span : 0.0;
        pixels.push_back(std::uint8_t(std::lround(unit * 255.0)));
      }
      labels.push_back(std::uint8_t(data.labels[r]));
      if (data.has_tags()) {
        if (data.tags[r] < 0 || data.tags[r] > 255) throw UsageError("IDX tags must lie in [0, 255]");
        tags.push_back(std::uint8_t(data.tags[r]));
      }
    }
    if (idx.empty()) throw UsageError("cannot write an empty " + split + " split");
    write_idx_images(dir / (split + "-images.idx"), idx.size(), 1, f, pixels);
    write_idx_labels(dir / (split + "-labels.idx"), labels);
    if (data.has_tags()) write_idx_labels(dir / (split + "-tags.idx"), tags);
  }
}

}  // namespace mumoe
