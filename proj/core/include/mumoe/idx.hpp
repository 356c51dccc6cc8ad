#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mumoe/dataset.hpp"

namespace mumoe {

struct IdxImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Tensor<double> pixels;  // count x (rows * cols), scaled to [0, 1]
};

/// Big-endian IDX containers: images carry magic 0x00000803 followed by
/// count, rows, cols and one byte per pixel; labels carry 0x00000801,
/// count and one byte per label. FormatError on bad magic or truncation.
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

void write_idx_images(const std::filesystem::path& path, std::size_t count, std::size_t rows, std::size_t cols,
                      const std::vector<std::uint8_t>& pixels);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// Pairs an image file with its label file (and optionally a tag file in
/// label format). FormatError when the counts differ.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const std::filesystem::path& tags = {});

/// Dataset directory: {train,test}-images.idx and {train,test}-labels.idx,
/// plus optional {train,test}-tags.idx. The class count is one more than
/// the largest label seen.
Dataset load_idx_dir(const std::filesystem::path& dir);

/// Writes a dataset in the directory layout above. Features are min-max
/// scaled per column to bytes, so a reload sees them in [0, 1]; rows are
/// stored as 1 x features images.
void save_idx_dir(const Dataset& data, const std::filesystem::path& dir);

}  // namespace mumoe
