#pragma once

// MNIST-style IDX ingestion and preprocessing to the 32x32 [-1, 1] signal
// domain used by every solver.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "s3pr/ndcore.hpp"

namespace s3pr {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kRawSide = 28;

/// Images decoded from an IDX3 file, one byte per pixel.
struct RawImages {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::vector<std::uint8_t>> images;
};

enum class Split { train, test };

struct ImageDataset {
  std::string name;  // "mnist", "fashion", or a free-form label
  Split split = Split::test;
  std::vector<RealImage> images;
};

struct SourceSet {
  std::vector<RealImage> sources;
  std::vector<std::size_t> indices;

  std::size_t count() const { return sources.size(); }
};

/// Reads an IDX3 image file (magic 0x00000803). Files ending in ".gz" or
/// starting with the gzip magic are decompressed transparently.
RawImages load_idx(const std::filesystem::path& path);
RawImages parse_idx(const std::vector<std::uint8_t>& bytes);

/// Zero-pads a 28x28 byte image by 2 pixels per side and maps [0,255] to [-1,1].
RealImage preprocess(const std::vector<std::uint8_t>& raw, std::size_t rows = kRawSide,
                     std::size_t cols = kRawSide);

ImageDataset make_dataset(const RawImages& raw, std::string name, Split split);

/// Conventional file name inside a data directory, e.g. t10k-images-idx3-ubyte.
/// Both the plain and ".gz" variants are tried.
std::filesystem::path locate_idx(const std::filesystem::path& data_dir, Split split);

/// Draws count distinct images without replacement.
SourceSet sample_mixture(const ImageDataset& dataset, std::size_t count, RngStream& stream);

}  // namespace s3pr
