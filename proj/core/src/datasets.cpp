#include "s3pr/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace s3pr {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_idx: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& compressed) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw Error("load_idx: zlib init failed");
  zs.next_in = const_cast<Bytef*>(compressed.data());
  zs.avail_in = static_cast<uInt>(compressed.size());
  std::vector<std::uint8_t> out;
  std::uint8_t chunk[1 << 16];
  int status = Z_OK;
  while (status != Z_STREAM_END) {
    zs.next_out = chunk;
    zs.avail_out = sizeof(chunk);
    status = inflate(&zs, Z_NO_FLUSH);
    if (status != Z_OK && status != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error("load_idx: corrupt gzip stream");
    }
    out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
    if (status == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error("load_idx: truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset) {
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

}  // namespace

RawImages parse_idx(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16) throw Error("load_idx: truncated header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) throw Error("load_idx: bad magic");
  const std::size_t count = read_be32(bytes, 4);
  RawImages raw;
  raw.rows = read_be32(bytes, 8);
  raw.cols = read_be32(bytes, 12);
  if (raw.rows == 0 || raw.cols == 0) throw Error("load_idx: dimension mismatch (zero-sized images)");
  const std::size_t pixels = raw.rows * raw.cols;
  if (bytes.size() - 16 < count * pixels) throw Error("load_idx: truncated file");
  if (bytes.size() - 16 != count * pixels) throw Error("load_idx: dimension mismatch (trailing bytes)");
  raw.images.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto first = bytes.begin() + static_cast<std::ptrdiff_t>(16 + i * pixels);
    raw.images.emplace_back(first, first + static_cast<std::ptrdiff_t>(pixels));
  }
  return raw;
}

RawImages load_idx(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) bytes = gunzip(bytes);
  return parse_idx(bytes);
}

RealImage preprocess(const std::vector<std::uint8_t>& raw, std::size_t rows, std::size_t cols) {
  if (rows != kRawSide || cols != kRawSide || raw.size() != rows * cols)
    throw Error("preprocess: expected a 28x28 image");
  constexpr std::size_t pad = (kImageSide - kRawSide) / 2;
  RealImage out(kImageSide, kImageSide, -1.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(r + pad, c + pad) = raw[r * cols + c] / 127.5 - 1.0;
  return out;
}

ImageDataset make_dataset(const RawImages& raw, std::string name, Split split) {
  ImageDataset ds{std::move(name), split, {}};
  ds.images.reserve(raw.images.size());
  for (const auto& img : raw.images) ds.images.push_back(preprocess(img, raw.rows, raw.cols));
  return ds;
}

std::filesystem::path locate_idx(const std::filesystem::path& data_dir, Split split) {
  const std::string stem = split == Split::train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
  for (const std::string& candidate : {stem, stem + ".gz", std::string(split == Split::train ? "train" : "t10k") + "-images.idx3-ubyte"}) {
    auto p = data_dir / candidate;
    if (std::filesystem::exists(p)) return p;
  }
  throw Error("no IDX image file for split '" + std::string(split == Split::train ? "train" : "test") +
              "' in " + data_dir.string());
}

SourceSet sample_mixture(const ImageDataset& dataset, std::size_t count, RngStream& stream) {
  if (count == 0) throw Error("sample_mixture: need at least one source");
  if (dataset.images.empty()) throw Error("sample_mixture: empty dataset");
  if (count > dataset.images.size()) throw Error("sample_mixture: more sources requested than images available");
  // Partial Fisher-Yates over the index range.
  std::vector<std::size_t> order(dataset.images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SourceSet set;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(stream.below(order.size() - i));
    std::swap(order[i], order[j]);
    set.indices.push_back(order[i]);
    set.sources.push_back(dataset.images[order[i]]);
  }
  return set;
}

}  // namespace s3pr
