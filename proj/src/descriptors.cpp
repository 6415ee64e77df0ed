#include "zs6d/descriptors.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace zs6d {

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

std::size_t RenderOutput::foreground_count() const {
  return static_cast<std::size_t>(
      std::count_if(mask.data().begin(), mask.data().end(), [](unsigned char m) { return m != 0; }));
}

int DescriptorGrid::valid_count() const {
  return static_cast<int>(std::count_if(valid.begin(), valid.end(), [](auto v) { return v != 0; }));
}

void DescriptorGrid::normalize() {
  for (int p = 0; p < patch_count(); ++p) {
    auto r = row(p);
    if (!is_valid(p)) {
      std::fill(r.begin(), r.end(), 0.0f);
      continue;
    }
    double sq = 0.0;
    for (float v : r) sq += static_cast<double>(v) * v;
    if (sq <= 0.0) {
      valid[static_cast<std::size_t>(p)] = 0;
      continue;
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (float &v : r) v = static_cast<float>(v * inv);
  }
}

GlobalDescriptor pool_global(const DescriptorGrid &grid) {
  GlobalDescriptor g;
  g.vec.assign(static_cast<std::size_t>(grid.dim), 0.0);
  int n = 0;
  for (int p = 0; p < grid.patch_count(); ++p) {
    if (!grid.is_valid(p)) continue;
    const auto r = grid.row(p);
    for (int k = 0; k < grid.dim; ++k) g.vec[static_cast<std::size_t>(k)] += r[static_cast<std::size_t>(k)];
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::NoForeground, "descriptor grid has no valid patch");
  double sq = 0.0;
  for (double &v : g.vec) {
    v /= n;
    sq += v * v;
  }
  if (sq <= 0.0) throw Error(ErrorCode::NoForeground, "pooled descriptor has zero norm");
  const double inv = 1.0 / std::sqrt(sq);
  for (double &v : g.vec) v *= inv;
  return g;
}

// ---------------------------------------------------------------------------
// Tensor archive

namespace {

template <typename T>
void put(std::vector<std::uint8_t> &out, T value) {
  const auto *p = reinterpret_cast<const std::uint8_t *>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const TensorFile &tensor) {
  const std::size_t n = tensor.element_count();
  const bool f32 = tensor.dtype == TensorDType::Float32;
  if ((f32 && tensor.f32.size() != n) || (!f32 && tensor.u16.size() != n)) {
    throw Error(ErrorCode::DimMismatch, "payload size does not match rows·cols·dim");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kTensorHeaderBytes + n * (f32 ? 4 : 2));
  out.insert(out.end(), {'Z', 'S', '6', 'D'});
  put<std::uint16_t>(out, kTensorVersion);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.dtype));
  put<std::uint8_t>(out, 0);
  put<std::uint32_t>(out, tensor.rows);
  put<std::uint32_t>(out, tensor.cols);
  put<std::uint32_t>(out, tensor.dim);
  if (f32) {
    for (float v : tensor.f32) {
      if (!std::isfinite(v)) throw Error(ErrorCode::OutOfBounds, "non-finite tensor value");
      put<float>(out, v);
    }
  } else {
    for (auto v : tensor.u16) put<std::uint16_t>(out, v);
  }
  if (tensor.metadata) {
    const std::string text = tensor.metadata->dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
  }
  return out;
}

TensorFile decode_tensor(std::span<const std::uint8_t> bytes) {
  auto need = [&](std::size_t end, const char *field) {
    if (bytes.size() < end) {
      throw Error(ErrorCode::TruncatedPayload, std::string("file ends inside field '") + field + "'");
    }
  };
  need(4, "magic");
  if (std::memcmp(bytes.data(), "ZS6D", 4) != 0) {
    throw Error(ErrorCode::BadMagic, "field 'magic' is '" +
                                         std::string(reinterpret_cast<const char *>(bytes.data()), 4) +
                                         "', expected 'ZS6D'");
  }
  need(6, "version");
  const auto version = get<std::uint16_t>(bytes, 4);
  if (version != kTensorVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "field 'version' is " + std::to_string(version));
  }
  need(7, "dtype");
  const auto dtype = get<std::uint8_t>(bytes, 6);
  if (dtype > 1) throw Error(ErrorCode::ParseError, "field 'dtype' is " + std::to_string(dtype));
  need(8, "reserved");
  need(12, "rows");
  need(16, "cols");
  need(20, "dim");

  TensorFile t;
  t.dtype = static_cast<TensorDType>(dtype);
  t.rows = get<std::uint32_t>(bytes, 8);
  t.cols = get<std::uint32_t>(bytes, 12);
  t.dim = get<std::uint32_t>(bytes, 16);
  const std::size_t n = t.element_count();
  const std::size_t elem = t.dtype == TensorDType::Float32 ? 4 : 2;
  const std::size_t payload_end = kTensorHeaderBytes + n * elem;
  need(payload_end, "payload");
  if (t.dtype == TensorDType::Float32) {
    t.f32.resize(n);
    std::memcpy(t.f32.data(), bytes.data() + kTensorHeaderBytes, n * elem);
  } else {
    t.u16.resize(n);
    std::memcpy(t.u16.data(), bytes.data() + kTensorHeaderBytes, n * elem);
  }
  if (bytes.size() > payload_end) {
    need(payload_end + 4, "metadata_length");
    const auto len = get<std::uint32_t>(bytes, payload_end);
    need(payload_end + 4 + len, "metadata");
    if (bytes.size() != payload_end + 4 + len) {
      throw Error(ErrorCode::ParseError, "unexpected bytes after metadata block");
    }
    const auto *begin = reinterpret_cast<const char *>(bytes.data() + payload_end + 4);
    try {
      t.metadata = nlohmann::json::parse(begin, begin + len);
    } catch (const nlohmann::json::exception &e) {
      throw Error(ErrorCode::ParseError, std::string("field 'metadata': ") + e.what());
    }
  }
  return t;
}

void write_tensor_file(const TensorFile &tensor, const std::filesystem::path &path) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const Error &e) {
    throw Error(e.code(), std::string(e.what()) + " in " + path.string());
  }
}

std::filesystem::path validity_path_for(const std::filesystem::path &path) {
  auto out = path;
  out.replace_extension(".valid" + path.extension().string());
  return out;
}

void write_descriptor_grid(const DescriptorGrid &grid, const std::filesystem::path &path,
                           const nlohmann::json &extra_metadata) {
  TensorFile t;
  t.dtype = TensorDType::Float32;
  t.rows = static_cast<std::uint32_t>(grid.rows);
  t.cols = static_cast<std::uint32_t>(grid.cols);
  t.dim = static_cast<std::uint32_t>(grid.dim);
  t.f32 = grid.data;
  nlohmann::json meta = extra_metadata;
  meta["patch_size"] = grid.patch_size;
  meta["stride"] = grid.stride;
  meta["layer_tag"] = grid.layer_tag;
  t.metadata = std::move(meta);
  write_tensor_file(t, path);
}

DescriptorGrid read_descriptor_grid(const std::filesystem::path &path, nlohmann::json *metadata_out) {
  TensorFile t = read_tensor_file(path);
  if (t.dtype != TensorDType::Float32) {
    throw Error(ErrorCode::ParseError, path.string() + ": descriptor payload must be float32");
  }
  if (t.rows == 0 || t.cols == 0 || t.dim == 0) {
    throw Error(ErrorCode::ParseError, path.string() + ": empty descriptor grid");
  }
  DescriptorGrid g(static_cast<int>(t.rows), static_cast<int>(t.cols), static_cast<int>(t.dim));
  g.data = std::move(t.f32);
  if (t.metadata) {
    const auto &m = *t.metadata;
    g.patch_size = m.value("patch_size", g.patch_size);
    g.stride = m.value("stride", g.stride);
    g.layer_tag = m.value("layer_tag", std::string{});
    if (metadata_out) *metadata_out = m;
  } else if (metadata_out) {
    *metadata_out = nlohmann::json::object();
  }

  const auto vpath = validity_path_for(path);
  if (std::filesystem::exists(vpath)) {
    TensorFile v = read_tensor_file(vpath);
    if (v.dtype != TensorDType::UInt16 || v.rows != t.rows || v.cols != t.cols || v.dim != 1) {
      throw Error(ErrorCode::DimMismatch, vpath.string() + " does not match " + path.string());
    }
    for (std::size_t i = 0; i < v.u16.size(); ++i) g.valid[i] = v.u16[i] != 0 ? 1 : 0;
  } else {
    for (int p = 0; p < g.patch_count(); ++p) {
      const auto r = g.row(p);
      g.valid[static_cast<std::size_t>(p)] = std::any_of(r.begin(), r.end(), [](float x) { return x != 0.0f; });
    }
  }
  return g;
}

void write_global_descriptor(const GlobalDescriptor &g, const std::filesystem::path &path) {
  TensorFile t;
  t.rows = 1;
  t.cols = 1;
  t.dim = static_cast<std::uint32_t>(g.vec.size());
  t.f32.assign(g.vec.begin(), g.vec.end());
  write_tensor_file(t, path);
}

GlobalDescriptor read_global_descriptor(const std::filesystem::path &path) {
  TensorFile t = read_tensor_file(path);
  if (t.dtype != TensorDType::Float32 || t.rows * t.cols != 1 || t.dim == 0) {
    throw Error(ErrorCode::ParseError, path.string() + ": global descriptor must be a 1×1×d float32 tensor");
  }
  GlobalDescriptor g;
  g.vec.assign(t.f32.begin(), t.f32.end());
  double sq = 0.0;
  for (double v : g.vec) sq += v * v;
  if (sq <= 0.0) throw Error(ErrorCode::NoForeground, path.string() + ": zero global descriptor");
  const double inv = 1.0 / std::sqrt(sq);
  for (double &v : g.vec) v *= inv;
  return g;
}

// ---------------------------------------------------------------------------
// Crops

std::optional<BBox> mask_bbox(const Mask &mask) {
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(x, y)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) return std::nullopt;
  return BBox{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 - x0 + 1),
              static_cast<double>(y1 - y0 + 1)};
}

CropTransform compute_crop(const BBox &bbox, double pad, int out_size) {
  if (!(bbox.w > 0.0) || !(bbox.h > 0.0)) throw Error(ErrorCode::EmptyBbox, "bbox has zero area");
  if (!(pad >= 1.0)) throw Error(ErrorCode::ConfigError, "crop pad must be >= 1");
  if (out_size < 32) throw Error(ErrorCode::ConfigError, "crop out_size must be >= 32");
  const double side = pad * std::max(bbox.w, bbox.h);
  const Vec2 c = bbox.center();
  return {out_size / side, c.x() - 0.5 * side, c.y() - 0.5 * side};
}

RenderOutput crop_render(const RenderOutput &render, const CropTransform &crop, int out_size) {
  RenderOutput out;
  out.coord_map = resample_crop(render.coord_map, crop, out_size, Interpolation::Nearest, kBackgroundNocs);
  out.depth = resample_crop(render.depth, crop, out_size, Interpolation::Nearest, 0.0f);
  out.mask = resample_crop(render.mask, crop, out_size, Interpolation::Nearest, static_cast<unsigned char>(0));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic descriptors

std::vector<double> nocs_positional_encoding(const NocsValue &c, int dim) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(dim));
  const double channels[3] = {c.r, c.g, c.b};
  for (int f = 0; static_cast<int>(out.size()) < dim; ++f) {
    const double w = std::numbers::pi * std::ldexp(1.0, f);
    for (double v : channels) {
      if (static_cast<int>(out.size()) < dim) out.push_back(std::sin(w * v));
      if (static_cast<int>(out.size()) < dim) out.push_back(std::cos(w * v));
    }
  }
  return out;
}

namespace {

DescriptorGrid empty_grid_for(const RenderOutput &render, int patch_size, int stride, int dim) {
  if (patch_size < 1 || stride < 1 || render.width() < patch_size || render.height() < patch_size) {
    throw Error(ErrorCode::ConfigError, "patch geometry does not fit the render");
  }
  DescriptorGrid g((render.height() - patch_size) / stride + 1,
                   (render.width() - patch_size) / stride + 1, dim);
  g.patch_size = patch_size;
  g.stride = stride;
  return g;
}

}  // namespace

DescriptorGrid oracle_descriptors(const RenderOutput &render, int patch_size, int stride, int dim) {
  if (dim < 6) throw Error(ErrorCode::ConfigError, "oracle descriptors need dim >= 6");
  DescriptorGrid g = empty_grid_for(render, patch_size, stride, dim);
  g.layer_tag = "oracle";
  for (int p = 0; p < g.patch_count(); ++p) {
    const Vec2 c = g.patch_center(p);
    const int x = static_cast<int>(c.x());
    const int y = static_cast<int>(c.y());
    if (!render.mask(x, y)) continue;
    const auto enc = nocs_positional_encoding(render.coord_map(x, y), dim);
    auto r = g.row(p);
    for (int k = 0; k < dim; ++k) r[static_cast<std::size_t>(k)] = static_cast<float>(enc[static_cast<std::size_t>(k)]);
    g.valid[static_cast<std::size_t>(p)] = 1;
  }
  g.normalize();
  return g;
}

DescriptorGrid random_descriptors(const RenderOutput &render, int patch_size, int stride, int dim,
                                  std::uint64_t seed) {
  DescriptorGrid g = empty_grid_for(render, patch_size, stride, dim);
  g.layer_tag = "random";
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int p = 0; p < g.patch_count(); ++p) {
    const Vec2 c = g.patch_center(p);
    if (!render.mask(static_cast<int>(c.x()), static_cast<int>(c.y()))) continue;
    for (float &v : g.row(p)) v = static_cast<float>(normal(rng));
    g.valid[static_cast<std::size_t>(p)] = 1;
  }
  g.normalize();
  return g;
}

}  // namespace zs6d
