#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "zs6d/error.hpp"
#include "zs6d/geometry.hpp"
#include "zs6d/image.hpp"
#include "zs6d/render_output.hpp"

namespace zs6d {

// ---------------------------------------------------------------------------
// Descriptor containers

/// rows×cols grid of dim-dimensional patch descriptors. Valid rows are unit
/// length after normalize(); invalid rows are zero.
struct DescriptorGrid {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<float> data;
  std::vector<std::uint8_t> valid;
  int patch_size = 8;
  int stride = 8;
  std::string layer_tag;

  DescriptorGrid() = default;
  DescriptorGrid(int rows_, int cols_, int dim_)
      : rows(rows_), cols(cols_), dim(dim_),
        data(static_cast<std::size_t>(rows_) * cols_ * dim_, 0.0f),
        valid(static_cast<std::size_t>(rows_) * cols_, 0) {}

  int patch_count() const { return rows * cols; }
  std::span<float> row(int patch) {
    return {data.data() + static_cast<std::size_t>(patch) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<const float> row(int patch) const {
    return {data.data() + static_cast<std::size_t>(patch) * dim, static_cast<std::size_t>(dim)};
  }
  bool is_valid(int patch) const { return valid[static_cast<std::size_t>(patch)] != 0; }
  int valid_count() const;

  /// Center of patch (row i, col j) in crop pixels.
  Vec2 patch_center(int patch) const {
    const int i = patch / cols;
    const int j = patch % cols;
    return {static_cast<double>(j * stride + patch_size / 2),
            static_cast<double>(i * stride + patch_size / 2)};
  }

  /// L2-normalizes valid rows and zeroes invalid ones. Valid rows with zero
  /// norm become invalid.
  void normalize();

  friend bool operator==(const DescriptorGrid &, const DescriptorGrid &) = default;
};

struct GlobalDescriptor {
  std::vector<double> vec;
  int dim() const { return static_cast<int>(vec.size()); }
};

/// Foreground-masked mean of the valid patches, L2-normalized.
/// Throws NoForeground when no patch is valid.
GlobalDescriptor pool_global(const DescriptorGrid &grid);

// ---------------------------------------------------------------------------
// Tensor archive

enum class TensorDType : std::uint8_t { Float32 = 0, UInt16 = 1 };

inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::size_t kTensorHeaderBytes = 20;

/// Raw contents of a ZS6D tensor file. Exactly one payload vector is used,
/// matching dtype.
struct TensorFile {
  TensorDType dtype = TensorDType::Float32;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t dim = 0;
  std::vector<float> f32;
  std::vector<std::uint16_t> u16;
  std::optional<nlohmann::json> metadata;

  std::size_t element_count() const { return std::size_t{rows} * cols * dim; }
};

std::vector<std::uint8_t> encode_tensor(const TensorFile &tensor);
/// Throws BadMagic, UnsupportedVersion, TruncatedPayload (naming the field)
/// or ParseError.
TensorFile decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor_file(const TensorFile &tensor, const std::filesystem::path &path);
TensorFile read_tensor_file(const std::filesystem::path &path);

/// Sibling file holding a dim-1 uint16 validity mask for a descriptor file:
/// "view_3.local.zst6" → "view_3.local.valid.zst6".
std::filesystem::path validity_path_for(const std::filesystem::path &path);

/// Float32 payload with patch geometry and layer tag in the metadata block;
/// `extra_metadata` keys are merged in. Validity is not written separately
/// because invalid rows are exactly the zero rows.
void write_descriptor_grid(const DescriptorGrid &grid, const std::filesystem::path &path,
                           const nlohmann::json &extra_metadata = nlohmann::json::object());
/// Reads a grid written by write_descriptor_grid or an external exporter.
/// Validity comes from the sibling validity file when present, else from
/// non-zero rows.
DescriptorGrid read_descriptor_grid(const std::filesystem::path &path,
                                    nlohmann::json *metadata_out = nullptr);

void write_global_descriptor(const GlobalDescriptor &g, const std::filesystem::path &path);
GlobalDescriptor read_global_descriptor(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Crops

/// Axis-aligned box in pixels; [x, x+w) × [y, y+h).
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
  Vec2 center() const { return {x + 0.5 * w, y + 0.5 * h}; }
};

/// Tight box around the non-zero pixels of `mask`, or nullopt when empty.
std::optional<BBox> mask_bbox(const Mask &mask);

/// Maps between a square resized crop and the original image:
/// crop = (orig − offset)·scale.
struct CropTransform {
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;

  Vec2 to_crop(const Vec2 &p) const { return {(p.x() - offset_x) * scale, (p.y() - offset_y) * scale}; }
  Vec2 to_original(const Vec2 &q) const { return {q.x() / scale + offset_x, q.y() / scale + offset_y}; }

  /// Intrinsics of a virtual camera that renders the crop directly.
  CameraIntrinsics apply_to(const CameraIntrinsics &K, int out_size) const {
    return {K.fx * scale, K.fy * scale, (K.cx - offset_x) * scale, (K.cy - offset_y) * scale,
            out_size, out_size};
  }

  friend bool operator==(const CropTransform &, const CropTransform &) = default;
};

/// Square region centered on the box with side pad·max(w, h), resized to
/// out_size. Throws EmptyBbox for zero area, ConfigError for pad < 1 or
/// out_size < 32.
CropTransform compute_crop(const BBox &bbox, double pad, int out_size);

enum class Interpolation { Nearest, Bilinear };

/// Resamples `image` into the crop. Pixels that fall outside the image take
/// `fill`. Pixel centers sit on integer coordinates.
template <typename T>
Image<T> resample_crop(const Image<T> &image, const CropTransform &crop, int out_size,
                       Interpolation interp, const T &fill = T{}) {
  Image<T> out(out_size, out_size, fill);
  for (int v = 0; v < out_size; ++v) {
    for (int u = 0; u < out_size; ++u) {
      const Vec2 p = crop.to_original({static_cast<double>(u), static_cast<double>(v)});
      if (interp == Interpolation::Nearest) {
        const int x = static_cast<int>(std::lround(p.x()));
        const int y = static_cast<int>(std::lround(p.y()));
        if (image.contains(x, y)) out(u, v) = image(x, y);
        continue;
      }
      if constexpr (std::is_arithmetic_v<T>) {
        const int x0 = static_cast<int>(std::floor(p.x()));
        const int y0 = static_cast<int>(std::floor(p.y()));
        const double ax = p.x() - x0;
        const double ay = p.y() - y0;
        double acc = 0.0;
        bool any = false;
        const double w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        for (int k = 0; k < 4; ++k) {
          if (image.contains(xs[k], ys[k])) {
            acc += w[k] * static_cast<double>(image(xs[k], ys[k]));
            any = true;
          }
        }
        if (any) out(u, v) = static_cast<T>(acc);
      } else {
        throw Error(ErrorCode::ConfigError, "bilinear resampling needs an arithmetic pixel type");
      }
    }
  }
  return out;
}

template <typename T>
std::pair<Image<T>, CropTransform> crop_and_resize(const Image<T> &image, const BBox &bbox,
                                                   double pad, int out_size, Interpolation interp,
                                                   const T &fill = T{}) {
  const CropTransform crop = compute_crop(bbox, pad, out_size);
  if (bbox.x >= image.width() || bbox.y >= image.height() || bbox.x + bbox.w <= 0 ||
      bbox.y + bbox.h <= 0) {
    throw Error(ErrorCode::OutOfBounds, "bbox does not intersect the image");
  }
  return {resample_crop(image, crop, out_size, interp, fill), crop};
}

/// Crops a full render: nearest resampling for coordinates, depth and mask.
RenderOutput crop_render(const RenderOutput &render, const CropTransform &crop, int out_size);

// ---------------------------------------------------------------------------
// Synthetic descriptors

/// Sinusoidal encoding of a NOCS value: for frequency 2^f (f = 0, 1, ...)
/// and channel r, g, b in turn, the pair sin(π·2^f·v), cos(π·2^f·v), until
/// `dim` entries are filled. Not normalized.
std::vector<double> nocs_positional_encoding(const NocsValue &c, int dim);

/// Patch descriptors that depend only on the NOCS value at each patch center,
/// so one surface point yields the same descriptor from every viewpoint.
/// Patches whose center pixel is background are invalid.
DescriptorGrid oracle_descriptors(const RenderOutput &render, int patch_size, int stride, int dim);

/// Negative control: random unit vectors on the same foreground patches.
DescriptorGrid random_descriptors(const RenderOutput &render, int patch_size, int stride, int dim,
                                  std::uint64_t seed);

}  // namespace zs6d
