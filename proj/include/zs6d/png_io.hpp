#pragma once

#include <filesystem>

#include "zs6d/image.hpp"

namespace zs6d {

/// Writes an 8-bit single-channel PNG. Throws IoError.
void write_mask_png(const Mask &mask, const std::filesystem::path &path);

/// Reads a PNG as 8-bit gray. Color inputs are converted to luminance and
/// 16-bit inputs are reduced to 8 bits. Throws MissingFile / IoError.
Mask read_mask_png(const std::filesystem::path &path);

}  // namespace zs6d
