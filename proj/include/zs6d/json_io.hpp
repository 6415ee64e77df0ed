#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "zs6d/geometry.hpp"

namespace zs6d {

using nlohmann::json;

json rotation_to_json(const Mat3 &R);
json vec3_to_json(const Vec3 &v);
json intrinsics_to_json(const CameraIntrinsics &K);

/// Row-major 9 values. Throws SchemaError naming `key` on shape errors.
Mat3 rotation_from_json(const json &j, std::string_view key);
Vec3 vec3_from_json(const json &j, std::string_view key);
CameraIntrinsics intrinsics_from_json(const json &j);

/// Throws MissingFile / ParseError.
json read_json_file(const std::filesystem::path &path);
/// Pretty-printed with a trailing newline. Throws IoError.
void write_json_file(const json &j, const std::filesystem::path &path);

/// Incremental 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes);
  void update(std::string_view text);
  std::uint64_t value() const { return hash_; }
  std::string hex() const;

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ull;
};

std::string file_digest(const std::filesystem::path &path);

}  // namespace zs6d
