#include "zs6d/json_io.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "zs6d/error.hpp"

namespace zs6d {

json rotation_to_json(const Mat3 &R) {
  json out = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.push_back(R(r, c));
  return out;
}

json vec3_to_json(const Vec3 &v) { return json::array({v.x(), v.y(), v.z()}); }

json intrinsics_to_json(const CameraIntrinsics &K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
}

namespace {

std::vector<double> numbers_from(const json &j, std::string_view key, std::size_t count) {
  if (!j.is_array() || j.size() != count) {
    throw Error(ErrorCode::SchemaError,
                "'" + std::string(key) + "' must be an array of " + std::to_string(count) + " numbers");
  }
  std::vector<double> out;
  for (const auto &v : j) {
    if (!v.is_number()) throw Error(ErrorCode::SchemaError, "'" + std::string(key) + "' holds a non-number");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

Mat3 rotation_from_json(const json &j, std::string_view key) {
  const auto v = numbers_from(j, key, 9);
  Mat3 R;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R(r, c) = v[static_cast<std::size_t>(3 * r + c)];
  return R;
}

Vec3 vec3_from_json(const json &j, std::string_view key) {
  const auto v = numbers_from(j, key, 3);
  return {v[0], v[1], v[2]};
}

CameraIntrinsics intrinsics_from_json(const json &j) {
  try {
    return {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
            j.at("cy").get<double>(),  j.at("width").get<int>(),  j.at("height").get<int>()};
  } catch (const json::exception &e) {
    throw Error(ErrorCode::SchemaError, std::string("camera intrinsics: ") + e.what());
  }
}

json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

void write_json_file(const json &j, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

void Fnv1a::update(std::span<const std::uint8_t> bytes) {
  for (auto b : bytes) {
    hash_ ^= b;
    hash_ *= 0x100000001b3ull;
  }
}

void Fnv1a::update(std::string_view text) {
  update({reinterpret_cast<const std::uint8_t *>(text.data()), text.size()});
}

std::string Fnv1a::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_));
  return buf;
}

std::string file_digest(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Fnv1a h;
  h.update(bytes);
  return h.hex();
}

}  // namespace zs6d
