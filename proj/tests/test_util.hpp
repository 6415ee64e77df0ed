#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "zs6d/geometry.hpp"

namespace zs6d::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string &tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("zs6d_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path &p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path &p, const std::string &text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

/// Uniform random rotation from a normalized Gaussian quaternion.
inline Mat3 random_rotation(std::mt19937_64 &rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline Pose random_pose(std::mt19937_64 &rng, double zmin = 500.0, double zmax = 1000.0) {
  std::uniform_real_distribution<double> xy(-80.0, 80.0);
  std::uniform_real_distribution<double> z(zmin, zmax);
  Pose p;
  p.rotation = random_rotation(rng);
  p.translation = {xy(rng), xy(rng), z(rng)};
  return p;
}

inline CameraIntrinsics test_camera() { return {600.0, 600.0, 320.0, 240.0, 640, 480}; }

}  // namespace zs6d::test
