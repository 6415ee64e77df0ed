#include "zs6d/mesh.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "zs6d/error.hpp"

namespace zs6d {

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

double point_set_diameter(const std::vector<Vec3> &points, bool *is_exact) {
  std::vector<Vec3> subsample;
  const std::vector<Vec3> *pts = &points;
  bool exact = true;
  if (points.size() > kExactDiameterVertexLimit) {
    exact = false;
    const double step = static_cast<double>(points.size()) / kExactDiameterVertexLimit;
    subsample.reserve(kExactDiameterVertexLimit);
    for (std::size_t i = 0; i < kExactDiameterVertexLimit; ++i) {
      subsample.push_back(points[static_cast<std::size_t>(i * step)]);
    }
    pts = &subsample;
  }
  double best_sq = 0.0;
  for (std::size_t i = 0; i < pts->size(); ++i) {
    for (std::size_t j = i + 1; j < pts->size(); ++j) {
      best_sq = std::max(best_sq, ((*pts)[i] - (*pts)[j]).squaredNorm());
    }
  }
  if (is_exact) *is_exact = exact;
  return std::sqrt(best_sq);
}

TriMesh TriMesh::from(std::vector<Vec3> vertices, std::vector<Triangle> triangles) {
  if (vertices.empty()) throw Error(ErrorCode::InvalidMesh, "mesh has no vertices");
  for (std::size_t f = 0; f < triangles.size(); ++f) {
    for (auto idx : triangles[f]) {
      if (idx >= vertices.size()) {
        throw Error(ErrorCode::InvalidMesh, "triangle " + std::to_string(f) + " references vertex " +
                                                std::to_string(idx) + " of " +
                                                std::to_string(vertices.size()));
      }
    }
  }
  TriMesh mesh;
  mesh.bbox_min = vertices.front();
  mesh.bbox_max = vertices.front();
  for (const auto &v : vertices) {
    mesh.bbox_min = mesh.bbox_min.cwiseMin(v);
    mesh.bbox_max = mesh.bbox_max.cwiseMax(v);
  }
  mesh.diameter = point_set_diameter(vertices, &mesh.diameter_is_exact);
  mesh.vertices = std::move(vertices);
  mesh.triangles = std::move(triangles);
  return mesh;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<PlyType> parse_ply_type(const std::string &name) {
  static const std::map<std::string, PlyType> kTypes = {
      {"char", PlyType::Int8},     {"int8", PlyType::Int8},       {"uchar", PlyType::UInt8},
      {"uint8", PlyType::UInt8},   {"short", PlyType::Int16},     {"int16", PlyType::Int16},
      {"ushort", PlyType::UInt16}, {"uint16", PlyType::UInt16},   {"int", PlyType::Int32},
      {"int32", PlyType::Int32},   {"uint", PlyType::UInt32},     {"uint32", PlyType::UInt32},
      {"float", PlyType::Float32}, {"float32", PlyType::Float32}, {"double", PlyType::Float64},
      {"float64", PlyType::Float64}};
  auto it = kTypes.find(name);
  if (it == kTypes.end()) return std::nullopt;
  return it->second;
}

std::size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <typename T>
T read_raw(const char *p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double decode_binary(PlyType t, const char *p) {
  switch (t) {
    case PlyType::Int8: return read_raw<std::int8_t>(p);
    case PlyType::UInt8: return read_raw<std::uint8_t>(p);
    case PlyType::Int16: return read_raw<std::int16_t>(p);
    case PlyType::UInt16: return read_raw<std::uint16_t>(p);
    case PlyType::Int32: return read_raw<std::int32_t>(p);
    case PlyType::UInt32: return read_raw<std::uint32_t>(p);
    case PlyType::Float32: return read_raw<float>(p);
    case PlyType::Float64: return read_raw<double>(p);
  }
  return 0.0;
}

/// Sequential value source over either ASCII tokens or a binary blob.
class PlyReader {
 public:
  PlyReader(std::string body, bool binary) : body_(std::move(body)), binary_(binary) {}

  bool next(PlyType type, double &out) {
    if (binary_) {
      const std::size_t n = ply_type_size(type);
      if (pos_ + n > body_.size()) return false;
      out = decode_binary(type, body_.data() + pos_);
      pos_ += n;
      return true;
    }
    while (pos_ < body_.size() && std::isspace(static_cast<unsigned char>(body_[pos_]))) ++pos_;
    if (pos_ >= body_.size()) return false;
    const char *begin = body_.data() + pos_;
    char *end = nullptr;
    out = std::strtod(begin, &end);
    if (end == begin) return false;
    pos_ += static_cast<std::size_t>(end - begin);
    return true;
  }

 private:
  std::string body_;
  bool binary_;
  std::size_t pos_ = 0;
};

}  // namespace

TriMesh load_mesh(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (contents.rfind("ply", 0) != 0) {
    throw Error(ErrorCode::UnsupportedFormat, path.string() + " is not a PLY file");
  }
  const std::size_t header_end = contents.find("end_header");
  if (header_end == std::string::npos) {
    throw Error(ErrorCode::ParseError, "missing end_header in " + path.string());
  }
  std::size_t body_start = contents.find('\n', header_end);
  body_start = body_start == std::string::npos ? contents.size() : body_start + 1;

  std::istringstream header(contents.substr(0, header_end));
  std::string line;
  std::getline(header, line);  // "ply"
  std::optional<bool> binary;
  std::vector<PlyElement> elements;
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream tok(line);
    std::string kw;
    tok >> kw;
    if (kw.empty() || kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      std::string fmt;
      tok >> fmt;
      if (fmt == "ascii") {
        binary = false;
      } else if (fmt == "binary_little_endian") {
        binary = true;
      } else {
        throw Error(ErrorCode::UnsupportedFormat, "PLY encoding '" + fmt + "' is not supported");
      }
    } else if (kw == "element") {
      PlyElement el;
      long long count = -1;
      tok >> el.name >> count;
      if (!tok || count < 0) throw Error(ErrorCode::ParseError, "bad element line: " + line);
      el.count = static_cast<std::size_t>(count);
      elements.push_back(std::move(el));
    } else if (kw == "property") {
      if (elements.empty()) throw Error(ErrorCode::ParseError, "property before element: " + line);
      PlyProperty prop;
      std::string type_name;
      tok >> type_name;
      if (type_name == "list") {
        std::string count_type, item_type;
        tok >> count_type >> item_type >> prop.name;
        auto ct = parse_ply_type(count_type);
        auto it = parse_ply_type(item_type);
        if (!ct || !it) throw Error(ErrorCode::ParseError, "bad list property: " + line);
        prop.is_list = true;
        prop.count_type = *ct;
        prop.type = *it;
      } else {
        auto t = parse_ply_type(type_name);
        tok >> prop.name;
        if (!t) throw Error(ErrorCode::ParseError, "unknown property type: " + line);
        prop.type = *t;
      }
      elements.back().properties.push_back(std::move(prop));
    } else {
      throw Error(ErrorCode::ParseError, "unexpected header line: " + line);
    }
  }
  if (!binary) throw Error(ErrorCode::ParseError, "missing format line");

  PlyReader reader(contents.substr(body_start), *binary);
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  bool saw_vertex = false;
  for (const auto &el : elements) {
    const bool is_vertex = el.name == "vertex";
    const bool is_face = el.name == "face";
    int ix = -1, iy = -1, iz = -1;
    if (is_vertex) {
      saw_vertex = true;
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        if (el.properties[p].name == "x") ix = static_cast<int>(p);
        if (el.properties[p].name == "y") iy = static_cast<int>(p);
        if (el.properties[p].name == "z") iz = static_cast<int>(p);
      }
      if (ix < 0 || iy < 0 || iz < 0) {
        throw Error(ErrorCode::ParseError, "vertex element lacks x/y/z properties");
      }
      vertices.reserve(el.count);
    }
    for (std::size_t i = 0; i < el.count; ++i) {
      Vec3 v = Vec3::Zero();
      for (std::size_t p = 0; p < el.properties.size(); ++p) {
        const auto &prop = el.properties[p];
        auto truncated = [&] {
          return Error(ErrorCode::ParseError, "truncated data in element '" + el.name + "' at entry " +
                                                  std::to_string(i) + " of " +
                                                  std::to_string(el.count));
        };
        if (prop.is_list) {
          double n = 0.0;
          if (!reader.next(prop.count_type, n) || n < 0) throw truncated();
          std::vector<std::uint32_t> idx(static_cast<std::size_t>(n));
          for (auto &k : idx) {
            double value = 0.0;
            if (!reader.next(prop.type, value)) throw truncated();
            if (value < 0) throw Error(ErrorCode::ParseError, "negative vertex index in face " + std::to_string(i));
            k = static_cast<std::uint32_t>(value);
          }
          if (is_face && (prop.name == "vertex_indices" || prop.name == "vertex_index")) {
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
              triangles.push_back({idx[0], idx[k], idx[k + 1]});
            }
          }
        } else {
          double value = 0.0;
          if (!reader.next(prop.type, value)) throw truncated();
          if (is_vertex) {
            if (static_cast<int>(p) == ix) v.x() = value;
            if (static_cast<int>(p) == iy) v.y() = value;
            if (static_cast<int>(p) == iz) v.z() = value;
          }
        }
      }
      if (is_vertex) vertices.push_back(v);
    }
  }
  if (!saw_vertex) throw Error(ErrorCode::ParseError, "no vertex element");
  try {
    return TriMesh::from(std::move(vertices), std::move(triangles));
  } catch (const Error &e) {
    throw Error(ErrorCode::ParseError, std::string(e.what()) + " in " + path.string());
  }
}

void save_mesh(const TriMesh &mesh, const std::filesystem::path &path, PlyEncoding encoding) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const bool binary = encoding == PlyEncoding::BinaryLittleEndian;
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar uint vertex_indices\nend_header\n";
  if (binary) {
    for (const auto &v : mesh.vertices) {
      out.write(reinterpret_cast<const char *>(v.data()), 3 * sizeof(double));
    }
    for (const auto &t : mesh.triangles) {
      const std::uint8_t n = 3;
      out.write(reinterpret_cast<const char *>(&n), 1);
      out.write(reinterpret_cast<const char *>(t.data()), 3 * sizeof(std::uint32_t));
    }
  } else {
    out.precision(17);
    for (const auto &v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto &t : mesh.triangles) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  }
  if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Normalized object coordinates

NocsValue nocs_encode(const Vec3 &point, const Vec3 &bbox_min, const Vec3 &bbox_max) {
  constexpr double kTol = 1e-6;
  double c[3];
  for (int a = 0; a < 3; ++a) {
    if (point[a] < bbox_min[a] - kTol || point[a] > bbox_max[a] + kTol) {
      std::ostringstream msg;
      msg << "coordinate " << point[a] << " on axis " << a << " outside [" << bbox_min[a] << ", "
          << bbox_max[a] << "]";
      throw Error(ErrorCode::OutOfBounds, msg.str());
    }
    const double extent = bbox_max[a] - bbox_min[a];
    c[a] = extent > 0.0 ? std::clamp((point[a] - bbox_min[a]) / extent, 0.0, 1.0) : 0.5;
  }
  return {c[0], c[1], c[2]};
}

Vec3 nocs_decode(const NocsValue &c, const Vec3 &bbox_min, const Vec3 &bbox_max) {
  const Vec3 extent = bbox_max - bbox_min;
  const double v[3] = {c.r, c.g, c.b};
  Vec3 p;
  for (int a = 0; a < 3; ++a) {
    // Degenerate axes have zero extent, so any channel value decodes to bbox_min.
    p[a] = bbox_min[a] + v[a] * extent[a];
  }
  return p;
}

NocsValue nocs_encode(const Vec3 &point, const TriMesh &mesh) {
  return nocs_encode(point, mesh.bbox_min, mesh.bbox_max);
}

Vec3 nocs_decode(const NocsValue &c, const TriMesh &mesh) {
  return nocs_decode(c, mesh.bbox_min, mesh.bbox_max);
}

std::array<std::uint16_t, 3> quantize16(const NocsValue &c) {
  auto q = [](double v) {
    return static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0));
  };
  return {q(c.r), q(c.g), q(c.b)};
}

NocsValue dequantize16(const std::array<std::uint16_t, 3> &q) {
  return {q[0] / 65535.0, q[1] / 65535.0, q[2] / 65535.0};
}

// ---------------------------------------------------------------------------
// Procedural meshes

IcoSphere icosphere(int level) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  IcoSphere s;
  s.vertices = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
                {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
                {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto &v : s.vertices) v.normalize();
  s.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                 {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                 {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                 {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int l = 0; l < level; ++l) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> midpoints;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      const auto key = std::minmax(a, b);
      auto it = midpoints.find(key);
      if (it != midpoints.end()) return it->second;
      const auto idx = static_cast<std::uint32_t>(s.vertices.size());
      s.vertices.push_back((s.vertices[a] + s.vertices[b]).normalized());
      midpoints.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(s.triangles.size() * 4);
    for (const auto &t : s.triangles) {
      const auto ab = midpoint(t[0], t[1]);
      const auto bc = midpoint(t[1], t[2]);
      const auto ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    s.triangles = std::move(next);
  }
  return s;
}

namespace {

void append_box(std::vector<Vec3> &verts, std::vector<Triangle> &tris, const Vec3 &lo,
                const Vec3 &hi) {
  const auto base = static_cast<std::uint32_t>(verts.size());
  for (int i = 0; i < 8; ++i) {
    verts.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(),
                       (i & 4) ? hi.z() : lo.z());
  }
  // Outward winding, two triangles per face.
  static const std::uint32_t kFaces[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6},
                                              {0, 1, 4}, {1, 5, 4}, {2, 6, 3}, {3, 6, 7},
                                              {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  for (const auto &f : kFaces) tris.push_back({base + f[0], base + f[1], base + f[2]});
}

}  // namespace

TriMesh make_box(const Vec3 &extent) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  append_box(verts, tris, -0.5 * extent, 0.5 * extent);
  return TriMesh::from(std::move(verts), std::move(tris));
}

TriMesh make_bumpy_ellipsoid(const Vec3 &radii, int subdivisions, double bumpiness) {
  IcoSphere s = icosphere(subdivisions);
  std::vector<Vec3> verts;
  verts.reserve(s.vertices.size());
  for (const auto &u : s.vertices) {
    const double bump = 1.0 + bumpiness * (0.6 * std::sin(3.0 * u.x() + 1.0) * std::cos(2.0 * u.y()) +
                                           0.4 * std::sin(5.0 * u.z() + 2.0 * u.x()));
    verts.push_back(bump * radii.cwiseProduct(u));
  }
  return TriMesh::from(std::move(verts), std::move(s.triangles));
}

TriMesh make_l_block(double size) {
  std::vector<Vec3> verts;
  std::vector<Triangle> tris;
  const double h = 0.5 * size;
  append_box(verts, tris, Vec3(-h, -h, -0.2 * size), Vec3(h, -h + 0.4 * size, 0.2 * size));
  append_box(verts, tris, Vec3(-h, -h + 0.4 * size, -0.2 * size),
             Vec3(-h + 0.35 * size, h, 0.2 * size));
  return TriMesh::from(std::move(verts), std::move(tris));
}

}  // namespace zs6d
