#include "n3dmm/mesh_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "n3dmm/error.hpp"

namespace n3dmm {

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int parse_int(std::string_view token, std::size_t line) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw DataError(fmt::format("line {}: invalid integer '{}'", line, token));
  }
  return value;
}

double parse_double(const std::string& token, std::size_t line) {
  try {
    std::size_t used = 0;
    const double value = std::stod(token, &used);
    if (used != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw DataError(fmt::format("line {}: invalid number '{}'", line, token));
  }
}

// ---- PLY ------------------------------------------------------------------

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

PlyType ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::i8;
  if (name == "uchar" || name == "uint8") return PlyType::u8;
  if (name == "short" || name == "int16") return PlyType::i16;
  if (name == "ushort" || name == "uint16") return PlyType::u16;
  if (name == "int" || name == "int32") return PlyType::i32;
  if (name == "uint" || name == "uint32") return PlyType::u32;
  if (name == "float" || name == "float32") return PlyType::f32;
  if (name == "double" || name == "float64") return PlyType::f64;
  throw DataError(fmt::format("unknown PLY type '{}'", name));
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8:
    case PlyType::u8:
      return 1;
    case PlyType::i16:
    case PlyType::u16:
      return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32:
      return 4;
    case PlyType::f64:
      return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <class T>
T load_le(const char* p) {
  T value;
  std::memcpy(&value, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(&value);
    std::reverse(bytes, bytes + sizeof(T));
  }
  return value;
}

class PlyReader {
 public:
  PlyReader(const std::string& bytes, std::size_t offset, bool binary)
      : bytes_(bytes), pos_(offset), binary_(binary) {}

  double read(PlyType type) {
    if (!binary_) return read_ascii();
    const std::size_t n = ply_size(type);
    if (pos_ + n > bytes_.size()) throw DataError("unexpected end of binary PLY data");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    switch (type) {
      case PlyType::i8:
        return load_le<std::int8_t>(p);
      case PlyType::u8:
        return load_le<std::uint8_t>(p);
      case PlyType::i16:
        return load_le<std::int16_t>(p);
      case PlyType::u16:
        return load_le<std::uint16_t>(p);
      case PlyType::i32:
        return load_le<std::int32_t>(p);
      case PlyType::u32:
        return load_le<std::uint32_t>(p);
      case PlyType::f32:
        return load_le<float>(p);
      case PlyType::f64:
        return load_le<double>(p);
    }
    return 0.0;
  }

 private:
  double read_ascii() {
    while (pos_ < bytes_.size() && std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw DataError("unexpected end of ASCII PLY data");
    return parse_double(bytes_.substr(start, pos_ - start), 0);
  }

  const std::string& bytes_;
  std::size_t pos_;
  bool binary_;
};

template <class T>
void store_le(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.append(buf, sizeof(T));
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError(fmt::format("failed writing '{}'", path.string()));
}

}  // namespace

Mesh parse_obj(const std::string& text, const std::string& name) {
  Mesh mesh;
  mesh.name = name;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      std::string xs, ys, zs;
      if (!(ls >> xs >> ys >> zs)) throw DataError(fmt::format("line {}: malformed vertex", line_no));
      mesh.vertices.emplace_back(parse_double(xs, line_no), parse_double(ys, line_no),
                                 parse_double(zs, line_no));
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string token;
      while (ls >> token) {
        const std::string_view head = std::string_view(token).substr(0, token.find('/'));
        int i = parse_int(head, line_no);
        if (i < 0) i = static_cast<int>(mesh.vertices.size()) + i + 1;
        idx.push_back(i - 1);
      }
      if (idx.size() != 3) {
        throw DataError(fmt::format("line {}: non-triangle face with {} vertices", line_no,
                                    idx.size()));
      }
      mesh.faces.push_back({idx[0], idx[1], idx[2]});
    }
  }
  validate_mesh(mesh);
  return mesh;
}

Mesh parse_ply(const std::string& bytes, const std::string& name) {
  const std::size_t header_end = bytes.find("end_header");
  if (bytes.rfind("ply", 0) != 0 || header_end == std::string::npos) {
    throw DataError("not a PLY file");
  }
  std::size_t body = bytes.find('\n', header_end);
  if (body == std::string::npos) throw DataError("truncated PLY header");
  ++body;

  std::istringstream header(bytes.substr(0, header_end));
  std::string line;
  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(header, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "format") {
      std::string fmt_name;
      ls >> fmt_name;
      if (fmt_name == "ascii") {
        binary = false;
      } else if (fmt_name == "binary_little_endian") {
        binary = true;
      } else {
        throw DataError(fmt::format("unsupported PLY format '{}'", fmt_name));
      }
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(std::move(e));
    } else if (tag == "property") {
      if (elements.empty()) throw DataError("PLY property before any element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = ply_type(count_type);
        p.type = ply_type(item_type);
      } else {
        p.type = ply_type(type);
        ls >> p.name;
      }
      elements.back().properties.push_back(std::move(p));
    }
  }

  Mesh mesh;
  mesh.name = name;
  PlyReader reader(bytes, body, binary);
  for (const PlyElement& e : elements) {
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    if (is_vertex) mesh.vertices.reserve(e.count);
    for (std::size_t i = 0; i < e.count; ++i) {
      Vec3 position = Vec3::Zero();
      int found = 0;
      for (const PlyProperty& p : e.properties) {
        if (p.is_list) {
          const auto n = static_cast<std::size_t>(reader.read(p.count_type));
          std::vector<int> idx(n);
          for (auto& v : idx) v = static_cast<int>(reader.read(p.type));
          if (is_face && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (n != 3) {
              throw DataError(fmt::format("face {}: non-triangle face with {} vertices", i, n));
            }
            mesh.faces.push_back({idx[0], idx[1], idx[2]});
          }
          continue;
        }
        const double value = reader.read(p.type);
        if (is_vertex) {
          if (p.name == "x") position.x() = value, found |= 1;
          if (p.name == "y") position.y() = value, found |= 2;
          if (p.name == "z") position.z() = value, found |= 4;
        }
      }
      if (is_vertex) {
        if (found != 7) throw DataError("PLY vertex element lacks x, y, z");
        mesh.vertices.push_back(position);
      }
    }
  }
  validate_mesh(mesh);
  return mesh;
}

Mesh load_mesh(const std::filesystem::path& path, std::optional<MeshFormat> format) {
  if (!format) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".obj") {
      format = MeshFormat::obj;
    } else if (ext == ".ply") {
      format = MeshFormat::ply;
    } else {
      throw DataError(fmt::format("cannot infer mesh format of '{}'", path.string()));
    }
  }
  const std::string bytes = read_file(path);
  const std::string name = path.stem().string();
  try {
    Mesh mesh = *format == MeshFormat::obj ? parse_obj(bytes, name) : parse_ply(bytes, name);
    validate_mesh(mesh);
    return mesh;
  } catch (const DataError& e) {
    throw DataError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void save_ply(const std::filesystem::path& path, const Mesh& mesh, PlyEncoding encoding,
              std::span<const Rgb> colors) {
  if (!colors.empty() && colors.size() != mesh.vertices.size()) {
    throw ShapeError("colour count does not match vertex count");
  }
  const bool binary = encoding == PlyEncoding::binary_little_endian;
  std::string out = fmt::format(
      "ply\nformat {} 1.0\nelement vertex {}\nproperty double x\nproperty double y\n"
      "property double z\n",
      binary ? "binary_little_endian" : "ascii", mesh.vertices.size());
  if (!colors.empty()) out += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out += fmt::format("element face {}\nproperty list uchar int vertex_indices\nend_header\n",
                     mesh.faces.size());

  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    const Vec3& p = mesh.vertices[v];
    if (binary) {
      for (int k = 0; k < 3; ++k) store_le<double>(out, p[k]);
      if (!colors.empty()) out.append(reinterpret_cast<const char*>(colors[v].data()), 3);
    } else {
      out += fmt::format("{:.17g} {:.17g} {:.17g}", p.x(), p.y(), p.z());
      if (!colors.empty()) out += fmt::format(" {} {} {}", colors[v][0], colors[v][1], colors[v][2]);
      out += '\n';
    }
  }
  for (const Face& f : mesh.faces) {
    if (binary) {
      out.push_back(3);
      for (int idx : f) store_le<std::int32_t>(out, idx);
    } else {
      out += fmt::format("3 {} {} {}\n", f[0], f[1], f[2]);
    }
  }
  write_file(path, out);
}

void save_obj(const std::filesystem::path& path, const Mesh& mesh) {
  std::string out;
  for (const Vec3& p : mesh.vertices) out += fmt::format("v {:.17g} {:.17g} {:.17g}\n", p.x(), p.y(), p.z());
  for (const Face& f : mesh.faces) out += fmt::format("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1);
  write_file(path, out);
}

}  // namespace n3dmm
