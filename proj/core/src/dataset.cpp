#include "n3dmm/dataset.hpp"

#include <fmt/format.h>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "n3dmm/error.hpp"
#include "n3dmm/mesh_io.hpp"
#include "n3dmm/random.hpp"

namespace n3dmm {

namespace fs = std::filesystem;

std::vector<FeatureMatrix> Dataset::gather(const std::vector<int>& indices) const {
  std::vector<FeatureMatrix> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(samples.at(static_cast<std::size_t>(i)));
  return out;
}

void Dataset::validate() const {
  const int m = template_mesh.vertex_count();
  for (int i = 0; i < size(); ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (s.rows() != m || s.cols() != 3)
      throw DataError(fmt::format("sample {} has {} vertices, template has {}", i, s.rows(), m));
  }
  std::set<int> seen;
  for (const auto* split : {&train, &val, &test})
    for (int i : *split) {
      if (i < 0 || i >= size()) throw DataError(fmt::format("split index {} out of range [0, {})", i, size()));
      if (!seen.insert(i).second) throw DataError(fmt::format("sample {} appears in more than one split", i));
    }
}

namespace {

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    out.push_back(line.substr(b, line.find_last_not_of(" \t\r") - b + 1));
  }
  return out;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  Dataset d;
  fs::path tpl;
  for (const char* name : {"template.ply", "template.obj"})
    if (fs::exists(dir / name)) {
      tpl = dir / name;
      break;
    }
  if (tpl.empty()) throw DataError(fmt::format("{}: no template.ply or template.obj", dir.string()));
  d.template_mesh = load_mesh(tpl);
  validate_mesh(d.template_mesh);

  std::vector<fs::path> files;
  if (fs::is_directory(dir / "samples"))
    for (const auto& e : fs::directory_iterator(dir / "samples"))
      if (e.is_regular_file() && e.path().extension() == ".ply") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::map<std::string, int> index_of;
  for (const auto& f : files) {
    Mesh s = load_mesh(f);
    if (s.vertex_count() != d.template_mesh.vertex_count() || s.faces != d.template_mesh.faces)
      throw DataError(fmt::format("sample {} does not share the template topology", f.filename().string()));
    index_of[f.filename().string()] = d.size();
    d.names.push_back(f.stem().string());
    d.samples.push_back(positions_matrix(s));
  }

  auto read_split = [&](const char* name, std::vector<int>& out) {
    for (const auto& line : read_lines(dir / "splits" / name)) {
      auto it = index_of.find(line);
      if (it == index_of.end()) it = index_of.find(line + ".ply");
      if (it == index_of.end())
        throw DataError(fmt::format("splits/{}: unknown sample '{}'", name, line));
      out.push_back(it->second);
    }
  };
  read_split("train.txt", d.train);
  read_split("val.txt", d.val);
  read_split("test.txt", d.test);
  d.validate();
  return d;
}

void save_dataset(const fs::path& dir, const Dataset& dataset) {
  dataset.validate();
  fs::create_directories(dir / "samples");
  fs::create_directories(dir / "splits");
  save_ply(dir / "template.ply", dataset.template_mesh);
  Mesh m = dataset.template_mesh;
  for (int i = 0; i < dataset.size(); ++i) {
    set_positions(m, dataset.samples[static_cast<std::size_t>(i)]);
    save_ply(dir / "samples" / (dataset.names[static_cast<std::size_t>(i)] + ".ply"), m);
  }
  auto write_split = [&](const char* name, const std::vector<int>& idx) {
    std::ofstream out(dir / "splits" / name);
    for (int i : idx) out << dataset.names[static_cast<std::size_t>(i)] << ".ply\n";
    if (!out) throw DataError(fmt::format("cannot write {}", (dir / "splits" / name).string()));
  };
  write_split("train.txt", dataset.train);
  write_split("val.txt", dataset.val);
  write_split("test.txt", dataset.test);
}

SyntheticKind parse_synthetic_kind(const std::string& text) {
  if (text == "bump_sphere") return SyntheticKind::bump_sphere;
  throw ConfigError(fmt::format("unknown synthetic dataset kind '{}'", text));
}

namespace {

Vec3 random_unit(Rng& rng) {
  for (;;) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

struct Bump {
  Vec3 centre;
  Vec3 major;  // tangent at centre
  Vec3 minor;
  double amplitude;
  double width_major;
  double width_minor;
};

}  // namespace

Dataset generate_synthetic(SyntheticKind kind, int n_samples, std::uint64_t seed, const SyntheticOptions& options) {
  (void)kind;
  if (n_samples < 0) throw ConfigError("n_samples must be non-negative");
  Dataset d;
  d.template_mesh = make_icosphere(options.subdivision, options.radius);
  d.template_mesh.name = "bump_sphere";
  const FeatureMatrix base = positions_matrix(d.template_mesh);
  const auto m = base.rows();

  for (int s = 0; s < n_samples; ++s) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    std::vector<Bump> bumps;
    for (int b = 0; b < options.bumps; ++b) {
      Bump bump;
      bump.centre = random_unit(rng);
      Vec3 helper = std::abs(bump.centre.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
      Vec3 t1 = bump.centre.cross(helper).normalized();
      Vec3 t2 = bump.centre.cross(t1);
      double phi = rng.uniform(0.0, 2.0 * M_PI);
      bump.major = std::cos(phi) * t1 + std::sin(phi) * t2;
      bump.minor = bump.centre.cross(bump.major);
      bump.amplitude = rng.uniform(-options.max_amplitude, options.max_amplitude);
      bump.width_major = rng.uniform(options.min_width, options.max_width);
      bump.width_minor = bump.width_major / rng.uniform(1.0, std::max(1.0, options.max_aspect));
      bumps.push_back(bump);
    }
    Vec3 stretch;
    for (int k = 0; k < 3; ++k) stretch[k] = 1.0 + rng.uniform(-options.max_stretch, options.max_stretch);

    FeatureMatrix x(m, 3);
    for (Eigen::Index v = 0; v < m; ++v) {
      Vec3 p = base.row(v).transpose();
      Vec3 u = p.normalized();
      double disp = 0.0;
      for (const auto& b : bumps) {
        if (b.amplitude == 0.0) continue;
        // Local coordinates of u in the bump's tangent frame (gnomonic-like
        // angular offsets); the far hemisphere gets no contribution.
        double c = u.dot(b.centre);
        if (c <= 0.0) continue;
        double a = std::atan2(u.dot(b.major), c);
        double e = std::atan2(u.dot(b.minor), c);
        double q = a * a / (b.width_major * b.width_major) + e * e / (b.width_minor * b.width_minor);
        disp += b.amplitude * std::exp(-0.5 * q);
      }
      Vec3 out = p + disp * u;
      x.row(v) = out.cwiseProduct(stretch).transpose();
    }
    d.samples.push_back(std::move(x));
    d.names.push_back(fmt::format("sample_{:05d}", s));
  }

  const int n_test = static_cast<int>(std::lround(n_samples * options.test_fraction));
  const int n_val = static_cast<int>(std::lround(n_samples * options.val_fraction));
  const int n_train = std::max(0, n_samples - n_test - n_val);
  for (int i = 0; i < n_samples; ++i) {
    if (i < n_train)
      d.train.push_back(i);
    else if (i < n_train + n_val)
      d.val.push_back(i);
    else
      d.test.push_back(i);
  }
  return d;
}

double mean_deformation_magnitude(const Dataset& dataset, const std::vector<int>& indices) {
  if (indices.empty()) throw DataError("no samples selected");
  const FeatureMatrix base = positions_matrix(dataset.template_mesh);
  double total = 0.0;
  for (int i : indices) total += (dataset.samples.at(static_cast<std::size_t>(i)) - base).rowwise().norm().mean();
  return total / static_cast<double>(indices.size());
}

}  // namespace n3dmm
