#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "n3dmm/mesh.hpp"

namespace n3dmm {

// Shapes in dense correspondence with a template. Every sample is an m x 3
// position matrix over the template's faces.
struct Dataset {
  Mesh template_mesh;
  std::vector<FeatureMatrix> samples;
  std::vector<std::string> names;  // file stem per sample
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;

  int size() const { return static_cast<int>(samples.size()); }
  std::vector<FeatureMatrix> gather(const std::vector<int>& indices) const;

  // Throws DataError when splits overlap, point outside the sample list or a
  // sample has the wrong vertex count.
  void validate() const;
};

// Directory layout:
//   template.ply | template.obj
//   samples/<name>.ply         (faces must equal the template's)
//   splits/train.txt, val.txt, test.txt   (one sample file name per line)
// Missing split files are treated as empty.
Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

enum class SyntheticKind { bump_sphere };

SyntheticKind parse_synthetic_kind(const std::string& text);

// Bump-sphere generator. Each sample is the icosphere template displaced
// along the radial direction by `bumps` elliptical Gaussian bumps, then
// stretched per axis:
//   centre     uniform on the sphere
//   amplitude  U[-max_amplitude, max_amplitude] (mm)
//   width      U[min_width, max_width] (radians, major axis)
//   aspect     U[1, max_aspect] (major / minor width), random orientation
//   stretch    1 + U[-max_stretch, max_stretch] per axis
struct SyntheticOptions {
  int subdivision = 3;  // 642 vertices
  double radius = 100.0;
  int bumps = 4;
  double max_amplitude = 12.0;
  double min_width = 0.25;
  double max_width = 0.6;
  double max_aspect = 3.0;
  double max_stretch = 0.1;
  // Splits are contiguous: train first, then validation, then test.
  double val_fraction = 1.0 / 12.0;
  double test_fraction = 1.0 / 12.0;
};

// Sample i depends only on (seed, i) and the options.
Dataset generate_synthetic(SyntheticKind kind, int n_samples, std::uint64_t seed,
                           const SyntheticOptions& options = {});

// Mean over samples and vertices of the distance to the template.
double mean_deformation_magnitude(const Dataset& dataset, const std::vector<int>& indices);

}  // namespace n3dmm
