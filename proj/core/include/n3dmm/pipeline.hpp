#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "n3dmm/dataset.hpp"
#include "n3dmm/mesh_io.hpp"
#include "n3dmm/model.hpp"
#include "n3dmm/normalization.hpp"
#include "n3dmm/optim.hpp"
#include "n3dmm/pca.hpp"

namespace n3dmm {

// Everything that determines a run besides the dataset bytes.
struct RunConfig {
  std::filesystem::path dataset;
  ModelSpec model;
  // Orientation, ordering mode, ordering seed and reference vertex shared by
  // all levels; hops, length and dilation come from `model`.
  SpiralConfig spiral;
  int epochs = 300;
  int batch_size = 16;
  std::uint64_t seed = 0;
  nn::AdamOptions optimizer;
  // Use only the first N training samples (0: all).
  int max_train_samples = 0;
  std::filesystem::path output;
  // Preprocessing cache directory (empty: <output>/cache, or none without output).
  std::filesystem::path cache;

  std::map<std::string, std::string> to_key_values() const;
  // Keys missing from `kv` keep the values of `base`. Unknown keys throw.
  static RunConfig from_key_values(const std::map<std::string, std::string>& kv, const RunConfig& base);
  static RunConfig from_key_values(const std::map<std::string, std::string>& kv);
};

// "key = value" lines; '#' starts a comment.
std::map<std::string, std::string> parse_key_values(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

// Mesh hierarchy plus per-level spiral tables for one template and spec.
struct Bundle {
  std::shared_ptr<const MeshHierarchy> hierarchy;
  std::vector<SpiralConfig> configs;
  std::vector<std::shared_ptr<const SpiralTable>> tables;
  // Only for randomised ordering modes.
  std::vector<std::shared_ptr<const SpiralGenerator>> generators;
  std::uint64_t key = 0;       // hash of the inputs
  std::uint64_t checksum = 0;  // hash of the serialised hierarchy and tables
  bool from_cache = false;
};

// Builds (or loads from `cache_dir` when its key matches) the hierarchy and
// spiral tables. With a cache directory the bundle is written as
// bundle.key, hierarchy.n3hi and spiral_<level>.n3sp.
Bundle preprocess(const Mesh& template_mesh, const ModelSpec& spec, const SpiralConfig& spiral,
                  const std::filesystem::path& cache_dir = {});

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double learning_rate = 0.0;  // rate used during the epoch
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation split
  double val_mm = 0.0;    // NaN without a validation split
};

std::string metrics_csv(std::span<const EpochMetrics> metrics);

struct TrainedModel {
  RunConfig config;
  Bundle bundle;
  std::shared_ptr<Neural3DMM> model;
  NormalizationStats stats;
  std::uint64_t template_hash = 0;

  // Spiral tables per level for the given dataset sample ids under the
  // randomised ordering modes (nullopt-like empty result in fixed mode).
  // Id -1 selects the fixed table.
  OrderingOverride ordering_for(std::span<const int> sample_ids, std::size_t epoch) const;

  // Batched inference in real units. `sample_ids` (optional) selects the
  // evaluation orderings of randomised models.
  Eigen::MatrixXd encode(std::span<const FeatureMatrix> shapes, std::span<const int> sample_ids = {}) const;
  std::vector<FeatureMatrix> decode(const Eigen::MatrixXd& latents, std::span<const int> sample_ids = {}) const;
  std::vector<FeatureMatrix> reconstruct(std::span<const FeatureMatrix> shapes,
                                         std::span<const int> sample_ids = {}) const;
};

struct TrainResult {
  TrainedModel trained;
  std::vector<EpochMetrics> metrics;
  int best_epoch = 0;
};

struct TrainOptions {
  std::function<void(const EpochMetrics&)> on_epoch;
};

// Adam on the L1 loss of normalised shapes. Keeps the parameters of the epoch
// with the lowest validation loss (training loss without a validation split).
// With config.output set, writes checkpoint.n3ck, metrics.csv and run.cfg.
// Throws NumericError on a non-finite loss.
TrainResult train(const Dataset& dataset, const RunConfig& config, const TrainOptions& options = {});

void save_trained_model(const std::filesystem::path& path, const TrainedModel& trained, int epoch = 0);
// Rebuilds hierarchy and spirals from `template_mesh` (which must match the
// stored template hash).
TrainedModel load_trained_model(const std::filesystem::path& path, const Mesh& template_mesh,
                                const std::filesystem::path& cache_dir = {});

struct EvalResult {
  double mean_mm = 0.0;               // mean over vertices, then samples
  std::vector<double> per_sample_mm;
  std::vector<double> per_vertex_mm;  // mean over samples
};

// Per-vertex Euclidean distance between matching shapes.
EvalResult reconstruction_error(std::span<const FeatureMatrix> truth, std::span<const FeatureMatrix> predicted);

// Reconstructs the split's samples and measures the error. Throws DataError
// on an empty split.
EvalResult evaluate_generalisation(const TrainedModel& trained, const Dataset& dataset,
                                   const std::vector<int>& split);

// PCA baseline with rank k fitted on `train`, evaluated on `split`.
EvalResult evaluate_pca(const Dataset& dataset, const std::vector<int>& train, const std::vector<int>& split, int k);

Eigen::MatrixXd flatten_shapes(std::span<const FeatureMatrix> shapes);
FeatureMatrix unflatten_shape(const Eigen::VectorXd& flat);

// Decodes z = a z1 + (1 - a) z2 for `steps` values of a from 1 down to 0.
std::vector<FeatureMatrix> latent_interpolate(const TrainedModel& trained, const FeatureMatrix& x1,
                                              const FeatureMatrix& x2, int steps);
// Same combination for arbitrary a.
std::vector<FeatureMatrix> latent_extrapolate(const TrainedModel& trained, const FeatureMatrix& x1,
                                              const FeatureMatrix& x2, std::span<const double> a_values);
// decode(e(B) - e(A) + e(C)).
FeatureMatrix latent_analogy(const TrainedModel& trained, const FeatureMatrix& a, const FeatureMatrix& b,
                             const FeatureMatrix& c);

// Magnitude (L2 over output channels) of conv(delta_v) - conv(0), where
// delta_v sets every input channel of `vertex` to one.
std::vector<double> impulse_response(const Neural3DMM::Conv& conv, int vertex_count, int vertex);

// Blue to red ramp over [0, 99th percentile of values].
std::vector<Rgb> heatmap_colors(std::span<const double> values);
void save_heatmap_ply(const std::filesystem::path& path, const Mesh& mesh, std::span<const double> values);

enum class AblationAxis { conv_operator, ordering_mode, latent_size };

AblationAxis parse_ablation_axis(const std::string& text);

struct AblationOptions {
  std::vector<int> latent_sizes{8, 16, 32};
  TrainOptions train;
};

struct AblationRow {
  std::string variant;
  ConvOperator conv = ConvOperator::spiral;
  OrderingMode ordering = OrderingMode::fixed;
  int latent_size = 0;
  std::size_t params = 0;
  double mm_error = 0.0;  // test split (validation split when test is empty)
  double wall_seconds = 0.0;
  std::vector<EpochMetrics> curve;
};

// Trains every variant of the axis with the config's seeds. With
// config.output set, each variant writes to <output>/<variant>/ and the table
// goes to <output>/ablation.csv with curves in <output>/curves/.
std::vector<AblationRow> run_ablation(const Dataset& dataset, const RunConfig& config, AblationAxis axis,
                                      const AblationOptions& options = {});
std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace n3dmm
