#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "n3dmm/checkpoint.hpp"
#include "n3dmm/hierarchy.hpp"
#include "n3dmm/layers.hpp"
#include "n3dmm/spiral.hpp"

namespace n3dmm {

enum class ConvOperator { spiral, chebyshev };

std::string to_string(ConvOperator op);
ConvOperator parse_conv_operator(const std::string& text);

// Declarative autoencoder description. Encoder layer i runs on hierarchy
// level i and is followed by a downsampling by factors[i]; the decoder
// mirrors it.
struct ModelSpec {
  ConvOperator conv = ConvOperator::spiral;
  std::vector<int> encoder_widths{16, 16, 16, 32};
  // Empty: mirror of the encoder ending in signal_dim, e.g. [32, 16, 16, 3].
  std::vector<int> decoder_widths;
  std::vector<int> factors{4, 4, 4, 4};
  // Per level (a single value is broadcast).
  std::vector<int> hops{1};
  std::vector<int> dilation{1};
  // Spiral length override per level; 0 or empty selects the default.
  std::vector<int> spiral_lengths;
  // Chebyshev degree per level; empty matches each level's spiral length
  // minus one so the two operators have identical parameter counts.
  std::vector<int> cheb_degrees;
  int latent_size = 16;
  bool final_identity_conv = false;
  int signal_dim = 3;

  int layer_count() const { return static_cast<int>(encoder_widths.size()); }
  std::vector<int> resolved_decoder_widths() const;
  int hops_at(int level) const;
  int dilation_at(int level) const;
  int spiral_length_at(int level) const;

  // Throws ConfigError on inconsistent lists.
  void validate() const;

  std::map<std::string, std::string> to_key_values() const;
  // Unknown keys are ignored; missing keys keep their defaults.
  static ModelSpec from_key_values(const std::map<std::string, std::string>& kv);

  bool operator==(const ModelSpec&) const = default;
};

// Spiral configuration of every hierarchy level for a spec. The reference
// vertex of `base` is carried down the hierarchy with map_vertex_to_level.
std::vector<SpiralConfig> level_spiral_configs(const ModelSpec& spec, const MeshHierarchy& hierarchy,
                                               const SpiralConfig& base);

// Per-level, per-batch-sample spiral tables replacing the model's fixed
// orderings (randomised ordering ablations).
using OrderingOverride = std::vector<std::vector<std::shared_ptr<const SpiralTable>>>;

// Parameter total from the closed formula
//   sum over conv layers of w_out (K w_in + 1)
//   + (l w_last + 1) d + d (l w_last) + l w_last,
// where K is the spiral length (or Chebyshev degree + 1) of the layer's level.
std::size_t closed_form_parameter_count(const ModelSpec& spec, const std::vector<int>& taps_per_level,
                                        int coarsest_vertex_count);

class Neural3DMM {
 public:
  using Conv = std::variant<nn::SpiralConv, nn::ChebConv>;

  // tables[i] is the spiral table of hierarchy level i (needed for the
  // spiral operator only; Chebyshev models use it to pick default degrees).
  Neural3DMM(ModelSpec spec, std::shared_ptr<const MeshHierarchy> hierarchy,
             std::vector<std::shared_ptr<const SpiralTable>> tables, std::uint64_t seed);

  // [B, m, signal_dim] -> [B, latent]
  nn::Tensor encode(const nn::Tensor& x, const OrderingOverride* ordering = nullptr) const;
  // [B, latent] -> [B, m, signal_dim]
  nn::Tensor decode(const nn::Tensor& z, const OrderingOverride* ordering = nullptr) const;

  const ModelSpec& spec() const { return spec_; }
  const MeshHierarchy& hierarchy() const { return *hierarchy_; }
  int vertex_count() const { return hierarchy_->vertex_count(0); }
  int latent_size() const { return spec_.latent_size; }
  // Spiral length or Chebyshev degree + 1 per level.
  const std::vector<int>& taps_per_level() const { return taps_; }
  const Conv& encoder_layer(int i) const { return encoder_.at(static_cast<std::size_t>(i)); }
  const Conv& decoder_layer(int j) const { return decoder_.at(static_cast<std::size_t>(j)); }

  std::vector<std::pair<std::string, nn::Tensor>> named_parameters() const;
  std::vector<nn::Tensor> parameters() const;
  std::size_t parameter_count() const;

  // Copies parameter values into / out of checkpoint arrays ("param.<name>").
  void export_parameters(Checkpoint& checkpoint) const;
  void import_parameters(const Checkpoint& checkpoint);

 private:
  nn::Tensor apply_conv(const Conv& conv, int level, const nn::Tensor& x, const OrderingOverride* ordering) const;

  ModelSpec spec_;
  std::shared_ptr<const MeshHierarchy> hierarchy_;
  std::vector<std::shared_ptr<const SpiralTable>> tables_;
  std::vector<int> taps_;
  std::vector<std::shared_ptr<const CsrMatrix>> down_;
  std::vector<std::shared_ptr<const CsrMatrix>> up_;
  std::vector<Conv> encoder_;
  std::vector<Conv> decoder_;
  std::vector<Conv> final_;  // optional trailing identity-width conv
  std::vector<nn::Linear> fc_enc_;
  std::vector<nn::Linear> fc_dec_;
};

}  // namespace n3dmm
