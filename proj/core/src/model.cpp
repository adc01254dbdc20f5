#include "n3dmm/model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <sstream>

#include "n3dmm/error.hpp"
#include "n3dmm/ops.hpp"
#include "n3dmm/random.hpp"

namespace n3dmm {

namespace {

int broadcast_at(const std::vector<int>& values, int level, int fallback) {
  if (values.empty()) return fallback;
  if (values.size() == 1) return values[0];
  return values.at(static_cast<std::size_t>(level));
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    item = item.substr(b, item.find_last_not_of(" \t") - b + 1);
    try {
      std::size_t used = 0;
      int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("{}: '{}' is not an integer list", key, text));
    }
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, text));
}

int parse_int(const std::string& key, const std::string& text) {
  auto v = parse_ints(key, text);
  if (v.size() != 1) throw ConfigError(fmt::format("{}: expected one integer, got '{}'", key, text));
  return v[0];
}

void check_list(const char* name, const std::vector<int>& values, int layers, bool allow_zero) {
  if (!values.empty() && values.size() != 1 && static_cast<int>(values.size()) != layers)
    throw ConfigError(fmt::format("{} has {} entries; expected 1 or {}", name, values.size(), layers));
  for (int v : values)
    if (v < (allow_zero ? 0 : 1)) throw ConfigError(fmt::format("{} entries must be >= {}", name, allow_zero ? 0 : 1));
}

}  // namespace

std::string to_string(ConvOperator op) { return op == ConvOperator::spiral ? "spiral" : "cheb"; }

ConvOperator parse_conv_operator(const std::string& text) {
  if (text == "spiral") return ConvOperator::spiral;
  if (text == "cheb" || text == "chebyshev") return ConvOperator::chebyshev;
  throw ConfigError(fmt::format("unknown convolution operator '{}' (expected spiral or cheb)", text));
}

std::vector<int> ModelSpec::resolved_decoder_widths() const {
  if (!decoder_widths.empty()) return decoder_widths;
  std::vector<int> out;
  for (int i = layer_count() - 1; i >= 1; --i) out.push_back(encoder_widths[static_cast<std::size_t>(i)]);
  out.push_back(signal_dim);
  return out;
}

int ModelSpec::hops_at(int level) const { return broadcast_at(hops, level, 1); }
int ModelSpec::dilation_at(int level) const { return broadcast_at(dilation, level, 1); }
int ModelSpec::spiral_length_at(int level) const { return broadcast_at(spiral_lengths, level, 0); }

void ModelSpec::validate() const {
  const int n = layer_count();
  if (n < 1) throw ConfigError("encoder_widths must not be empty");
  for (int w : encoder_widths)
    if (w < 1) throw ConfigError("encoder_widths entries must be positive");
  if (static_cast<int>(factors.size()) != n)
    throw ConfigError(fmt::format("factors has {} entries; expected one per encoder layer ({})", factors.size(), n));
  for (int f : factors)
    if (f < 1) throw ConfigError("factors entries must be >= 1");
  auto dec = resolved_decoder_widths();
  if (static_cast<int>(dec.size()) != n)
    throw ConfigError(fmt::format("decoder_widths has {} entries; expected {}", dec.size(), n));
  for (int w : dec)
    if (w < 1) throw ConfigError("decoder_widths entries must be positive");
  if (!final_identity_conv && dec.back() != signal_dim)
    throw ConfigError(fmt::format("last decoder width {} must equal signal_dim {}", dec.back(), signal_dim));
  check_list("hops", hops, n, false);
  check_list("dilation", dilation, n, false);
  check_list("spiral_lengths", spiral_lengths, n, true);
  check_list("cheb_degrees", cheb_degrees, n, true);
  if (latent_size < 1) throw ConfigError("latent_size must be positive");
  if (signal_dim < 1) throw ConfigError("signal_dim must be positive");
}

std::map<std::string, std::string> ModelSpec::to_key_values() const {
  return {
      {"conv", to_string(conv)},
      {"encoder_widths", join_ints(encoder_widths)},
      {"decoder_widths", join_ints(decoder_widths)},
      {"factors", join_ints(factors)},
      {"hops", join_ints(hops)},
      {"dilation", join_ints(dilation)},
      {"spiral_lengths", join_ints(spiral_lengths)},
      {"cheb_degrees", join_ints(cheb_degrees)},
      {"latent_size", std::to_string(latent_size)},
      {"final_identity_conv", final_identity_conv ? "true" : "false"},
      {"signal_dim", std::to_string(signal_dim)},
  };
}

ModelSpec ModelSpec::from_key_values(const std::map<std::string, std::string>& kv) {
  ModelSpec s;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("conv")) s.conv = parse_conv_operator(*v);
  if (auto v = get("encoder_widths")) s.encoder_widths = parse_ints("encoder_widths", *v);
  if (auto v = get("decoder_widths")) s.decoder_widths = parse_ints("decoder_widths", *v);
  if (auto v = get("factors")) s.factors = parse_ints("factors", *v);
  if (auto v = get("hops")) s.hops = parse_ints("hops", *v);
  if (auto v = get("dilation")) s.dilation = parse_ints("dilation", *v);
  if (auto v = get("spiral_lengths")) s.spiral_lengths = parse_ints("spiral_lengths", *v);
  if (auto v = get("cheb_degrees")) s.cheb_degrees = parse_ints("cheb_degrees", *v);
  if (auto v = get("latent_size")) s.latent_size = parse_int("latent_size", *v);
  if (auto v = get("final_identity_conv")) s.final_identity_conv = parse_bool("final_identity_conv", *v);
  if (auto v = get("signal_dim")) s.signal_dim = parse_int("signal_dim", *v);
  return s;
}

std::vector<SpiralConfig> level_spiral_configs(const ModelSpec& spec, const MeshHierarchy& hierarchy,
                                               const SpiralConfig& base) {
  std::vector<SpiralConfig> out;
  for (int level = 0; level < spec.layer_count(); ++level) {
    SpiralConfig c = base;
    c.hops = spec.hops_at(level);
    c.dilation = spec.dilation_at(level);
    c.length = spec.spiral_length_at(level);
    c.reference_vertex = map_vertex_to_level(hierarchy, base.reference_vertex, level);
    c.seed = derive_seed(base.seed, 0x5eed, static_cast<std::uint64_t>(level));
    out.push_back(c);
  }
  return out;
}

std::size_t closed_form_parameter_count(const ModelSpec& spec, const std::vector<int>& taps_per_level,
                                        int coarsest_vertex_count) {
  const int n = spec.layer_count();
  auto term = [](std::size_t out, std::size_t taps, std::size_t in) { return out * (taps * in + 1); };
  std::size_t total = 0;
  std::size_t in = static_cast<std::size_t>(spec.signal_dim);
  for (int i = 0; i < n; ++i) {
    auto out = static_cast<std::size_t>(spec.encoder_widths[static_cast<std::size_t>(i)]);
    total += term(out, static_cast<std::size_t>(taps_per_level[static_cast<std::size_t>(i)]), in);
    in = out;
  }
  const auto lw = static_cast<std::size_t>(coarsest_vertex_count) * in;
  const auto d = static_cast<std::size_t>(spec.latent_size);
  total += (lw + 1) * d + d * lw + lw;
  auto dec = spec.resolved_decoder_widths();
  for (int j = 0; j < n; ++j) {
    auto level = static_cast<std::size_t>(n - 1 - j);
    auto out = static_cast<std::size_t>(dec[static_cast<std::size_t>(j)]);
    total += term(out, static_cast<std::size_t>(taps_per_level[level]), in);
    in = out;
  }
  if (spec.final_identity_conv)
    total += term(static_cast<std::size_t>(spec.signal_dim), static_cast<std::size_t>(taps_per_level[0]), in);
  return total;
}

Neural3DMM::Neural3DMM(ModelSpec spec, std::shared_ptr<const MeshHierarchy> hierarchy,
                       std::vector<std::shared_ptr<const SpiralTable>> tables, std::uint64_t seed)
    : spec_(std::move(spec)), hierarchy_(std::move(hierarchy)), tables_(std::move(tables)) {
  spec_.validate();
  const int n = spec_.layer_count();
  if (!hierarchy_) throw ConfigError("model needs a mesh hierarchy");
  if (hierarchy_->depth() != n || hierarchy_->factors != spec_.factors)
    throw ConfigError(fmt::format("hierarchy factors [{}] do not match model factors [{}]",
                                  join_ints(hierarchy_->factors), join_ints(spec_.factors)));
  const bool need_tables = spec_.conv == ConvOperator::spiral || spec_.cheb_degrees.empty();
  if (need_tables) {
    if (static_cast<int>(tables_.size()) != n)
      throw ConfigError(fmt::format("expected {} spiral tables, got {}", n, tables_.size()));
    for (int i = 0; i < n; ++i) {
      const auto& t = tables_[static_cast<std::size_t>(i)];
      if (!t || t->vertex_count != hierarchy_->vertex_count(i))
        throw ConfigError(fmt::format("spiral table {} does not match hierarchy level {}", i, i));
    }
  }

  std::vector<std::shared_ptr<const CsrMatrix>> laplacians;
  for (int i = 0; i < n; ++i) {
    const auto& level = hierarchy_->levels[static_cast<std::size_t>(i)];
    down_.push_back(std::make_shared<const CsrMatrix>(level.downsample_matrix()));
    up_.push_back(std::make_shared<const CsrMatrix>(level.upsample_matrix()));
    if (spec_.conv == ConvOperator::spiral) {
      taps_.push_back(tables_[static_cast<std::size_t>(i)]->length);
    } else {
      int degree = spec_.cheb_degrees.empty() ? tables_[static_cast<std::size_t>(i)]->length - 1
                                              : broadcast_at(spec_.cheb_degrees, i, 0);
      taps_.push_back(degree + 1);
      laplacians.push_back(std::make_shared<const CsrMatrix>(nn::scaled_laplacian(hierarchy_->mesh(i))));
    }
  }

  Rng rng(seed);
  auto make_conv = [&](int level, std::size_t in, std::size_t out) -> Conv {
    auto l = static_cast<std::size_t>(level);
    if (spec_.conv == ConvOperator::spiral) return nn::SpiralConv(tables_[l], in, out, rng);
    return nn::ChebConv(laplacians[l], taps_[l] - 1, in, out, rng);
  };

  std::size_t in = static_cast<std::size_t>(spec_.signal_dim);
  for (int i = 0; i < n; ++i) {
    auto out = static_cast<std::size_t>(spec_.encoder_widths[static_cast<std::size_t>(i)]);
    encoder_.push_back(make_conv(i, in, out));
    in = out;
  }
  const auto lw = static_cast<std::size_t>(hierarchy_->vertex_count(n)) * in;
  const auto d = static_cast<std::size_t>(spec_.latent_size);
  fc_enc_.emplace_back(lw, d, rng);
  fc_dec_.emplace_back(d, lw, rng);
  auto dec = spec_.resolved_decoder_widths();
  for (int j = 0; j < n; ++j) {
    auto out = static_cast<std::size_t>(dec[static_cast<std::size_t>(j)]);
    decoder_.push_back(make_conv(n - 1 - j, in, out));
    in = out;
  }
  if (spec_.final_identity_conv)
    final_.push_back(make_conv(0, in, static_cast<std::size_t>(spec_.signal_dim)));
}

nn::Tensor Neural3DMM::apply_conv(const Conv& conv, int level, const nn::Tensor& x,
                                  const OrderingOverride* ordering) const {
  if (const auto* sc = std::get_if<nn::SpiralConv>(&conv)) {
    if (ordering && !ordering->empty()) {
      const auto& tables = ordering->at(static_cast<std::size_t>(level));
      return sc->forward(x, tables);
    }
    return sc->forward(x);
  }
  return std::get<nn::ChebConv>(conv).forward(x);
}

nn::Tensor Neural3DMM::encode(const nn::Tensor& x, const OrderingOverride* ordering) const {
  const int n = spec_.layer_count();
  if (x.rank() != 3 || x.dim(1) != static_cast<std::size_t>(vertex_count()) ||
      x.dim(2) != static_cast<std::size_t>(spec_.signal_dim))
    throw ShapeError(fmt::format("encoder expects [B, {}, {}], got {}", vertex_count(), spec_.signal_dim,
                                 nn::shape_string(x.shape())));
  nn::Tensor h = x;
  for (int i = 0; i < n; ++i) {
    h = nn::elu(apply_conv(encoder_[static_cast<std::size_t>(i)], i, h, ordering));
    h = nn::sparse_apply(down_[static_cast<std::size_t>(i)], h);
  }
  const std::size_t batch = h.dim(0);
  h = nn::reshape(h, {batch, h.dim(1) * h.dim(2)});
  return fc_enc_[0].forward(h);
}

nn::Tensor Neural3DMM::decode(const nn::Tensor& z, const OrderingOverride* ordering) const {
  const int n = spec_.layer_count();
  if (z.rank() != 2 || z.dim(1) != static_cast<std::size_t>(spec_.latent_size))
    throw ShapeError(fmt::format("decoder expects [B, {}], got {}", spec_.latent_size, nn::shape_string(z.shape())));
  const std::size_t batch = z.dim(0);
  const auto coarse = static_cast<std::size_t>(hierarchy_->vertex_count(n));
  const auto width = static_cast<std::size_t>(spec_.encoder_widths.back());
  nn::Tensor h = nn::reshape(fc_dec_[0].forward(z), {batch, coarse, width});
  for (int j = 0; j < n; ++j) {
    const int level = n - 1 - j;
    h = nn::sparse_apply(up_[static_cast<std::size_t>(level)], h);
    h = apply_conv(decoder_[static_cast<std::size_t>(j)], level, h, ordering);
    if (j + 1 < n || spec_.final_identity_conv) h = nn::elu(h);
  }
  if (spec_.final_identity_conv) h = apply_conv(final_[0], 0, h, ordering);
  return h;
}

std::vector<std::pair<std::string, nn::Tensor>> Neural3DMM::named_parameters() const {
  std::vector<std::pair<std::string, nn::Tensor>> out;
  auto add_conv = [&](const std::string& prefix, const Conv& conv) {
    std::visit(
        [&](const auto& c) {
          out.emplace_back(prefix + ".weight", c.weight);
          out.emplace_back(prefix + ".bias", c.bias);
        },
        conv);
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) add_conv(fmt::format("enc.{}", i), encoder_[i]);
  out.emplace_back("fc_enc.weight", fc_enc_[0].weight);
  out.emplace_back("fc_enc.bias", fc_enc_[0].bias);
  out.emplace_back("fc_dec.weight", fc_dec_[0].weight);
  out.emplace_back("fc_dec.bias", fc_dec_[0].bias);
  for (std::size_t j = 0; j < decoder_.size(); ++j) add_conv(fmt::format("dec.{}", j), decoder_[j]);
  for (const auto& c : final_) add_conv("final", c);
  return out;
}

std::vector<nn::Tensor> Neural3DMM::parameters() const {
  std::vector<nn::Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t Neural3DMM::parameter_count() const {
  std::size_t total = 0;
  for (const auto& t : parameters()) total += t.size();
  return total;
}

void Neural3DMM::export_parameters(Checkpoint& checkpoint) const {
  for (const auto& [name, t] : named_parameters()) {
    auto v = t.values();
    checkpoint.arrays.push_back({"param." + name, t.shape(), std::vector<double>(v.begin(), v.end())});
  }
}

void Neural3DMM::import_parameters(const Checkpoint& checkpoint) {
  for (auto& [name, t] : named_parameters()) {
    const NamedArray* a = checkpoint.find("param." + name);
    if (!a) throw DataError(fmt::format("checkpoint is missing parameter '{}'", name));
    if (a->shape != t.shape())
      throw DataError(fmt::format("checkpoint parameter '{}' has shape {}, model expects {}", name,
                                  nn::shape_string(a->shape), nn::shape_string(t.shape())));
    nn::Tensor target = t;
    std::copy(a->values.begin(), a->values.end(), target.mutable_values().begin());
  }
}

}  // namespace n3dmm
