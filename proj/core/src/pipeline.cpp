#include "n3dmm/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "n3dmm/binary_io.hpp"
#include "n3dmm/checkpoint.hpp"
#include "n3dmm/error.hpp"
#include "n3dmm/ops.hpp"
#include "n3dmm/random.hpp"

namespace n3dmm {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (!in || !(in >> std::ws).eof()) throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, text));
  return v;
}

std::string format_double(double v) { return fmt::format("{}", v); }

const std::vector<std::string>& model_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [key, value] : ModelSpec{}.to_key_values()) k.push_back(key);
    return k;
  }();
  return keys;
}

}  // namespace

std::map<std::string, std::string> RunConfig::to_key_values() const {
  auto kv = model.to_key_values();
  kv["dataset"] = dataset.string();
  kv["output"] = output.string();
  kv["cache"] = cache.string();
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["seed"] = std::to_string(seed);
  kv["max_train_samples"] = std::to_string(max_train_samples);
  kv["lr"] = format_double(optimizer.learning_rate);
  kv["lr_decay"] = format_double(optimizer.lr_decay);
  kv["weight_decay"] = format_double(optimizer.weight_decay);
  kv["beta1"] = format_double(optimizer.beta1);
  kv["beta2"] = format_double(optimizer.beta2);
  kv["adam_epsilon"] = format_double(optimizer.epsilon);
  kv["orientation"] = to_string(spiral.orientation);
  kv["ordering_mode"] = to_string(spiral.ordering_mode);
  kv["ordering_seed"] = std::to_string(spiral.seed);
  kv["reference_vertex"] = std::to_string(spiral.reference_vertex);
  return kv;
}

RunConfig RunConfig::from_key_values(const std::map<std::string, std::string>& kv, const RunConfig& base) {
  RunConfig c = base;
  std::map<std::string, std::string> model_kv = base.model.to_key_values();
  for (const auto& [key, value] : kv) {
    if (std::find(model_keys().begin(), model_keys().end(), key) != model_keys().end()) {
      model_kv[key] = value;
    } else if (key == "dataset") {
      c.dataset = value;
    } else if (key == "output") {
      c.output = value;
    } else if (key == "cache") {
      c.cache = value;
    } else if (key == "epochs") {
      c.epochs = parse_number<int>(key, value);
    } else if (key == "batch_size") {
      c.batch_size = parse_number<int>(key, value);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "max_train_samples") {
      c.max_train_samples = parse_number<int>(key, value);
    } else if (key == "lr") {
      c.optimizer.learning_rate = parse_number<double>(key, value);
    } else if (key == "lr_decay") {
      c.optimizer.lr_decay = parse_number<double>(key, value);
    } else if (key == "weight_decay") {
      c.optimizer.weight_decay = parse_number<double>(key, value);
    } else if (key == "beta1") {
      c.optimizer.beta1 = parse_number<double>(key, value);
    } else if (key == "beta2") {
      c.optimizer.beta2 = parse_number<double>(key, value);
    } else if (key == "adam_epsilon") {
      c.optimizer.epsilon = parse_number<double>(key, value);
    } else if (key == "orientation") {
      c.spiral.orientation = parse_orientation(value);
    } else if (key == "ordering_mode") {
      c.spiral.ordering_mode = parse_ordering_mode(value);
    } else if (key == "ordering_seed") {
      c.spiral.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "reference_vertex") {
      c.spiral.reference_vertex = parse_number<int>(key, value);
    } else {
      throw ConfigError(fmt::format("unknown configuration key '{}'", key));
    }
  }
  c.model = ModelSpec::from_key_values(model_kv);
  if (c.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (c.max_train_samples < 0) throw ConfigError("max_train_samples must be non-negative");
  return c;
}

RunConfig RunConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  return from_key_values(kv, RunConfig{});
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", number));
    auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("line {}: empty key", number));
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return RunConfig::from_key_values(parse_key_values(ss.str()));
}

void save_run_config(const fs::path& path, const RunConfig& config) {
  std::string text;
  for (const auto& [key, value] : config.to_key_values()) text += fmt::format("{} = {}\n", key, value);
  write_binary_file(path, text);
}

// ---------------------------------------------------------------- preprocessing

namespace {

std::uint64_t bundle_key(const Mesh& mesh, const ModelSpec& spec, const std::vector<SpiralConfig>& configs) {
  ByteWriter w;
  w.put(topology_hash(mesh));
  for (const auto& v : mesh.vertices) w.put_all<double>(std::span<const double>(v.data(), 3));
  for (int f : spec.factors) w.put(static_cast<std::int32_t>(f));
  for (const auto& c : configs) {
    w.put(static_cast<std::int32_t>(c.hops));
    w.put(static_cast<std::int32_t>(c.length));
    w.put(static_cast<std::int32_t>(c.dilation));
    w.put(static_cast<std::int32_t>(c.reference_vertex));
    w.put(static_cast<std::uint8_t>(c.orientation));
  }
  return fnv1a(w.bytes());
}

}  // namespace

Bundle preprocess(const Mesh& template_mesh, const ModelSpec& spec, const SpiralConfig& spiral,
                  const fs::path& cache_dir) {
  spec.validate();
  validate_mesh(template_mesh);
  if (spiral.reference_vertex < 0 || spiral.reference_vertex >= template_mesh.vertex_count())
    throw ConfigError(fmt::format("reference vertex {} out of range", spiral.reference_vertex));

  Bundle b;
  auto hierarchy = std::make_shared<MeshHierarchy>();
  std::string hierarchy_bytes;
  std::vector<std::string> table_bytes;
  const int n = spec.layer_count();

  // Reference vertices at coarse levels need the hierarchy, so the key is
  // computed from the level-0 view of the configuration.
  std::vector<SpiralConfig> key_configs;
  for (int level = 0; level < n; ++level) {
    SpiralConfig c = spiral;
    c.hops = spec.hops_at(level);
    c.dilation = spec.dilation_at(level);
    c.length = spec.spiral_length_at(level);
    key_configs.push_back(c);
  }
  b.key = bundle_key(template_mesh, spec, key_configs);

  const fs::path key_file = cache_dir.empty() ? fs::path{} : cache_dir / "bundle.key";
  bool loaded = false;
  if (!cache_dir.empty() && fs::exists(key_file)) {
    try {
      if (trim(read_binary_file(key_file)) == fmt::format("{:016x}", b.key)) {
        hierarchy_bytes = read_binary_file(cache_dir / "hierarchy.n3hi");
        *hierarchy = decode_hierarchy(hierarchy_bytes, template_mesh);
        for (int level = 0; level < n; ++level) {
          table_bytes.push_back(read_binary_file(cache_dir / fmt::format("spiral_{}.n3sp", level)));
          auto t = std::make_shared<SpiralTable>(decode_spiral_table(table_bytes.back()));
          b.tables.push_back(t);
        }
        loaded = true;
      }
    } catch (const DataError&) {
      loaded = false;
    }
  }
  if (!loaded) {
    b.tables.clear();
    table_bytes.clear();
    *hierarchy = build_hierarchy(template_mesh, spec.factors);
    hierarchy_bytes = encode_hierarchy(*hierarchy);
  }
  b.configs = level_spiral_configs(spec, *hierarchy, spiral);
  for (int level = 0; level < n; ++level) {
    const auto& cfg = b.configs[static_cast<std::size_t>(level)];
    std::shared_ptr<const SpiralGenerator> gen;
    if (!loaded || cfg.ordering_mode != OrderingMode::fixed)
      gen = std::make_shared<SpiralGenerator>(hierarchy->mesh(level), cfg);
    if (!loaded) {
      b.tables.push_back(std::make_shared<SpiralTable>(gen->fixed_table()));
      table_bytes.push_back(encode_spiral_table(*b.tables.back()));
    } else {
      // Cached tables do not store the reference vertex.
      auto t = std::make_shared<SpiralTable>(*b.tables[static_cast<std::size_t>(level)]);
      t->config.reference_vertex = cfg.reference_vertex;
      t->config.ordering_mode = cfg.ordering_mode;
      t->config.seed = cfg.seed;
      b.tables[static_cast<std::size_t>(level)] = t;
    }
    if (cfg.ordering_mode != OrderingMode::fixed) b.generators.push_back(gen);
  }

  std::string all = hierarchy_bytes;
  for (const auto& t : table_bytes) all += t;
  b.checksum = fnv1a(all);
  b.hierarchy = hierarchy;
  b.from_cache = loaded;

  if (!cache_dir.empty() && !loaded) {
    fs::create_directories(cache_dir);
    write_binary_file(cache_dir / "hierarchy.n3hi", hierarchy_bytes);
    for (int level = 0; level < n; ++level)
      write_binary_file(cache_dir / fmt::format("spiral_{}.n3sp", level), table_bytes[static_cast<std::size_t>(level)]);
    write_binary_file(key_file, fmt::format("{:016x}\n", b.key));
  }
  return b;
}

// ---------------------------------------------------------------- inference

namespace {

constexpr int kInferenceBatch = 64;

nn::Tensor batch_tensor(std::span<const FeatureMatrix> shapes, std::size_t begin, std::size_t end,
                        const NormalizationStats* stats) {
  const auto m = static_cast<std::size_t>(shapes[begin].rows());
  const auto w = static_cast<std::size_t>(shapes[begin].cols());
  std::vector<double> values;
  values.reserve((end - begin) * m * w);
  for (std::size_t i = begin; i < end; ++i) {
    const FeatureMatrix x = stats ? stats->normalize(shapes[i]) : shapes[i];
    values.insert(values.end(), x.data(), x.data() + x.size());
  }
  return nn::Tensor({end - begin, m, w}, std::move(values));
}

}  // namespace

OrderingOverride TrainedModel::ordering_for(std::span<const int> sample_ids, std::size_t epoch) const {
  if (bundle.generators.empty() || sample_ids.empty()) return {};
  OrderingOverride out(bundle.generators.size());
  for (std::size_t level = 0; level < bundle.generators.size(); ++level) {
    const auto& gen = *bundle.generators[level];
    std::shared_ptr<const SpiralTable> shared;
    for (int id : sample_ids) {
      if (id < 0) {
        out[level].push_back(bundle.tables[level]);
      } else if (gen.config().ordering_mode == OrderingMode::rand_epoch) {
        if (!shared) shared = std::make_shared<SpiralTable>(gen.table_for(0, epoch));
        out[level].push_back(shared);
      } else {
        out[level].push_back(std::make_shared<SpiralTable>(gen.table_for(static_cast<std::size_t>(id), epoch)));
      }
    }
  }
  return out;
}

Eigen::MatrixXd TrainedModel::encode(std::span<const FeatureMatrix> shapes, std::span<const int> sample_ids) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(shapes.size()), model->latent_size());
  for (std::size_t b = 0; b < shapes.size(); b += kInferenceBatch) {
    const std::size_t e = std::min(shapes.size(), b + kInferenceBatch);
    const auto ordering =
        sample_ids.empty() ? OrderingOverride{} : ordering_for(sample_ids.subspan(b, e - b), config.epochs);
    nn::Tensor z = model->encode(batch_tensor(shapes, b, e, &stats), ordering.empty() ? nullptr : &ordering);
    auto v = z.values();
    for (std::size_t i = b; i < e; ++i)
      for (int k = 0; k < model->latent_size(); ++k)
        out(static_cast<Eigen::Index>(i), k) = v[(i - b) * static_cast<std::size_t>(model->latent_size()) + static_cast<std::size_t>(k)];
  }
  return out;
}

std::vector<FeatureMatrix> TrainedModel::decode(const Eigen::MatrixXd& latents, std::span<const int> sample_ids) const {
  const auto d = static_cast<std::size_t>(model->latent_size());
  if (static_cast<std::size_t>(latents.cols()) != d)
    throw ShapeError(fmt::format("latent codes have {} columns, model expects {}", latents.cols(), d));
  const auto n = static_cast<std::size_t>(latents.rows());
  const auto m = static_cast<Eigen::Index>(model->vertex_count());
  const auto w = static_cast<Eigen::Index>(model->spec().signal_dim);
  std::vector<FeatureMatrix> out;
  for (std::size_t b = 0; b < n; b += kInferenceBatch) {
    const std::size_t e = std::min(n, b + kInferenceBatch);
    std::vector<double> values;
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t k = 0; k < d; ++k) values.push_back(latents(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    const auto ordering =
        sample_ids.empty() ? OrderingOverride{} : ordering_for(sample_ids.subspan(b, e - b), config.epochs);
    nn::Tensor y = model->decode(nn::Tensor({e - b, d}, std::move(values)), ordering.empty() ? nullptr : &ordering);
    auto v = y.values();
    for (std::size_t i = b; i < e; ++i) {
      FeatureMatrix x = Eigen::Map<const FeatureMatrix>(v.data() + (i - b) * static_cast<std::size_t>(m * w), m, w);
      out.push_back(stats.denormalize(x));
    }
  }
  return out;
}

std::vector<FeatureMatrix> TrainedModel::reconstruct(std::span<const FeatureMatrix> shapes,
                                                     std::span<const int> sample_ids) const {
  std::vector<FeatureMatrix> out;
  out.reserve(shapes.size());
  for (std::size_t b = 0; b < shapes.size(); b += kInferenceBatch) {
    const std::size_t e = std::min(shapes.size(), b + kInferenceBatch);
    const auto ordering =
        sample_ids.empty() ? OrderingOverride{} : ordering_for(sample_ids.subspan(b, e - b), config.epochs);
    const OrderingOverride* ord = ordering.empty() ? nullptr : &ordering;
    nn::Tensor y = model->decode(model->encode(batch_tensor(shapes, b, e, &stats), ord), ord);
    const auto m = shapes[b].rows();
    const auto w = shapes[b].cols();
    auto v = y.values();
    for (std::size_t i = b; i < e; ++i) {
      FeatureMatrix x = Eigen::Map<const FeatureMatrix>(v.data() + (i - b) * static_cast<std::size_t>(m * w), m, w);
      out.push_back(stats.denormalize(x));
    }
  }
  return out;
}

// ---------------------------------------------------------------- metrics

std::string metrics_csv(std::span<const EpochMetrics> metrics) {
  std::string out = "epoch,lr,train_loss,val_loss,val_mm\n";
  for (const auto& m : metrics)
    out += fmt::format("{},{:.10e},{:.10e},{:.10e},{:.10e}\n", m.epoch, m.learning_rate, m.train_loss, m.val_loss,
                       m.val_mm);
  return out;
}

EvalResult reconstruction_error(std::span<const FeatureMatrix> truth, std::span<const FeatureMatrix> predicted) {
  if (truth.empty()) throw DataError("cannot evaluate an empty split");
  if (truth.size() != predicted.size())
    throw ShapeError(fmt::format("{} targets but {} predictions", truth.size(), predicted.size()));
  EvalResult r;
  const auto m = truth[0].rows();
  r.per_vertex_mm.assign(static_cast<std::size_t>(m), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i].rows() != m || predicted[i].rows() != m || truth[i].cols() != predicted[i].cols())
      throw ShapeError(fmt::format("shape {} does not match the others", i));
    Eigen::VectorXd dist = (truth[i] - predicted[i]).rowwise().norm();
    for (Eigen::Index v = 0; v < m; ++v) r.per_vertex_mm[static_cast<std::size_t>(v)] += dist(v);
    r.per_sample_mm.push_back(dist.mean());
    total += r.per_sample_mm.back();
  }
  for (auto& v : r.per_vertex_mm) v /= static_cast<double>(truth.size());
  r.mean_mm = total / static_cast<double>(truth.size());
  return r;
}

EvalResult evaluate_generalisation(const TrainedModel& trained, const Dataset& dataset, const std::vector<int>& split) {
  if (split.empty()) throw DataError("cannot evaluate an empty split");
  if (topology_hash(dataset.template_mesh) != trained.template_hash)
    throw DataError("dataset template does not match the model's template");
  const auto shapes = dataset.gather(split);
  const auto recon = trained.reconstruct(shapes, split);
  return reconstruction_error(shapes, recon);
}

Eigen::MatrixXd flatten_shapes(std::span<const FeatureMatrix> shapes) {
  if (shapes.empty()) return {};
  const auto dim = shapes[0].size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(shapes.size()), dim);
  for (std::size_t i = 0; i < shapes.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(shapes[i].data(), dim);
  return out;
}

FeatureMatrix unflatten_shape(const Eigen::VectorXd& flat) {
  if (flat.size() % 3 != 0) throw ShapeError("flattened shape length is not a multiple of 3");
  return Eigen::Map<const FeatureMatrix>(flat.data(), flat.size() / 3, 3);
}

EvalResult evaluate_pca(const Dataset& dataset, const std::vector<int>& train, const std::vector<int>& split, int k) {
  if (split.empty()) throw DataError("cannot evaluate an empty split");
  const auto train_shapes = dataset.gather(train);
  const PCAModel pca = pca_fit(flatten_shapes(train_shapes), k);
  const auto shapes = dataset.gather(split);
  std::vector<FeatureMatrix> recon;
  for (const auto& s : shapes) {
    Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(s.data(), s.size());
    recon.push_back(unflatten_shape(pca.reconstruct(flat)));
  }
  return reconstruction_error(shapes, recon);
}

// ---------------------------------------------------------------- checkpoints

void save_trained_model(const fs::path& path, const TrainedModel& trained, int epoch) {
  Checkpoint ck;
  ck.metadata["format"] = "neural3dmm";
  ck.metadata["template_hash"] = fmt::format("{:016x}", trained.template_hash);
  ck.metadata["epoch"] = std::to_string(epoch);
  for (const auto& [key, value] : trained.config.to_key_values()) ck.metadata["config." + key] = value;
  trained.model->export_parameters(ck);
  const auto& s = trained.stats;
  const nn::Shape shape{static_cast<std::size_t>(s.mean.rows()), static_cast<std::size_t>(s.mean.cols())};
  ck.arrays.push_back({"stats.mean", shape, std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())});
  ck.arrays.push_back({"stats.std", shape, std::vector<double>(s.std.data(), s.std.data() + s.std.size())});
  save_checkpoint(path, ck);
}

TrainedModel load_trained_model(const fs::path& path, const Mesh& template_mesh, const fs::path& cache_dir) {
  const Checkpoint ck = load_checkpoint(path);
  auto fmt_it = ck.metadata.find("format");
  if (fmt_it == ck.metadata.end() || fmt_it->second != "neural3dmm")
    throw DataError(fmt::format("{} is not a model checkpoint", path.string()));
  const std::string expected = fmt::format("{:016x}", topology_hash(template_mesh));
  if (ck.metadata.at("template_hash") != expected)
    throw DataError(fmt::format("checkpoint template hash {} does not match template {}", ck.metadata.at("template_hash"),
                                expected));
  std::map<std::string, std::string> kv;
  for (const auto& [key, value] : ck.metadata)
    if (key.rfind("config.", 0) == 0) kv[key.substr(7)] = value;

  TrainedModel t;
  t.config = RunConfig::from_key_values(kv);
  t.template_hash = topology_hash(template_mesh);
  t.bundle = preprocess(template_mesh, t.config.model, t.config.spiral, cache_dir);
  t.model = std::make_shared<Neural3DMM>(t.config.model, t.bundle.hierarchy, t.bundle.tables, 0);
  t.model->import_parameters(ck);
  const auto& mean = ck.array("stats.mean");
  const auto& std_ = ck.array("stats.std");
  const auto m = static_cast<Eigen::Index>(template_mesh.vertex_count());
  if (mean.values.size() != static_cast<std::size_t>(m * 3) || std_.values.size() != mean.values.size())
    throw DataError("checkpoint normalisation statistics do not match the template");
  t.stats.mean = Eigen::Map<const FeatureMatrix>(mean.values.data(), m, 3);
  t.stats.std = Eigen::Map<const FeatureMatrix>(std_.values.data(), m, 3);
  return t;
}

// ---------------------------------------------------------------- training

TrainResult train(const Dataset& dataset, const RunConfig& config, const TrainOptions& options) {
  dataset.validate();
  std::vector<int> train_ids = dataset.train;
  if (config.max_train_samples > 0 && static_cast<int>(train_ids.size()) > config.max_train_samples)
    train_ids.resize(static_cast<std::size_t>(config.max_train_samples));
  if (train_ids.empty()) throw DataError("training split is empty");
  if (config.batch_size < 1) throw ConfigError("batch_size must be positive");

  fs::path cache = config.cache;
  if (cache.empty() && !config.output.empty()) cache = config.output / "cache";

  TrainResult result;
  TrainedModel& t = result.trained;
  t.config = config;
  t.template_hash = topology_hash(dataset.template_mesh);
  t.bundle = preprocess(dataset.template_mesh, config.model, config.spiral, cache);
  t.model = std::make_shared<Neural3DMM>(config.model, t.bundle.hierarchy, t.bundle.tables,
                                         derive_seed(config.seed, 0x1417));
  const auto train_shapes = dataset.gather(train_ids);
  t.stats = NormalizationStats::compute(train_shapes);

  const auto m = static_cast<std::size_t>(dataset.template_mesh.vertex_count());
  const auto w = static_cast<std::size_t>(config.model.signal_dim);
  std::vector<std::vector<double>> normalized;
  for (const auto& s : train_shapes) {
    FeatureMatrix x = t.stats.normalize(s);
    normalized.emplace_back(x.data(), x.data() + x.size());
  }
  std::vector<FeatureMatrix> val_shapes = dataset.gather(dataset.val);
  std::vector<double> val_flat;
  for (const auto& s : val_shapes) {
    FeatureMatrix x = t.stats.normalize(s);
    val_flat.insert(val_flat.end(), x.data(), x.data() + x.size());
  }

  const auto params = t.model->parameters();
  nn::Adam adam(params, config.optimizer);
  const bool randomized = !t.bundle.generators.empty();

  std::vector<std::vector<double>> best;
  double best_score = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<std::size_t> order(train_ids.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.learning_rate = adam.learning_rate();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(config.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      std::vector<double> values;
      values.reserve((e - b) * m * w);
      std::vector<int> ids;
      for (std::size_t i = b; i < e; ++i) {
        values.insert(values.end(), normalized[order[i]].begin(), normalized[order[i]].end());
        ids.push_back(train_ids[order[i]]);
      }
      nn::Tensor x({e - b, m, w}, std::move(values));
      const auto ordering = randomized ? t.ordering_for(ids, static_cast<std::size_t>(epoch)) : OrderingOverride{};
      const OrderingOverride* ord = ordering.empty() ? nullptr : &ordering;
      nn::Tensor loss = nn::l1_loss(t.model->decode(t.model->encode(x, ord), ord), x);
      const double value = loss.item();
      if (!std::isfinite(value))
        throw NumericError(fmt::format("non-finite training loss at epoch {} (learning rate {:.6g})", epoch + 1,
                                       adam.learning_rate()));
      nn::backward(loss);
      adam.step();
      adam.zero_grad();
      loss_sum += value * static_cast<double>(e - b);
    }
    em.train_loss = loss_sum / static_cast<double>(order.size());
    adam.end_epoch();

    double score = em.train_loss;
    if (!val_shapes.empty()) {
      const auto recon = t.reconstruct(val_shapes, dataset.val);
      double l1 = 0.0;
      std::size_t k = 0;
      for (const auto& r : recon) {
        FeatureMatrix rn = t.stats.normalize(r);
        for (Eigen::Index j = 0; j < rn.size(); ++j) l1 += std::abs(rn.data()[j] - val_flat[k++]);
      }
      em.val_loss = l1 / static_cast<double>(val_flat.size());
      em.val_mm = reconstruction_error(val_shapes, recon).mean_mm;
      score = em.val_loss;
    } else {
      em.val_loss = nan;
      em.val_mm = nan;
    }
    if (score < best_score) {
      best_score = score;
      result.best_epoch = em.epoch;
      best.clear();
      for (const auto& p : params) best.emplace_back(p.values().begin(), p.values().end());
    }
    result.metrics.push_back(em);
    if (options.on_epoch) options.on_epoch(em);
  }

  if (!best.empty())
    for (std::size_t i = 0; i < params.size(); ++i) {
      nn::Tensor p = params[i];
      std::copy(best[i].begin(), best[i].end(), p.mutable_values().begin());
    }

  if (!config.output.empty()) {
    fs::create_directories(config.output);
    save_trained_model(config.output / "checkpoint.n3ck", t, result.best_epoch);
    write_binary_file(config.output / "metrics.csv", metrics_csv(result.metrics));
    save_run_config(config.output / "run.cfg", config);
  }
  return result;
}

// ---------------------------------------------------------------- latent arithmetic

std::vector<FeatureMatrix> latent_extrapolate(const TrainedModel& trained, const FeatureMatrix& x1,
                                              const FeatureMatrix& x2, std::span<const double> a_values) {
  const std::vector<FeatureMatrix> pair{x1, x2};
  const Eigen::MatrixXd z = trained.encode(pair);
  Eigen::MatrixXd codes(static_cast<Eigen::Index>(a_values.size()), z.cols());
  for (std::size_t i = 0; i < a_values.size(); ++i) {
    const double a = a_values[i];
    codes.row(static_cast<Eigen::Index>(i)) = a * z.row(0) + (1.0 - a) * z.row(1);
  }
  return trained.decode(codes);
}

std::vector<FeatureMatrix> latent_interpolate(const TrainedModel& trained, const FeatureMatrix& x1,
                                              const FeatureMatrix& x2, int steps) {
  if (steps < 1) throw ConfigError("interpolation needs at least one step");
  std::vector<double> a(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) a[static_cast<std::size_t>(i)] = steps == 1 ? 1.0 : 1.0 - static_cast<double>(i) / (steps - 1);
  return latent_extrapolate(trained, x1, x2, a);
}

FeatureMatrix latent_analogy(const TrainedModel& trained, const FeatureMatrix& a, const FeatureMatrix& b,
                             const FeatureMatrix& c) {
  const std::vector<FeatureMatrix> shapes{a, b, c};
  const Eigen::MatrixXd z = trained.encode(shapes);
  Eigen::MatrixXd d = z.row(1) - z.row(0) + z.row(2);
  return trained.decode(d)[0];
}

// ---------------------------------------------------------------- diagnostics

std::vector<double> impulse_response(const Neural3DMM::Conv& conv, int vertex_count, int vertex) {
  if (vertex < 0 || vertex >= vertex_count)
    throw ConfigError(fmt::format("impulse vertex {} out of range [0, {})", vertex, vertex_count));
  const auto m = static_cast<std::size_t>(vertex_count);
  const std::size_t in = std::visit([](const auto& c) { return c.in_features(); }, conv);
  const std::size_t out = std::visit([](const auto& c) { return c.out_features(); }, conv);
  std::vector<double> delta(m * in, 0.0);
  for (std::size_t k = 0; k < in; ++k) delta[static_cast<std::size_t>(vertex) * in + k] = 1.0;
  nn::Tensor x({1, m, in}, std::move(delta));
  nn::Tensor zero({1, m, in});
  auto run = [&](const nn::Tensor& t) { return std::visit([&](const auto& c) { return c.forward(t); }, conv); };
  const nn::Tensor y = run(x);
  const nn::Tensor y0 = run(zero);
  std::vector<double> mag(m, 0.0);
  for (std::size_t v = 0; v < m; ++v) {
    double s = 0.0;
    for (std::size_t k = 0; k < out; ++k) {
      double d = y.values()[v * out + k] - y0.values()[v * out + k];
      s += d * d;
    }
    mag[v] = std::sqrt(s);
  }
  return mag;
}

std::vector<Rgb> heatmap_colors(std::span<const double> values) {
  std::vector<Rgb> out;
  if (values.empty()) return out;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(sorted.size()))) - 1;
  const double hi = sorted[std::min(rank, sorted.size() - 1)];
  for (double v : values) {
    const double t = hi > 0.0 ? std::clamp(v / hi, 0.0, 1.0) : 0.0;
    out.push_back({static_cast<std::uint8_t>(std::lround(255.0 * t)), 0,
                   static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - t)))});
  }
  return out;
}

void save_heatmap_ply(const fs::path& path, const Mesh& mesh, std::span<const double> values) {
  if (static_cast<int>(values.size()) != mesh.vertex_count())
    throw ShapeError(fmt::format("{} heatmap values for {} vertices", values.size(), mesh.vertex_count()));
  const auto colors = heatmap_colors(values);
  save_ply(path, mesh, PlyEncoding::binary_little_endian, colors);
}

// ---------------------------------------------------------------- ablations

AblationAxis parse_ablation_axis(const std::string& text) {
  if (text == "operator") return AblationAxis::conv_operator;
  if (text == "ordering_mode" || text == "ordering") return AblationAxis::ordering_mode;
  if (text == "latent_size" || text == "latent") return AblationAxis::latent_size;
  throw ConfigError(fmt::format("unknown ablation axis '{}' (operator, ordering_mode, latent_size)", text));
}

std::vector<AblationRow> run_ablation(const Dataset& dataset, const RunConfig& config, AblationAxis axis,
                                      const AblationOptions& options) {
  struct Variant {
    std::string name;
    RunConfig config;
  };
  std::vector<Variant> variants;
  auto add = [&](ConvOperator op, OrderingMode mode, int latent) {
    RunConfig c = config;
    c.model.conv = op;
    c.model.latent_size = latent;
    c.spiral.ordering_mode = mode;
    std::string name = fmt::format("{}_{}_d{}", to_string(op), to_string(mode), latent);
    if (!config.output.empty()) {
      c.output = config.output / name;
      if (config.cache.empty()) c.cache = config.output / "cache";
    }
    variants.push_back({name, c});
  };
  switch (axis) {
    case AblationAxis::conv_operator:
      for (int d : options.latent_sizes) {
        add(ConvOperator::spiral, config.spiral.ordering_mode, d);
        add(ConvOperator::chebyshev, config.spiral.ordering_mode, d);
      }
      break;
    case AblationAxis::ordering_mode:
      for (auto mode : {OrderingMode::fixed, OrderingMode::rand_mesh, OrderingMode::rand_epoch,
                        OrderingMode::rand_mesh_and_epoch})
        add(ConvOperator::spiral, mode, config.model.latent_size);
      break;
    case AblationAxis::latent_size:
      for (int d : options.latent_sizes) add(config.model.conv, config.spiral.ordering_mode, d);
      break;
  }

  const auto& eval_split = dataset.test.empty() ? dataset.val : dataset.test;
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    const auto start = std::chrono::steady_clock::now();
    TrainResult r = train(dataset, v.config, options.train);
    AblationRow row;
    row.variant = v.name;
    row.conv = v.config.model.conv;
    row.ordering = v.config.spiral.ordering_mode;
    row.latent_size = v.config.model.latent_size;
    row.params = r.trained.model->parameter_count();
    row.mm_error = evaluate_generalisation(r.trained, dataset, eval_split).mean_mm;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    row.curve = std::move(r.metrics);
    rows.push_back(std::move(row));
  }

  if (!config.output.empty()) {
    fs::create_directories(config.output / "curves");
    write_binary_file(config.output / "ablation.csv", ablation_csv(rows));
    for (const auto& row : rows)
      write_binary_file(config.output / "curves" / (row.variant + ".csv"), metrics_csv(row.curve));
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "variant,operator,ordering_mode,latent_size,params,mm_error,wall_time\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{:.10e},{:.3f}\n", r.variant, to_string(r.conv), to_string(r.ordering),
                       r.latent_size, r.params, r.mm_error, r.wall_seconds);
  return out;
}

}  // namespace n3dmm
