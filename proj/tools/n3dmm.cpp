// n3dmm command line: dataset synthesis, preprocessing, training, evaluation,
// latent arithmetic and diagnostics.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "n3dmm/error.hpp"
#include "n3dmm/pipeline.hpp"

namespace fs = std::filesystem;
using namespace n3dmm;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// ------------------------------------------------------------------ config flags

// Every RunConfig key becomes a flag (--latent_size or --latent-size); values
// given on the command line override the optional --config file.
struct ConfigFlags {
  std::string file;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value run configuration file")->check(CLI::ExistingFile);
    for (const auto& [key, value] : RunConfig{}.to_key_values()) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      std::string names = "--" + key;
      if (dashed != key) names += ",--" + dashed;
      app->add_option_function<std::string>(
             names, [this, key = key](const std::string& v) { values[key] = v; },
             fmt::format("run config '{}' (default: {})", key, value.empty() ? "none" : value))
          ->type_name("VALUE");
    }
  }

  RunConfig resolve() const {
    RunConfig base = file.empty() ? RunConfig{} : load_run_config(file);
    return RunConfig::from_key_values(values, base);
  }
};

// ------------------------------------------------------------------ helpers

Mesh load_template(const std::string& dataset, const std::string& template_path) {
  if (!template_path.empty()) return load_mesh(template_path);
  if (dataset.empty()) throw ConfigError("one of --template or --dataset is required");
  for (const char* name : {"template.ply", "template.obj"}) {
    fs::path p = fs::path(dataset) / name;
    if (fs::exists(p)) return load_mesh(p);
  }
  throw DataError(fmt::format("{}: no template.ply or template.obj", dataset));
}

FeatureMatrix load_shape(const std::string& path, const Mesh& template_mesh) {
  Mesh m = load_mesh(path);
  if (m.faces != template_mesh.faces) throw DataError(fmt::format("{} does not share the template topology", path));
  return positions_matrix(m);
}

void save_shape(const fs::path& path, const Mesh& template_mesh, const FeatureMatrix& positions) {
  Mesh m = template_mesh;
  set_positions(m, positions);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_ply(path, m);
}

const std::vector<int>& split_indices(const Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "val") return d.val;
  if (split == "test") return d.test;
  throw ConfigError(fmt::format("unknown split '{}' (train, val, test)", split));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("{}: cannot open for writing", path.string()));
  out << text;
}

// ------------------------------------------------------------------ subcommands

struct SynthArgs {
  std::string kind = "bump_sphere";
  int count = 2400;
  std::uint64_t seed = 1;
  std::string out;
  SyntheticOptions options;
};

int run_synth(const SynthArgs& a) {
  Dataset d = generate_synthetic(parse_synthetic_kind(a.kind), a.count, a.seed, a.options);
  save_dataset(a.out, d);
  fmt::print("wrote {} samples ({} train / {} val / {} test, {} vertices) to {}\n", d.size(), d.train.size(),
             d.val.size(), d.test.size(), d.template_mesh.vertex_count(), a.out);
  if (!d.train.empty()) fmt::print("mean deformation {:.4f} mm\n", mean_deformation_magnitude(d, d.train));
  return 0;
}

int run_preprocess(const ConfigFlags& flags) {
  RunConfig c = flags.resolve();
  if (c.dataset.empty()) throw ConfigError("--dataset is required");
  Dataset d = load_dataset(c.dataset);
  fs::path cache = !c.cache.empty() ? c.cache : (!c.output.empty() ? c.output / "cache" : fs::path{});
  if (cache.empty()) throw ConfigError("--cache or --output is required");
  Bundle b = preprocess(d.template_mesh, c.model, c.spiral, cache);
  fmt::print("{} bundle {:016x} checksum {:016x} in {}\n", b.from_cache ? "reused" : "built", b.key, b.checksum,
             cache.string());
  for (std::size_t l = 0; l < b.tables.size(); ++l)
    fmt::print("  level {}: {} vertices, spiral length {}\n", l, b.hierarchy->vertex_count(static_cast<int>(l)),
               b.tables[l]->length);
  fmt::print("  level {}: {} vertices\n", b.tables.size(),
             b.hierarchy->vertex_count(static_cast<int>(b.tables.size())));
  return 0;
}

int run_train(const ConfigFlags& flags) {
  RunConfig c = flags.resolve();
  if (c.dataset.empty()) throw ConfigError("--dataset is required");
  if (c.output.empty()) throw ConfigError("--output is required");
  Dataset d = load_dataset(c.dataset);
  TrainOptions o;
  o.on_epoch = [](const EpochMetrics& m) {
    fmt::print("epoch {:4}  lr {:.3e}  train {:.6f}  val {:.6f}  val_mm {:.4f}\n", m.epoch, m.learning_rate,
               m.train_loss, m.val_loss, m.val_mm);
    std::fflush(stdout);
  };
  TrainResult r = train(d, c, o);
  fmt::print("best epoch {}; {} parameters; checkpoint {}\n", r.best_epoch, r.trained.model->parameter_count(),
             (c.output / "checkpoint.n3ck").string());
  if (!d.test.empty()) fmt::print("test error {:.4f} mm\n", evaluate_generalisation(r.trained, d, d.test).mean_mm);
  return 0;
}

struct EvalArgs {
  std::string checkpoint, dataset, split = "test", heatmap, per_vertex;
  int pca = 0;
};

int run_eval(const EvalArgs& a) {
  Dataset d = load_dataset(a.dataset);
  TrainedModel t = load_trained_model(a.checkpoint, d.template_mesh);
  const auto& idx = split_indices(d, a.split);
  EvalResult e = evaluate_generalisation(t, d, idx);
  fmt::print("{} split: {} samples, mean error {:.6f} mm\n", a.split, idx.size(), e.mean_mm);
  if (a.pca > 0) fmt::print("pca k={}: {:.6f} mm\n", a.pca, evaluate_pca(d, d.train, idx, a.pca).mean_mm);
  if (!a.heatmap.empty()) save_heatmap_ply(a.heatmap, d.template_mesh, e.per_vertex_mm);
  if (!a.per_vertex.empty()) {
    std::string csv = "vertex,mm\n";
    for (std::size_t v = 0; v < e.per_vertex_mm.size(); ++v) csv += fmt::format("{},{:.10e}\n", v, e.per_vertex_mm[v]);
    write_text(a.per_vertex, csv);
  }
  return 0;
}

struct ReconstructArgs {
  std::string checkpoint, dataset, split = "test", out;
};

int run_reconstruct(const ReconstructArgs& a) {
  Dataset d = load_dataset(a.dataset);
  TrainedModel t = load_trained_model(a.checkpoint, d.template_mesh);
  const auto& idx = split_indices(d, a.split);
  auto recon = t.reconstruct(d.gather(idx), idx);
  for (std::size_t i = 0; i < idx.size(); ++i)
    save_shape(fs::path(a.out) / (d.names[static_cast<std::size_t>(idx[i])] + ".ply"), d.template_mesh, recon[i]);
  fmt::print("wrote {} reconstructions to {}\n", recon.size(), a.out);
  return 0;
}

struct LatentArgs {
  std::string checkpoint, dataset, template_path, first, second, third, out;
  int steps = 10;
  std::vector<double> a_values{-1.0, -0.5, 1.5, 2.0};
};

int run_interp(const LatentArgs& a) {
  Mesh tmpl = load_template(a.dataset, a.template_path);
  TrainedModel t = load_trained_model(a.checkpoint, tmpl);
  auto seq = latent_interpolate(t, load_shape(a.first, tmpl), load_shape(a.second, tmpl), a.steps);
  for (std::size_t i = 0; i < seq.size(); ++i) save_shape(fs::path(a.out) / fmt::format("interp_{:03}.ply", i), tmpl, seq[i]);
  fmt::print("wrote {} meshes to {}\n", seq.size(), a.out);
  return 0;
}

int run_extrap(const LatentArgs& a) {
  Mesh tmpl = load_template(a.dataset, a.template_path);
  TrainedModel t = load_trained_model(a.checkpoint, tmpl);
  auto seq = latent_extrapolate(t, load_shape(a.first, tmpl), load_shape(a.second, tmpl), a.a_values);
  for (std::size_t i = 0; i < seq.size(); ++i)
    save_shape(fs::path(a.out) / fmt::format("extrap_{:03}_a{:+.3f}.ply", i, a.a_values[i]), tmpl, seq[i]);
  fmt::print("wrote {} meshes to {}\n", seq.size(), a.out);
  return 0;
}

int run_analogy(const LatentArgs& a) {
  Mesh tmpl = load_template(a.dataset, a.template_path);
  TrainedModel t = load_trained_model(a.checkpoint, tmpl);
  FeatureMatrix out = latent_analogy(t, load_shape(a.first, tmpl), load_shape(a.second, tmpl), load_shape(a.third, tmpl));
  save_shape(a.out, tmpl, out);
  fmt::print("wrote {}\n", a.out);
  return 0;
}

struct ImpulseArgs {
  std::string checkpoint, dataset, template_path, out, conv = "spiral";
  int vertex = 0, layer = 0, hops = 1, degree = 6, channels = 16;
  std::uint64_t seed = 1;
};

int run_impulse(const ImpulseArgs& a) {
  Mesh tmpl = load_template(a.dataset, a.template_path);
  std::optional<TrainedModel> trained;
  std::optional<Neural3DMM::Conv> fresh;
  const Neural3DMM::Conv* conv = nullptr;
  Mesh mesh;
  if (!a.checkpoint.empty()) {
    trained = load_trained_model(a.checkpoint, tmpl);
    if (a.layer < 0 || a.layer >= trained->model->spec().layer_count())
      throw ConfigError(fmt::format("--layer {} out of range [0, {})", a.layer, trained->model->spec().layer_count()));
    conv = &trained->model->encoder_layer(a.layer);
    mesh = trained->bundle.hierarchy->mesh(a.layer);
  } else {
    // A freshly initialised first-layer filter on the template.
    Rng rng(a.seed);
    const auto out = static_cast<std::size_t>(a.channels);
    if (parse_conv_operator(a.conv) == ConvOperator::spiral) {
      SpiralConfig c;
      c.hops = a.hops;
      auto table = std::make_shared<const SpiralTable>(build_spiral_table(tmpl, build_topology(tmpl), c));
      fresh.emplace(nn::SpiralConv(table, 3, out, rng));
    } else {
      auto lap = std::make_shared<const CsrMatrix>(nn::scaled_laplacian(tmpl));
      fresh.emplace(nn::ChebConv(lap, a.degree, 3, out, rng));
    }
    conv = &*fresh;
    mesh = tmpl;
  }
  auto response = impulse_response(*conv, mesh.vertex_count(), a.vertex);
  save_heatmap_ply(a.out, mesh, response);
  const auto support = std::count_if(response.begin(), response.end(), [](double v) { return v > 0.0; });
  fmt::print("impulse at vertex {}: {} of {} vertices respond; heatmap {}\n", a.vertex, support, mesh.vertex_count(),
             a.out);
  return 0;
}

struct AblateArgs {
  std::string axis = "operator";
  std::vector<int> latent_sizes{8, 16, 32};
};

int run_ablate(const ConfigFlags& flags, const AblateArgs& a) {
  RunConfig c = flags.resolve();
  if (c.dataset.empty()) throw ConfigError("--dataset is required");
  if (c.output.empty()) throw ConfigError("--output is required");
  Dataset d = load_dataset(c.dataset);
  AblationOptions o;
  o.latent_sizes = a.latent_sizes;
  o.train.on_epoch = [](const EpochMetrics& m) {
    if (m.epoch % 10 == 0) fmt::print("  epoch {:4}  val_mm {:.4f}\n", m.epoch, m.val_mm);
    std::fflush(stdout);
  };
  auto rows = run_ablation(d, c, parse_ablation_axis(a.axis), o);
  fmt::print("{}", ablation_csv(rows));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiral convolutional mesh autoencoders and PCA morphable models"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate the synthetic bump-sphere dataset");
  s->add_option("--kind", synth.kind, "dataset kind")->capture_default_str();
  s->add_option("-n,--count", synth.count, "number of samples")->capture_default_str();
  s->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  s->add_option("-o,--out", synth.out, "output dataset directory")->required();
  s->add_option("--subdivision", synth.options.subdivision, "icosphere subdivision level")->capture_default_str();
  s->add_option("--radius", synth.options.radius, "sphere radius (mm)")->capture_default_str();
  s->add_option("--bumps", synth.options.bumps, "bumps per sample")->capture_default_str();
  s->add_option("--max-amplitude", synth.options.max_amplitude, "bump amplitude range +- (mm)")->capture_default_str();
  s->add_option("--min-width", synth.options.min_width, "smallest bump width (rad)")->capture_default_str();
  s->add_option("--max-width", synth.options.max_width, "largest bump width (rad)")->capture_default_str();
  s->add_option("--max-aspect", synth.options.max_aspect, "largest bump aspect ratio")->capture_default_str();
  s->add_option("--max-stretch", synth.options.max_stretch, "per-axis stretch range +-")->capture_default_str();
  s->add_option("--val-fraction", synth.options.val_fraction, "validation fraction")->capture_default_str();
  s->add_option("--test-fraction", synth.options.test_fraction, "test fraction")->capture_default_str();

  ConfigFlags pre_flags, train_flags, ablate_flags;
  auto* p = app.add_subcommand("preprocess", "build (or reuse) the hierarchy and spiral cache");
  pre_flags.attach(p);
  auto* t = app.add_subcommand("train", "train a mesh autoencoder");
  train_flags.attach(t);

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "generalisation error of a checkpoint");
  e->add_option("-c,--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("-d,--dataset", eval.dataset)->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", eval.split, "train, val or test")->capture_default_str();
  e->add_option("--heatmap", eval.heatmap, "write per-vertex error heatmap PLY");
  e->add_option("--per-vertex", eval.per_vertex, "write per-vertex error CSV");
  e->add_option("--pca", eval.pca, "also report a PCA baseline with k components");

  ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "write reconstructions of a split as PLY");
  r->add_option("-c,--checkpoint", rec.checkpoint)->required()->check(CLI::ExistingFile);
  r->add_option("-d,--dataset", rec.dataset)->required()->check(CLI::ExistingDirectory);
  r->add_option("--split", rec.split, "train, val or test")->capture_default_str();
  r->add_option("-o,--out", rec.out, "output directory")->required();

  LatentArgs latent;
  auto add_model_source = [&](CLI::App* sub) {
    sub->add_option("-c,--checkpoint", latent.checkpoint)->required()->check(CLI::ExistingFile);
    sub->add_option("-d,--dataset", latent.dataset, "dataset whose template to use");
    sub->add_option("--template", latent.template_path, "template mesh");
  };
  auto* ip = app.add_subcommand("interp", "decode a line between two latent codes");
  add_model_source(ip);
  ip->add_option("--from", latent.first, "first mesh (a = 1)")->required()->check(CLI::ExistingFile);
  ip->add_option("--to", latent.second, "second mesh (a = 0)")->required()->check(CLI::ExistingFile);
  ip->add_option("--steps", latent.steps)->capture_default_str();
  ip->add_option("-o,--out", latent.out, "output directory")->required();

  auto* ex = app.add_subcommand("extrap", "decode beyond the segment between two latent codes");
  add_model_source(ex);
  ex->add_option("--neutral", latent.first, "mesh at a = 1")->required()->check(CLI::ExistingFile);
  ex->add_option("--target", latent.second, "mesh at a = 0")->required()->check(CLI::ExistingFile);
  ex->add_option("--a", latent.a_values, "values of a")->delimiter(',')->capture_default_str();
  ex->add_option("-o,--out", latent.out, "output directory")->required();

  auto* an = app.add_subcommand("analogy", "decode e(B) - e(A) + e(C)");
  add_model_source(an);
  an->add_option("-A,--mesh-a", latent.first, "mesh A")->required()->check(CLI::ExistingFile);
  an->add_option("-B,--mesh-b", latent.second, "mesh B")->required()->check(CLI::ExistingFile);
  an->add_option("-C,--mesh-c", latent.third, "mesh C")->required()->check(CLI::ExistingFile);
  an->add_option("-o,--out", latent.out, "output PLY")->required();

  ImpulseArgs imp;
  auto* im = app.add_subcommand("impulse", "impulse response heatmap of one convolution layer");
  im->add_option("-c,--checkpoint", imp.checkpoint, "trained model (otherwise a fresh layer)")->check(CLI::ExistingFile);
  im->add_option("-d,--dataset", imp.dataset, "dataset whose template to use");
  im->add_option("--template", imp.template_path, "template mesh");
  im->add_option("--vertex", imp.vertex, "impulse vertex (at the layer's level)")->capture_default_str();
  im->add_option("--layer", imp.layer, "encoder layer of the checkpoint")->capture_default_str();
  im->add_option("--conv", imp.conv, "fresh layer operator: spiral or cheb")->capture_default_str();
  im->add_option("--hops", imp.hops, "fresh spiral hops")->capture_default_str();
  im->add_option("--degree", imp.degree, "fresh Chebyshev degree")->capture_default_str();
  im->add_option("--channels", imp.channels, "fresh layer output channels")->capture_default_str();
  im->add_option("--seed", imp.seed, "fresh layer initialisation seed")->capture_default_str();
  im->add_option("-o,--out", imp.out, "output heatmap PLY")->required();

  AblateArgs abl;
  auto* ab = app.add_subcommand("ablate", "train a matrix of variants along one axis");
  ablate_flags.attach(ab);
  ab->add_option("--axis", abl.axis, "operator, ordering_mode or latent_size")->capture_default_str();
  ab->add_option("--latent-sizes", abl.latent_sizes, "latent sizes for the operator and latent axes")
      ->delimiter(',')
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (s->parsed()) return run_synth(synth);
    if (p->parsed()) return run_preprocess(pre_flags);
    if (t->parsed()) return run_train(train_flags);
    if (e->parsed()) return run_eval(eval);
    if (r->parsed()) return run_reconstruct(rec);
    if (ip->parsed()) return run_interp(latent);
    if (ex->parsed()) return run_extrap(latent);
    if (an->parsed()) return run_analogy(latent);
    if (im->parsed()) return run_impulse(imp);
    if (ab->parsed()) return run_ablate(ablate_flags, abl);
  } catch (const ConfigError& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kExitUsage;
  } catch (const NumericError& err) {
    fmt::print(stderr, "numeric failure: {}\n", err.what());
    return kExitNumeric;
  } catch (const std::exception& err) {
    fmt::print(stderr, "error: {}\n", err.what());
    return kExitData;
  }
  return kExitUsage;
}
