#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "n3dmm/error.hpp"
#include "n3dmm/pipeline.hpp"

using namespace n3dmm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "n3dmm_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SyntheticOptions small_options() {
  SyntheticOptions o;
  o.subdivision = 2;  // 162 vertices
  return o;
}

RunConfig small_config() {
  RunConfig c;
  c.model.encoder_widths = {8, 8};
  c.model.factors = {4, 4};
  c.model.latent_size = 4;
  c.epochs = 3;
  c.batch_size = 4;
  c.seed = 11;
  return c;
}

const Dataset& small_dataset() {
  static const Dataset d = generate_synthetic(SyntheticKind::bump_sphere, 24, 5, small_options());
  return d;
}

const TrainResult& small_run() {
  static const TrainResult r = train(small_dataset(), small_config());
  return r;
}

}  // namespace

// ------------------------------------------------------------------ datasets

TEST(Synthetic, EmptyDatasetHasTemplateOnly) {
  Dataset d = generate_synthetic(SyntheticKind::bump_sphere, 0, 1);
  EXPECT_EQ(d.template_mesh.vertex_count(), 642);
  EXPECT_EQ(d.size(), 0);
  EXPECT_TRUE(d.train.empty() && d.val.empty() && d.test.empty());
}

TEST(Synthetic, SameSeedIsBitIdentical) {
  Dataset a = generate_synthetic(SyntheticKind::bump_sphere, 5, 9);
  Dataset b = generate_synthetic(SyntheticKind::bump_sphere, 5, 9);
  Dataset c = generate_synthetic(SyntheticKind::bump_sphere, 5, 10);
  for (int i = 0; i < 5; ++i) {
    EXPECT_TRUE((a.samples[i].array() == b.samples[i].array()).all());
    EXPECT_FALSE((a.samples[i].array() == c.samples[i].array()).all());
  }
  // A sample does not depend on how many others were drawn.
  Dataset longer = generate_synthetic(SyntheticKind::bump_sphere, 8, 9);
  EXPECT_TRUE((longer.samples[3].array() == a.samples[3].array()).all());
}

TEST(Synthetic, ZeroAmplitudeGivesTheTemplate) {
  SyntheticOptions o;
  o.max_amplitude = 0.0;
  o.max_stretch = 0.0;
  Dataset d = generate_synthetic(SyntheticKind::bump_sphere, 4, 3, o);
  const FeatureMatrix base = positions_matrix(d.template_mesh);
  for (const auto& s : d.samples) EXPECT_TRUE((s.array() == base.array()).all());
}

TEST(Synthetic, SplitsAreDisjointAndSized) {
  Dataset d = generate_synthetic(SyntheticKind::bump_sphere, 24, 3, small_options());
  EXPECT_EQ(d.train.size(), 20u);
  EXPECT_EQ(d.val.size(), 2u);
  EXPECT_EQ(d.test.size(), 2u);
  EXPECT_NO_THROW(d.validate());
  EXPECT_GT(mean_deformation_magnitude(d, d.train), 0.0);
}

TEST(DatasetIo, RoundTripAndTopologyDrift) {
  const Dataset& d = small_dataset();
  auto dir = fresh_dir("dataset");
  save_dataset(dir, d);
  Dataset back = load_dataset(dir);
  EXPECT_EQ(back.size(), d.size());
  EXPECT_EQ(back.train, d.train);
  EXPECT_EQ(back.val, d.val);
  EXPECT_EQ(back.test, d.test);
  for (int i = 0; i < d.size(); ++i) EXPECT_TRUE((back.samples[i].array() == d.samples[i].array()).all());

  Mesh other = make_icosphere(2);
  std::swap(other.faces[0], other.faces[1]);
  save_ply(dir / "samples" / "sample_00003.ply", other);
  try {
    load_dataset(dir);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("sample_00003"), std::string::npos) << e.what();
  }
}

TEST(DatasetIo, OverlappingSplitsAreRejected) {
  Dataset d = small_dataset();
  d.test.push_back(d.train[0]);
  EXPECT_THROW(d.validate(), DataError);
}

// ------------------------------------------------------------------ config

TEST(RunConfig, KeyValueRoundTrip) {
  RunConfig c = small_config();
  c.dataset = "/data/x";
  c.output = "out";
  c.spiral.ordering_mode = OrderingMode::rand_epoch;
  c.spiral.orientation = Orientation::clockwise;
  c.optimizer.learning_rate = 2.5e-4;
  c.model.hops = {2, 1};
  RunConfig back = RunConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.to_key_values(), c.to_key_values());
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.spiral, c.spiral);
  EXPECT_THROW(RunConfig::from_key_values({{"bogus", "1"}}), ConfigError);
  EXPECT_THROW(RunConfig::from_key_values({{"epochs", "many"}}), ConfigError);
}

TEST(RunConfig, FileFormat) {
  auto dir = fresh_dir("config");
  {
    std::ofstream out(dir / "run.cfg");
    out << "# a run\nepochs = 7\n  latent_size=32  # inline comment\nconv = cheb\n\nfactors = 4, 4, 4, 1\n";
  }
  RunConfig c = load_run_config(dir / "run.cfg");
  EXPECT_EQ(c.epochs, 7);
  EXPECT_EQ(c.model.latent_size, 32);
  EXPECT_EQ(c.model.conv, ConvOperator::chebyshev);
  EXPECT_EQ(c.model.factors, (std::vector<int>{4, 4, 4, 1}));
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_THROW(parse_key_values("no equals sign"), ConfigError);
  save_run_config(dir / "saved.cfg", c);
  EXPECT_EQ(load_run_config(dir / "saved.cfg").to_key_values(), c.to_key_values());
}

// ------------------------------------------------------------------ preprocessing

TEST(Preprocess, IdempotentWithCache) {
  const Dataset& d = small_dataset();
  RunConfig c = small_config();
  auto dir = fresh_dir("cache");
  Bundle first = preprocess(d.template_mesh, c.model, c.spiral, dir);
  EXPECT_FALSE(first.from_cache);
  Bundle second = preprocess(d.template_mesh, c.model, c.spiral, dir);
  EXPECT_TRUE(second.from_cache);
  EXPECT_EQ(first.checksum, second.checksum);
  EXPECT_EQ(first.key, second.key);
  for (std::size_t l = 0; l < first.tables.size(); ++l) EXPECT_EQ(first.tables[l]->indices, second.tables[l]->indices);
  Bundle nocache = preprocess(d.template_mesh, c.model, c.spiral);
  EXPECT_EQ(nocache.checksum, first.checksum);

  c.model.hops = {2, 1};
  Bundle changed = preprocess(d.template_mesh, c.model, c.spiral, dir);
  EXPECT_FALSE(changed.from_cache);
  EXPECT_NE(changed.checksum, first.checksum);
}

TEST(Preprocess, DefaultLengthFromRingSizes) {
  const Dataset& d = small_dataset();
  RunConfig c = small_config();
  Bundle b = preprocess(d.template_mesh, c.model, c.spiral);
  for (int l = 0; l < 2; ++l) {
    std::size_t largest = 0;
    for (const auto& adj : build_topology(b.hierarchy->mesh(l)).adjacency) largest = std::max(largest, adj.size());
    EXPECT_EQ(b.tables[l]->length, static_cast<int>(largest + 1));
  }
}

// ------------------------------------------------------------------ training

TEST(Train, DeterministicCurvesAndDecay) {
  const TrainResult& a = small_run();
  TrainResult b = train(small_dataset(), small_config());
  EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
  ASSERT_EQ(a.metrics.size(), 3u);
  for (const auto& m : a.metrics) {
    EXPECT_NEAR(m.learning_rate, 1e-3 * std::pow(0.99, m.epoch - 1), 1e-18);
    EXPECT_TRUE(std::isfinite(m.train_loss));
    EXPECT_TRUE(std::isfinite(m.val_mm));
  }
  EXPECT_GE(a.best_epoch, 1);
}

TEST(Train, WritesOutputsAndCheckpointReloads) {
  RunConfig c = small_config();
  c.output = fresh_dir("train_out");
  TrainResult r = train(small_dataset(), c);
  EXPECT_TRUE(fs::exists(c.output / "checkpoint.n3ck"));
  EXPECT_TRUE(fs::exists(c.output / "metrics.csv"));
  EXPECT_TRUE(fs::exists(c.output / "run.cfg"));
  TrainedModel loaded = load_trained_model(c.output / "checkpoint.n3ck", small_dataset().template_mesh);
  auto pa = r.trained.model->named_parameters();
  auto pb = loaded.model->named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    EXPECT_TRUE(std::equal(pa[i].second.values().begin(), pa[i].second.values().end(), pb[i].second.values().begin()));
  const auto& d = small_dataset();
  EXPECT_EQ(evaluate_generalisation(r.trained, d, d.test).mean_mm, evaluate_generalisation(loaded, d, d.test).mean_mm);
  EXPECT_THROW(load_trained_model(c.output / "checkpoint.n3ck", make_icosphere(1)), DataError);
}

TEST(Train, NonFiniteLossAborts) {
  RunConfig c = small_config();
  c.optimizer.learning_rate = 1e300;
  c.optimizer.lr_decay = 1.0;
  c.epochs = 5;
  try {
    train(small_dataset(), c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("learning rate"), std::string::npos);
  }
}

TEST(Train, EmptyTrainingSplitIsAnError) {
  Dataset d = small_dataset();
  d.train.clear();
  EXPECT_THROW(train(d, small_config()), DataError);
}

// ------------------------------------------------------------------ evaluation

TEST(Evaluate, IdentityAndMeanPredictor) {
  const Dataset& d = small_dataset();
  auto shapes = d.gather(d.test);
  EXPECT_EQ(reconstruction_error(shapes, shapes).mean_mm, 0.0);

  auto train_shapes = d.gather(d.train);
  FeatureMatrix mean = FeatureMatrix::Zero(162, 3);
  for (const auto& s : train_shapes) mean += s;
  mean /= static_cast<double>(train_shapes.size());
  std::vector<FeatureMatrix> constant(shapes.size(), mean);
  double oracle = 0.0;
  for (const auto& s : shapes) {
    double per = 0.0;
    for (int v = 0; v < 162; ++v) {
      double dx = s(v, 0) - mean(v, 0), dy = s(v, 1) - mean(v, 1), dz = s(v, 2) - mean(v, 2);
      per += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    oracle += per / 162.0;
  }
  oracle /= static_cast<double>(shapes.size());
  EXPECT_NEAR(reconstruction_error(shapes, constant).mean_mm, oracle, 1e-12);

  // Relabelling axes consistently changes nothing.
  std::vector<FeatureMatrix> ps, pc;
  for (const auto& s : shapes) {
    FeatureMatrix p(162, 3);
    p << s.col(2), s.col(0), s.col(1);
    ps.push_back(p);
    FeatureMatrix q(162, 3);
    q << mean.col(2), mean.col(0), mean.col(1);
    pc.push_back(q);
  }
  EXPECT_NEAR(reconstruction_error(ps, pc).mean_mm, oracle, 1e-12);
  EXPECT_THROW(reconstruction_error({}, {}), DataError);
}

TEST(Evaluate, MatchesRecomputationFromExportedPly) {
  const auto& d = small_dataset();
  const auto& r = small_run();
  auto eval = evaluate_generalisation(r.trained, d, d.test);
  auto recon = r.trained.reconstruct(d.gather(d.test), d.test);
  auto dir = fresh_dir("export");
  double total = 0.0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    Mesh m = d.template_mesh;
    set_positions(m, recon[i]);
    save_ply(dir / "r.ply", m);
    Mesh back = load_mesh(dir / "r.ply");
    double per = 0.0;
    for (int v = 0; v < back.vertex_count(); ++v)
      per += (back.vertices[v] - Vec3(d.samples[d.test[i]].row(v).transpose())).norm();
    total += per / back.vertex_count();
  }
  EXPECT_NEAR(eval.mean_mm, total / static_cast<double>(recon.size()), 1e-9);
  EXPECT_EQ(eval.per_vertex_mm.size(), 162u);
  EXPECT_THROW(evaluate_generalisation(r.trained, d, {}), DataError);
}

TEST(Evaluate, PcaBaseline) {
  const auto& d = small_dataset();
  auto full = evaluate_pca(d, d.train, d.train, static_cast<int>(d.train.size()) - 1);
  EXPECT_LT(full.mean_mm, 1e-8);
  double prev = std::numeric_limits<double>::infinity();
  for (int k : {1, 4, 8, 16}) {
    double e = evaluate_pca(d, d.train, d.train, k).mean_mm;
    EXPECT_LE(e, prev + 1e-12);
    prev = e;
  }
}

// ------------------------------------------------------------------ latent arithmetic

TEST(Latent, InterpolationEndpoints) {
  const auto& d = small_dataset();
  const auto& t = small_run().trained;
  const FeatureMatrix& x1 = d.samples[0];
  const FeatureMatrix& x2 = d.samples[1];
  auto seq = latent_interpolate(t, x1, x2, 5);
  ASSERT_EQ(seq.size(), 5u);
  const std::vector<FeatureMatrix> pair{x1, x2};
  auto recon = t.reconstruct(pair);
  EXPECT_LT((seq.front() - recon[0]).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((seq.back() - recon[1]).cwiseAbs().maxCoeff(), 1e-9);
  auto same = latent_interpolate(t, x1, x1, 4);
  for (const auto& s : same) EXPECT_LT((s - same[0]).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Latent, Extrapolation) {
  const auto& d = small_dataset();
  const auto& t = small_run().trained;
  const FeatureMatrix& x1 = d.samples[2];
  const FeatureMatrix& x2 = d.samples[3];
  const double a[] = {1.0, 0.0, -1.0, 1.5};
  auto seq = latent_extrapolate(t, x1, x2, a);
  const std::vector<FeatureMatrix> pair{x1, x2};
  auto recon = t.reconstruct(pair);
  EXPECT_LT((seq[0] - recon[0]).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((seq[1] - recon[1]).cwiseAbs().maxCoeff(), 1e-9);
  Eigen::MatrixXd z = t.encode(pair);
  Eigen::MatrixXd code = 2.0 * z.row(1) - z.row(0);
  EXPECT_LT((seq[2] - t.decode(code)[0]).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Latent, Analogy) {
  const auto& d = small_dataset();
  const auto& t = small_run().trained;
  const FeatureMatrix &A = d.samples[4], &B = d.samples[5], &C = d.samples[6];
  const std::vector<FeatureMatrix> bc{B, C};
  auto recon = t.reconstruct(bc);
  EXPECT_LT((latent_analogy(t, A, B, A) - recon[0]).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((latent_analogy(t, A, A, C) - recon[1]).cwiseAbs().maxCoeff(), 1e-9);
  const std::vector<FeatureMatrix> abc{A, B, C};
  Eigen::MatrixXd z = t.encode(abc);
  Eigen::RowVectorXd zd = z.row(1) - z.row(0) + z.row(2);
  Eigen::RowVectorXd back = z.row(0) - z.row(1) + zd;
  EXPECT_LT((back - z.row(2)).cwiseAbs().maxCoeff(), 1e-12);
}

// ------------------------------------------------------------------ diagnostics

TEST(Impulse, SpiralSupportIsTheOneRing) {
  Mesh ico = make_icosphere(2);
  Topology topo = build_topology(ico);
  auto table = std::make_shared<const SpiralTable>(build_spiral_table(ico, topo, SpiralConfig{}));
  Rng rng(3);
  Neural3DMM::Conv conv = nn::SpiralConv(table, 1, 4, rng);
  for (int v : {0, 20, 100}) {
    auto r = impulse_response(conv, ico.vertex_count(), v);
    auto hop = hop_distances(topo, v);
    for (int u = 0; u < ico.vertex_count(); ++u) EXPECT_EQ(r[u] > 0.0, hop[u] <= 1) << u;
  }
}

TEST(Impulse, ChebyshevSupportIsTheRHopBall) {
  Mesh ico = make_icosphere(2);
  Topology topo = build_topology(ico);
  auto lap = std::make_shared<const CsrMatrix>(nn::scaled_laplacian(ico));
  for (int degree : {1, 2, 3}) {
    Rng rng(static_cast<std::uint64_t>(degree));
    Neural3DMM::Conv conv = nn::ChebConv(lap, degree, 1, 1, rng);
    auto r = impulse_response(conv, ico.vertex_count(), 7);
    auto hop = hop_distances(topo, 7);
    for (int u = 0; u < ico.vertex_count(); ++u) EXPECT_EQ(r[u] > 1e-15, hop[u] <= degree) << degree << " " << u;
  }
}

TEST(Impulse, HeatmapRamp) {
  std::vector<double> values(100);
  for (int i = 0; i < 100; ++i) values[i] = i;
  auto c = heatmap_colors(values);
  EXPECT_EQ(c[0], (Rgb{0, 0, 255}));
  EXPECT_EQ(c[98], (Rgb{255, 0, 0}));
  EXPECT_EQ(c[99], (Rgb{255, 0, 0}));
  auto dir = fresh_dir("heat");
  Mesh tet = make_tetrahedron();
  const double vals[] = {0.0, 1.0, 2.0, 3.0};
  save_heatmap_ply(dir / "h.ply", tet, vals);
  EXPECT_EQ(load_mesh(dir / "h.ply").vertex_count(), 4);
  EXPECT_THROW(save_heatmap_ply(dir / "bad.ply", tet, std::span<const double>(vals, 2)), ShapeError);
}

// ------------------------------------------------------------------ ablations

TEST(Ablation, OperatorAxisTable) {
  RunConfig c = small_config();
  c.epochs = 1;
  c.output = fresh_dir("ablation");
  AblationOptions o;
  o.latent_sizes = {2, 3, 4};
  auto rows = run_ablation(small_dataset(), c, AblationAxis::conv_operator, o);
  ASSERT_EQ(rows.size(), 6u);
  Bundle b = preprocess(small_dataset().template_mesh, c.model, c.spiral);
  std::vector<int> taps;
  for (const auto& t : b.tables) taps.push_back(t->length);
  for (const auto& r : rows) {
    ModelSpec s = c.model;
    s.latent_size = r.latent_size;
    EXPECT_EQ(r.params, closed_form_parameter_count(s, taps, b.hierarchy->vertex_count(2))) << r.variant;
    EXPECT_TRUE(std::isfinite(r.mm_error));
    EXPECT_TRUE(fs::exists(c.output / "curves" / (r.variant + ".csv")));
  }
  std::ifstream in(c.output / "ablation.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "variant,operator,ordering_mode,latent_size,params,mm_error,wall_time");
}

TEST(Ablation, OrderingAxisHasFourRows) {
  RunConfig c = small_config();
  c.epochs = 1;
  auto rows = run_ablation(small_dataset(), c, AblationAxis::ordering_mode);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].ordering, OrderingMode::fixed);
  EXPECT_EQ(rows[1].ordering, OrderingMode::rand_mesh);
  EXPECT_EQ(rows[2].ordering, OrderingMode::rand_epoch);
  EXPECT_EQ(rows[3].ordering, OrderingMode::rand_mesh_and_epoch);
  for (const auto& r : rows) EXPECT_EQ(r.params, rows[0].params);
}
