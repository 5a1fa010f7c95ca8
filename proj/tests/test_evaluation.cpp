#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "selfbc/evaluation.hpp"

namespace selfbc {
namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "selfbc_test_eval" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

MlpParams small_policy(std::uint64_t seed) {
  return testing::random_mlp({4, 8, 2}, seed, OutputActivation::kTanhScaled);
}

TEST(NormalizedScore, Anchors) {
  EXPECT_DOUBLE_EQ(normalized_score(-10, -10, 0), 0.0);
  EXPECT_DOUBLE_EQ(normalized_score(0, -10, 0), 100.0);
  EXPECT_DOUBLE_EQ(normalized_score(-5, -10, 0), 50.0);
  EXPECT_DOUBLE_EQ(pointmass_normalized_score(pointmass::kRandomRef), 0.0);
  EXPECT_DOUBLE_EQ(pointmass_normalized_score(pointmass::kExpertRef), 100.0);
  EXPECT_THROW(normalized_score(0, 1, 1), InvalidInput);
  EXPECT_THROW(normalized_score(0, 2, 1), InvalidInput);
}

TEST(EvaluatePolicy, DeterministicAndBounded) {
  const auto ds = generate_dataset(BehaviorSpec::medium(), 1000, 0);
  const NormStats st = compute_norm_stats(ds);
  const MlpParams p = small_policy(1);
  const double a = evaluate_policy(p, st, 3, 5), b = evaluate_policy(p, st, 3, 5);
  EXPECT_EQ(a, b);
  // Per-step reward lies in [-(2 sqrt 2) - 0.02, 0].
  EXPECT_LE(a, 0.0);
  EXPECT_GE(a, -100 * (2 * std::sqrt(2.0) + 0.02));
  EXPECT_THROW(evaluate_policy(p, st, 0, 5), InvalidInput);
  EXPECT_THROW(evaluate_policy(testing::random_mlp({3, 4, 2}, 1), st, 1, 5), InvalidInput);
}

TEST(EvaluatePolicy, MatchesManualRollout) {
  const auto ds = generate_dataset(BehaviorSpec::medium(), 1000, 0);
  const NormStats st = compute_norm_stats(ds);
  const MlpParams p = small_policy(2);
  Rng rng = make_stream(7, Stream::kEval);
  double total = 0;
  for (int e = 0; e < 2; ++e) {
    PointMassState s = pointmass_reset(rng);
    for (int t = 0; t < 100; ++t) {
      const auto o = s.observation();
      Vector x(4);
      for (int k = 0; k < 4; ++k) x[k] = (o[k] - st.mean[k]) / st.std[k];
      const Vector a = mlp_forward(p, x);
      const auto r = pointmass_step(s, {std::clamp(a[0], -1.0, 1.0), std::clamp(a[1], -1.0, 1.0)});
      total += r.reward;
      s = r.state;
    }
  }
  EXPECT_NEAR(evaluate_policy(p, st, 2, 7), total / 2, 1e-12);
}

TEST(DatasetBcMse, MatchesRowOracleAcrossChunks) {
  const auto ds = generate_dataset(BehaviorSpec::medium(), 5000, 3);
  const NormStats st = compute_norm_stats(ds);
  const MlpParams p = small_policy(3);
  double oracle = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    const Vector a = mlp_forward(p, st.normalize(ds.state(i)));
    for (int k = 0; k < 2; ++k) oracle += (a[k] - ds.action(i)[k]) * (a[k] - ds.action(i)[k]);
  }
  oracle /= static_cast<double>(ds.n);
  EXPECT_NEAR(dataset_bc_mse(p, ds, st), oracle, 1e-12);
  EXPECT_NEAR(log10_mse(100.0), 2.0, 1e-15);
}

TEST(Metrics, WriterFormatsAndRoundTrips) {
  const fs::path dir = fresh_dir("writer");
  std::vector<MetricsRecord> recs{{0, -50.123456789, 12.5, 0.25, 0.0}, {5000, -20.0 / 3.0, 1.0 / 3.0, 1e-7, 0.0}};
  write_metrics(recs, dir / "metrics.csv", dir / "metrics.jsonl");
  const std::string csv = slurp(dir / "metrics.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,mean_return,normalized_score,dataset_bc_mse,wall_seconds");
  EXPECT_EQ(read_metrics_csv(dir / "metrics.csv"), recs);
  std::ifstream jl(dir / "metrics.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(jl, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<std::uint64_t>(), recs[n].step);
    EXPECT_EQ(j.at("mean_return").get<double>(), recs[n].mean_return);
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Metrics, RefusesExistingFilesAndDecreasingSteps) {
  const fs::path dir = fresh_dir("refuse");
  {
    MetricsWriter w = MetricsWriter::in_directory(dir);
    w.write({10, 0, 0, 0, 0});
    EXPECT_THROW(w.write({9, 0, 0, 0, 0}), InvalidInput);
  }
  EXPECT_THROW(MetricsWriter::in_directory(dir), LoadError);
}

}  // namespace
}  // namespace selfbc
