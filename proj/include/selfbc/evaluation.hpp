#pragma once

// Policy rollouts, normalized score, dataset BC MSE, and metric files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfbc/dataset.hpp"
#include "selfbc/envs.hpp"
#include "selfbc/numerics.hpp"

namespace selfbc {

struct MetricsRecord {
  std::uint64_t step = 0;
  double mean_return = 0.0;
  double normalized_score = 0.0;
  double dataset_bc_mse = 0.0;
  double wall_seconds = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

/// Mean undiscounted return of deterministic rollouts on the point mass.
/// The policy sees normalized observations; its actions are clipped to
/// [-1, 1]. Start states come from the eval stream of `seed`.
inline double evaluate_policy(const MlpParams& policy, const NormStats& stats, int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw InvalidInput("n_episodes must be at least 1");
  if (policy.input_size() != pointmass::kStateDim || policy.output_size() != pointmass::kActionDim) {
    throw InvalidInput("policy does not match point-mass dimensions");
  }
  Rng rng = make_stream(seed, Stream::kEval);
  double total = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    PointMassState s = pointmass_reset(rng);
    for (int t = 0; t < pointmass::kHorizon; ++t) {
      const auto obs = s.observation();
      const Vector a = mlp_forward(policy, stats.normalize(obs));
      const Vec2 action{std::clamp(a[0], -1.0, 1.0), std::clamp(a[1], -1.0, 1.0)};
      const StepResult r = pointmass_step(s, action);
      total += r.reward;
      s = r.state;
    }
  }
  return total / n_episodes;
}

inline double normalized_score(double mean_return, double random_ref, double expert_ref) {
  if (!(expert_ref > random_ref)) throw InvalidInput("expert_ref must exceed random_ref");
  return 100.0 * (mean_return - random_ref) / (expert_ref - random_ref);
}

inline double pointmass_normalized_score(double mean_return) {
  return normalized_score(mean_return, pointmass::kRandomRef, pointmass::kExpertRef);
}

/// Mean over all transitions of ||pi(normalize(s)) - a||^2 (summed over
/// action dimensions).
inline double dataset_bc_mse(const MlpParams& policy, const OfflineDataset& ds, const NormStats& stats) {
  ds.validate();
  constexpr std::size_t kChunk = 4096;
  double total = 0.0;
  for (std::size_t start = 0; start < ds.n; start += kChunk) {
    const std::size_t end = std::min(ds.n, start + kChunk);
    const auto b = static_cast<Eigen::Index>(end - start);
    Matrix s(ds.state_dim(), b), a(ds.action_dim(), b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const std::size_t i = start + static_cast<std::size_t>(j);
      s.col(j) = Eigen::Map<const Vector>(ds.state(i).data(), ds.state_dim());
      a.col(j) = Eigen::Map<const Vector>(ds.action(i).data(), ds.action_dim());
    }
    const Matrix out = mlp_forward_batch(policy, stats.normalize_columns(s));
    total += (out - a).squaredNorm();
  }
  return total / static_cast<double>(ds.n);
}

inline double log10_mse(double mse) { return std::log10(mse); }

inline constexpr const char* kMetricsCsvHeader = "step,mean_return,normalized_score,dataset_bc_mse,wall_seconds";

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string metrics_csv_row(const MetricsRecord& r) {
  return std::to_string(r.step) + "," + format_double(r.mean_return) + "," + format_double(r.normalized_score) + "," +
         format_double(r.dataset_bc_mse) + "," + format_double(r.wall_seconds);
}

inline nlohmann::json to_json(const MetricsRecord& r) {
  return nlohmann::json{{"step", r.step},
                        {"mean_return", r.mean_return},
                        {"normalized_score", r.normalized_score},
                        {"dataset_bc_mse", r.dataset_bc_mse},
                        {"wall_seconds", r.wall_seconds}};
}

/// Parses a metrics CSV written by MetricsWriter.
inline std::vector<MetricsRecord> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadErrorKind::kIo, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) {
    throw LoadError(LoadErrorKind::kFormat, "unexpected metrics header in '" + path.string() + "'");
  }
  std::vector<MetricsRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    MetricsRecord r;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf", &step, &r.mean_return, &r.normalized_score,
                    &r.dataset_bc_mse, &r.wall_seconds) != 5) {
      throw LoadError(LoadErrorKind::kFormat, "bad metrics row: " + line);
    }
    r.step = step;
    out.push_back(r);
  }
  return out;
}

/// Append-only writer for metrics.csv and metrics.jsonl in one run
/// directory. Refuses to reuse a directory that already holds metrics.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& csv_path, const std::filesystem::path& jsonl_path) {
    csv_ = open_exclusive(csv_path);
    jsonl_ = open_exclusive(jsonl_path);
    std::fprintf(csv_.get(), "%s\n", kMetricsCsvHeader);
    std::fflush(csv_.get());
  }

  static MetricsWriter in_directory(const std::filesystem::path& dir) {
    return MetricsWriter(dir / "metrics.csv", dir / "metrics.jsonl");
  }

  void write(const MetricsRecord& r) {
    if (r.step < last_step_) throw InvalidInput("metrics step must be nondecreasing");
    last_step_ = r.step;
    std::fprintf(csv_.get(), "%s\n", metrics_csv_row(r).c_str());
    std::fprintf(jsonl_.get(), "%s\n", to_json(r).dump().c_str());
    if (std::fflush(csv_.get()) != 0 || std::fflush(jsonl_.get()) != 0) {
      throw LoadError(LoadErrorKind::kIo, "failed to flush metrics");
    }
  }

 private:
  struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
  };
  using File = std::unique_ptr<std::FILE, FileCloser>;

  static File open_exclusive(const std::filesystem::path& path) {
    // "x": fail if the file exists, so two runs never share an output.
    std::FILE* f = std::fopen(path.c_str(), "wx");
    if (!f) {
      if (std::filesystem::exists(path)) {
        throw LoadError(LoadErrorKind::kIo, "metrics file '" + path.string() + "' already exists");
      }
      throw LoadError(LoadErrorKind::kIo, "cannot create '" + path.string() + "'");
    }
    return File(f);
  }

  File csv_;
  File jsonl_;
  std::uint64_t last_step_ = 0;
};

inline void write_metrics(const std::vector<MetricsRecord>& records, const std::filesystem::path& csv_path,
                          const std::filesystem::path& jsonl_path) {
  MetricsWriter w(csv_path, jsonl_path);
  for (const auto& r : records) w.write(r);
}

}  // namespace selfbc
