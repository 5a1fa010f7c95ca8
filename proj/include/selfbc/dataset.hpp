#pragma once

// Offline transition store, normalization statistics, sampling, and the
// "SBC1" on-disk format.
//
// SBC1 layout (little-endian):
//   offset  size  field
//   0       4     magic "SBC1"
//   4       4     u32 version (= 1)
//   8       8     u64 n
//   16      4     u32 state_dim
//   20      4     u32 action_dim
//   24      4     u32 CRC-32 (zlib polynomial) of every byte after the header
//   28      4     u32 reserved (= 0)
//   32      ...   payload:
//                   states       n*state_dim  f64
//                   actions      n*action_dim f64
//                   rewards      n            f64
//                   next_states  n*state_dim  f64
//                   dones        n            u8
//                   meta_len     u32
//                   meta         meta_len bytes of UTF-8 JSON
// Arrays are row-major (transition-major).

#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfbc/envs.hpp"
#include "selfbc/error.hpp"
#include "selfbc/numerics.hpp"
#include "selfbc/rng.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace selfbc {

struct DatasetMeta {
  std::string env_name = "pointmass";
  std::string behavior_kind = "medium";
  std::uint64_t seed = 0;
  int state_dim = 0;
  int action_dim = 0;

  bool operator==(const DatasetMeta&) const = default;
};

inline void to_json(nlohmann::json& j, const DatasetMeta& m) {
  j = nlohmann::json{{"env_name", m.env_name},
                     {"behavior_kind", m.behavior_kind},
                     {"seed", m.seed},
                     {"state_dim", m.state_dim},
                     {"action_dim", m.action_dim}};
}

inline void from_json(const nlohmann::json& j, DatasetMeta& m) {
  j.at("env_name").get_to(m.env_name);
  j.at("behavior_kind").get_to(m.behavior_kind);
  j.at("seed").get_to(m.seed);
  j.at("state_dim").get_to(m.state_dim);
  j.at("action_dim").get_to(m.action_dim);
}

struct OfflineDataset {
  std::size_t n = 0;
  std::vector<double> states;
  std::vector<double> actions;
  std::vector<double> rewards;
  std::vector<double> next_states;
  std::vector<std::uint8_t> dones;
  DatasetMeta meta;

  int state_dim() const { return meta.state_dim; }
  int action_dim() const { return meta.action_dim; }

  std::span<const double> state(std::size_t i) const {
    return {states.data() + i * state_dim(), static_cast<std::size_t>(state_dim())};
  }
  std::span<const double> action(std::size_t i) const {
    return {actions.data() + i * action_dim(), static_cast<std::size_t>(action_dim())};
  }
  std::span<const double> next_state(std::size_t i) const {
    return {next_states.data() + i * state_dim(), static_cast<std::size_t>(state_dim())};
  }

  void validate() const {
    if (n == 0) throw InvalidInput("dataset is empty");
    if (meta.state_dim <= 0 || meta.action_dim <= 0) throw InvalidInput("dataset dims must be positive");
    const auto sd = static_cast<std::size_t>(meta.state_dim);
    const auto ad = static_cast<std::size_t>(meta.action_dim);
    if (states.size() != n * sd || next_states.size() != n * sd || actions.size() != n * ad ||
        rewards.size() != n || dones.size() != n) {
      throw InvalidInput("dataset arrays are not length-consistent");
    }
    for (double a : actions) {
      if (!(a >= -1.0 && a <= 1.0)) throw InvalidInput("dataset action outside [-1, 1]");
    }
  }

  bool operator==(const OfflineDataset&) const = default;
};

/// Rolls out scripted-controller episodes (horizon 100) until n transitions
/// are recorded. A single data stream drives resets and controller noise.
inline OfflineDataset generate_dataset(const BehaviorSpec& spec, std::size_t n_transitions, std::uint64_t seed) {
  if (n_transitions < 1000) throw InvalidInput("n_transitions must be at least 1000");
  spec.validate();
  OfflineDataset ds;
  ds.n = n_transitions;
  ds.meta = {"pointmass", to_string(spec.kind), seed, pointmass::kStateDim, pointmass::kActionDim};
  ds.states.reserve(n_transitions * pointmass::kStateDim);
  ds.next_states.reserve(n_transitions * pointmass::kStateDim);
  ds.actions.reserve(n_transitions * pointmass::kActionDim);
  ds.rewards.reserve(n_transitions);
  ds.dones.reserve(n_transitions);

  Rng rng = make_stream(seed, Stream::kData);
  PointMassState s = pointmass_reset(rng);
  for (std::size_t i = 0; i < n_transitions; ++i) {
    const Vec2 a = scripted_controller(spec, s, rng);
    const StepResult r = pointmass_step(s, a);
    const auto obs = s.observation();
    const auto next_obs = r.state.observation();
    ds.states.insert(ds.states.end(), obs.begin(), obs.end());
    ds.actions.insert(ds.actions.end(), a.begin(), a.end());
    ds.rewards.push_back(r.reward);
    ds.next_states.insert(ds.next_states.end(), next_obs.begin(), next_obs.end());
    ds.dones.push_back(r.done ? 1 : 0);
    s = r.done ? pointmass_reset(rng) : r.state;
  }
  return ds;
}

/// Mean undiscounted return of the complete episodes in a dataset.
inline double dataset_mean_episode_return(const OfflineDataset& ds) {
  double total = 0.0, episode = 0.0;
  int episodes = 0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    episode += ds.rewards[i];
    if (ds.dones[i]) {
      total += episode;
      episode = 0.0;
      ++episodes;
    }
  }
  if (episodes == 0) throw InvalidInput("dataset contains no complete episode");
  return total / episodes;
}

inline constexpr double kNormStdFloor = 1e-3;

struct NormStats {
  Vector mean;
  Vector std;

  Vector normalize(std::span<const double> s) const {
    Vector out(mean.size());
    for (Eigen::Index i = 0; i < mean.size(); ++i) out[i] = (s[static_cast<std::size_t>(i)] - mean[i]) / std[i];
    return out;
  }
  Vector denormalize(const Vector& z) const { return (z.array() * std.array() + mean.array()).matrix(); }

  // Normalizes every column of a state_dim x batch matrix.
  Matrix normalize_columns(const Matrix& s) const {
    return ((s.colwise() - mean).array().colwise() / std.array()).matrix();
  }
};

/// Per-dimension mean and population std over states and next_states
/// jointly (Welford accumulation), std floored at 1e-3.
inline NormStats compute_norm_stats(const OfflineDataset& ds) {
  ds.validate();
  const int d = ds.state_dim();
  Vector mean = Vector::Zero(d), m2 = Vector::Zero(d);
  double count = 0.0;
  auto push = [&](std::span<const double> row) {
    count += 1.0;
    for (int k = 0; k < d; ++k) {
      const double delta = row[k] - mean[k];
      mean[k] += delta / count;
      m2[k] += delta * (row[k] - mean[k]);
    }
  };
  for (std::size_t i = 0; i < ds.n; ++i) push(ds.state(i));
  for (std::size_t i = 0; i < ds.n; ++i) push(ds.next_state(i));
  NormStats stats;
  stats.mean = mean;
  stats.std = (m2 / count).array().sqrt().max(kNormStdFloor).matrix();
  return stats;
}

/// Column-major batch (one transition per column), rows copied verbatim.
struct Batch {
  std::vector<std::size_t> indices;
  Matrix states;
  Matrix actions;
  Vector rewards;
  Matrix next_states;
  Vector dones;

  std::size_t size() const { return indices.size(); }
};

inline Batch gather_batch(const OfflineDataset& ds, std::vector<std::size_t> indices) {
  const int sd = ds.state_dim(), ad = ds.action_dim();
  const auto b = static_cast<Eigen::Index>(indices.size());
  Batch batch;
  batch.states.resize(sd, b);
  batch.next_states.resize(sd, b);
  batch.actions.resize(ad, b);
  batch.rewards.resize(b);
  batch.dones.resize(b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const std::size_t i = indices[static_cast<std::size_t>(j)];
    if (i >= ds.n) throw InvalidInput("batch index out of range");
    std::memcpy(batch.states.col(j).data(), ds.states.data() + i * sd, sd * sizeof(double));
    std::memcpy(batch.next_states.col(j).data(), ds.next_states.data() + i * sd, sd * sizeof(double));
    std::memcpy(batch.actions.col(j).data(), ds.actions.data() + i * ad, ad * sizeof(double));
    batch.rewards[j] = ds.rewards[i];
    batch.dones[j] = ds.dones[i] ? 1.0 : 0.0;
  }
  batch.indices = std::move(indices);
  return batch;
}

/// Uniform sampling with replacement; one rng.index() draw per row.
inline Batch sample_batch(const OfflineDataset& ds, Rng& rng, std::size_t batch_size) {
  if (batch_size == 0 || batch_size > ds.n) throw InvalidInput("batch_size must lie in [1, n]");
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.index(ds.n));
  return gather_batch(ds, std::move(idx));
}

/// Copy of the dataset with states and next_states normalized.
inline OfflineDataset normalized_copy(const OfflineDataset& ds, const NormStats& stats) {
  OfflineDataset out = ds;
  const int d = ds.state_dim();
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (int k = 0; k < d; ++k) {
      out.states[i * d + k] = (ds.states[i * d + k] - stats.mean[k]) / stats.std[k];
      out.next_states[i * d + k] = (ds.next_states[i * d + k] - stats.mean[k]) / stats.std[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace io {

inline constexpr std::size_t kDatasetHeaderSize = 32;
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void put_bytes(std::vector<std::uint8_t>& buf, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  buf.insert(buf.end(), b, b + n);
}

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(LoadErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError(LoadErrorKind::kIo, "write failed for '" + path.string() + "'");
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::kIo, "cannot open '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

// Bounds-checked little-endian reader over a byte buffer.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void read_bytes(void* out, std::size_t n) {
    if (n > size_ - pos_) throw LoadError(LoadErrorKind::kTruncated, "unexpected end of data");
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T get() {
    T v;
    read_bytes(&v, sizeof(T));
    return v;
  }

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace io

/// Payload byte count for the SBC1 format, excluding the JSON meta blob.
inline std::size_t dataset_payload_size(std::size_t n, int state_dim, int action_dim) {
  return n * (2 * static_cast<std::size_t>(state_dim) + static_cast<std::size_t>(action_dim) + 1) * sizeof(double) + n +
         sizeof(std::uint32_t);
}

inline std::vector<std::uint8_t> dataset_to_bytes(const OfflineDataset& ds) {
  ds.validate();
  const std::string meta = nlohmann::json(ds.meta).dump();
  std::vector<std::uint8_t> payload;
  payload.reserve(dataset_payload_size(ds.n, ds.state_dim(), ds.action_dim()) + meta.size());
  io::put_bytes(payload, ds.states.data(), ds.states.size() * sizeof(double));
  io::put_bytes(payload, ds.actions.data(), ds.actions.size() * sizeof(double));
  io::put_bytes(payload, ds.rewards.data(), ds.rewards.size() * sizeof(double));
  io::put_bytes(payload, ds.next_states.data(), ds.next_states.size() * sizeof(double));
  io::put_bytes(payload, ds.dones.data(), ds.dones.size());
  io::put<std::uint32_t>(payload, static_cast<std::uint32_t>(meta.size()));
  io::put_bytes(payload, meta.data(), meta.size());

  std::vector<std::uint8_t> bytes;
  bytes.reserve(io::kDatasetHeaderSize + payload.size());
  io::put_bytes(bytes, "SBC1", 4);
  io::put<std::uint32_t>(bytes, io::kDatasetVersion);
  io::put<std::uint64_t>(bytes, ds.n);
  io::put<std::uint32_t>(bytes, static_cast<std::uint32_t>(ds.state_dim()));
  io::put<std::uint32_t>(bytes, static_cast<std::uint32_t>(ds.action_dim()));
  io::put<std::uint32_t>(bytes, io::crc32_of(payload.data(), payload.size()));
  io::put<std::uint32_t>(bytes, 0);
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  return bytes;
}

inline OfflineDataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes) {
  io::Reader header(bytes.data(), bytes.size());
  char magic[4];
  if (bytes.size() < 4) throw LoadError(LoadErrorKind::kTruncated, "file shorter than magic");
  header.read_bytes(magic, 4);
  if (std::memcmp(magic, "SBC1", 4) != 0) throw LoadError(LoadErrorKind::kMagicMismatch, "not an SBC1 dataset");
  if (bytes.size() < io::kDatasetHeaderSize) throw LoadError(LoadErrorKind::kTruncated, "header truncated");
  const auto version = header.get<std::uint32_t>();
  if (version != io::kDatasetVersion) {
    throw LoadError(LoadErrorKind::kVersionMismatch, "unsupported dataset version " + std::to_string(version));
  }
  OfflineDataset ds;
  ds.n = header.get<std::uint64_t>();
  const auto sd = header.get<std::uint32_t>();
  const auto ad = header.get<std::uint32_t>();
  const auto crc = header.get<std::uint32_t>();
  header.get<std::uint32_t>();

  const std::uint8_t* payload = bytes.data() + io::kDatasetHeaderSize;
  const std::size_t payload_size = bytes.size() - io::kDatasetHeaderSize;
  if (sd == 0 || ad == 0 || ds.n == 0) throw LoadError(LoadErrorKind::kFormat, "zero dimension in header");
  if (ds.n > payload_size || payload_size < dataset_payload_size(ds.n, static_cast<int>(sd), static_cast<int>(ad))) {
    throw LoadError(LoadErrorKind::kTruncated, "payload shorter than header declares");
  }
  if (io::crc32_of(payload, payload_size) != crc) throw LoadError(LoadErrorKind::kChecksum, "payload CRC-32 mismatch");

  io::Reader r(payload, payload_size);
  ds.states.resize(ds.n * sd);
  ds.actions.resize(ds.n * ad);
  ds.rewards.resize(ds.n);
  ds.next_states.resize(ds.n * sd);
  ds.dones.resize(ds.n);
  r.read_bytes(ds.states.data(), ds.states.size() * sizeof(double));
  r.read_bytes(ds.actions.data(), ds.actions.size() * sizeof(double));
  r.read_bytes(ds.rewards.data(), ds.rewards.size() * sizeof(double));
  r.read_bytes(ds.next_states.data(), ds.next_states.size() * sizeof(double));
  r.read_bytes(ds.dones.data(), ds.dones.size());
  const auto meta_len = r.get<std::uint32_t>();
  if (meta_len != r.remaining()) throw LoadError(LoadErrorKind::kTruncated, "meta length does not match file size");
  std::string meta(meta_len, '\0');
  r.read_bytes(meta.data(), meta_len);
  try {
    ds.meta = nlohmann::json::parse(meta).get<DatasetMeta>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::kFormat, std::string("bad meta JSON: ") + e.what());
  }
  if (ds.meta.state_dim != static_cast<int>(sd) || ds.meta.action_dim != static_cast<int>(ad)) {
    throw LoadError(LoadErrorKind::kFormat, "meta dims disagree with header");
  }
  return ds;
}

inline void dataset_serialize(const OfflineDataset& ds, const std::filesystem::path& path) {
  io::write_file(path, dataset_to_bytes(ds));
}

inline OfflineDataset dataset_deserialize(const std::filesystem::path& path) {
  return dataset_from_bytes(io::read_file(path));
}

}  // namespace selfbc
