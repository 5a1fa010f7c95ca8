#pragma once

// SBCK trainer checkpoints.
//
// Layout (little-endian), header 32 bytes:
//   0  magic "SBCK"
//   4  u32 version (1)
//   8  u32 manifest length in bytes
//   12 u32 CRC-32 of everything after the header
//   16 u64 total blob bytes
//   24 u64 reserved, zero
// then the manifest JSON, then the f64 blobs in manifest order. Each network
// contributes its flat parameters and, when it has an optimizer, the Adam
// first and second moments (same flat layout).

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "selfbc/dataset.hpp"
#include "selfbc/error.hpp"
#include "selfbc/numerics.hpp"
#include "selfbc/trainers.hpp"

namespace selfbc {

namespace ckpt {

inline constexpr std::size_t kHeaderSize = 32;
inline constexpr std::uint32_t kVersion = 1;

inline std::string activation_name(OutputActivation a) {
  return a == OutputActivation::kTanhScaled ? "tanh_scaled" : "identity";
}

inline OutputActivation activation_from_name(const std::string& s) {
  if (s == "tanh_scaled") return OutputActivation::kTanhScaled;
  if (s == "identity") return OutputActivation::kIdentity;
  throw LoadError(LoadErrorKind::kFormat, "unknown output activation '" + s + "'");
}

struct Entry {
  const char* name;
  MlpParams TrainerState::*net;
  AdamState TrainerState::*opt;  // nullptr when the network is not trained directly
};

inline const std::vector<Entry>& entries() {
  static const std::vector<Entry> e{
      {"q1", &TrainerState::q1, &TrainerState::q1_opt},
      {"q2", &TrainerState::q2, &TrainerState::q2_opt},
      {"q1_target", &TrainerState::q1_target, nullptr},
      {"q2_target", &TrainerState::q2_target, nullptr},
      {"policy", &TrainerState::policy, &TrainerState::policy_opt},
      {"policy_target", &TrainerState::policy_target, nullptr},
      {"reference", &TrainerState::reference, nullptr},
      {"behavior", &TrainerState::behavior, &TrainerState::behavior_opt},
  };
  return e;
}

inline void put_params(std::vector<std::uint8_t>& buf, const MlpParams& p) {
  for (auto v : tensor_views(p)) io::put_bytes(buf, v.data(), v.size() * sizeof(double));
}

inline void get_params(io::Reader& r, MlpParams& p) {
  for (auto v : tensor_views(p)) r.read_bytes(v.data(), v.size() * sizeof(double));
}

}  // namespace ckpt

inline std::vector<std::uint8_t> checkpoint_to_bytes(const TrainerState& st) {
  nlohmann::json nets = nlohmann::json::array();
  std::vector<std::uint8_t> blobs;
  for (const auto& e : ckpt::entries()) {
    const MlpParams& p = st.*(e.net);
    nlohmann::json m{{"name", e.name},
                     {"layer_sizes", p.layer_sizes},
                     {"layer_norm", p.uses_layer_norm},
                     {"output_activation", ckpt::activation_name(p.output_activation)},
                     {"action_scale", p.action_scale},
                     {"n_params", p.parameter_count()}};
    ckpt::put_params(blobs, p);
    if (e.opt) {
      const AdamState& a = st.*(e.opt);
      m["adam"] = {{"step_count", a.step_count}, {"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
      ckpt::put_params(blobs, a.first_moment);
      ckpt::put_params(blobs, a.second_moment);
    }
    nets.push_back(std::move(m));
  }
  const std::string manifest = nlohmann::json{{"step", st.step}, {"networks", nets}}.dump();

  std::vector<std::uint8_t> payload;
  payload.reserve(manifest.size() + blobs.size());
  io::put_bytes(payload, manifest.data(), manifest.size());
  payload.insert(payload.end(), blobs.begin(), blobs.end());

  std::vector<std::uint8_t> bytes;
  bytes.reserve(ckpt::kHeaderSize + payload.size());
  io::put_bytes(bytes, "SBCK", 4);
  io::put<std::uint32_t>(bytes, ckpt::kVersion);
  io::put<std::uint32_t>(bytes, static_cast<std::uint32_t>(manifest.size()));
  io::put<std::uint32_t>(bytes, io::crc32_of(payload.data(), payload.size()));
  io::put<std::uint64_t>(bytes, blobs.size());
  io::put<std::uint64_t>(bytes, 0);
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  return bytes;
}

inline TrainerState checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw LoadError(LoadErrorKind::kTruncated, "file shorter than magic");
  if (std::memcmp(bytes.data(), "SBCK", 4) != 0) throw LoadError(LoadErrorKind::kMagicMismatch, "not an SBCK checkpoint");
  if (bytes.size() < ckpt::kHeaderSize) throw LoadError(LoadErrorKind::kTruncated, "header truncated");
  io::Reader h(bytes.data() + 4, ckpt::kHeaderSize - 4);
  const auto version = h.get<std::uint32_t>();
  if (version != ckpt::kVersion) {
    throw LoadError(LoadErrorKind::kVersionMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto manifest_len = h.get<std::uint32_t>();
  const auto crc = h.get<std::uint32_t>();
  const auto blob_len = h.get<std::uint64_t>();
  const std::uint8_t* payload = bytes.data() + ckpt::kHeaderSize;
  const std::size_t payload_size = bytes.size() - ckpt::kHeaderSize;
  if (manifest_len > payload_size || blob_len != payload_size - manifest_len) {
    throw LoadError(LoadErrorKind::kTruncated, "payload size does not match header");
  }
  if (io::crc32_of(payload, payload_size) != crc) throw LoadError(LoadErrorKind::kChecksum, "payload CRC-32 mismatch");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(std::string(reinterpret_cast<const char*>(payload), manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::kFormat, std::string("bad manifest JSON: ") + e.what());
  }

  TrainerState st;
  io::Reader r(payload + manifest_len, blob_len);
  try {
    st.step = manifest.at("step").get<std::uint64_t>();
    const auto& nets = manifest.at("networks");
    if (nets.size() != ckpt::entries().size()) throw LoadError(LoadErrorKind::kFormat, "unexpected network count");
    for (std::size_t i = 0; i < nets.size(); ++i) {
      const auto& e = ckpt::entries()[i];
      const auto& m = nets[i];
      if (m.at("name").get<std::string>() != e.name) throw LoadError(LoadErrorKind::kFormat, "network order mismatch");
      MlpParams& p = st.*(e.net);
      p = make_mlp(m.at("layer_sizes").get<std::vector<int>>(),
                   ckpt::activation_from_name(m.at("output_activation").get<std::string>()),
                   m.at("action_scale").get<double>(), m.at("layer_norm").get<bool>());
      if (p.parameter_count() != m.at("n_params").get<std::size_t>()) {
        throw LoadError(LoadErrorKind::kFormat, std::string("parameter count mismatch for ") + e.name);
      }
      ckpt::get_params(r, p);
      if (e.opt) {
        const auto& a = m.at("adam");
        AdamState& opt = st.*(e.opt);
        opt = make_adam(p, a.at("lr").get<double>(), a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                        a.at("eps").get<double>());
        opt.step_count = a.at("step_count").get<std::uint64_t>();
        ckpt::get_params(r, opt.first_moment);
        ckpt::get_params(r, opt.second_moment);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadErrorKind::kFormat, std::string("bad manifest: ") + e.what());
  } catch (const InvalidInput& e) {
    throw LoadError(LoadErrorKind::kFormat, std::string("bad network in manifest: ") + e.what());
  }
  if (r.remaining() != 0) throw LoadError(LoadErrorKind::kFormat, "trailing bytes after network blobs");
  if (!same_architecture(st.q1, st.q1_target) || !same_architecture(st.q2, st.q2_target) ||
      !same_architecture(st.policy, st.policy_target) || !same_architecture(st.policy, st.reference)) {
    throw LoadError(LoadErrorKind::kArchitecture, "target or reference network differs from its source");
  }
  return st;
}

inline void checkpoint_save(const TrainerState& st, const std::filesystem::path& path) {
  io::write_file(path, checkpoint_to_bytes(st));
}

inline TrainerState checkpoint_load(const std::filesystem::path& path) {
  return checkpoint_from_bytes(io::read_file(path));
}

inline bool bit_identical(const TrainerState& a, const TrainerState& b) {
  return checkpoint_to_bytes(a) == checkpoint_to_bytes(b);
}

}  // namespace selfbc
