#pragma once
// Frozen backbone token states at rest, and a planted-circumplex generator.
//
// ECM1 layout (all integers little-endian):
//   bytes 0..3   "ECM1"
//   bytes 4..7   u32 header length H
//   bytes 8..8+H UTF-8 JSON {version: 1, d, labels: [names],
//                             records: [{id, label_index, T}]}
//   then, record by record, T x d row-major float32 values.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ecm_sphere/ecm.hpp"
#include "ecm_sphere/tensor.hpp"

namespace ecm_sphere {

struct EmbeddingRecord {
  std::string id;
  std::size_t label_index = 0;
  Tensor token_states;  // T x d

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct EmbeddingDataset {
  std::size_t d = 0;
  std::vector<std::string> label_names;
  std::vector<EmbeddingRecord> records;

  /// Finite states, T >= 1, width d, label in range, unique ids.
  void validate() const;
  std::vector<std::size_t> labels() const;
  std::vector<Tensor> sequences() const;
  /// Rounds every state to float32, as a save/load round trip would.
  EmbeddingDataset quantized() const;

  friend bool operator==(const EmbeddingDataset&, const EmbeddingDataset&) = default;
};

void save_dataset(const EmbeddingDataset& data, const std::string& path);
std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& data);
EmbeddingDataset load_dataset(const std::string& path);
/// Throws FormatError naming the offending byte offset.
EmbeddingDataset decode_dataset(const std::vector<std::uint8_t>& bytes);

/// JSON-lines fixtures: one {"id", "label", "vectors": [[...], ...]} per
/// line; labels are resolved by name against the ECM.
EmbeddingDataset import_jsonl(const std::string& path, const EcmConfig& ecm);

/// Reads ECM1, or JSON lines when the path ends in .jsonl.
EmbeddingDataset load_any_dataset(const std::string& path, const EcmConfig& ecm);

struct SynthConfig {
  EcmConfig ecm = EcmConfig::default_layout();
  std::size_t n_per_label = 100;
  std::size_t d = 16;
  std::size_t tokens = 1;  // T
  /// Concentration of the signal token around its label direction;
  /// infinity plants the direction exactly.
  double kappa = 50.0;
  double distractor_scale = 1.0;
  std::uint64_t seed = 42;
  std::string split = "train";

  void validate() const;
};

/// For each label, the mean direction is (cos angle, sin angle, 0, ...).
/// The signal token is normalize(kappa * mu + N(0, I)); the other T - 1
/// tokens are random unit vectors times distractor_scale; token order is
/// shuffled per record.
EmbeddingDataset synth_generate(const SynthConfig& cfg);

/// 64-bit FNV-1a of a byte string, as lowercase hex.
std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes);
std::string file_digest(const std::string& path);

}  // namespace ecm_sphere
