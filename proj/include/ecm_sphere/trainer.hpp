#pragma once
// Mini-batch training of a head over frozen token states.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ecm_sphere/dataset.hpp"
#include "ecm_sphere/ecm.hpp"
#include "ecm_sphere/heads.hpp"
#include "ecm_sphere/losses.hpp"

namespace ecm_sphere {

struct TrainConfig {
  double learning_rate = 5e-5;
  std::size_t epochs = 15;
  std::size_t batch_size = 128;
  std::uint64_t seed = 42;
  LossKind loss_kind = LossKind::sincere;
  HeadKind head_kind = HeadKind::ngpt;
  double tau = 0.05;
  double margin = 0.0;

  LossConfig loss() const { return {tau, margin}; }
  void validate() const;
};

struct TrainLog {
  std::vector<double> step_loss;
  std::vector<std::size_t> step_epoch;
  std::vector<double> epoch_mean_loss;
  double wall_seconds = 0.0;
  std::string checksum;
};

struct TrainResult {
  Head head;
  TrainLog log;
};

/// Label-stratified batches. Each label's shuffled pool is cut into pairs
/// (a trailing odd sample joins the last pair), the chunks are shuffled and
/// packed greedily into batches of at most batch_size; indices are sorted
/// inside each batch. Deterministic in (seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& labels,
                                                   std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One bias-corrected Adam update. Throws DivergenceError (tagged with
/// `step`) before touching anything if a gradient is not finite.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               std::int64_t step);

/// FNV-1a over the little-endian float64 bytes of every parameter.
std::string param_checksum(const Head& head);

struct StepEvent {
  std::size_t step = 0;  // 1-based
  std::size_t epoch = 0; // 1-based
  double loss = 0.0;
  const Head* head = nullptr;  // weights after the update
};
using StepObserver = std::function<void(const StepEvent&)>;

/// Trains a freshly initialized head (seeded by cfg.seed). The observer, if
/// any, sees the head after every completed step.
TrainResult train(const EmbeddingDataset& data, const TrainConfig& cfg, const EcmConfig& ecm,
                  const HeadConfig& head_cfg, const StepObserver& observer = {});

/// Same, continuing from given weights.
TrainResult train_from(Head init, const EmbeddingDataset& data, const TrainConfig& cfg, const EcmConfig& ecm,
                       const StepObserver& observer = {});

}  // namespace ecm_sphere
