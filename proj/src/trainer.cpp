#include "ecm_sphere/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <random>

#include "ecm_sphere/error.hpp"

namespace ecm_sphere {

using ad::Var;

void TrainConfig::validate() const {
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::config, "learning rate must be positive");
  require(epochs >= 1, ErrorKind::config, "epochs must be positive");
  require(batch_size >= 2, ErrorKind::config, "batch size must be at least 2");
  loss().validate();
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& labels,
                                                   std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch) {
  require(!labels.empty(), ErrorKind::contract, "cannot batch an empty dataset");
  require(batch_size >= 2, ErrorKind::config, "batch size must be at least 2");

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x62617463u};
  std::mt19937_64 rng(seq);

  std::size_t n_labels = 0;
  for (std::size_t y : labels) n_labels = std::max(n_labels, y + 1);
  std::vector<std::vector<std::size_t>> pools(n_labels);
  for (std::size_t i = 0; i < labels.size(); ++i) pools[labels[i]].push_back(i);

  std::vector<std::vector<std::size_t>> chunks;
  for (auto& pool : pools) {
    if (pool.empty()) continue;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::size_t i = 0;
    while (i < pool.size()) {
      std::size_t take = std::min<std::size_t>(2, pool.size() - i);
      if (pool.size() - i == 3 && batch_size >= 3) take = 3;
      chunks.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(i),
                          pool.begin() + static_cast<std::ptrdiff_t>(i + take));
      i += take;
    }
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  for (const auto& c : chunks) {
    if (!current.empty() && current.size() + c.size() > batch_size) {
      batches.push_back(std::move(current));
      current.clear();
    }
    current.insert(current.end(), c.begin(), c.end());
  }
  if (!current.empty()) batches.push_back(std::move(current));
  for (auto& b : batches) std::sort(b.begin(), b.end());
  return batches;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double lr,
               std::int64_t step) {
  require(params.size() == grads.size(), ErrorKind::contract, "one gradient per parameter required");
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  require(state.m.size() == params.size(), ErrorKind::contract, "optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->same_shape(grads[i]) && params[i]->same_shape(state.m[i]), ErrorKind::dimension,
            "gradient shape " + grads[i].shape_string() + " does not match parameter " + params[i]->shape_string());
    if (!grads[i].all_finite()) throw DivergenceError(step, "non-finite gradient in parameter " + std::to_string(i));
  }

  ++state.t;
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g[k];
      v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

std::string param_checksum(const Head& head) {
  std::vector<std::uint8_t> bytes;
  for (const auto& [name, t] : head.named_params()) {
    for (double x : t->values()) {
      const auto u = std::bit_cast<std::uint64_t>(x);
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
    }
  }
  return fnv1a_hex(bytes);
}

namespace {

void check_compatible(const EmbeddingDataset& data, const Head& head, const EcmConfig& ecm) {
  data.validate();
  require(!data.records.empty(), ErrorKind::contract, "training set is empty");
  require(data.d == head.cfg.d, ErrorKind::dimension,
          "dataset d=" + std::to_string(data.d) + " but head d=" + std::to_string(head.cfg.d));
  require(data.label_names == ecm.names(), ErrorKind::config, "dataset label names differ from the ECM's");
}

}  // namespace

TrainResult train_from(Head head, const EmbeddingDataset& data, const TrainConfig& cfg, const EcmConfig& ecm,
                       const StepObserver& observer) {
  cfg.validate();
  head.cfg.validate();
  require(head.kind() == cfg.head_kind, ErrorKind::config, "initial head kind differs from the configured one");
  check_compatible(data, head, ecm);

  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::size_t> labels = data.labels();
  const std::size_t d = data.d;
  const LossConfig loss_cfg = cfg.loss();

  TrainLog log;
  AdamState adam;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_total = 0.0;
    std::size_t epoch_steps = 0;
    for (const auto& batch : make_batches(labels, cfg.batch_size, cfg.seed, epoch)) {
      if (batch.size() < 2) continue;
      PackedSequences seqs;
      std::size_t rows = 0;
      std::vector<std::size_t> batch_labels;
      for (std::size_t i : batch) {
        seqs.offsets.push_back(rows);
        seqs.lengths.push_back(data.records[i].token_states.rows());
        rows += data.records[i].token_states.rows();
        batch_labels.push_back(labels[i]);
      }
      Tensor packed(rows, d);
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor& s = data.records[batch[b]].token_states;
        std::copy_n(s.data(), s.size(), packed.data() + seqs.offsets[b] * d);
      }

      ad::Tape tape(ad::NumericMode::training);
      BoundHead bound = bind_head(tape, head, true);
      Var loss;
      try {
        BlockTraceVars t = block_forward(bound, head.cfg, tape.constant(std::move(packed)), seqs);
        Var e = pool_and_embed(t.final, seqs, head.cfg.pooling);
        loss = contrastive_loss(cfg.loss_kind, e, batch_labels, loss_cfg, ecm);
      } catch (const Error& err) {
        // Finite but enormous weights overflow inside the forward (softmax rows of inf).
        if (step == 0 || (err.kind() != ErrorKind::contract && err.kind() != ErrorKind::evaluation)) throw;
        throw DivergenceError(static_cast<std::int64_t>(step + 1), std::string("forward failed: ") + err.what());
      }
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw DivergenceError(static_cast<std::int64_t>(step + 1),
                              "loss is " + std::to_string(value) + " in epoch " + std::to_string(epoch + 1) +
                                  " on a batch of " + std::to_string(batch.size()));
      }

      const ad::Gradients grads = tape.backward(loss);
      std::vector<Tensor> g;
      g.reserve(bound.vars.size());
      for (Var v : bound.vars) g.push_back(grads.of(v));
      std::vector<Tensor*> params;
      for (auto& [name, p] : head.named_params()) params.push_back(p);
      adam_step(params, g, adam, cfg.learning_rate, static_cast<std::int64_t>(step + 1));
      if (auto* ng = std::get_if<NGptHeadParams>(&head.params)) renormalize_weights_in_place(*ng);
      for (const Tensor* p : params) {
        if (!p->all_finite())
          throw DivergenceError(static_cast<std::int64_t>(step + 1), "parameters became non-finite");
      }

      ++step;
      log.step_loss.push_back(value);
      log.step_epoch.push_back(epoch + 1);
      epoch_total += value;
      ++epoch_steps;
      if (observer) observer({step, epoch + 1, value, &head});
    }
    log.epoch_mean_loss.push_back(epoch_steps == 0 ? 0.0 : epoch_total / static_cast<double>(epoch_steps));
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log.checksum = param_checksum(head);
  return {std::move(head), std::move(log)};
}

TrainResult train(const EmbeddingDataset& data, const TrainConfig& cfg, const EcmConfig& ecm,
                  const HeadConfig& head_cfg, const StepObserver& observer) {
  head_cfg.validate();
  return train_from(init_head(cfg.head_kind, head_cfg, cfg.seed), data, cfg, ecm, observer);
}

}  // namespace ecm_sphere
