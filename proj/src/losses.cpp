#include "ecm_sphere/losses.hpp"

#include <cmath>

#include "ecm_sphere/error.hpp"

namespace ecm_sphere {

using ad::Var;

std::string_view to_string(LossKind k) {
  switch (k) {
    case LossKind::sincere: return "sincere";
    case LossKind::softcse: return "softcse";
    case LossKind::circularcse: return "circularcse";
  }
  return "sincere";
}

LossKind parse_loss_kind(std::string_view s) {
  if (s == "sincere") return LossKind::sincere;
  if (s == "softcse") return LossKind::softcse;
  if (s == "circularcse") return LossKind::circularcse;
  fail(ErrorKind::config, "unknown loss '" + std::string(s) + "' (expected sincere, softcse or circularcse)");
}

void LossConfig::validate() const {
  require(tau > 0.0 && std::isfinite(tau), ErrorKind::config, "temperature tau must be positive");
  require(margin >= 0.0 && std::isfinite(margin), ErrorKind::config, "margin must be non-negative");
}

void LabeledBatch::validate() const {
  require(embeddings.rows() >= 2, ErrorKind::contract, "a batch needs at least 2 samples");
  require(labels.size() == embeddings.rows(), ErrorKind::contract, "one label per embedding row required");
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    require(std::abs(row_norm(embeddings, r) - 1.0) <= 1e-9, ErrorKind::contract,
            "embedding row " + std::to_string(r) + " is not unit-norm");
  }
}

std::vector<double> softcse_negative_weights(const EcmConfig& ecm, std::size_t anchor_label,
                                             std::span<const std::size_t> negative_labels) {
  std::vector<double> w;
  if (negative_labels.empty()) return w;
  double total = 0.0;
  for (std::size_t k : negative_labels) {
    w.push_back(1.0 - target_cosine(ecm, anchor_label, k));
    total += w.back();
  }
  const double mean = total / static_cast<double>(negative_labels.size());
  require(mean > 0.0, ErrorKind::degenerate_geometry,
          "SoftCSE weights undefined: all negatives of label " + std::to_string(anchor_label) + " share its angle");
  for (double& x : w) x /= mean;
  return w;
}

namespace {

void check_batch(Var e, std::span<const std::size_t> labels) {
  require(e.rows() >= 2, ErrorKind::contract, "a batch needs at least 2 samples");
  require(labels.size() == e.rows(), ErrorKind::contract, "one label per embedding row required");
}

// Shared SINCERE/SoftCSE body. neg_weight(i, k) is the weight of negative k
// in anchor i's denominator.
//
// For every positive pair (i, j):
//   term_ij = log(exp(s_ij/tau) + sum_k w_ik exp(s_ik/tau)) - s_ij/tau
// Logits are shifted by the constant -1/tau (the largest possible cosine),
// which leaves term_ij unchanged and keeps exp() in range.
template <class WeightFn>
Var infonce_family(Var e, std::span<const std::size_t> labels, const LossConfig& cfg, WeightFn neg_weight) {
  cfg.validate();
  check_batch(e, labels);
  ad::Tape& tape = e.tape();
  const std::size_t b = labels.size();

  Tensor weights(b, b);
  Tensor pair_coef(b, b);
  std::size_t valid_anchors = 0;
  std::vector<std::size_t> positives(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) ++positives[i];
    if (positives[i] > 0) ++valid_anchors;
  }
  if (valid_anchors == 0) fail(ErrorKind::empty_objective, "no anchor in the batch has a positive");

  for (std::size_t i = 0; i < b; ++i) {
    const std::vector<double> w = neg_weight(i);
    std::size_t n = 0;
    for (std::size_t k = 0; k < b; ++k) {
      if (labels[k] != labels[i]) weights(i, k) = w[n++];
    }
    if (positives[i] == 0) continue;
    const double coef = 1.0 / (static_cast<double>(positives[i]) * static_cast<double>(valid_anchors));
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) pair_coef(i, j) = coef;
  }

  const double inv_tau = 1.0 / cfg.tau;
  Var logits = ad::add_scalar(ad::scale(ad::matmul_nt(e, e), inv_tau), -inv_tau);
  Var expo = ad::exp(logits);
  Var negatives = ad::sum_cols(ad::hadamard(expo, tape.constant(std::move(weights))));
  Var terms = ad::sub(ad::log(ad::add_col(expo, negatives)), logits);
  return ad::sum(ad::hadamard(terms, tape.constant(std::move(pair_coef))));
}

}  // namespace

Var sincere_loss(Var e, std::span<const std::size_t> labels, const LossConfig& cfg) {
  return infonce_family(e, labels, cfg, [&](std::size_t i) {
    std::size_t n = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) n += labels[k] != labels[i];
    return std::vector<double>(n, 1.0);
  });
}

Var softcse_loss(Var e, std::span<const std::size_t> labels, const LossConfig& cfg, const EcmConfig& ecm) {
  for (std::size_t y : labels) (void)ecm.label(y);
  return infonce_family(e, labels, cfg, [&](std::size_t i) {
    std::vector<std::size_t> neg;
    for (std::size_t k = 0; k < labels.size(); ++k)
      if (labels[k] != labels[i]) neg.push_back(labels[k]);
    return softcse_negative_weights(ecm, labels[i], neg);
  });
}

Var circularcse_loss(Var e, std::span<const std::size_t> labels, const LossConfig& cfg, const EcmConfig& ecm) {
  cfg.validate();
  check_batch(e, labels);
  ad::Tape& tape = e.tape();
  const std::size_t b = labels.size();
  Tensor target(b, b);
  Tensor same(b, b);
  Tensor different(b, b);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      target(i, j) = target_cosine(ecm, labels[i], labels[j]);
      if (i == j) continue;
      (labels[i] == labels[j] ? same : different)(i, j) = 1.0;
    }
  }
  Var diff = ad::sub(ad::matmul_nt(e, e), tape.constant(std::move(target)));
  Var hinge = ad::square(ad::relu(ad::add_scalar(ad::abs(diff), -cfg.margin)));
  Var same_part = ad::sum(ad::hadamard(hinge, tape.constant(std::move(same))));
  Var diff_part = ad::sum(ad::hadamard(ad::square(diff), tape.constant(std::move(different))));
  return ad::scale(ad::add(same_part, diff_part), 1.0 / (static_cast<double>(b) * static_cast<double>(b - 1)));
}

Var contrastive_loss(LossKind kind, Var e, std::span<const std::size_t> labels, const LossConfig& cfg,
                     const EcmConfig& ecm) {
  switch (kind) {
    case LossKind::sincere: return sincere_loss(e, labels, cfg);
    case LossKind::softcse: return softcse_loss(e, labels, cfg, ecm);
    case LossKind::circularcse: return circularcse_loss(e, labels, cfg, ecm);
  }
  fail(ErrorKind::config, "unknown loss kind");
}

double sincere_loss(const LabeledBatch& batch, const LossConfig& cfg) {
  batch.validate();
  ad::Tape tape;
  return sincere_loss(tape.constant(batch.embeddings), batch.labels, cfg).value().item();
}

double softcse_loss(const LabeledBatch& batch, const LossConfig& cfg, const EcmConfig& ecm) {
  batch.validate();
  ad::Tape tape;
  return softcse_loss(tape.constant(batch.embeddings), batch.labels, cfg, ecm).value().item();
}

double circularcse_loss(const LabeledBatch& batch, const LossConfig& cfg, const EcmConfig& ecm) {
  batch.validate();
  ad::Tape tape;
  return circularcse_loss(tape.constant(batch.embeddings), batch.labels, cfg, ecm).value().item();
}

}  // namespace ecm_sphere
