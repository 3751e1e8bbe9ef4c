#pragma once
// Contrastive objectives over a batch of unit-norm embeddings.
//
// All three are built from tape primitives, so gradients come from the same
// reverse pass that runs through the heads.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "ecm_sphere/autodiff.hpp"
#include "ecm_sphere/ecm.hpp"

namespace ecm_sphere {

enum class LossKind { sincere, softcse, circularcse };

std::string_view to_string(LossKind k);
LossKind parse_loss_kind(std::string_view s);

struct LossConfig {
  double tau = 0.05;
  double margin = 0.0;

  void validate() const;
};

/// Embeddings (B x d, unit rows) together with their label indices.
struct LabeledBatch {
  Tensor embeddings;
  std::vector<std::size_t> labels;

  /// B >= 2, one label per row, every row norm within 1e-9 of 1.
  void validate() const;
};

// Tape-level objectives; `embeddings` is B x d on the tape.
ad::Var sincere_loss(ad::Var embeddings, std::span<const std::size_t> labels, const LossConfig& cfg);
ad::Var softcse_loss(ad::Var embeddings, std::span<const std::size_t> labels, const LossConfig& cfg,
                     const EcmConfig& ecm);
ad::Var circularcse_loss(ad::Var embeddings, std::span<const std::size_t> labels, const LossConfig& cfg,
                         const EcmConfig& ecm);
ad::Var contrastive_loss(LossKind kind, ad::Var embeddings, std::span<const std::size_t> labels,
                         const LossConfig& cfg, const EcmConfig& ecm);

// Value-level wrappers.
double sincere_loss(const LabeledBatch& batch, const LossConfig& cfg);
double softcse_loss(const LabeledBatch& batch, const LossConfig& cfg, const EcmConfig& ecm);
double circularcse_loss(const LabeledBatch& batch, const LossConfig& cfg, const EcmConfig& ecm);

/// SoftCSE negative weights for one anchor: (1 - cos dtheta_ik) divided by
/// its mean over the anchor's negatives. Returns an empty vector when the
/// anchor has no negatives; degenerate_geometry when the mean is zero.
std::vector<double> softcse_negative_weights(const EcmConfig& ecm, std::size_t anchor_label,
                                             std::span<const std::size_t> negative_labels);

}  // namespace ecm_sphere
