#pragma once
// Single-block projection heads appended to a frozen backbone: a standard
// pre-norm Transformer block (GPT) and a normalized Transformer block (nGPT)
// whose hidden states and weight slices live on the unit sphere.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "ecm_sphere/autodiff.hpp"
#include "ecm_sphere/tensor.hpp"

namespace ecm_sphere {

enum class HeadKind { gpt, ngpt };
enum class Pooling { cls, last, mean };

std::string_view to_string(HeadKind k);
std::string_view to_string(Pooling p);
HeadKind parse_head_kind(std::string_view s);
Pooling parse_pooling(std::string_view s);

inline constexpr double kRmsNormEps = 1e-6;

struct HeadConfig {
  std::size_t d = 16;
  std::size_t n_heads = 2;
  std::size_t d_mlp = 64;
  bool causal = false;
  Pooling pooling = Pooling::mean;

  std::size_t d_head() const noexcept { return n_heads == 0 ? 0 : d / n_heads; }
  void validate() const;

  /// d_mlp = 4d; causal attention iff last-token pooling.
  static HeadConfig standard(std::size_t d, std::size_t n_heads, Pooling pooling);

  friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

/// Learnable weights of the standard block. Query/key/value matrices hold
/// all heads side by side: head n owns columns [n*d_head, (n+1)*d_head).
struct GptHeadParams {
  Tensor w_q, w_k, w_v;        // d x d
  Tensor w_o;                  // d x d
  Tensor w_mlp_u, w_mlp_v;     // d x d_mlp; MLP = (SiLU(x W_u) . x W_v) W_out
  Tensor w_mlp_out;            // d_mlp x d
  Tensor attn_norm_gain;       // 1 x d
  Tensor mlp_norm_gain;        // 1 x d

  template <class F> void visit(F&& f) {
    f("w_q", w_q); f("w_k", w_k); f("w_v", w_v); f("w_o", w_o);
    f("w_mlp_u", w_mlp_u); f("w_mlp_v", w_mlp_v); f("w_mlp_out", w_mlp_out);
    f("attn_norm_gain", attn_norm_gain); f("mlp_norm_gain", mlp_norm_gain);
  }
  template <class F> void visit(F&& f) const {
    const_cast<GptHeadParams*>(this)->visit([&](std::string_view n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
  }
};

/// Learnable weights of the normalized block.
struct NGptHeadParams {
  Tensor w_q, w_k, w_v;        // d x d
  Tensor w_o;                  // d x d
  Tensor w_mlp_u, w_mlp_v;     // d x d_mlp; MLP = (SiLU(v) . u) W_out
  Tensor w_mlp_out;            // d_mlp x d
  Tensor alpha_attn;           // 1 x d
  Tensor alpha_mlp;            // 1 x d
  Tensor s_qk;                 // 1 x d_head, shared by all heads
  Tensor s_u, s_v;             // 1 x d_mlp

  template <class F> void visit(F&& f) {
    f("w_q", w_q); f("w_k", w_k); f("w_v", w_v); f("w_o", w_o);
    f("w_mlp_u", w_mlp_u); f("w_mlp_v", w_mlp_v); f("w_mlp_out", w_mlp_out);
    f("alpha_attn", alpha_attn); f("alpha_mlp", alpha_mlp);
    f("s_qk", s_qk); f("s_u", s_u); f("s_v", s_v);
  }
  template <class F> void visit(F&& f) const {
    const_cast<NGptHeadParams*>(this)->visit([&](std::string_view n, Tensor& t) { f(n, static_cast<const Tensor&>(t)); });
  }
};

using HeadParams = std::variant<GptHeadParams, NGptHeadParams>;

/// A configured head: architecture, shapes and weights.
struct Head {
  HeadConfig cfg;
  HeadParams params;

  HeadKind kind() const noexcept {
    return std::holds_alternative<GptHeadParams>(params) ? HeadKind::gpt : HeadKind::ngpt;
  }
  /// Parameters in declaration order (the checkpoint payload order).
  std::vector<std::pair<std::string, const Tensor*>> named_params() const;
  std::vector<std::pair<std::string, Tensor*>> named_params();
};

/// Entries ~ N(0, 1/d); RMSNorm gains 1.
GptHeadParams init_gpt(const HeadConfig& cfg, std::uint64_t seed);
/// Entries ~ N(0, 1/d) then renormalized; alphas 0.05, scales 1.
NGptHeadParams init_ngpt(const HeadConfig& cfg, std::uint64_t seed);
Head init_head(HeadKind kind, const HeadConfig& cfg, std::uint64_t seed);

// ---- tape-level forward ----------------------------------------------------

/// Head weights bound onto a tape, in declaration order.
struct BoundHead {
  HeadKind kind = HeadKind::ngpt;
  std::vector<ad::Var> vars;
};

/// Binds as gradient-receiving parameters or as constants.
BoundHead bind_head(ad::Tape& tape, const Head& head, bool trainable);

/// Several sequences stacked row-wise; sequence s occupies rows
/// [offsets[s], offsets[s] + lengths[s]).
struct PackedSequences {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;
  std::size_t total_rows() const noexcept {
    return offsets.empty() ? 0 : offsets.back() + lengths.back();
  }
  static PackedSequences uniform(std::size_t count, std::size_t length);
};

struct BlockTraceVars {
  ad::Var post_attention;    // h'
  ad::Var attention_output;  // ATTN(.) before residual or interpolation
  ad::Var mlp_output;        // MLP(.) before residual or interpolation
  ad::Var final;             // h
};

BlockTraceVars block_forward(const BoundHead& head, const HeadConfig& cfg, ad::Var h_in,
                             const PackedSequences& seqs);
/// Pools every sequence to one row and normalizes: [num_sequences, d].
ad::Var pool_and_embed(ad::Var h, const PackedSequences& seqs, Pooling strategy);

// ---- value-level API --------------------------------------------------------

Tensor gpt_block_forward(const GptHeadParams& params, const Tensor& h_in, const HeadConfig& cfg);
Tensor ngpt_block_forward(const NGptHeadParams& params, const Tensor& h_in, const HeadConfig& cfg);
/// Norm(Pooling(h)) as a 1 x d row.
Tensor pool_and_embed(const Tensor& h, Pooling strategy);

struct BlockTrace {
  Tensor post_attention;
  Tensor attention_output;
  Tensor mlp_output;
  Tensor final;
};
BlockTrace forward_with_trace(const Head& head, const Tensor& h_in);

/// Embeds many sequences (each T_i x d) into unit rows [N, d].
Tensor embed_sequences(const Head& head, std::span<const Tensor> sequences);

/// Unit-normalizes every weight slice of length d: columns of the d x .
/// input projections, rows of W_O and W_out. Alphas and scales untouched.
NGptHeadParams renormalize_weights(const NGptHeadParams& params);
void renormalize_weights_in_place(NGptHeadParams& params);
/// Largest | ||slice|| - 1 | over all weight slices renormalize touches.
double max_weight_slice_deviation(const NGptHeadParams& params);

// ---- checkpoint file --------------------------------------------------------
// "ECMK", u32 LE header length, UTF-8 JSON header
// {format_version, head_kind, cfg, params: [{name, shape}]}, then every
// parameter as little-endian float64 in declaration order.

void save_checkpoint(const Head& head, const std::string& path);
Head load_checkpoint(const std::string& path);
nlohmann::json to_json(const HeadConfig& cfg);
HeadConfig head_config_from_json(const nlohmann::json& j);

}  // namespace ecm_sphere
