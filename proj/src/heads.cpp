#include "ecm_sphere/heads.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>

#include "ecm_sphere/error.hpp"
#include "ecm_sphere/kernels.hpp"

namespace ecm_sphere {

using ad::Var;

std::string_view to_string(HeadKind k) { return k == HeadKind::gpt ? "gpt" : "ngpt"; }

std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::cls: return "cls";
    case Pooling::last: return "last";
    case Pooling::mean: return "mean";
  }
  return "mean";
}

HeadKind parse_head_kind(std::string_view s) {
  if (s == "gpt") return HeadKind::gpt;
  if (s == "ngpt") return HeadKind::ngpt;
  fail(ErrorKind::config, "unknown head kind '" + std::string(s) + "' (expected gpt or ngpt)");
}

Pooling parse_pooling(std::string_view s) {
  if (s == "cls") return Pooling::cls;
  if (s == "last") return Pooling::last;
  if (s == "mean") return Pooling::mean;
  fail(ErrorKind::config, "unknown pooling '" + std::string(s) + "' (expected cls, last or mean)");
}

void HeadConfig::validate() const {
  require(d >= 1, ErrorKind::config, "head dimension d must be positive");
  require(n_heads >= 1 && d % n_heads == 0, ErrorKind::config,
          "n_heads=" + std::to_string(n_heads) + " must divide d=" + std::to_string(d));
  require(d_mlp >= 1, ErrorKind::config, "d_mlp must be positive");
}

HeadConfig HeadConfig::standard(std::size_t d, std::size_t n_heads, Pooling pooling) {
  HeadConfig cfg{d, n_heads, 4 * d, pooling == Pooling::last, pooling};
  cfg.validate();
  return cfg;
}

std::vector<std::pair<std::string, const Tensor*>> Head::named_params() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  std::visit([&](const auto& p) { p.visit([&](std::string_view n, const Tensor& t) { out.emplace_back(n, &t); }); },
             params);
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Head::named_params() {
  std::vector<std::pair<std::string, Tensor*>> out;
  std::visit([&](auto& p) { p.visit([&](std::string_view n, Tensor& t) { out.emplace_back(n, &t); }); }, params);
  return out;
}

// ---- initialization --------------------------------------------------------

namespace {

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

GptHeadParams init_gpt(const HeadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  GptHeadParams p;
  p.w_q = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_k = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_v = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_o = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_mlp_u = gaussian(cfg.d, cfg.d_mlp, sd, rng);
  p.w_mlp_v = gaussian(cfg.d, cfg.d_mlp, sd, rng);
  p.w_mlp_out = gaussian(cfg.d_mlp, cfg.d, sd, rng);
  p.attn_norm_gain = Tensor(1, cfg.d, 1.0);
  p.mlp_norm_gain = Tensor(1, cfg.d, 1.0);
  return p;
}

NGptHeadParams init_ngpt(const HeadConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  NGptHeadParams p;
  p.w_q = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_k = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_v = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_o = gaussian(cfg.d, cfg.d, sd, rng);
  p.w_mlp_u = gaussian(cfg.d, cfg.d_mlp, sd, rng);
  p.w_mlp_v = gaussian(cfg.d, cfg.d_mlp, sd, rng);
  p.w_mlp_out = gaussian(cfg.d_mlp, cfg.d, sd, rng);
  p.alpha_attn = Tensor(1, cfg.d, 0.05);
  p.alpha_mlp = Tensor(1, cfg.d, 0.05);
  p.s_qk = Tensor(1, cfg.d_head(), 1.0);
  p.s_u = Tensor(1, cfg.d_mlp, 1.0);
  p.s_v = Tensor(1, cfg.d_mlp, 1.0);
  renormalize_weights_in_place(p);
  return p;
}

Head init_head(HeadKind kind, const HeadConfig& cfg, std::uint64_t seed) {
  if (kind == HeadKind::gpt) return Head{cfg, init_gpt(cfg, seed)};
  return Head{cfg, init_ngpt(cfg, seed)};
}

// ---- weight renormalization --------------------------------------------------

namespace {

// Slices already within this distance of unit norm are left bit-identical,
// which makes renormalization idempotent.
constexpr double kUnitTolerance = 8 * std::numeric_limits<double>::epsilon();

void normalize_columns(Tensor& w, std::string_view name) {
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) sq += w(r, c) * w(r, c);
    const double n = std::sqrt(sq);
    require(n > 0.0, ErrorKind::degenerate_norm, std::string(name) + " column " + std::to_string(c) + " is zero");
    if (std::abs(n - 1.0) <= kUnitTolerance) continue;
    for (std::size_t r = 0; r < w.rows(); ++r) w(r, c) /= n;
  }
}

void normalize_rows_inplace(Tensor& w, std::string_view name) {
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const double n = row_norm(w, r);
    require(n > 0.0, ErrorKind::degenerate_norm, std::string(name) + " row " + std::to_string(r) + " is zero");
    if (std::abs(n - 1.0) <= kUnitTolerance) continue;
    for (double& v : w.row(r)) v /= n;
  }
}

double column_deviation(const Tensor& w) {
  double worst = 0.0;
  for (std::size_t c = 0; c < w.cols(); ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < w.rows(); ++r) sq += w(r, c) * w(r, c);
    worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
  }
  return worst;
}

double row_deviation(const Tensor& w) {
  double worst = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) worst = std::max(worst, std::abs(row_norm(w, r) - 1.0));
  return worst;
}

}  // namespace

void renormalize_weights_in_place(NGptHeadParams& p) {
  normalize_columns(p.w_q, "w_q");
  normalize_columns(p.w_k, "w_k");
  normalize_columns(p.w_v, "w_v");
  normalize_columns(p.w_mlp_u, "w_mlp_u");
  normalize_columns(p.w_mlp_v, "w_mlp_v");
  normalize_rows_inplace(p.w_o, "w_o");
  normalize_rows_inplace(p.w_mlp_out, "w_mlp_out");
}

NGptHeadParams renormalize_weights(const NGptHeadParams& params) {
  NGptHeadParams out = params;
  renormalize_weights_in_place(out);
  return out;
}

double max_weight_slice_deviation(const NGptHeadParams& p) {
  return std::max({column_deviation(p.w_q), column_deviation(p.w_k), column_deviation(p.w_v),
                   column_deviation(p.w_mlp_u), column_deviation(p.w_mlp_v), row_deviation(p.w_o),
                   row_deviation(p.w_mlp_out)});
}

// ---- forward ------------------------------------------------------------------

BoundHead bind_head(ad::Tape& tape, const Head& head, bool trainable) {
  BoundHead bound;
  bound.kind = head.kind();
  for (const auto& [name, t] : head.named_params()) {
    bound.vars.push_back(trainable ? tape.parameter(*t) : tape.constant(*t));
  }
  return bound;
}

PackedSequences PackedSequences::uniform(std::size_t count, std::size_t length) {
  PackedSequences s;
  for (std::size_t i = 0; i < count; ++i) {
    s.offsets.push_back(i * length);
    s.lengths.push_back(length);
  }
  return s;
}

namespace {

bool all_single(const PackedSequences& seqs) {
  for (std::size_t len : seqs.lengths)
    if (len != 1) return false;
  return true;
}

Tensor causal_mask(std::size_t len) {
  Tensor m(len, len);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t s = t + 1; s < len; ++s) m(t, s) = 1.0;
  return m;
}

// Scaled dot-product attention for one head over every packed sequence.
// A length-1 sequence attends only to itself with weight exactly 1.
Var segment_attention(Var q, Var k, Var v, const PackedSequences& seqs, bool causal, double logit_scale) {
  if (all_single(seqs)) return v;
  std::vector<Var> outs;
  outs.reserve(seqs.lengths.size());
  for (std::size_t s = 0; s < seqs.lengths.size(); ++s) {
    const std::size_t off = seqs.offsets[s], len = seqs.lengths[s];
    Var vs = slice_rows(v, off, len);
    if (len == 1) {
      outs.push_back(vs);
      continue;
    }
    Var logits = ad::scale(ad::matmul_nt(slice_rows(q, off, len), slice_rows(k, off, len)), logit_scale);
    if (causal) logits = ad::masked_fill(logits, causal_mask(len), -std::numeric_limits<double>::infinity());
    outs.push_back(ad::matmul(ad::softmax_rows(logits), vs));
  }
  return outs.size() == 1 ? outs.front() : ad::concat_rows(outs);
}

Var concat_heads(const std::vector<Var>& heads) {
  return heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
}

BlockTraceVars gpt_forward(const std::vector<Var>& w, const HeadConfig& cfg, Var h, const PackedSequences& seqs) {
  const Var &w_q = w[0], &w_k = w[1], &w_v = w[2], &w_o = w[3], &w_u = w[4], &w_vm = w[5], &w_out = w[6],
            &g_attn = w[7], &g_mlp = w[8];
  const std::size_t dh = cfg.d_head();
  Var x = ad::rms_norm(h, g_attn, kRmsNormEps);
  Var q = ad::matmul(x, w_q), k = ad::matmul(x, w_k), v = ad::matmul(x, w_v);
  std::vector<Var> heads;
  for (std::size_t n = 0; n < cfg.n_heads; ++n) {
    const bool whole = cfg.n_heads == 1;
    heads.push_back(segment_attention(whole ? q : ad::slice_cols(q, n * dh, dh), whole ? k : ad::slice_cols(k, n * dh, dh),
                                      whole ? v : ad::slice_cols(v, n * dh, dh), seqs, cfg.causal,
                                      1.0 / std::sqrt(static_cast<double>(dh))));
  }
  Var attn = ad::matmul(concat_heads(heads), w_o);
  Var h1 = ad::add(h, attn);
  Var y = ad::rms_norm(h1, g_mlp, kRmsNormEps);
  Var mlp = ad::matmul(ad::hadamard(ad::silu(ad::matmul(y, w_u)), ad::matmul(y, w_vm)), w_out);
  Var h2 = ad::add(h1, mlp);
  return {h1, attn, mlp, h2};
}

BlockTraceVars ngpt_forward(const std::vector<Var>& w, const HeadConfig& cfg, Var h, const PackedSequences& seqs) {
  const Var &w_q = w[0], &w_k = w[1], &w_v = w[2], &w_o = w[3], &w_u = w[4], &w_vm = w[5], &w_out = w[6],
            &alpha_a = w[7], &alpha_m = w[8], &s_qk = w[9], &s_u = w[10], &s_v = w[11];
  const std::size_t dh = cfg.d_head();
  Var hn = ad::normalize_rows(h);
  Var v = ad::matmul(hn, w_v);
  std::vector<Var> heads;
  if (all_single(seqs)) {
    heads.push_back(v);
  } else {
    Var q = ad::matmul(hn, w_q), k = ad::matmul(hn, w_k);
    for (std::size_t n = 0; n < cfg.n_heads; ++n) {
      const bool whole = cfg.n_heads == 1;
      Var qh = ad::mul_row(ad::normalize_rows(whole ? q : ad::slice_cols(q, n * dh, dh)), s_qk);
      Var kh = ad::mul_row(ad::normalize_rows(whole ? k : ad::slice_cols(k, n * dh, dh)), s_qk);
      heads.push_back(segment_attention(qh, kh, whole ? v : ad::slice_cols(v, n * dh, dh), seqs, cfg.causal,
                                        std::sqrt(static_cast<double>(dh))));
    }
  }
  Var attn = ad::matmul(concat_heads(heads), w_o);
  Var h1 = ad::normalize_rows(
      ad::add(ad::mul_row(hn, ad::one_minus(alpha_a)), ad::mul_row(ad::normalize_rows(attn), alpha_a)));
  Var u = ad::mul_row(ad::matmul(h1, w_u), s_u);
  Var gate = ad::scale(ad::mul_row(ad::matmul(h1, w_vm), s_v), std::sqrt(static_cast<double>(cfg.d_mlp)));
  Var mlp = ad::matmul(ad::hadamard(ad::silu(gate), u), w_out);
  Var h2 = ad::normalize_rows(ad::add(ad::mul_row(ad::normalize_rows(h1), ad::one_minus(alpha_m)),
                                      ad::mul_row(ad::normalize_rows(mlp), alpha_m)));
  return {h1, attn, mlp, h2};
}

void check_input(const Tensor& h, const HeadConfig& cfg) {
  require(h.cols() == cfg.d, ErrorKind::dimension,
          "head input has " + std::to_string(h.cols()) + " columns, head expects d=" + std::to_string(cfg.d));
  require(h.rows() >= 1, ErrorKind::dimension, "head input needs at least one token");
}

}  // namespace

BlockTraceVars block_forward(const BoundHead& head, const HeadConfig& cfg, Var h_in, const PackedSequences& seqs) {
  check_input(h_in.value(), cfg);
  require(seqs.total_rows() == h_in.rows(), ErrorKind::dimension, "packed sequence layout does not cover the input");
  return head.kind == HeadKind::gpt ? gpt_forward(head.vars, cfg, h_in, seqs) : ngpt_forward(head.vars, cfg, h_in, seqs);
}

Var pool_and_embed(Var h, const PackedSequences& seqs, Pooling strategy) {
  require(!seqs.lengths.empty(), ErrorKind::dimension, "nothing to pool");
  Var pooled = h;
  if (!all_single(seqs)) {
    std::vector<Var> rows;
    rows.reserve(seqs.lengths.size());
    for (std::size_t s = 0; s < seqs.lengths.size(); ++s) {
      const std::size_t off = seqs.offsets[s], len = seqs.lengths[s];
      require(len >= 1, ErrorKind::dimension, "empty sequence");
      switch (strategy) {
        case Pooling::cls: rows.push_back(ad::slice_rows(h, off, 1)); break;
        case Pooling::last: rows.push_back(ad::slice_rows(h, off + len - 1, 1)); break;
        case Pooling::mean: rows.push_back(ad::mean_rows(ad::slice_rows(h, off, len))); break;
      }
    }
    pooled = rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
  }
  return ad::normalize_rows(pooled);
}

Tensor gpt_block_forward(const GptHeadParams& params, const Tensor& h_in, const HeadConfig& cfg) {
  cfg.validate();
  return forward_with_trace(Head{cfg, params}, h_in).final;
}

Tensor ngpt_block_forward(const NGptHeadParams& params, const Tensor& h_in, const HeadConfig& cfg) {
  cfg.validate();
  return forward_with_trace(Head{cfg, params}, h_in).final;
}

Tensor pool_and_embed(const Tensor& h, Pooling strategy) {
  require(h.rows() >= 1, ErrorKind::dimension, "pooling needs at least one token");
  ad::Tape tape;
  Var out = pool_and_embed(tape.constant(h), PackedSequences::uniform(1, h.rows()), strategy);
  return out.value();
}

BlockTrace forward_with_trace(const Head& head, const Tensor& h_in) {
  check_input(h_in, head.cfg);
  ad::Tape tape;
  BoundHead bound = bind_head(tape, head, false);
  BlockTraceVars t = block_forward(bound, head.cfg, tape.constant(h_in), PackedSequences::uniform(1, h_in.rows()));
  return {t.post_attention.value(), t.attention_output.value(), t.mlp_output.value(), t.final.value()};
}

Tensor embed_sequences(const Head& head, std::span<const Tensor> sequences) {
  const std::size_t d = head.cfg.d;
  Tensor out(sequences.size(), d);
  constexpr std::size_t kChunk = 256;
  for (std::size_t begin = 0; begin < sequences.size(); begin += kChunk) {
    const std::size_t end = std::min(sequences.size(), begin + kChunk);
    PackedSequences seqs;
    std::size_t rows = 0;
    for (std::size_t i = begin; i < end; ++i) {
      check_input(sequences[i], head.cfg);
      seqs.offsets.push_back(rows);
      seqs.lengths.push_back(sequences[i].rows());
      rows += sequences[i].rows();
    }
    Tensor packed(rows, d);
    for (std::size_t i = begin; i < end; ++i) {
      std::copy_n(sequences[i].data(), sequences[i].size(), packed.data() + seqs.offsets[i - begin] * d);
    }
    ad::Tape tape;
    BoundHead bound = bind_head(tape, head, false);
    BlockTraceVars t = block_forward(bound, head.cfg, tape.constant(std::move(packed)), seqs);
    Var e = pool_and_embed(t.final, seqs, head.cfg.pooling);
    std::copy_n(e.value().data(), e.value().size(), out.data() + begin * d);
  }
  return out;
}

// ---- checkpoint -----------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'E', 'C', 'M', 'K'};

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_f64_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}

}  // namespace

nlohmann::json to_json(const HeadConfig& cfg) {
  return {{"d", cfg.d}, {"n_heads", cfg.n_heads}, {"d_mlp", cfg.d_mlp}, {"causal", cfg.causal},
          {"pooling", to_string(cfg.pooling)}};
}

HeadConfig head_config_from_json(const nlohmann::json& j) {
  HeadConfig cfg;
  cfg.d = j.at("d").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.d_mlp = j.at("d_mlp").get<std::size_t>();
  cfg.causal = j.at("causal").get<bool>();
  cfg.pooling = parse_pooling(j.at("pooling").get<std::string>());
  cfg.validate();
  return cfg;
}

void save_checkpoint(const Head& head, const std::string& path) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, t] : head.named_params()) params.push_back({{"name", name}, {"shape", t->shape()}});
  const nlohmann::json header = {{"format_version", 1},
                                 {"head_kind", to_string(head.kind())},
                                 {"cfg", to_json(head.cfg)},
                                 {"params", params}};
  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write checkpoint '" + path + "'");
    out.write(kCheckpointMagic, 4);
    write_u32_le(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : head.named_params())
      for (double v : t->values()) write_f64_le(out, v);
    require(static_cast<bool>(out), ErrorKind::io, "failed writing checkpoint '" + path + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

Head load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(0, "'" + path + "' is not a head checkpoint (bad magic)");
  const std::uint32_t hlen = bytes[4] | (bytes[5] << 8) | (bytes[6] << 16) | (static_cast<std::uint32_t>(bytes[7]) << 24);
  if (8 + static_cast<std::uint64_t>(hlen) > bytes.size()) throw FormatError(4, "checkpoint header length exceeds file size");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Head head;
  try {
    head.cfg = head_config_from_json(header.at("cfg"));
    const HeadKind kind = parse_head_kind(header.at("head_kind").get<std::string>());
    head.params = kind == HeadKind::gpt ? HeadParams(init_gpt(head.cfg, 0)) : HeadParams(init_ngpt(head.cfg, 0));
    auto slots = head.named_params();
    const auto& plist = header.at("params");
    require(plist.size() == slots.size(), ErrorKind::format, "checkpoint parameter count mismatch");
    std::uint64_t offset = 8 + hlen;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      const auto& entry = plist[i];
      require(entry.at("name").get<std::string>() == slots[i].first, ErrorKind::format,
              "checkpoint parameter " + std::to_string(i) + " is '" + entry.at("name").get<std::string>() +
                  "', expected '" + slots[i].first + "'");
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      require(shape.size() == 2 && shape[0] == slots[i].second->rows() && shape[1] == slots[i].second->cols(),
              ErrorKind::format, "checkpoint parameter '" + slots[i].first + "' has an unexpected shape");
      Tensor& t = *slots[i].second;
      const std::uint64_t need = t.size() * 8;
      if (offset + need > bytes.size()) throw FormatError(bytes.size(), "checkpoint payload truncated");
      for (std::size_t e = 0; e < t.size(); ++e) t[e] = read_f64_le(bytes.data() + offset + 8 * e);
      offset += need;
    }
    if (offset != bytes.size()) throw FormatError(offset, "trailing bytes after checkpoint payload");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, std::string("malformed checkpoint header: ") + e.what());
  }
  return head;
}

}  // namespace ecm_sphere
