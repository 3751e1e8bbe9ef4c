#include "ecm_sphere/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "ecm_sphere/error.hpp"

namespace ecm_sphere {

void EmbeddingDataset::validate() const {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    require(r.label_index < label_names.size(), ErrorKind::invalid_label,
            "record '" + r.id + "' label index " + std::to_string(r.label_index) + " out of range");
    require(r.token_states.rows() >= 1, ErrorKind::contract, "record '" + r.id + "' has no tokens");
    require(r.token_states.cols() == d, ErrorKind::dimension,
            "record '" + r.id + "' has width " + std::to_string(r.token_states.cols()) + ", dataset d=" +
                std::to_string(d));
    require(r.token_states.all_finite(), ErrorKind::contract, "record '" + r.id + "' has non-finite states");
    require(ids.insert(r.id).second, ErrorKind::contract, "duplicate record id '" + r.id + "'");
  }
}

std::vector<std::size_t> EmbeddingDataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label_index);
  return out;
}

std::vector<Tensor> EmbeddingDataset::sequences() const {
  std::vector<Tensor> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.token_states);
  return out;
}

EmbeddingDataset EmbeddingDataset::quantized() const {
  EmbeddingDataset q = *this;
  for (auto& r : q.records)
    for (double& v : r.token_states.values()) v = static_cast<double>(static_cast<float>(v));
  return q;
}

// ---- ECM1 ------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'C', 'M', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const EmbeddingDataset& data) {
  data.validate();
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : data.records)
    records.push_back({{"id", r.id}, {"label_index", r.label_index}, {"T", r.token_states.rows()}});
  const nlohmann::json header = {{"version", 1}, {"d", data.d}, {"labels", data.label_names}, {"records", records}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& r : data.records) {
    for (double v : r.token_states.values()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

void save_dataset(const EmbeddingDataset& data, const std::string& path) {
  const auto bytes = encode_dataset(data);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::io, "cannot write dataset '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::io, "failed writing dataset '" + path + "'");
  }
  std::rename(tmp.c_str(), path.c_str());
}

EmbeddingDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError(0, "bad magic, expected ECM1");
  if (bytes.size() < 8) throw FormatError(bytes.size(), "truncated before header length");
  const std::uint64_t hlen = get_u32(bytes.data() + 4);
  if (8 + hlen > bytes.size()) throw FormatError(bytes.size(), "header runs past end of file (declared length " +
                                                                  std::to_string(hlen) + ")");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, std::string("header is not valid JSON: ") + e.what());
  }

  EmbeddingDataset data;
  struct Meta {
    std::string id;
    std::size_t label;
    std::size_t tokens;
  };
  std::vector<Meta> metas;
  try {
    if (header.at("version").get<int>() != 1) throw FormatError(8, "unsupported ECM1 header version");
    data.d = header.at("d").get<std::size_t>();
    data.label_names = header.at("labels").get<std::vector<std::string>>();
    for (const auto& r : header.at("records"))
      metas.push_back({r.at("id").get<std::string>(), r.at("label_index").get<std::size_t>(), r.at("T").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(8, std::string("malformed header: ") + e.what());
  }

  std::uint64_t expected = 0;
  for (const auto& m : metas) expected += static_cast<std::uint64_t>(m.tokens) * data.d * 4;
  const std::uint64_t payload_start = 8 + hlen;
  const std::uint64_t available = bytes.size() - payload_start;
  if (available < expected) {
    throw FormatError(bytes.size(), "payload truncated: header promises " + std::to_string(expected) +
                                        " bytes, file holds " + std::to_string(available));
  }
  if (available > expected) {
    throw FormatError(payload_start + expected, "payload longer than header promises by " +
                                                    std::to_string(available - expected) + " bytes");
  }

  std::uint64_t offset = payload_start;
  data.records.reserve(metas.size());
  for (const auto& m : metas) {
    Tensor states(m.tokens, data.d);
    for (std::size_t i = 0; i < states.size(); ++i) {
      const float f = std::bit_cast<float>(get_u32(bytes.data() + offset));
      if (!std::isfinite(f)) throw FormatError(offset, "non-finite state value in record '" + m.id + "'");
      states[i] = static_cast<double>(f);
      offset += 4;
    }
    data.records.push_back({m.id, m.label, std::move(states)});
  }
  try {
    data.validate();
  } catch (const Error& e) {
    throw FormatError(8, std::string("inconsistent header: ") + e.what());
  }
  return data;
}

EmbeddingDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open dataset '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

EmbeddingDataset import_jsonl(const std::string& path, const EcmConfig& ecm) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open JSON-lines file '" + path + "'");
  EmbeddingDataset data;
  data.label_names = ecm.names();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto rows = j.at("vectors").get<std::vector<std::vector<double>>>();
      require(!rows.empty(), ErrorKind::contract, "record without vectors");
      const std::size_t width = rows.front().size();
      if (data.d == 0) data.d = width;
      Tensor states(rows.size(), width);
      for (std::size_t r = 0; r < rows.size(); ++r) {
        require(rows[r].size() == width, ErrorKind::dimension, "ragged vectors");
        std::copy(rows[r].begin(), rows[r].end(), states.row(r).begin());
      }
      data.records.push_back({j.at("id").get<std::string>(), ecm.index_of(j.at("label").get<std::string>()),
                              std::move(states)});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::format, path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  data.validate();
  return data;
}

EmbeddingDataset load_any_dataset(const std::string& path, const EcmConfig& ecm) {
  if (path.size() >= 6 && path.compare(path.size() - 6, 6, ".jsonl") == 0) return import_jsonl(path, ecm);
  return load_dataset(path);
}

// ---- planted generator ---------------------------------------------------------

void SynthConfig::validate() const {
  require(d >= 3, ErrorKind::config, "synthetic data needs d >= 3");
  require(n_per_label >= 1, ErrorKind::config, "n_per_label must be positive");
  require(tokens >= 1, ErrorKind::config, "T must be positive");
  require(kappa > 0.0, ErrorKind::config, "kappa must be positive (use inf for noise-free)");
  require(distractor_scale >= 0.0 && std::isfinite(distractor_scale), ErrorKind::config,
          "distractor_scale must be non-negative");
}

EmbeddingDataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  // Distinct streams per split so train and test never share noise.
  const std::uint64_t split_hash = [&] {
    std::vector<std::uint8_t> b(cfg.split.begin(), cfg.split.end());
    return std::stoull(fnv1a_hex(b), nullptr, 16);
  }();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(split_hash), static_cast<std::uint32_t>(split_hash >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto random_unit = [&](Tensor& t, std::size_t r) {
    double sq = 0.0;
    do {
      sq = 0.0;
      for (double& v : t.row(r)) {
        v = normal(rng);
        sq += v * v;
      }
    } while (sq == 0.0);
    const double n = std::sqrt(sq);
    for (double& v : t.row(r)) v /= n;
  };

  EmbeddingDataset data;
  data.d = cfg.d;
  data.label_names = cfg.ecm.names();
  const bool exact = std::isinf(cfg.kappa);
  for (const auto& lab : cfg.ecm.labels()) {
    const double angle = cfg.ecm.angle(lab.index);
    // cos/sin at the quarter angles are pinned so planted geometry is exact.
    const std::size_t e = cfg.ecm.size();
    double mu0 = std::cos(angle), mu1 = std::sin(angle);
    if (lab.slot == 0) { mu0 = 1.0; mu1 = 0.0; }
    if (4 * lab.slot == e) { mu0 = 0.0; mu1 = 1.0; }
    if (2 * lab.slot == e) { mu0 = -1.0; mu1 = 0.0; }
    if (4 * lab.slot == 3 * e) { mu0 = 0.0; mu1 = -1.0; }
    for (std::size_t n = 0; n < cfg.n_per_label; ++n) {
      Tensor states(cfg.tokens, cfg.d);
      // Signal in row 0, distractors after; then shuffle row order.
      if (exact) {
        states(0, 0) = mu0;
        states(0, 1) = mu1;
      } else {
        double sq = 0.0;
        for (std::size_t c = 0; c < cfg.d; ++c) {
          double v = normal(rng);
          if (c == 0) v += cfg.kappa * mu0;
          if (c == 1) v += cfg.kappa * mu1;
          states(0, c) = v;
          sq += v * v;
        }
        const double norm = std::sqrt(sq);
        for (double& v : states.row(0)) v /= norm;
      }
      for (std::size_t t = 1; t < cfg.tokens; ++t) {
        random_unit(states, t);
        for (double& v : states.row(t)) v *= cfg.distractor_scale;
      }
      if (cfg.tokens > 1) {
        std::vector<std::size_t> order(cfg.tokens);
        for (std::size_t t = 0; t < cfg.tokens; ++t) order[t] = t;
        std::shuffle(order.begin(), order.end(), rng);
        Tensor shuffled(cfg.tokens, cfg.d);
        for (std::size_t t = 0; t < cfg.tokens; ++t)
          std::copy(states.row(order[t]).begin(), states.row(order[t]).end(), shuffled.row(t).begin());
        states = std::move(shuffled);
      }
      std::ostringstream id;
      id << cfg.split << '-' << lab.name << '-' << std::setw(5) << std::setfill('0') << n;
      data.records.push_back({id.str(), lab.index, std::move(states)});
    }
  }
  return data;
}

std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

}  // namespace ecm_sphere
