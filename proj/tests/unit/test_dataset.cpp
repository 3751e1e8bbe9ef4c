#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ecm_sphere/dataset.hpp"
#include "ecm_sphere/error.hpp"

using namespace ecm_sphere;

namespace {

const std::string kData = ECM_TEST_DATA_DIR;

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an ecm_sphere::Error");
  return ErrorKind::io;
}

long long offset_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_dataset(bytes);
  } catch (const FormatError& e) {
    return static_cast<long long>(e.offset());
  }
  return -1;
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EmbeddingDataset golden_expected() {
  EmbeddingDataset d;
  d.d = 3;
  d.label_names = EcmConfig::default_layout().names();
  d.records.push_back({"a-0", 0, Tensor::from_rows({{0.5, -1.25, 3.0}, {0.0, 2.0, -0.125}})});
  d.records.push_back({"b-1", 6, Tensor::from_rows({{1.0, 0.25, -4.5}})});
  return d;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ecm_sphere_dataset_" + name)).string();
}

}  // namespace

TEST_CASE("golden file decodes and re-encodes byte for byte") {
  const auto bytes = read_bytes(kData + "/golden_small.ecm1");
  REQUIRE(bytes.size() == 266);
  CHECK(decode_dataset(bytes) == golden_expected());
  CHECK(encode_dataset(golden_expected()) == bytes);
  CHECK(load_dataset(kData + "/golden_small.ecm1") == golden_expected());
}

TEST_CASE("round trip through a file") {
  SynthConfig sc;
  sc.n_per_label = 3;
  sc.tokens = 3;
  sc.d = 5;
  const auto data = synth_generate(sc);
  const std::string path = temp_path("rt.ecm1");
  save_dataset(data, path);
  CHECK(load_dataset(path) == data.quantized());
  CHECK(file_digest(path) == fnv1a_hex(encode_dataset(data)));
  CHECK_FALSE(std::filesystem::exists(path + ".tmp"));
  std::remove(path.c_str());
}

TEST_CASE("empty dataset round trip") {
  EmbeddingDataset empty;
  empty.d = 4;
  empty.label_names = {"a", "b"};
  CHECK(decode_dataset(encode_dataset(empty)) == empty);
}

TEST_CASE("corruption is reported at the offending offset") {
  const auto good = read_bytes(kData + "/golden_small.ecm1");
  const std::uint32_t hlen = good[4] | (good[5] << 8) | (good[6] << 16) | (static_cast<std::uint32_t>(good[7]) << 24);
  const std::size_t payload = 8 + hlen;
  REQUIRE(good.size() == payload + 9 * 4);

  auto bad = good;
  bad[1] = 'X';
  CHECK(offset_of(bad) == 0);
  CHECK(offset_of({'E', 'C', 'M', '1', 0}) == 5);

  bad = good;
  bad[4] = 0xff;
  bad[5] = 0xff;
  CHECK(offset_of(bad) == static_cast<long long>(good.size()));

  bad = good;
  bad[8] = '!';
  CHECK(offset_of(bad) == 8);

  bad.assign(good.begin(), good.end() - 2);
  CHECK(offset_of(bad) == static_cast<long long>(good.size() - 2));

  bad = good;
  bad.push_back(0);
  CHECK(offset_of(bad) == static_cast<long long>(good.size()));

  // Fifth float (record 0, row 1, column 1) becomes +inf.
  bad = good;
  const std::size_t at = payload + 4 * 4;
  bad[at] = 0x00;
  bad[at + 1] = 0x00;
  bad[at + 2] = 0x80;
  bad[at + 3] = 0x7f;
  CHECK(offset_of(bad) == static_cast<long long>(at));

  // A label index past the label list is an inconsistent header.
  std::string text(good.begin() + 8, good.begin() + static_cast<std::ptrdiff_t>(payload));
  const auto pos = text.find("\"label_index\":6");
  REQUIRE(pos != std::string::npos);
  text[pos + 14] = '9';
  text.insert(pos + 14, "9");
  bad.assign(good.begin(), good.begin() + 4);
  const std::uint32_t n = static_cast<std::uint32_t>(text.size());
  for (int i = 0; i < 4; ++i) bad.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  bad.insert(bad.end(), text.begin(), text.end());
  bad.insert(bad.end(), good.begin() + static_cast<std::ptrdiff_t>(payload), good.end());
  CHECK(offset_of(bad) == 8);

  CHECK(kind_of([] { load_dataset(temp_path("missing.ecm1")); }) == ErrorKind::io);
}

TEST_CASE("validation") {
  auto d = golden_expected();
  d.records[1].id = "a-0";
  CHECK(kind_of([&] { d.validate(); }) == ErrorKind::contract);
  d = golden_expected();
  d.records[0].label_index = 12;
  CHECK(kind_of([&] { d.validate(); }) == ErrorKind::invalid_label);
  d = golden_expected();
  d.records[0].token_states = Tensor(1, 4);
  CHECK(kind_of([&] { encode_dataset(d); }) == ErrorKind::dimension);
}

TEST_CASE("JSON-lines import") {
  const auto ecm = EcmConfig::default_layout();
  const auto d = import_jsonl(kData + "/fixture.jsonl", ecm);
  CHECK(d.d == 3);
  REQUIRE(d.records.size() == 2);
  CHECK(d.records[0].label_index == ecm.index_of("joy"));
  CHECK(d.records[1].token_states == Tensor::from_rows({{1, 0, 0}, {0, 1, 0}}));
  CHECK(d.records[0].token_states(0, 2) == 0.3);
  CHECK(load_any_dataset(kData + "/fixture.jsonl", ecm) == d);
  try {
    import_jsonl(kData + "/fixture_unknown.jsonl", ecm);
    FAIL("expected invalid_label");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_label);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("planted generator without noise sits exactly on the circle") {
  SynthConfig sc;
  sc.kappa = std::numeric_limits<double>::infinity();
  sc.n_per_label = 4;
  sc.tokens = 3;
  const auto data = synth_generate(sc);
  CHECK(data.records.size() == 48);
  for (const auto& r : data.records) {
    const double a = sc.ecm.angle(r.label_index);
    bool found = false;
    for (std::size_t t = 0; t < 3; ++t) {
      bool match = std::abs(r.token_states(t, 0) - std::cos(a)) <= 1e-15 && std::abs(r.token_states(t, 1) - std::sin(a)) <= 1e-15;
      for (std::size_t c = 2; c < sc.d; ++c) match = match && r.token_states(t, c) == 0.0;
      found = found || match;
      CHECK(std::abs(row_norm(r.token_states, t) - 1.0) < 1e-12);
    }
    CHECK(found);
  }
  CHECK(data.records[0].id == "train-love-00000");
}

TEST_CASE("planted generator is deterministic per seed and split") {
  SynthConfig sc;
  sc.n_per_label = 5;
  sc.tokens = 2;
  CHECK(synth_generate(sc) == synth_generate(sc));
  SynthConfig other = sc;
  other.split = "test";
  const auto a = synth_generate(sc), b = synth_generate(other);
  CHECK(a.records[0].token_states != b.records[0].token_states);
  other = sc;
  other.seed = 7;
  CHECK(synth_generate(other).records[0].token_states != a.records[0].token_states);
}

TEST_CASE("noisy labels keep their mean direction") {
  SynthConfig sc;
  sc.kappa = 50.0;
  sc.n_per_label = 100;
  const auto data = synth_generate(sc);
  std::vector<std::vector<double>> sums(12, std::vector<double>(sc.d, 0.0));
  for (const auto& r : data.records)
    for (std::size_t c = 0; c < sc.d; ++c) sums[r.label_index][c] += r.token_states(0, c);
  for (std::size_t l = 0; l < 12; ++l) {
    double norm = 0.0;
    for (double v : sums[l]) norm += v * v;
    norm = std::sqrt(norm);
    const double a = sc.ecm.angle(l);
    const double cosang = (sums[l][0] * std::cos(a) + sums[l][1] * std::sin(a)) / norm;
    CHECK(std::acos(std::min(1.0, cosang)) * 180.0 / std::numbers::pi < 5.0);
  }
}

TEST_CASE("generator configuration checks") {
  SynthConfig sc;
  sc.d = 2;
  CHECK(kind_of([&] { synth_generate(sc); }) == ErrorKind::config);
  sc = {};
  sc.kappa = 0.0;
  CHECK(kind_of([&] { synth_generate(sc); }) == ErrorKind::config);
  sc = {};
  sc.tokens = 0;
  CHECK(kind_of([&] { synth_generate(sc); }) == ErrorKind::config);
}
