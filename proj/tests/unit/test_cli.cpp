#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ecm_sphere/cli.hpp"
#include "ecm_sphere/dataset.hpp"
#include "ecm_sphere/heads.hpp"
#include "ecm_sphere/kernels.hpp"
#include "ecm_sphere/metrics.hpp"
#include "ecm_sphere/report.hpp"

namespace fs = std::filesystem;
using namespace ecm_sphere;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Fresh scratch directory per test case.
struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / ("ecm_sphere_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string operator()(const std::string& file) const { return (dir / file).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::string> synth_args(const std::string& out, const std::string& split = "train") {
  return {"synth", "--out", out, "--n", "12", "--d", "8", "--T", "2", "--kappa", "50", "--seed", "3", "--split", split};
}

std::vector<std::string> train_args(const std::string& data, const std::string& out) {
  return {"train", "--data", data, "--out", out, "--epochs", "2", "--lr", "1e-2", "--batch", "32", "--loss", "softcse"};
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"synth"}).code == 2);  // --out missing
  CHECK(cli({"synth", "--out", "x.ecm1", "--kappa", "lots"}).code == 2);
  CHECK(cli({"train", "--data", "/nonexistent/file.ecm1", "--out", "x.ckpt"}).code == 2);
  CHECK(cli({"--simd", "neon", "verify", "--E", "2", "--d", "3"}).code == 2);
  const Run help = cli({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("sweep-dims") != std::string::npos);
  CHECK(help.out.find("Exit codes") != std::string::npos);
}

TEST_CASE("synth, train and eval produce deterministic artifacts") {
  Scratch s("pipeline");
  REQUIRE(cli(synth_args(s("train.ecm1"))).code == 0);
  REQUIRE(cli(synth_args(s("test.ecm1"), "test")).code == 0);
  CHECK(fs::exists(s("train.ecm1.manifest.json")));
  CHECK(load_dataset(s("train.ecm1")).records.size() == 144);

  const Run t1 = cli(train_args(s("train.ecm1"), s("a.ckpt")));
  REQUIRE(t1.code == 0);
  const Run t2 = cli(train_args(s("train.ecm1"), s("b.ckpt")));
  REQUIRE(t2.code == 0);
  CHECK(slurp(s("a.ckpt")) == slurp(s("b.ckpt")));
  CHECK(slurp(s("a.ckpt.log.csv")) == slurp(s("b.ckpt.log.csv")));
  CHECK(slurp(s("a.ckpt.log.csv")).rfind("step,epoch,loss\n", 0) == 0);

  const auto m = nlohmann::json::parse(slurp(s("a.ckpt.manifest.json")));
  CHECK(m["command"] == "train");
  CHECK(m["version"] == kToolVersion);
  CHECK(m["inputs"][0]["digest"] == file_digest(s("train.ecm1")));
  CHECK(m["outputs"][0]["digest"] == file_digest(s("a.ckpt")));

  REQUIRE(cli({"eval", "--data", s("test.ecm1"), "--ckpt", s("a.ckpt"), "--out", s("rep1"), "--restarts", "3"}).code == 0);
  REQUIRE(cli({"eval", "--data", s("test.ecm1"), "--ckpt", s("a.ckpt"), "--out", s("rep2"), "--restarts", "3", "--jobs",
               "3"})
              .code == 0);
  for (const char* f : {"scores.csv", "avgcossim.csv", "pca.svg", "mds.svg"}) {
    CAPTURE(f);
    CHECK(fs::exists(s("rep1") + "/" + f));
    CHECK(slurp(s("rep1") + "/" + f) == slurp(s("rep2") + "/" + f));
  }
  CHECK(fs::exists(s("rep1") + "/manifest.json"));
  const std::string scores = slurp(s("rep1") + "/scores.csv");
  CHECK(scores.rfind("metric,value\n", 0) == 0);
  CHECK(scores.find("\ncd_r,") != std::string::npos);

  // At dim = d the sweep is a rotation of the embeddings, so V-measure
  // matches eval.
  REQUIRE(cli({"sweep-dims", "--data", s("test.ecm1"), "--ckpt", s("a.ckpt"), "--out", s("dims.csv"), "--dims", "2,8,12",
               "--restarts", "3"})
              .code == 0);
  const std::string dims = slurp(s("dims.csv"));
  CHECK(dims.rfind("dim,v_measure,homogeneity,completeness,status\n", 0) == 0);
  CHECK(dims.find("skipped") != std::string::npos);
  const Head head = load_checkpoint(s("a.ckpt"));
  const auto data = load_dataset(s("test.ecm1"));
  const Tensor e = embed_sequences(head, data.sequences());
  const auto labels = data.labels();
  const double v_full = v_measure(labels, spherical_kmeans(e, 12, 3, 42).assignments).v;
  std::istringstream rows(dims);
  std::string line;
  bool found = false;
  while (std::getline(rows, line)) {
    if (line.rfind("8,", 0) != 0) continue;
    const std::string vm = line.substr(2, line.find(',', 2) - 2);
    CHECK(std::stod(vm) == doctest::Approx(v_full).epsilon(1e-9));
    found = true;
  }
  CHECK(found);
}

TEST_CASE("replay reproduces outputs byte for byte") {
  Scratch s("replay");
  REQUIRE(cli(synth_args(s("d.ecm1"))).code == 0);
  REQUIRE(cli(train_args(s("d.ecm1"), s("h.ckpt"))).code == 0);
  const std::string ckpt = slurp(s("h.ckpt"));
  const std::string data = slurp(s("d.ecm1"));
  fs::remove(s("h.ckpt"));
  fs::remove(s("d.ecm1"));
  REQUIRE(cli({"replay", s("d.ecm1.manifest.json")}).code == 0);
  CHECK(slurp(s("d.ecm1")) == data);
  REQUIRE(cli({"replay", s("h.ckpt.manifest.json")}).code == 0);
  CHECK(slurp(s("h.ckpt")) == ckpt);
  CHECK(cli({"replay", s("missing.json")}).code == 2);
}

TEST_CASE("scalar and AVX2 kernels train to the same loss curve") {
  if (!kernels::avx2_available()) return;
  Scratch s("simd");
  REQUIRE(cli(synth_args(s("d.ecm1"))).code == 0);
  const kernels::Isa before = kernels::active_isa();
  for (const char* isa : {"scalar", "avx2"}) {
    auto a = train_args(s("d.ecm1"), s(std::string(isa) + ".ckpt"));
    a.insert(a.begin(), {"--simd", isa});
    REQUIRE(cli(a).code == 0);
  }
  kernels::force_isa(before);
  std::istringstream a(slurp(s("scalar.ckpt.log.csv"))), b(slurp(s("avx2.ckpt.log.csv")));
  std::string la, lb;
  std::getline(a, la);
  std::getline(b, lb);
  std::size_t rows = 0;
  while (std::getline(a, la) && std::getline(b, lb)) {
    const double x = std::stod(la.substr(la.rfind(',') + 1)), y = std::stod(lb.substr(lb.rfind(',') + 1));
    CHECK(std::abs(x - y) <= 1e-9 * std::max(1.0, std::abs(x)));
    ++rows;
  }
  CHECK(rows > 0);
}

TEST_CASE("verify reports the simplex") {
  Scratch s("verify");
  const Run ok = cli({"verify", "--E", "4", "--d", "8", "--steps", "3000", "--out", s("sims.csv")});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("result: simplex reached (within 0.02)") != std::string::npos);
  CHECK(slurp(s("sims.csv")).rfind("i,j,sim,target,deviation\n", 0) == 0);
  CHECK(fs::exists(s("sims.csv.manifest.json")));

  const Run refused = cli({"verify", "--E", "4", "--d", "2"});
  CHECK(refused.code == 2);
  CHECK(refused.err.find("allow-infeasible") != std::string::npos);
  const Run forced = cli({"verify", "--E", "4", "--d", "2", "--allow-infeasible"});
  CHECK(forced.code == 0);
  CHECK(forced.out.find("simplex NOT reached") != std::string::npos);
  CHECK(cli({"verify", "--check", "other"}).code == 2);
}

TEST_CASE("trace writes one plot per stage") {
  Scratch s("trace");
  REQUIRE(cli(synth_args(s("d.ecm1"))).code == 0);
  REQUIRE(cli(train_args(s("d.ecm1"), s("h.ckpt"))).code == 0);
  const Run r = cli({"trace", "--data", s("d.ecm1"), "--ckpt", s("h.ckpt"), "--out", s("tr"), "--per-label", "4"});
  REQUIRE(r.code == 0);
  for (const char* f : {"input.svg", "post_attention.svg", "post_mlp.svg", "final.svg"}) {
    CAPTURE(f);
    const std::string svg = slurp(s("tr") + "/" + f);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
  }
  CHECK(r.out.find("unit-norm check") != std::string::npos);
}

TEST_CASE("import converts JSON lines to ECM1") {
  Scratch s("import");
  const std::string src = std::string(ECM_TEST_DATA_DIR) + "/fixture.jsonl";
  REQUIRE(cli({"import", "--in", src, "--out", s("f.ecm1")}).code == 0);
  CHECK(load_dataset(s("f.ecm1")) == import_jsonl(src, EcmConfig::default_layout()).quantized());
  const Run bad = cli({"import", "--in", std::string(ECM_TEST_DATA_DIR) + "/fixture_unknown.jsonl", "--out", s("g.ecm1")});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("nostalgia") != std::string::npos);
  CHECK_FALSE(fs::exists(s("g.ecm1")));
}

TEST_CASE("divergence exits with 3 and keeps the last good checkpoint") {
  Scratch s("diverge");
  REQUIRE(cli(synth_args(s("d.ecm1"))).code == 0);
  const Run r = cli({"train", "--data", s("d.ecm1"), "--out", s("h.ckpt"), "--head", "gpt", "--lr", "1e300", "--epochs",
                     "3", "--batch", "32"});
  CHECK(r.code == 3);
  CHECK(r.err.find("last good checkpoint") != std::string::npos);
  REQUIRE(fs::exists(s("h.ckpt")));
  const Head h = load_checkpoint(s("h.ckpt"));
  for (const auto& [name, t] : h.named_params()) CHECK(t->all_finite());
  const auto m = nlohmann::json::parse(slurp(s("h.ckpt.manifest.json")));
  CHECK(m["config"].contains("diverged_at_step"));
}

TEST_CASE("sweep over label configurations") {
  Scratch s("labels");
  save_ecm(EcmConfig::evenly_spaced(4), s("e4.json"));
  save_ecm(EcmConfig::default_layout(), s("e12.json"));
  const Run r = cli({"sweep-labels", "--ecm-series", s("e4.json") + "," + s("e12.json"), "--out", s("labels.csv"), "--n",
                     "6", "--test-n", "4", "--d", "8", "--epochs", "1", "--lr", "1e-2", "--restarts", "2", "--jobs", "2"});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(s("labels.csv"));
  CHECK(csv.rfind("E,ecm,loss,v_measure,homogeneity,completeness,cd_r\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 1 + 2 * 3);
}

TEST_CASE("report formatting") {
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(-2.0) == "-2");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(format_number(-INFINITY) == "-inf");
  const Tensor m = Tensor::from_rows({{1, 0.5}, {0.5, 1}});
  CHECK(matrix_csv(m, {"a", "b"}) == "label,a,b\na,1,0.5\nb,0.5,1\n");
  const std::vector<std::size_t> y = {0, 1};
  const std::string svg = scatter_svg(Tensor::from_rows({{0, 0}, {1, 1}}), y, {"a", "b"}, "t");
  CHECK(svg == scatter_svg(Tensor::from_rows({{0, 0}, {1, 1}}), y, {"a", "b"}, "t"));
}
