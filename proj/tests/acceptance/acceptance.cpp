// One PASS/FAIL line per acceptance criterion, with the measured numbers.
// Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ecm_sphere/cli.hpp"
#include "ecm_sphere/dataset.hpp"
#include "ecm_sphere/error.hpp"
#include "ecm_sphere/heads.hpp"
#include "ecm_sphere/losses.hpp"
#include "ecm_sphere/metrics.hpp"
#include "ecm_sphere/trainer.hpp"

namespace fs = std::filesystem;
using namespace ecm_sphere;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "    failed: " << what << "\n";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

Tensor gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(r, c);
  for (double& v : t.values()) v = g(rng);
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << "cli " << args.front() << " failed: " << err.str();
  return code;
}

int cli_capture(const std::vector<std::string>& args, std::string& out_text) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  out_text = out.str();
  return code;
}

// ---- gradients -----------------------------------------------------------------

Outcome check_gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  const EcmConfig ecm = EcmConfig::default_layout();
  const std::size_t T = 3, d = 8, B = 8;
  const std::vector<std::size_t> labels = {0, 0, 3, 3, 6, 7, 7, 10};
  std::mt19937_64 rng(2024);
  const Tensor input = gaussian(B * T, d, rng);
  double worst = 0.0;
  for (HeadKind hk : {HeadKind::gpt, HeadKind::ngpt}) {
    for (LossKind lk : {LossKind::sincere, LossKind::softcse, LossKind::circularcse}) {
      const HeadConfig cfg = HeadConfig::standard(d, 2, Pooling::mean);
      Head head = init_head(hk, cfg, 7);
      if (auto* p = std::get_if<NGptHeadParams>(&head.params)) {
        std::uniform_real_distribution<double> u(0.2, 0.8);
        for (double& v : p->alpha_attn.values()) v = u(rng);
        for (double& v : p->alpha_mlp.values()) v = u(rng);
      }
      std::vector<Tensor> params;
      for (const auto& [n, t] : head.named_params()) params.push_back(*t);
      auto f = [&](ad::Tape& tape, std::span<const ad::Var> p) {
        BoundHead bound{hk, std::vector<ad::Var>(p.begin(), p.end())};
        const auto seqs = PackedSequences::uniform(B, T);
        ad::Var e = pool_and_embed(block_forward(bound, cfg, tape.constant(input), seqs).final, seqs, Pooling::mean);
        return contrastive_loss(lk, e, labels, {0.2, lk == LossKind::circularcse ? 0.05 : 0.0}, ecm);
      };
      const auto rep = ad::grad_check(f, params, 1e-6, 1e-4);
      worst = std::max(worst, rep.max_rel_error);
      o.expect(rep.passed, std::string(to_string(hk)) + "+" + std::string(to_string(lk)) + " rel err " +
                               fmt(rep.max_rel_error));
    }
  }

  // Every primitive at 1e-5.
  auto w = [&](std::size_t r, std::size_t c) { return gaussian(r, c, rng); };
  const Tensor weights = w(4, 4);
  struct Prim {
    const char* name;
    std::function<ad::Var(ad::Var)> op;
    bool positive;
  };
  const std::vector<Prim> prims = {
      {"matmul", [](ad::Var a) { return ad::matmul(a, ad::transpose(a)); }, false},
      {"matmul_nt", [](ad::Var a) { return ad::matmul_nt(a, ad::scale(a, 0.5)); }, false},
      {"softmax_rows", [](ad::Var a) { return ad::softmax_rows(a); }, false},
      {"silu", [](ad::Var a) { return ad::silu(a); }, false},
      {"exp", [](ad::Var a) { return ad::exp(a); }, false},
      {"log", [](ad::Var a) { return ad::log(a); }, true},
      {"sqrt", [](ad::Var a) { return ad::sqrt(a); }, true},
      {"square", [](ad::Var a) { return ad::square(a); }, false},
      {"normalize_rows", [](ad::Var a) { return ad::normalize_rows(a); }, false},
      {"hadamard", [](ad::Var a) { return ad::hadamard(a, ad::exp(a)); }, false},
      {"sub", [](ad::Var a) { return ad::sub(a, ad::square(a)); }, false},
      {"mean_rows", [](ad::Var a) { return ad::concat_rows(std::vector<ad::Var>(4, ad::mean_rows(a))); }, false},
      {"sum_cols", [](ad::Var a) { return ad::concat_cols(std::vector<ad::Var>(4, ad::sum_cols(a))); }, false},
      {"mul_row", [](ad::Var a) { return ad::mul_row(a, ad::slice_rows(a, 1, 1)); }, false},
      {"div_col", [](ad::Var a) { return ad::div_col(a, ad::add_scalar(ad::square(ad::slice_cols(a, 0, 1)), 1.0)); }, false},
      {"rms_norm", [](ad::Var a) { return ad::rms_norm(a, ad::slice_rows(a, 2, 1), 1e-6); }, false},
  };
  for (const auto& p : prims) {
    Tensor x = w(4, 4);
    if (p.positive)
      for (double& v : x.values()) v = std::abs(v) + 0.2;
    auto f = [&](ad::Tape& tape, std::span<const ad::Var> v) {
      return ad::sum(ad::hadamard(p.op(v[0]), tape.constant(weights)));
    };
    const auto rep = ad::grad_check(f, {x}, 1e-6, 1e-5);
    o.expect(rep.passed, std::string("primitive ") + p.name + " rel err " + fmt(rep.max_rel_error));
  }
  const double secs = seconds_since(t0);
  o.expect(secs < 60.0, "runtime " + fmt(secs) + " s");
  o.detail << "    6 compositions worst rel err " << fmt(worst, 3) << ", " << prims.size() << " primitives, "
           << fmt(secs, 3) << " s\n";
  return o;
}

// ---- sphere invariants ---------------------------------------------------------

Outcome check_sphere() {
  Outcome o;
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::size_t d = 8 + 4 * (i % 3), T = 1 + i % 5;
    const HeadConfig cfg = HeadConfig::standard(d, 1 + i % 2, static_cast<Pooling>(i % 3));
    const Head head = init_head(HeadKind::ngpt, cfg, i);
    const Tensor h = gaussian(T, d, rng, std::pow(10.0, static_cast<double>(i % 7) - 3.0));
    const BlockTrace tr = forward_with_trace(head, h);
    for (std::size_t r = 0; r < T; ++r) {
      worst = std::max(worst, std::abs(row_norm(tr.post_attention, r) - 1.0));
      worst = std::max(worst, std::abs(row_norm(tr.final, r) - 1.0));
    }
    const Tensor e = embed_sequences(head, std::vector<Tensor>{h});
    worst = std::max(worst, std::abs(row_norm(e, 0) - 1.0));
  }
  o.expect(worst <= 1e-9, "hidden/pooled norm deviation " + fmt(worst));

  SynthConfig sc;
  sc.n_per_label = 20;
  sc.tokens = 3;
  sc.d = 16;
  const auto data = synth_generate(sc);
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 3;
  tc.batch_size = 64;
  double wworst = 0.0;
  std::size_t steps = 0;
  for (LossKind lk : {LossKind::sincere, LossKind::softcse, LossKind::circularcse}) {
    tc.loss_kind = lk;
    train(data, tc, sc.ecm, HeadConfig::standard(16, 2, Pooling::mean), [&](const StepEvent& ev) {
      ++steps;
      wworst = std::max(wworst, max_weight_slice_deviation(std::get<NGptHeadParams>(ev.head->params)));
    });
  }
  o.expect(wworst <= 1e-9, "weight slice deviation " + fmt(wworst));
  o.detail << "    1000 forwards max |norm-1| " << fmt(worst, 3) << "; " << steps << " training steps max slice |norm-1| "
           << fmt(wworst, 3) << "\n";
  return o;
}

// ---- CircularCSE exactness -----------------------------------------------------

Outcome check_circular() {
  Outcome o;
  const EcmConfig ecm = EcmConfig::default_layout();
  std::vector<std::size_t> y;
  Tensor circle(24, 16);
  for (std::size_t l = 0; l < 12; ++l) {
    for (std::size_t k = 0; k < 2; ++k) {
      circle(y.size(), 0) = std::cos(ecm.angle(l));
      circle(y.size(), 1) = std::sin(ecm.angle(l));
      y.push_back(l);
    }
  }
  const double exact = circularcse_loss(LabeledBatch{circle, y}, {0.05, 0.0}, ecm);
  o.expect(exact <= 1e-12, "exact-circle loss " + fmt(exact));
  o.detail << "    exact-circle loss " << fmt(exact, 3) << "\n";

  for (double kappa : {std::numeric_limits<double>::infinity(), 50.0}) {
    const auto t0 = Clock::now();
    SynthConfig sc;
    sc.kappa = kappa;
    sc.n_per_label = 200;
    sc.d = 16;
    sc.tokens = 1;
    const auto train_set = synth_generate(sc);
    sc.split = "test";
    sc.n_per_label = 100;
    const auto test_set = synth_generate(sc);
    TrainConfig tc;  // defaults: lr 5e-5, 15 epochs, batch 128
    tc.loss_kind = LossKind::circularcse;
    const auto r = train(train_set, tc, ecm, HeadConfig::standard(16, 2, Pooling::mean));
    const Tensor e = embed_sequences(r.head, test_set.sequences());
    const double cdr = cd_r(avg_cos_sim(e, test_set.labels(), ecm), ecm);
    const double final_loss = r.log.epoch_mean_loss.back();
    const double secs = seconds_since(t0);
    const std::string tag = std::isinf(kappa) ? "kappa=inf" : "kappa=50";
    o.expect(final_loss < 1e-2, tag + " final loss " + fmt(final_loss));
    o.expect(cdr >= 0.95, tag + " CD-r " + fmt(cdr, 6) + " < 0.95");
    o.expect(secs < 300.0, tag + " runtime " + fmt(secs) + " s");
    o.detail << "    " << tag << ": final epoch loss " << fmt(final_loss, 3) << ", test CD-r " << fmt(cdr, 6) << ", "
             << fmt(secs, 3) << " s\n";
  }
  std::vector<std::size_t> yc;
  for (std::size_t l = 0; l < 12; ++l) yc.push_back(l);
  Tensor ring(12, 2);
  for (std::size_t l = 0; l < 12; ++l) {
    ring(l, 0) = std::cos(ecm.angle(l));
    ring(l, 1) = std::sin(ecm.angle(l));
  }
  o.detail << "    CD-r of the exact circle itself " << fmt(cd_r(avg_cos_sim(ring, yc, ecm), ecm), 10) << "\n";
  return o;
}

// ---- trade-off trend -------------------------------------------------------------

Outcome check_tradeoff() {
  Outcome o;
  const EcmConfig ecm = EcmConfig::default_layout();
  const auto t0 = Clock::now();
  const std::size_t full_dim = 16;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SynthConfig sc;
    sc.kappa = 50.0;
    sc.d = full_dim;
    sc.tokens = 4;
    sc.n_per_label = 200;
    sc.seed = seed;
    const auto train_set = synth_generate(sc);
    sc.split = "test";
    sc.n_per_label = 100;
    const auto test_set = synth_generate(sc);
    const auto labels = test_set.labels();

    double cdr[3], vfull[3], v2[3];
    int i = 0;
    for (LossKind lk : {LossKind::sincere, LossKind::softcse, LossKind::circularcse}) {
      TrainConfig tc;
      tc.loss_kind = lk;
      tc.learning_rate = 1e-2;
      tc.seed = seed;
      const auto r = train(train_set, tc, ecm, HeadConfig::standard(full_dim, 2, Pooling::mean));
      const Tensor e = embed_sequences(r.head, test_set.sequences());
      cdr[i] = cd_r(avg_cos_sim(e, labels, ecm), ecm);
      const std::vector<std::size_t> dims = {2, full_dim};
      const auto pts = sweep_dims(e, labels, ecm, dims);
      v2[i] = pts[0].vm.v;
      vfull[i] = pts[1].vm.v;
      ++i;
    }
    const std::string s = "seed " + std::to_string(seed) + ": ";
    o.expect(cdr[2] - cdr[1] >= 0.03, s + "CD-r circular - softcse = " + fmt(cdr[2] - cdr[1]));
    o.expect(cdr[1] - cdr[0] >= 0.03, s + "CD-r softcse - sincere = " + fmt(cdr[1] - cdr[0]));
    o.expect(vfull[0] - vfull[2] >= 0.03, s + "V full sincere - circular = " + fmt(vfull[0] - vfull[2]));
    o.expect(v2[2] - v2[0] >= 0.03, s + "V dim2 circular - sincere = " + fmt(v2[2] - v2[0]));
    o.detail << "    " << s << "CD-r S/Soft/C " << fmt(cdr[0]) << "/" << fmt(cdr[1]) << "/" << fmt(cdr[2])
             << "  V@16 " << fmt(vfull[0]) << "/" << fmt(vfull[1]) << "/" << fmt(vfull[2]) << "  V@2 " << fmt(v2[0])
             << "/" << fmt(v2[1]) << "/" << fmt(v2[2]) << "\n";
  }
  o.detail << "    " << fmt(seconds_since(t0), 3) << " s\n";
  return o;
}

// ---- simplex verification -------------------------------------------------------

Outcome check_simplex() {
  Outcome o;
  const auto t0 = Clock::now();
  for (std::size_t e : {2u, 4u, 12u}) {
    std::string text;
    const int code = cli_capture({"verify", "--E", std::to_string(e), "--d", std::to_string(e + 4), "--tau", "0.1"}, text);
    SimplexCheckConfig cfg;
    cfg.n_classes = e;
    cfg.d = e + 4;
    cfg.tau = 0.1;
    const auto r = theory_check_sincere_simplex(cfg);
    o.expect(code == 0 && text.find("result: simplex reached") != std::string::npos,
             "E=" + std::to_string(e) + " verify did not report the simplex");
    o.expect(r.max_deviation <= 0.02, "E=" + std::to_string(e) + " max deviation " + fmt(r.max_deviation));
    o.detail << "    E=" << e << " d=" << e + 4 << ": target " << fmt(r.target, 6) << ", mean off-diag "
             << fmt(r.mean_offdiag, 6) << ", max deviation " << fmt(r.max_deviation, 3) << "\n";
  }
  std::string text;
  const int code = cli_capture({"verify", "--E", "4", "--d", "2", "--tau", "0.1", "--allow-infeasible"}, text);
  SimplexCheckConfig cfg;
  cfg.n_classes = 4;
  cfg.d = 2;
  cfg.allow_infeasible = true;
  const auto r = theory_check_sincere_simplex(cfg);
  o.expect(code == 0 && text.find("simplex NOT reached") != std::string::npos, "E=4 d=2 reported as reached");
  o.expect(r.max_deviation > 0.02, "E=4 d=2 max deviation " + fmt(r.max_deviation));
  o.detail << "    E=4 d=2: max deviation " << fmt(r.max_deviation, 4) << " (simplex not reachable)\n";
  const double secs = seconds_since(t0);
  o.expect(secs < 120.0, "runtime " + fmt(secs) + " s");
  return o;
}

// ---- metric oracles ---------------------------------------------------------------

Outcome check_metrics() {
  Outcome o;
  // k-means against exhaustive search over every assignment of N = 8 points.
  std::mt19937_64 rng(5);
  std::size_t instances = 0;
  for (std::size_t k : {2u, 3u}) {
    for (int rep = 0; rep < 10; ++rep) {
      const Tensor x = normalized_rows(gaussian(8, 3, rng));
      std::size_t total = 1;
      for (int i = 0; i < 8; ++i) total *= k;
      double best = 1e300;
      for (std::size_t code = 0; code < total; ++code) {
        std::vector<std::vector<double>> sums(k, std::vector<double>(3, 0.0));
        std::vector<int> count(k, 0);
        std::size_t c = code;
        for (std::size_t i = 0; i < 8; ++i, c /= k) {
          ++count[c % k];
          for (std::size_t j = 0; j < 3; ++j) sums[c % k][j] += x(i, j);
        }
        bool full = true;
        double inertia = 0.0;
        for (std::size_t g = 0; g < k; ++g) {
          full = full && count[g] > 0;
          inertia += count[g] - std::sqrt(sums[g][0] * sums[g][0] + sums[g][1] * sums[g][1] + sums[g][2] * sums[g][2]);
        }
        if (full) best = std::min(best, inertia);
      }
      const auto r = spherical_kmeans(x, k, 10, 42);
      o.expect(std::abs(r.inertia - best) <= 1e-10,
               "k-means k=" + std::to_string(k) + " inertia " + fmt(r.inertia, 12) + " vs optimum " + fmt(best, 12));
      ++instances;
    }
  }

  struct Fixture {
    std::vector<std::size_t> truth, pred;
    double h, c, v;
  };
  const std::vector<Fixture> fixtures = {
      {{0, 0, 1, 1}, {0, 0, 0, 1}, 0.31127812445913283, 0.3836885465963443, 0.34371101848545077},
      {{0, 0, 0, 1, 1, 1}, {0, 0, 1, 1, 2, 2}, 0.6666666666666669, 0.420619835714305, 0.5158037429793889},
      {{0, 1, 2, 0, 1, 2}, {0, 0, 0, 1, 1, 1}, 0.0, 0.0, 0.0},
      {{0, 0, 1, 1, 2, 2, 3, 3}, {0, 1, 0, 1, 2, 3, 2, 3}, 0.5, 0.5, 0.5},
      {{0, 0, 0, 0, 1, 1, 2}, {1, 1, 0, 0, 0, 2, 2}, 0.507341329240376, 0.44936937409924854, 0.47659894423590704},
  };
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    const auto m = v_measure(fixtures[i].truth, fixtures[i].pred);
    const double err = std::max({std::abs(m.homogeneity - fixtures[i].h), std::abs(m.completeness - fixtures[i].c),
                                 std::abs(m.v - fixtures[i].v)});
    o.expect(err <= 1e-12, "v_measure fixture " + std::to_string(i + 1) + " off by " + fmt(err));
  }

  // CD-r on the exact-target AvgCosSim against a textbook two-pass Pearson.
  const EcmConfig ecm = EcmConfig::default_layout();
  Tensor target(12, 12);
  std::vector<double> cd, dis;
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) target(i, j) = target_cosine(ecm, i, j);
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t j = i + 1; j < 12; ++j) {
      cd.push_back(circumplex_distance(ecm, i, j));
      dis.push_back(1.0 - target(i, j));
    }
  }
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < cd.size(); ++i) {
    ma += cd[i] / static_cast<double>(cd.size());
    mb += dis[i] / static_cast<double>(cd.size());
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < cd.size(); ++i) {
    sab += (cd[i] - ma) * (dis[i] - mb);
    saa += (cd[i] - ma) * (cd[i] - ma);
    sbb += (dis[i] - mb) * (dis[i] - mb);
  }
  const double independent = sab / std::sqrt(saa * sbb);
  const double ours = cd_r(target, ecm);
  o.expect(std::abs(ours - independent) <= 1e-10, "cd_r " + fmt(ours, 12) + " vs " + fmt(independent, 12));
  o.expect(std::abs(ours - 0.8615565051752928) <= 1e-10, "cd_r drifted from the frozen value");
  o.detail << "    k-means = exhaustive optimum on " << instances << " instances; 5 V-measure fixtures; CD-r "
           << fmt(ours, 16) << "\n";
  return o;
}

// ---- determinism -------------------------------------------------------------------

Outcome check_determinism(const fs::path& dir) {
  Outcome o;
  auto p = [&](const std::string& f) { return (dir / f).string(); };
  struct Step {
    std::vector<std::string> args;
    std::string manifest;
    std::vector<std::string> outputs;
  };
  const std::vector<Step> steps = {
      {{"synth", "--out", p("train.ecm1"), "--n", "15", "--d", "8", "--T", "2", "--seed", "5"},
       p("train.ecm1.manifest.json"),
       {p("train.ecm1")}},
      {{"synth", "--out", p("test.ecm1"), "--n", "10", "--d", "8", "--T", "2", "--seed", "5", "--split", "test"},
       p("test.ecm1.manifest.json"),
       {p("test.ecm1")}},
      {{"train", "--data", p("train.ecm1"), "--out", p("h.ckpt"), "--epochs", "2", "--lr", "1e-2", "--batch", "40",
        "--loss", "circularcse"},
       p("h.ckpt.manifest.json"),
       {p("h.ckpt"), p("h.ckpt.log.csv")}},
      {{"eval", "--data", p("test.ecm1"), "--ckpt", p("h.ckpt"), "--out", p("eval"), "--restarts", "4", "--jobs", "2"},
       p("eval/manifest.json"),
       {p("eval/scores.csv"), p("eval/avgcossim.csv"), p("eval/pca.svg"), p("eval/mds.svg")}},
      {{"sweep-dims", "--data", p("test.ecm1"), "--ckpt", p("h.ckpt"), "--out", p("dims.csv"), "--restarts", "4"},
       p("dims.csv.manifest.json"),
       {p("dims.csv")}},
      {{"trace", "--data", p("test.ecm1"), "--ckpt", p("h.ckpt"), "--out", p("trace"), "--per-label", "5"},
       p("trace/manifest.json"),
       {p("trace/input.svg"), p("trace/post_attention.svg"), p("trace/post_mlp.svg"), p("trace/final.svg")}},
      {{"verify", "--E", "4", "--d", "6", "--steps", "1500", "--out", p("simplex.csv")},
       p("simplex.csv.manifest.json"),
       {p("simplex.csv")}},
  };
  std::size_t files = 0;
  for (const auto& s : steps) {
    if (cli(s.args) != 0) {
      o.expect(false, s.args.front() + " failed");
      continue;
    }
    std::vector<std::string> first;
    for (const auto& f : s.outputs) first.push_back(slurp(f));
    for (const auto& f : s.outputs) fs::remove(f);
    if (cli({"replay", s.manifest}) != 0) {
      o.expect(false, "replay of " + s.args.front() + " failed");
      continue;
    }
    for (std::size_t i = 0; i < s.outputs.size(); ++i) {
      o.expect(!first[i].empty() && slurp(s.outputs[i]) == first[i], s.outputs[i] + " differs after replay");
      ++files;
    }
  }
  o.detail << "    " << steps.size() << " commands replayed, " << files << " output files compared byte for byte\n";
  return o;
}

// ---- format ----------------------------------------------------------------------

Outcome check_format() {
  Outcome o;
  const std::string golden = std::string(ECM_TEST_DATA_DIR) + "/golden_small.ecm1";
  std::ifstream in(golden, std::ios::binary);
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    const auto data = decode_dataset(bytes);
    o.expect(encode_dataset(data) == bytes, "golden re-encode differs");
    o.expect(data.records.size() == 2 && data.records[0].token_states(1, 2) == -0.125, "golden contents");
  } catch (const Error& e) {
    o.expect(false, std::string("golden decode: ") + e.what());
    return o;
  }
  auto offset = [](const std::vector<std::uint8_t>& b) -> long long {
    try {
      decode_dataset(b);
    } catch (const FormatError& e) {
      return static_cast<long long>(e.offset());
    }
    return -1;
  };
  const std::size_t payload = 8 + (bytes[4] | (bytes[5] << 8) | (bytes[6] << 16) | (static_cast<std::size_t>(bytes[7]) << 24));
  auto b = bytes;
  b[0] = 'Z';
  o.expect(offset(b) == 0, "bad magic offset");
  b = bytes;
  b[9] = '#';
  o.expect(offset(b) == 8, "bad header offset");
  b.assign(bytes.begin(), bytes.end() - 1);
  o.expect(offset(b) == static_cast<long long>(bytes.size() - 1), "truncation offset");
  b = bytes;
  b.insert(b.end(), {1, 2, 3, 4});
  o.expect(offset(b) == static_cast<long long>(bytes.size()), "trailing bytes offset");
  b = bytes;
  const std::size_t at = payload + 8 * 4;  // last float
  b[at + 2] = 0xc0;
  b[at + 3] = 0x7f;  // NaN
  o.expect(offset(b) == static_cast<long long>(at), "non-finite value offset");
  o.detail << "    golden file " << bytes.size() << " bytes round-trips; 5 corruptions located\n";
  return o;
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "ecm_sphere_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"gradient correctness", check_gradients},
      {"sphere invariants", check_sphere},
      {"CircularCSE exactness", check_circular},
      {"trade-off trend", check_tradeoff},
      {"simplex verification", check_simplex},
      {"metric oracles", check_metrics},
      {"determinism", [&] { return check_determinism(scratch); }},
      {"format", check_format},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "    exception: " << e.what() << "\n";
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << "\n" << o.detail.str() << std::flush;
    failed += o.pass ? 0 : 1;
  }
  fs::remove_all(scratch);
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criterion/criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}
