#include "ecm_sphere/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "ecm_sphere/dataset.hpp"
#include "ecm_sphere/ecm.hpp"
#include "ecm_sphere/error.hpp"
#include "ecm_sphere/heads.hpp"
#include "ecm_sphere/kernels.hpp"
#include "ecm_sphere/losses.hpp"
#include "ecm_sphere/metrics.hpp"
#include "ecm_sphere/report.hpp"
#include "ecm_sphere/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ecm_sphere {

namespace {

constexpr const char* kSchemaHelp = R"(Output files
  synth         <out> (ECM1)
  train         <out> (checkpoint), <out>.log.csv: step,epoch,loss
  eval          <dir>/scores.csv: metric,value with rows n, v_measure,
                  homogeneity, completeness, inertia, cd_r,
                  min_centroid_angle_deg, pca_ratio_1, pca_ratio_2
                <dir>/avgcossim.csv: label,<label names...> (E x E)
                <dir>/pca.svg, <dir>/mds.svg
  sweep-dims    <out>: dim,v_measure,homogeneity,completeness,status
  sweep-labels  <out>: E,ecm,loss,v_measure,homogeneity,completeness,cd_r
  verify        <out> (optional): i,j,sim,target,deviation
  trace         <dir>/{input,post_attention,post_mlp,final}.svg
  import        <out> (ECM1)
Every command also writes a manifest (<out>.manifest.json, or
<dir>/manifest.json for directory outputs) that `replay` re-executes.
Exit codes: 0 success, 2 usage or configuration, 3 numerical failure.
)";

struct Context {
  std::vector<std::string> argv;
  std::ostream& out;
  std::ostream& err;
};

int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::divergence:
    case ErrorKind::degenerate_norm:
    case ErrorKind::evaluation:
      return 3;
    default:
      return 2;
  }
}

std::size_t resolve_jobs(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("ECM_SPHERE_JOBS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

double parse_kappa(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    require(used == s.size(), ErrorKind::config, "");
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::config, "kappa must be a positive number or 'inf', got '" + s + "'");
  }
}

EcmConfig ecm_or_default(const std::string& path) {
  return path.empty() ? EcmConfig::default_layout() : load_ecm(path);
}

void require_file(const std::string& path, const std::string& what) {
  require(!path.empty(), ErrorKind::config, what + " path is required");
  require(fs::exists(path), ErrorKind::io, what + " '" + path + "' does not exist");
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::io, "cannot create directory '" + dir + "'");
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

json digests(const std::vector<std::string>& paths) {
  json out = json::array();
  for (const auto& p : paths) out.push_back({{"path", p}, {"digest", file_digest(p)}});
  return out;
}

void write_manifest(const Context& ctx, const std::string& path, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    std::uint64_t seed) {
  json m;
  m["tool"] = "ecm_sphere";
  m["version"] = kToolVersion;
  m["command"] = command;
  m["argv"] = ctx.argv;
  m["seed"] = seed;
  m["config"] = config;
  m["inputs"] = digests(inputs);
  m["outputs"] = digests(outputs);
  write_text_atomic(path, m.dump(2) + "\n");
}

std::string manifest_for_file(const std::string& out) { return out + ".manifest.json"; }
std::string manifest_for_dir(const std::string& dir) { return (fs::path(dir) / "manifest.json").string(); }

json train_config_json(const TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs}, {"batch_size", t.batch_size},
          {"seed", t.seed}, {"loss", std::string(to_string(t.loss_kind))},
          {"head", std::string(to_string(t.head_kind))}, {"tau", t.tau}, {"margin", t.margin},
          {"scheduler", "constant"}};
}

json synth_config_json(const SynthConfig& s) {
  return {{"n_per_label", s.n_per_label}, {"d", s.d}, {"T", s.tokens},
          {"kappa", std::isinf(s.kappa) ? json("inf") : json(s.kappa)},
          {"distractor_scale", s.distractor_scale}, {"seed", s.seed}, {"split", s.split}};
}

Tensor embed_dataset(const Head& head, const EmbeddingDataset& data) {
  require(data.d == head.cfg.d, ErrorKind::dimension,
          "dataset d=" + std::to_string(data.d) + " does not match checkpoint d=" + std::to_string(head.cfg.d));
  const auto seqs = data.sequences();
  return embed_sequences(head, seqs);
}

void check_labels(const EmbeddingDataset& data, const EcmConfig& ecm) {
  require(data.label_names == ecm.names(), ErrorKind::config,
          "dataset labels do not match the ECM configuration (pass --ecm)");
}

// ---- synth -------------------------------------------------------------------

struct SynthArgs {
  std::string config, out, kappa = "50", split = "train";
  std::size_t n = 100, d = 16, tokens = 1;
  double distractor = 1.0;
  std::uint64_t seed = 42;
};

int cmd_synth(const Context& ctx, const SynthArgs& a) {
  require(!a.out.empty(), ErrorKind::config, "--out is required");
  SynthConfig cfg;
  if (!a.config.empty()) require_file(a.config, "ECM config");
  cfg.ecm = ecm_or_default(a.config);
  cfg.n_per_label = a.n;
  cfg.d = a.d;
  cfg.tokens = a.tokens;
  cfg.kappa = parse_kappa(a.kappa);
  cfg.distractor_scale = a.distractor;
  cfg.seed = a.seed;
  cfg.split = a.split;
  const EmbeddingDataset data = synth_generate(cfg);
  ensure_parent(a.out);
  save_dataset(data, a.out);
  json config = synth_config_json(cfg);
  config["ecm"] = to_json(cfg.ecm);
  std::vector<std::string> inputs;
  if (!a.config.empty()) inputs.push_back(a.config);
  write_manifest(ctx, manifest_for_file(a.out), "synth", config, inputs, {a.out}, a.seed);
  ctx.out << "wrote " << data.records.size() << " records (d=" << cfg.d << ", T=" << cfg.tokens << ") to "
          << a.out << "\n";
  return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::string data, ecm, out, head = "ngpt", loss = "sincere", pooling = "mean", log;
  std::size_t epochs = 15, batch = 128, n_heads = 2;
  double lr = 5e-5, tau = 0.05, margin = 0.0;
  std::uint64_t seed = 42;
};

int cmd_train(const Context& ctx, const TrainArgs& a) {
  require(!a.out.empty(), ErrorKind::config, "--out is required");
  require_file(a.data, "data file");
  if (!a.ecm.empty()) require_file(a.ecm, "ECM config");
  const EcmConfig ecm = ecm_or_default(a.ecm);
  const EmbeddingDataset data = load_any_dataset(a.data, ecm);
  check_labels(data, ecm);

  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.seed = a.seed;
  cfg.loss_kind = parse_loss_kind(a.loss);
  cfg.head_kind = parse_head_kind(a.head);
  cfg.tau = a.tau;
  cfg.margin = a.margin;
  cfg.validate();
  const HeadConfig head_cfg = HeadConfig::standard(data.d, a.n_heads, parse_pooling(a.pooling));
  head_cfg.validate();

  const std::string log_path = a.log.empty() ? a.out + ".log.csv" : a.log;
  ensure_parent(a.out);
  ensure_parent(log_path);

  std::ostringstream log;
  log << "step,epoch,loss\n";
  Head last_good = init_head(cfg.head_kind, head_cfg, cfg.seed);
  auto observer = [&](const StepEvent& ev) {
    log << ev.step << ',' << ev.epoch << ',' << format_number(ev.loss) << '\n';
    last_good = *ev.head;
  };

  json config = {{"train", train_config_json(cfg)}, {"head", to_json(head_cfg)}, {"ecm", to_json(ecm)}};
  std::optional<TrainResult> result;
  try {
    result = train_from(last_good, data, cfg, ecm, observer);
  } catch (const DivergenceError& e) {
    save_checkpoint(last_good, a.out);
    write_text_atomic(log_path, log.str());
    config["diverged_at_step"] = e.step();
    write_manifest(ctx, manifest_for_file(a.out), "train", config, {a.data}, {a.out, log_path}, a.seed);
    ctx.err << "error: " << e.what() << "\nlast good checkpoint kept at " << a.out << "\n";
    return 3;
  }
  save_checkpoint(result->head, a.out);
  write_text_atomic(log_path, log.str());
  std::vector<std::string> inputs{a.data};
  if (!a.ecm.empty()) inputs.push_back(a.ecm);
  write_manifest(ctx, manifest_for_file(a.out), "train", config, inputs, {a.out, log_path}, a.seed);

  const auto& lg = result->log;
  ctx.out << to_string(cfg.head_kind) << " + " << to_string(cfg.loss_kind) << ": " << lg.step_loss.size()
          << " steps, epoch mean loss " << format_number(lg.epoch_mean_loss.front()) << " -> "
          << format_number(lg.epoch_mean_loss.back()) << " (" << std::fixed << std::setprecision(1)
          << lg.wall_seconds << " s)\n";
  ctx.out.unsetf(std::ios::floatfield);
  ctx.out << "checkpoint " << a.out << " checksum " << lg.checksum << "\n";
  return 0;
}

// ---- eval --------------------------------------------------------------------

struct EvalArgs {
  std::string data, ckpt, ecm, out;
  std::size_t restarts = 10, mds_per_label = 40, jobs = 0;
  std::uint64_t seed = 42;
};

int cmd_eval(const Context& ctx, const EvalArgs& a) {
  require(!a.out.empty(), ErrorKind::config, "--out is required");
  require_file(a.data, "data file");
  require_file(a.ckpt, "checkpoint");
  if (!a.ecm.empty()) require_file(a.ecm, "ECM config");
  const EcmConfig ecm = ecm_or_default(a.ecm);
  const EmbeddingDataset data = load_any_dataset(a.data, ecm);
  check_labels(data, ecm);
  const Head head = load_checkpoint(a.ckpt);
  const Tensor emb = embed_dataset(head, data);
  const auto labels = data.labels();

  EvalOptions opts;
  opts.restarts = a.restarts;
  opts.seed = a.seed;
  opts.mds_per_label = a.mds_per_label;
  opts.jobs = resolve_jobs(a.jobs);
  const EvalReport r = evaluate(emb, labels, ecm, opts);

  ensure_dir(a.out);
  const fs::path dir(a.out);
  const std::string scores = (dir / "scores.csv").string();
  const std::string avg = (dir / "avgcossim.csv").string();
  const std::string pca = (dir / "pca.svg").string();
  const std::string mds = (dir / "mds.svg").string();
  write_text_atomic(scores, scores_csv(r));
  write_text_atomic(avg, matrix_csv(r.avg_cos, ecm.names()));
  write_text_atomic(pca, scatter_svg(r.pca_coords, labels, ecm.names(), "PCA"));
  write_text_atomic(mds, scatter_svg(r.mds_coords, r.mds_labels, ecm.names(), "MDS"));
  json config = {{"ecm", to_json(ecm)}, {"head", to_json(head.cfg)}, {"head_kind", std::string(to_string(head.kind()))},
                 {"restarts", opts.restarts}, {"mds_per_label", opts.mds_per_label}};
  std::vector<std::string> inputs{a.data, a.ckpt};
  if (!a.ecm.empty()) inputs.push_back(a.ecm);
  write_manifest(ctx, manifest_for_dir(a.out), "eval", config, inputs, {scores, avg, pca, mds}, a.seed);

  ctx.out << "v_measure " << format_number(r.vm.v) << "  cd_r " << format_number(r.cd_r) << "  n " << r.n << "\n";
  return 0;
}

// ---- sweep-dims ----------------------------------------------------------------

std::vector<std::size_t> parse_size_list(const std::string& s, const std::string& what) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      require(used == item.size() && v > 0, ErrorKind::config, "");
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      fail(ErrorKind::config, what + ": '" + item + "' is not a positive integer");
    }
  }
  require(!out.empty(), ErrorKind::config, what + " is empty");
  return out;
}

struct SweepDimsArgs {
  std::string data, ckpt, ecm, out, dims;
  std::size_t restarts = 10, jobs = 0;
  std::uint64_t seed = 42;
};

int cmd_sweep_dims(const Context& ctx, const SweepDimsArgs& a) {
  require(!a.out.empty(), ErrorKind::config, "--out is required");
  require_file(a.data, "data file");
  require_file(a.ckpt, "checkpoint");
  if (!a.ecm.empty()) require_file(a.ecm, "ECM config");
  const EcmConfig ecm = ecm_or_default(a.ecm);
  const EmbeddingDataset data = load_any_dataset(a.data, ecm);
  check_labels(data, ecm);
  const Head head = load_checkpoint(a.ckpt);
  const Tensor emb = embed_dataset(head, data);

  std::vector<std::size_t> dims;
  if (a.dims.empty()) {
    for (std::size_t k = 2; k < data.d; k *= 2) dims.push_back(k);
    dims.push_back(data.d);
  } else {
    dims = parse_size_list(a.dims, "--dims");
  }
  EvalOptions opts;
  opts.restarts = a.restarts;
  opts.seed = a.seed;
  opts.jobs = resolve_jobs(a.jobs);
  const auto labels = data.labels();
  const auto points = sweep_dims(emb, labels, ecm, dims, opts);

  std::ostringstream csv;
  csv << "dim,v_measure,homogeneity,completeness,status\n";
  for (const auto& p : points) {
    if (p.skipped) {
      csv << p.dim << ",nan,nan,nan,skipped: exceeds d=" << std::min(emb.rows(), emb.cols()) << '\n';
      ctx.err << "warning: dim " << p.dim << " skipped (exceeds " << std::min(emb.rows(), emb.cols()) << ")\n";
    } else {
      csv << p.dim << ',' << format_number(p.vm.v) << ',' << format_number(p.vm.homogeneity) << ','
          << format_number(p.vm.completeness) << ",ok\n";
      ctx.out << "dim " << p.dim << "  v_measure " << format_number(p.vm.v) << "\n";
    }
  }
  ensure_parent(a.out);
  write_text_atomic(a.out, csv.str());
  json config = {{"dims", dims}, {"restarts", opts.restarts}, {"ecm", to_json(ecm)}};
  std::vector<std::string> inputs{a.data, a.ckpt};
  if (!a.ecm.empty()) inputs.push_back(a.ecm);
  write_manifest(ctx, manifest_for_file(a.out), "sweep-dims", config, inputs, {a.out}, a.seed);
  return 0;
}

// ---- sweep-labels ----------------------------------------------------------------

struct SweepLabelsArgs {
  std::string series, out, head = "ngpt", kappa = "50";
  std::size_t n = 100, test_n = 50, d = 16, tokens = 1, epochs = 15, batch = 128, restarts = 10, jobs = 0;
  double lr = 5e-5, tau = 0.05, margin = 0.0, distractor = 1.0;
  std::uint64_t seed = 42;
};

int cmd_sweep_labels(const Context& ctx, const SweepLabelsArgs& a) {
  require(!a.out.empty(), ErrorKind::config, "--out is required");
  std::vector<std::string> paths;
  {
    std::stringstream in(a.series);
    std::string item;
    while (std::getline(in, item, ',')) paths.push_back(item);
  }
  require(!paths.empty(), ErrorKind::config, "--ecm-series needs at least one ECM config");
  std::vector<EcmConfig> ecms;
  for (const auto& p : paths) {
    require_file(p, "ECM config");
    ecms.push_back(load_ecm(p));
  }
  const double kappa = parse_kappa(a.kappa);
  const LossKind losses[] = {LossKind::sincere, LossKind::softcse, LossKind::circularcse};

  struct Task {
    std::size_t series;
    LossKind loss;
    EvalReport report;
    std::exception_ptr error;
  };
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < ecms.size(); ++s)
    for (LossKind l : losses) tasks.push_back({s, l, {}, nullptr});

  TrainConfig base;
  base.learning_rate = a.lr;
  base.epochs = a.epochs;
  base.batch_size = a.batch;
  base.seed = a.seed;
  base.head_kind = parse_head_kind(a.head);
  base.tau = a.tau;
  base.margin = a.margin;
  base.validate();

  auto run = [&](Task& t) {
    try {
      const EcmConfig& ecm = ecms[t.series];
      SynthConfig sc;
      sc.ecm = ecm;
      sc.n_per_label = a.n;
      sc.d = a.d;
      sc.tokens = a.tokens;
      sc.kappa = kappa;
      sc.distractor_scale = a.distractor;
      sc.seed = a.seed;
      sc.split = "train";
      const EmbeddingDataset train_set = synth_generate(sc);
      sc.split = "test";
      sc.n_per_label = a.test_n;
      const EmbeddingDataset test_set = synth_generate(sc);
      TrainConfig cfg = base;
      cfg.loss_kind = t.loss;
      const TrainResult tr = train(train_set, cfg, ecm, HeadConfig::standard(a.d, 2, Pooling::mean));
      const Tensor emb = embed_dataset(tr.head, test_set);
      EvalOptions opts;
      opts.restarts = a.restarts;
      opts.seed = a.seed;
      opts.mds_per_label = 3;
      t.report = evaluate(emb, test_set.labels(), ecm, opts);
    } catch (...) {
      t.error = std::current_exception();
    }
  };
  const std::size_t workers = std::min(resolve_jobs(a.jobs), tasks.size());
  if (workers <= 1) {
    for (auto& t : tasks) run(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < tasks.size(); i += workers) run(tasks[i]);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& t : tasks)
    if (t.error) std::rethrow_exception(t.error);

  std::ostringstream csv;
  csv << "E,ecm,loss,v_measure,homogeneity,completeness,cd_r\n";
  for (const auto& t : tasks) {
    const auto& r = t.report;
    csv << ecms[t.series].size() << ',' << fs::path(paths[t.series]).filename().string() << ',' << to_string(t.loss)
        << ',' << format_number(r.vm.v) << ',' << format_number(r.vm.homogeneity) << ','
        << format_number(r.vm.completeness) << ',' << format_number(r.cd_r) << '\n';
    ctx.out << "E=" << ecms[t.series].size() << ' ' << to_string(t.loss) << "  v_measure " << format_number(r.vm.v)
            << "\n";
  }
  ensure_parent(a.out);
  write_text_atomic(a.out, csv.str());
  SynthConfig snapshot;
  snapshot.n_per_label = a.n;
  snapshot.d = a.d;
  snapshot.tokens = a.tokens;
  snapshot.kappa = kappa;
  snapshot.distractor_scale = a.distractor;
  snapshot.seed = a.seed;
  json config = {{"train", train_config_json(base)}, {"synth", synth_config_json(snapshot)},
                 {"test_n_per_label", a.test_n}, {"restarts", a.restarts}};
  write_manifest(ctx, manifest_for_file(a.out), "sweep-labels", config, paths, {a.out}, a.seed);
  return 0;
}

// ---- verify ----------------------------------------------------------------------

struct VerifyArgs {
  std::string check = "sincere-simplex", out;
  std::size_t e = 12, d = 16, steps = 5000;
  double tau = 0.1, lr = 0.05;
  std::uint64_t seed = 42;
  bool allow_infeasible = false;
};

int cmd_verify(const Context& ctx, const VerifyArgs& a) {
  require(a.check == "sincere-simplex", ErrorKind::config, "unknown check '" + a.check + "' (expected sincere-simplex)");
  require(a.allow_infeasible || a.d + 1 >= a.e, ErrorKind::config,
          "d=" + std::to_string(a.d) + " cannot hold a regular simplex of E=" + std::to_string(a.e) +
              " points; pass --allow-infeasible to see the constrained optimum");
  SimplexCheckConfig cfg;
  cfg.n_classes = a.e;
  cfg.d = a.d;
  cfg.tau = a.tau;
  cfg.steps = a.steps;
  cfg.learning_rate = a.lr;
  cfg.seed = a.seed;
  cfg.allow_infeasible = a.allow_infeasible;
  const SimplexCheckReport r = theory_check_sincere_simplex(cfg);

  auto& o = ctx.out;
  o << "sincere-simplex  E=" << a.e << " d=" << a.d << " tau=" << format_number(a.tau) << " steps=" << r.steps_run
    << "\n";
  if (a.d + 1 < a.e) o << "note: d < E-1, a regular simplex does not fit; reporting the constrained optimum\n";
  o << "target sim      " << std::fixed << std::setprecision(6) << r.target << "\n";
  o << "mean off-diag   " << r.mean_offdiag << "\n";
  o << "max deviation   " << r.max_deviation << "\n";
  o << "loss            " << r.loss << "\n";
  o << "simplex bound   " << r.bound << "  (gap " << std::scientific << std::setprecision(3) << r.loss - r.bound
    << ")\n";
  o << "tangent grad    " << r.grad_norm << (r.converged ? "" : "  WARNING: not converged") << "\n";
  o << std::fixed << std::setprecision(4);
  o << "pairwise sims:\n";
  for (std::size_t i = 0; i < a.e; ++i) {
    for (std::size_t j = 0; j < a.e; ++j) o << (j ? " " : "  ") << std::setw(7) << r.sims(i, j);
    o << "\n";
  }
  o.unsetf(std::ios::floatfield);
  o << std::setprecision(6);
  o << (r.max_deviation <= 0.02 ? "result: simplex reached (within 0.02)\n" : "result: simplex NOT reached\n");

  if (!a.out.empty()) {
    std::ostringstream csv;
    csv << "i,j,sim,target,deviation\n";
    for (std::size_t i = 0; i < a.e; ++i)
      for (std::size_t j = i + 1; j < a.e; ++j)
        csv << i << ',' << j << ',' << format_number(r.sims(i, j)) << ',' << format_number(r.target) << ','
            << format_number(r.sims(i, j) - r.target) << '\n';
    ensure_parent(a.out);
    write_text_atomic(a.out, csv.str());
    json config = {{"E", a.e}, {"d", a.d}, {"tau", a.tau}, {"steps", a.steps}, {"lr", a.lr},
                   {"allow_infeasible", a.allow_infeasible}};
    write_manifest(ctx, manifest_for_file(a.out), "verify", config, {}, {a.out}, a.seed);
  }
  return 0;
}

// ---- trace ---------------------------------------------------------------------

struct TraceArgs {
  std::string data, ckpt, ecm, out;
  std::size_t per_label = 40;
};

Tensor pool_rows(const Tensor& h, Pooling p) {
  Tensor out(1, h.cols());
  switch (p) {
    case Pooling::cls: std::copy(h.row(0).begin(), h.row(0).end(), out.row(0).begin()); break;
    case Pooling::last: std::copy(h.row(h.rows() - 1).begin(), h.row(h.rows() - 1).end(), out.row(0).begin()); break;
    case Pooling::mean:
      for (std::size_t r = 0; r < h.rows(); ++r)
        for (std::size_t c = 0; c < h.cols(); ++c) out(0, c) += h(r, c) / static_cast<double>(h.rows());
      break;
  }
  return out;
}

int cmd_trace(const Context& ctx, const TraceArgs& a) {
  require(!a.out.empty(), ErrorKind::config, "--out is required");
  require_file(a.data, "data file");
  require_file(a.ckpt, "checkpoint");
  if (!a.ecm.empty()) require_file(a.ecm, "ECM config");
  const EcmConfig ecm = ecm_or_default(a.ecm);
  const EmbeddingDataset data = load_any_dataset(a.data, ecm);
  check_labels(data, ecm);
  const Head head = load_checkpoint(a.ckpt);
  require(data.d == head.cfg.d, ErrorKind::dimension,
          "dataset d=" + std::to_string(data.d) + " does not match checkpoint d=" + std::to_string(head.cfg.d));
  const auto all_labels = data.labels();
  const auto subset = subsample_per_label(all_labels, a.per_label);
  require(subset.size() >= 3, ErrorKind::config, "trace needs at least 3 samples");

  const char* names[] = {"input", "post_attention", "post_mlp", "final"};
  std::vector<Tensor> stages(4, Tensor(subset.size(), data.d));
  std::vector<std::size_t> labels;
  double dev_attn = 0.0, dev_final = 0.0;
  for (std::size_t i = 0; i < subset.size(); ++i) {
    const Tensor& x = data.records[subset[i]].token_states;
    const BlockTrace t = forward_with_trace(head, x);
    labels.push_back(all_labels[subset[i]]);
    const Tensor* parts[] = {&x, &t.post_attention, &t.mlp_output, &t.final};
    for (std::size_t s = 0; s < 4; ++s) {
      const Tensor pooled = pool_rows(*parts[s], head.cfg.pooling);
      std::copy(pooled.row(0).begin(), pooled.row(0).end(), stages[s].row(i).begin());
    }
    for (std::size_t r = 0; r < x.rows(); ++r) {
      dev_attn = std::max(dev_attn, std::abs(row_norm(t.post_attention, r) - 1.0));
      dev_final = std::max(dev_final, std::abs(row_norm(t.final, r) - 1.0));
    }
  }
  ensure_dir(a.out);
  std::vector<std::string> outputs;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string path = (fs::path(a.out) / (std::string(names[s]) + ".svg")).string();
    write_text_atomic(path, scatter_svg(mds_project(stages[s], 2), labels, ecm.names(), names[s]));
    outputs.push_back(path);
  }
  if (head.kind() == HeadKind::ngpt) {
    const bool ok = dev_attn <= 1e-9 && dev_final <= 1e-9;
    ctx.out << "unit-norm check: post_attention max |norm-1| " << format_number(dev_attn) << ", final "
            << format_number(dev_final) << (ok ? "  ok" : "  FAILED") << "\n";
  }
  json config = {{"per_label", a.per_label}, {"head", to_json(head.cfg)}, {"ecm", to_json(ecm)}};
  std::vector<std::string> inputs{a.data, a.ckpt};
  if (!a.ecm.empty()) inputs.push_back(a.ecm);
  write_manifest(ctx, manifest_for_dir(a.out), "trace", config, inputs, outputs, 0);
  ctx.out << "wrote " << outputs.size() << " stage plots to " << a.out << "\n";
  return 0;
}

// ---- import ------------------------------------------------------------------

int cmd_import(const Context& ctx, const std::string& in, const std::string& ecm_path, const std::string& out) {
  require(!out.empty(), ErrorKind::config, "--out is required");
  require_file(in, "JSON-lines file");
  if (!ecm_path.empty()) require_file(ecm_path, "ECM config");
  const EcmConfig ecm = ecm_or_default(ecm_path);
  const EmbeddingDataset data = import_jsonl(in, ecm);
  ensure_parent(out);
  save_dataset(data, out);
  std::vector<std::string> inputs{in};
  if (!ecm_path.empty()) inputs.push_back(ecm_path);
  write_manifest(ctx, manifest_for_file(out), "import", {{"ecm", to_json(ecm)}}, inputs, {out}, 0);
  ctx.out << "imported " << data.records.size() << " records (d=" << data.d << ") to " << out << "\n";
  return 0;
}

int cmd_replay(const Context& ctx, const std::string& manifest_path) {
  require_file(manifest_path, "manifest");
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, "manifest '" + manifest_path + "' is not valid JSON: " + e.what());
  }
  require(m.contains("argv") && m["argv"].is_array(), ErrorKind::format, "manifest has no argv");
  const auto argv = m["argv"].get<std::vector<std::string>>();
  require(!argv.empty() && argv.front() != "replay", ErrorKind::format, "manifest argv cannot be replayed");
  return run_cli(argv, ctx.out, ctx.err);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Circumplex-aware contrastive heads on the unit hypersphere", "ecm_sphere"};
  app.footer(kSchemaHelp);
  app.set_version_flag("--version", std::string("ecm_sphere ") + kToolVersion);
  app.require_subcommand(1);
  std::string isa;
  app.add_option("--simd", isa, "Kernel path: scalar or avx2 (default: best available)");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a planted-circumplex dataset (ECM1)");
  s->add_option("--config", synth.config, "ECM config JSON (default: 12-label layout)");
  s->add_option("--out", synth.out, "Output ECM1 file")->required();
  s->add_option("--n", synth.n, "Samples per label")->capture_default_str();
  s->add_option("--d", synth.d, "Dimension")->capture_default_str();
  s->add_option("--T", synth.tokens, "Tokens per sample")->capture_default_str();
  s->add_option("--kappa", synth.kappa, "Concentration, or 'inf' for noise-free")->capture_default_str();
  s->add_option("--distractor-scale", synth.distractor, "Length of distractor tokens")->capture_default_str();
  s->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  s->add_option("--split", synth.split, "Split tag mixed into the seed")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a head with a contrastive loss");
  t->add_option("--data", tr.data, "ECM1 or .jsonl training set")->required();
  t->add_option("--ecm", tr.ecm, "ECM config JSON (default: 12-label layout)");
  t->add_option("--head", tr.head, "gpt or ngpt")->capture_default_str();
  t->add_option("--loss", tr.loss, "sincere, softcse or circularcse")->capture_default_str();
  t->add_option("--out", tr.out, "Output checkpoint")->required();
  t->add_option("--log", tr.log, "Training log CSV (default: <out>.log.csv)");
  t->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
  t->add_option("--lr", tr.lr, "Learning rate (constant)")->capture_default_str();
  t->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  t->add_option("--tau", tr.tau, "Temperature")->capture_default_str();
  t->add_option("--margin", tr.margin, "CircularCSE margin")->capture_default_str();
  t->add_option("--seed", tr.seed, "Seed")->capture_default_str();
  t->add_option("--n-heads", tr.n_heads, "Attention heads")->capture_default_str();
  t->add_option("--pooling", tr.pooling, "cls, last or mean")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--data", ev.data, "ECM1 or .jsonl test set")->required();
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--ecm", ev.ecm, "ECM config JSON (default: 12-label layout)");
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--restarts", ev.restarts, "k-means restarts")->capture_default_str();
  e->add_option("--seed", ev.seed, "k-means seed")->capture_default_str();
  e->add_option("--mds-per-label", ev.mds_per_label, "MDS subsample per label (0 = all)")->capture_default_str();
  e->add_option("--jobs", ev.jobs, "Worker threads (default: $ECM_SPHERE_JOBS or 1)");

  SweepDimsArgs sd;
  auto* sdc = app.add_subcommand("sweep-dims", "V-Measure after PCA reduction to each dimension");
  sdc->add_option("--data", sd.data, "ECM1 or .jsonl test set")->required();
  sdc->add_option("--ckpt", sd.ckpt, "Checkpoint")->required();
  sdc->add_option("--ecm", sd.ecm, "ECM config JSON (default: 12-label layout)");
  sdc->add_option("--dims", sd.dims, "Comma-separated dimensions (default: 2,4,8,...,d)");
  sdc->add_option("--out", sd.out, "Output CSV")->required();
  sdc->add_option("--restarts", sd.restarts, "k-means restarts")->capture_default_str();
  sdc->add_option("--seed", sd.seed, "k-means seed")->capture_default_str();
  sdc->add_option("--jobs", sd.jobs, "Worker threads (default: $ECM_SPHERE_JOBS or 1)");

  SweepLabelsArgs sl;
  auto* slc = app.add_subcommand("sweep-labels", "Synthesize, train all losses and evaluate per ECM config");
  slc->add_option("--ecm-series", sl.series, "Comma-separated ECM config files")->required();
  slc->add_option("--out", sl.out, "Output CSV")->required();
  slc->add_option("--head", sl.head, "gpt or ngpt")->capture_default_str();
  slc->add_option("--n", sl.n, "Training samples per label")->capture_default_str();
  slc->add_option("--test-n", sl.test_n, "Test samples per label")->capture_default_str();
  slc->add_option("--d", sl.d, "Dimension")->capture_default_str();
  slc->add_option("--T", sl.tokens, "Tokens per sample")->capture_default_str();
  slc->add_option("--kappa", sl.kappa, "Concentration, or 'inf'")->capture_default_str();
  slc->add_option("--distractor-scale", sl.distractor, "Length of distractor tokens")->capture_default_str();
  slc->add_option("--epochs", sl.epochs, "Epochs")->capture_default_str();
  slc->add_option("--lr", sl.lr, "Learning rate")->capture_default_str();
  slc->add_option("--batch", sl.batch, "Batch size")->capture_default_str();
  slc->add_option("--tau", sl.tau, "Temperature")->capture_default_str();
  slc->add_option("--margin", sl.margin, "CircularCSE margin")->capture_default_str();
  slc->add_option("--restarts", sl.restarts, "k-means restarts")->capture_default_str();
  slc->add_option("--seed", sl.seed, "Seed")->capture_default_str();
  slc->add_option("--jobs", sl.jobs, "Worker threads (default: $ECM_SPHERE_JOBS or 1)");

  VerifyArgs vf;
  auto* v = app.add_subcommand("verify", "Numerical check of the SINCERE simplex optimum");
  v->add_option("--check", vf.check, "Check to run")->capture_default_str();
  v->add_option("--E", vf.e, "Number of classes")->capture_default_str();
  v->add_option("--d", vf.d, "Dimension")->capture_default_str();
  v->add_option("--tau", vf.tau, "Temperature")->capture_default_str();
  v->add_option("--steps", vf.steps, "Optimizer steps")->capture_default_str();
  v->add_option("--lr", vf.lr, "Peak learning rate")->capture_default_str();
  v->add_option("--seed", vf.seed, "Seed")->capture_default_str();
  v->add_flag("--allow-infeasible", vf.allow_infeasible, "Run even when d < E-1");
  v->add_option("--out", vf.out, "Optional CSV of pairwise sims");

  TraceArgs tc;
  auto* trc = app.add_subcommand("trace", "MDS plots of each stage inside the block");
  trc->add_option("--data", tc.data, "ECM1 or .jsonl dataset")->required();
  trc->add_option("--ckpt", tc.ckpt, "Checkpoint")->required();
  trc->add_option("--ecm", tc.ecm, "ECM config JSON (default: 12-label layout)");
  trc->add_option("--out", tc.out, "Output directory")->required();
  trc->add_option("--per-label", tc.per_label, "Samples per label")->capture_default_str();

  std::string imp_in, imp_ecm, imp_out;
  auto* im = app.add_subcommand("import", "Convert a JSON-lines fixture to ECM1");
  im->add_option("--in", imp_in, "Input .jsonl")->required();
  im->add_option("--ecm", imp_ecm, "ECM config JSON (default: 12-label layout)");
  im->add_option("--out", imp_out, "Output ECM1 file")->required();

  std::string manifest;
  auto* rp = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  rp->add_option("manifest", manifest, "Manifest JSON")->required();

  std::vector<std::string> full{"ecm_sphere"};
  full.insert(full.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : full) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? 0 : 2;
  }

  Context ctx{args, out, err};
  try {
    if (!isa.empty()) {
      require(isa == "scalar" || isa == "avx2", ErrorKind::config, "--simd must be scalar or avx2");
      require(isa == "scalar" || kernels::avx2_available(), ErrorKind::config, "AVX2 is not available on this CPU");
      kernels::force_isa(isa == "scalar" ? kernels::Isa::scalar : kernels::Isa::avx2);
    }
    if (s->parsed()) return cmd_synth(ctx, synth);
    if (t->parsed()) return cmd_train(ctx, tr);
    if (e->parsed()) return cmd_eval(ctx, ev);
    if (sdc->parsed()) return cmd_sweep_dims(ctx, sd);
    if (slc->parsed()) return cmd_sweep_labels(ctx, sl);
    if (v->parsed()) return cmd_verify(ctx, vf);
    if (trc->parsed()) return cmd_trace(ctx, tc);
    if (im->parsed()) return cmd_import(ctx, imp_in, imp_ecm, imp_out);
    if (rp->parsed()) return cmd_replay(ctx, manifest);
  } catch (const Error& ex) {
    err << "error: " << ex.what() << "\n";
    return exit_code_for(ex);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 2;
  }
  return 2;
}

}  // namespace ecm_sphere
