#include "ecm_sphere/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <thread>

#include "ecm_sphere/error.hpp"
#include "ecm_sphere/kernels.hpp"

namespace ecm_sphere {

namespace {

double row_dot(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  return kernels::active().dot(a.row(i).data(), b.row(j).data(), a.cols());
}

std::size_t nearest(const Tensor& x, std::size_t i, const Tensor& centroids) {
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double s = row_dot(x, i, centroids, c);
    if (s > best_sim) {
      best_sim = s;
      best = c;
    }
  }
  return best;
}

void normalize_row_or_keep(Tensor& t, std::size_t r, std::span<const double> fallback) {
  const double n = row_norm(t, r);
  if (n > 0.0 && std::isfinite(n)) {
    kernels::active().scale(1.0 / n, t.row(r).data(), t.cols());
  } else {
    std::copy(fallback.begin(), fallback.end(), t.row(r).begin());
  }
}

// Greedy k-means++: each new centre is the best of 2 + ln k distance-weighted
// draws, judged by the potential it leaves behind.
Tensor kmeanspp_init(const Tensor& x, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = x.rows();
  Tensor c(k, x.cols());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t first = pick(rng);
  std::copy(x.row(first).begin(), x.row(first).end(), c.row(0).begin());
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = std::max(0.0, 1.0 - row_dot(x, i, c, 0));
  const std::size_t trials = 2 + static_cast<std::size_t>(std::log(static_cast<double>(k)));
  std::vector<double> trial_dist(n), best_dist(n);
  for (std::size_t m = 1; m < k; ++m) {
    double total = 0.0;
    for (double v : dist) total += v;
    std::size_t chosen = 0;
    if (total > 0.0) {
      double best_pot = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < trials; ++t) {
        const double target = unit(rng) * total;
        double acc = 0.0;
        std::size_t cand = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += dist[i];
          if (acc > target && dist[i] > 0.0) {
            cand = i;
            break;
          }
        }
        double pot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          trial_dist[i] = std::min(dist[i], std::max(0.0, 1.0 - row_dot(x, i, x, cand)));
          pot += trial_dist[i];
        }
        if (pot < best_pot) {
          best_pot = pot;
          chosen = cand;
          best_dist.swap(trial_dist);
        }
      }
      dist.swap(best_dist);
    } else {
      chosen = pick(rng);
    }
    std::copy(x.row(chosen).begin(), x.row(chosen).end(), c.row(m).begin());
  }
  return c;
}

}  // namespace

double cosine_inertia(const Tensor& x, const Tensor& centroids, std::span<const std::size_t> assignments) {
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) total += 1.0 - row_dot(x, i, centroids, assignments[i]);
  return std::max(0.0, total);
}

ClusteringResult lloyd(const Tensor& x, Tensor centroids, std::vector<double>* history) {
  const std::size_t n = x.rows();
  const std::size_t k = centroids.rows();
  require(centroids.cols() == x.cols(), ErrorKind::dimension, "centroid width differs from data width");
  for (std::size_t c = 0; c < k; ++c) normalize_row_or_keep(centroids, c, x.row(c % n));

  constexpr std::size_t kUnassigned = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> assign(n, kUnassigned);
  std::size_t it = 0;
  for (it = 1; it <= kKmeansMaxIterations; ++it) {
    bool changed = false;
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = nearest(x, i, centroids);
      changed |= c != assign[i];
      assign[i] = c;
      ++counts[c];
    }
    // Empty cluster: steal the point farthest from its own centroid.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = kUnassigned;
      double far_dist = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] < 2) continue;
        const double dist = 1.0 - row_dot(x, i, centroids, assign[i]);
        if (dist > far_dist) {
          far_dist = dist;
          far = i;
        }
      }
      if (far == kUnassigned) continue;
      --counts[assign[far]];
      assign[far] = c;
      counts[c] = 1;
      std::copy(x.row(far).begin(), x.row(far).end(), centroids.row(c).begin());
      changed = true;
    }
    if (history) history->push_back(cosine_inertia(x, centroids, assign));
    if (!changed) break;

    Tensor sums(k, x.cols());
    for (std::size_t i = 0; i < n; ++i) kernels::active().axpy(1.0, x.row(i).data(), sums.row(assign[i]).data(), x.cols());
    for (std::size_t c = 0; c < k; ++c) normalize_row_or_keep(sums, c, centroids.row(c));
    centroids = std::move(sums);
  }
  ClusteringResult r;
  r.inertia = cosine_inertia(x, centroids, assign);
  r.assignments = std::move(assign);
  r.centroids = std::move(centroids);
  r.iterations = std::min(it, kKmeansMaxIterations);
  return r;
}

ClusteringResult spherical_kmeans(const Tensor& x, std::size_t k, std::size_t restarts, std::uint64_t seed,
                                  std::size_t jobs) {
  require(k >= 1, ErrorKind::config, "k must be positive");
  require(k <= x.rows(), ErrorKind::config,
          "k=" + std::to_string(k) + " exceeds the number of points " + std::to_string(x.rows()));
  require(restarts >= 1, ErrorKind::config, "need at least one restart");
  require(x.all_finite(), ErrorKind::contract, "k-means input is not finite");

  std::vector<ClusteringResult> results(restarts);
  std::vector<std::exception_ptr> errors(restarts);
  auto run = [&](std::size_t r) {
    try {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(r), 0x6b6d6e73u};
      std::mt19937_64 rng(seq);
      results[r] = lloyd(x, kmeanspp_init(x, k, rng));
      results[r].restart = r;
    } catch (...) {
      errors[r] = std::current_exception();
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(jobs, 1, restarts);
  if (workers == 1) {
    for (std::size_t r = 0; r < restarts; ++r) run(r);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t r = w; r < restarts; r += workers) run(r);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r)
    if (results[r].inertia < results[best].inertia) best = r;
  return std::move(results[best]);
}

// ---- V-Measure ----------------------------------------------------------------

namespace {

std::vector<std::size_t> compress(std::span<const std::size_t> v, std::size_t& count) {
  std::map<std::size_t, std::size_t> ids;
  for (std::size_t x : v) ids.emplace(x, 0);
  std::size_t next = 0;
  for (auto& [key, id] : ids) id = next++;
  count = next;
  std::vector<std::size_t> out;
  out.reserve(v.size());
  for (std::size_t x : v) out.push_back(ids[x]);
  return out;
}

double entropy(const std::vector<double>& counts, double n) {
  double h = 0.0;
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

}  // namespace

VMeasure v_measure(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  require(truth.size() == pred.size(), ErrorKind::contract, "label and cluster vectors differ in length");
  require(!truth.empty(), ErrorKind::contract, "v_measure needs at least one point");
  std::size_t nc = 0, nk = 0;
  const auto c = compress(truth, nc);
  const auto k = compress(pred, nk);
  const double n = static_cast<double>(truth.size());
  std::vector<double> cont(nc * nk, 0.0), ccount(nc, 0.0), kcount(nk, 0.0);
  for (std::size_t i = 0; i < c.size(); ++i) {
    cont[c[i] * nk + k[i]] += 1.0;
    ccount[c[i]] += 1.0;
    kcount[k[i]] += 1.0;
  }
  const double hc = entropy(ccount, n);
  const double hk = entropy(kcount, n);
  double hc_given_k = 0.0, hk_given_c = 0.0;
  for (std::size_t a = 0; a < nc; ++a) {
    for (std::size_t b = 0; b < nk; ++b) {
      const double v = cont[a * nk + b];
      if (v == 0.0) continue;
      hc_given_k -= (v / n) * std::log(v / kcount[b]);
      hk_given_c -= (v / n) * std::log(v / ccount[a]);
    }
  }
  VMeasure out;
  out.homogeneity = hc == 0.0 ? 1.0 : std::clamp(1.0 - hc_given_k / hc, 0.0, 1.0);
  out.completeness = hk == 0.0 ? 1.0 : std::clamp(1.0 - hk_given_c / hk, 0.0, 1.0);
  const double s = out.homogeneity + out.completeness;
  out.v = s == 0.0 ? 0.0 : 2.0 * out.homogeneity * out.completeness / s;
  return out;
}

// ---- circumplex agreement -------------------------------------------------------

Tensor avg_cos_sim(const Tensor& x, std::span<const std::size_t> labels, const EcmConfig& ecm) {
  require(labels.size() == x.rows(), ErrorKind::contract, "one label per embedding row required");
  const std::size_t e = ecm.size();
  Tensor sums(e, x.cols());
  std::vector<double> counts(e, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < e, ErrorKind::invalid_label, "label index " + std::to_string(labels[i]) + " out of range");
    kernels::active().axpy(1.0, x.row(i).data(), sums.row(labels[i]).data(), x.cols());
    counts[labels[i]] += 1.0;
  }
  std::string missing;
  for (std::size_t y = 0; y < e; ++y)
    if (counts[y] == 0.0) missing += (missing.empty() ? "" : ", ") + ecm.label(y).name;
  require(missing.empty(), ErrorKind::missing_label, "no samples for label(s): " + missing);

  Tensor avg(e, e);
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = i; j < e; ++j) {
      const double v = row_dot(sums, i, sums, j) / (counts[i] * counts[j]);
      avg(i, j) = v;
      avg(j, i) = v;
    }
  }
  return avg;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorKind::contract, "pearson needs two equal series of length >= 2");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  const auto [a_lo, a_hi] = std::minmax_element(a.begin(), a.end());
  const auto [b_lo, b_hi] = std::minmax_element(b.begin(), b.end());
  // Constant series can leave rounding residue in saa/sbb, so test the range.
  require(*a_lo != *a_hi && *b_lo != *b_hi && saa > 0.0 && sbb > 0.0, ErrorKind::undefined_correlation,
          "a series has zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double cd_r(const Tensor& avg_cos, const EcmConfig& ecm) {
  const std::size_t e = ecm.size();
  require(e >= 3, ErrorKind::contract, "CD-r needs at least 3 labels");
  require(avg_cos.rows() == e && avg_cos.cols() == e, ErrorKind::dimension,
          "AvgCosSim must be " + std::to_string(e) + "x" + std::to_string(e));
  std::vector<double> cd, dis;
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = i + 1; j < e; ++j) {
      cd.push_back(circumplex_distance(ecm, i, j));
      dis.push_back(1.0 - avg_cos(i, j));
    }
  }
  return pearson(cd, dis);
}

// ---- projections ------------------------------------------------------------------

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd to_eigen(const Tensor& t) {
  MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(r, c);
  return m;
}

// Descending eigenpairs of a symmetric matrix, each vector flipped so its
// largest-magnitude entry is positive.
void sorted_eigen(const MatrixXd& sym, std::vector<double>& values, MatrixXd& vectors) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(sym);
  require(solver.info() == Eigen::Success, ErrorKind::evaluation, "eigendecomposition failed");
  const Eigen::Index n = sym.rows();
  values.resize(static_cast<std::size_t>(n));
  vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = n - 1 - i;
    values[static_cast<std::size_t>(i)] = solver.eigenvalues()(src);
    VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    for (Eigen::Index r = 1; r < n; ++r)
      if (std::abs(v(r)) > std::abs(v(arg))) arg = r;
    if (v(arg) < 0.0) v = -v;
    vectors.col(i) = v;
  }
}

}  // namespace

PcaResult pca_project(const Tensor& x, std::size_t out_dim) {
  const std::size_t n = x.rows(), d = x.cols();
  require(n >= 2, ErrorKind::config, "PCA needs at least 2 points");
  require(out_dim >= 1 && out_dim <= std::min(n, d), ErrorKind::config,
          "PCA output dimension " + std::to_string(out_dim) + " outside [1, " + std::to_string(std::min(n, d)) + "]");
  require(x.all_finite(), ErrorKind::contract, "PCA input is not finite");

  MatrixXd m = to_eigen(x);
  const VectorXd mean = m.colwise().mean();
  m.rowwise() -= mean.transpose();
  const MatrixXd cov = (m.transpose() * m) / static_cast<double>(n - 1);
  std::vector<double> values;
  MatrixXd vectors;
  sorted_eigen(cov, values, vectors);

  double total = 0.0;
  for (double v : values) total += std::max(0.0, v);
  PcaResult out;
  out.mean.assign(mean.data(), mean.data() + d);
  out.components = Tensor(out_dim, d);
  out.projected = Tensor(n, out_dim);
  for (std::size_t k = 0; k < out_dim; ++k) {
    out.variance_ratios.push_back(total > 0.0 ? std::max(0.0, values[k]) / total : 0.0);
    for (std::size_t c = 0; c < d; ++c)
      out.components(k, c) = vectors(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k));
  }
  const MatrixXd proj = m * vectors.leftCols(static_cast<Eigen::Index>(out_dim));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < out_dim; ++k)
      out.projected(r, k) = proj(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
  return out;
}

Tensor pca_reduce_unit(const Tensor& x, std::size_t dim) {
  const PcaResult p = pca_project(x, dim);
  Tensor y = matmul_nt(x, p.components);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const double nrm = row_norm(y, r);
    if (nrm > 0.0) kernels::active().scale(1.0 / nrm, y.row(r).data(), y.cols());
  }
  return y;
}

Tensor mds_project(const Tensor& x, std::size_t out_dim) {
  const std::size_t n = x.rows();
  require(n >= 3, ErrorKind::contract, "MDS needs at least 3 points");
  require(out_dim >= 1 && out_dim <= n, ErrorKind::config, "MDS output dimension out of range");
  MatrixXd d2(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double diff = x(i, c) - x(j, c);
        s += diff * diff;
      }
      require(std::isfinite(s), ErrorKind::contract, "non-finite distance in MDS input");
      d2(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s;
      d2(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = s;
    }
  }
  const VectorXd row_mean = d2.rowwise().mean();
  const double grand = d2.mean();
  MatrixXd b(n, n);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i)
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(n); ++j)
      b(i, j) = -0.5 * (d2(i, j) - row_mean(i) - row_mean(j) + grand);
  b = 0.5 * (b + b.transpose());

  std::vector<double> values;
  MatrixXd vectors;
  sorted_eigen(b, values, vectors);
  Tensor out(n, out_dim);
  for (std::size_t k = 0; k < out_dim; ++k) {
    const double s = std::sqrt(std::max(0.0, values[k]));
    for (std::size_t r = 0; r < n; ++r)
      out(r, k) = vectors(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) * s;
  }
  return out;
}

double min_intercentroid_angle(const Tensor& x, std::span<const std::size_t> labels, std::size_t n_labels) {
  require(labels.size() == x.rows(), ErrorKind::contract, "one label per embedding row required");
  require(n_labels >= 2, ErrorKind::contract, "need at least two labels");
  Tensor sums(n_labels, x.cols());
  std::vector<std::size_t> counts(n_labels, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < n_labels, ErrorKind::invalid_label, "label index out of range");
    kernels::active().axpy(1.0, x.row(i).data(), sums.row(labels[i]).data(), x.cols());
    ++counts[labels[i]];
  }
  for (std::size_t y = 0; y < n_labels; ++y)
    require(counts[y] > 0, ErrorKind::missing_label, "no samples for label " + std::to_string(y));
  const Tensor c = normalized_rows(sums);
  double best = 180.0;
  for (std::size_t i = 0; i < n_labels; ++i)
    for (std::size_t j = i + 1; j < n_labels; ++j)
      best = std::min(best, std::acos(std::clamp(row_dot(c, i, c, j), -1.0, 1.0)) * 180.0 / std::numbers::pi);
  return best;
}

// ---- simplex check ------------------------------------------------------------------

double population_sincere_loss(const Tensor& p, double tau) {
  const std::size_t e = p.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < e; ++i) {
    double z = 1.0;
    for (std::size_t j = 0; j < e; ++j)
      if (j != i) z += std::exp((row_dot(p, i, p, j) - 1.0) / tau);
    total += std::log(z);
  }
  return total / static_cast<double>(e);
}

double simplex_loss_bound(std::size_t n_classes, double tau) {
  const double e = static_cast<double>(n_classes);
  return std::log1p((e - 1.0) * std::exp((-1.0 / (e - 1.0) - 1.0) / tau));
}

namespace {

// Tangent-space gradient of population_sincere_loss.
Tensor simplex_gradient(const Tensor& p, double tau) {
  const std::size_t e = p.rows(), d = p.cols();
  Tensor w(e, e);
  for (std::size_t i = 0; i < e; ++i) {
    double z = 1.0;
    for (std::size_t j = 0; j < e; ++j) {
      if (j == i) continue;
      w(i, j) = std::exp((row_dot(p, i, p, j) - 1.0) / tau);
      z += w(i, j);
    }
    for (std::size_t j = 0; j < e; ++j) w(i, j) /= z;
  }
  Tensor g(e, d);
  const double c = 1.0 / (static_cast<double>(e) * tau);
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = 0; j < e; ++j)
      if (j != i) kernels::active().axpy(c * (w(i, j) + w(j, i)), p.row(j).data(), g.row(i).data(), d);
    const double radial = row_dot(g, i, p, i);
    kernels::active().axpy(-radial, p.row(i).data(), g.row(i).data(), d);
  }
  return g;
}

}  // namespace

SimplexCheckReport theory_check_sincere_simplex(const SimplexCheckConfig& cfg) {
  const std::size_t e = cfg.n_classes, d = cfg.d;
  require(e >= 2, ErrorKind::config, "need at least 2 classes");
  require(d >= 2, ErrorKind::config, "need d >= 2");
  require(cfg.tau > 0.0 && std::isfinite(cfg.tau), ErrorKind::config, "tau must be positive");
  require(cfg.steps >= 1, ErrorKind::config, "need at least one step");
  require(cfg.allow_infeasible || d + 1 >= e, ErrorKind::config,
          "a regular simplex of " + std::to_string(e) + " points needs d >= " + std::to_string(e - 1) +
              ", got d=" + std::to_string(d));

  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x73706c78u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor p(e, d);
  for (double& v : p.values()) v = normal(rng);
  p = normalized_rows(p);

  Tensor m(e, d), v(e, d);
  Tensor best = p;
  double best_loss = population_sincere_loss(p, cfg.tau);
  std::size_t t = 0;
  for (t = 1; t <= cfg.steps; ++t) {
    const Tensor g = simplex_gradient(p, cfg.tau);
    const double lr = cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t - 1) /
                                                                 static_cast<double>(cfg.steps)));
    const double c1 = 1.0 - std::pow(0.9, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(0.9, static_cast<double>(t));
    for (std::size_t k = 0; k < p.size(); ++k) {
      // Gradients shrink by orders of magnitude on the way in (exp(-2/tau) at
      // E=2), so the second moment needs a short memory and a tiny epsilon or
      // the late steps stall.
      m[k] = 0.9 * m[k] + 0.1 * g[k];
      v[k] = 0.9 * v[k] + 0.1 * g[k] * g[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + 1e-30);
    }
    p = normalized_rows(p);
    const double loss = population_sincere_loss(p, cfg.tau);
    if (loss < best_loss) {
      best_loss = loss;
      best = p;
    }
  }

  SimplexCheckReport r;
  r.prototypes = best;
  r.sims = matmul_nt(best, best);
  r.target = -1.0 / static_cast<double>(e - 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < e; ++i) {
    for (std::size_t j = 0; j < e; ++j) {
      if (i == j) continue;
      r.max_deviation = std::max(r.max_deviation, std::abs(r.sims(i, j) - r.target));
      sum += r.sims(i, j);
    }
  }
  r.mean_offdiag = sum / static_cast<double>(e * (e - 1));
  r.loss = best_loss;
  r.bound = simplex_loss_bound(e, cfg.tau);
  const Tensor g = simplex_gradient(best, cfg.tau);
  double gn = 0.0;
  for (double x : g.values()) gn += x * x;
  r.grad_norm = std::sqrt(gn);
  r.steps_run = cfg.steps;
  r.converged = r.grad_norm < 1e-4;
  return r;
}

// ---- full report ---------------------------------------------------------------------

std::vector<std::size_t> subsample_per_label(std::span<const std::size_t> labels, std::size_t per_label) {
  std::vector<std::size_t> out;
  std::map<std::size_t, std::size_t> taken;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (per_label == 0 || taken[labels[i]] < per_label) {
      out.push_back(i);
      ++taken[labels[i]];
    }
  }
  return out;
}

EvalReport evaluate(const Tensor& x, std::span<const std::size_t> labels, const EcmConfig& ecm,
                    const EvalOptions& opts) {
  require(labels.size() == x.rows(), ErrorKind::contract, "one label per embedding row required");
  EvalReport r;
  r.n = x.rows();
  const ClusteringResult km = spherical_kmeans(x, ecm.size(), opts.restarts, opts.seed, opts.jobs);
  r.inertia = km.inertia;
  r.vm = v_measure(labels, km.assignments);
  r.avg_cos = avg_cos_sim(x, labels, ecm);
  r.cd_r = std::numeric_limits<double>::quiet_NaN();
  if (ecm.size() >= 3) {
    try {
      r.cd_r = cd_r(r.avg_cos, ecm);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::undefined_correlation) throw;
    }
  }
  r.min_angle_deg = min_intercentroid_angle(x, labels, ecm.size());

  const PcaResult pca = pca_project(x, std::min<std::size_t>(2, std::min(x.rows(), x.cols())));
  r.pca_variance_ratios = pca.variance_ratios;
  r.pca_coords = pca.projected;

  const auto subset = subsample_per_label(labels, opts.mds_per_label);
  if (subset.size() >= 3) {
    Tensor sx(subset.size(), x.cols());
    for (std::size_t i = 0; i < subset.size(); ++i) {
      std::copy(x.row(subset[i]).begin(), x.row(subset[i]).end(), sx.row(i).begin());
      r.mds_labels.push_back(labels[subset[i]]);
    }
    r.mds_coords = mds_project(sx, 2);
  }
  return r;
}

std::vector<DimSweepPoint> sweep_dims(const Tensor& x, std::span<const std::size_t> labels, const EcmConfig& ecm,
                                      std::span<const std::size_t> dims, const EvalOptions& opts) {
  std::vector<DimSweepPoint> out;
  for (std::size_t dim : dims) {
    DimSweepPoint p;
    p.dim = dim;
    if (dim == 0 || dim > std::min(x.rows(), x.cols())) {
      p.skipped = true;
    } else {
      const Tensor y = pca_reduce_unit(x, dim);
      p.vm = v_measure(labels, spherical_kmeans(y, ecm.size(), opts.restarts, opts.seed, opts.jobs).assignments);
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace ecm_sphere
