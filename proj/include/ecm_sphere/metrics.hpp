#pragma once
// Clustering quality, circumplex agreement and low-dimensional projections
// of unit embeddings.

#include <cstdint>
#include <span>
#include <vector>

#include "ecm_sphere/ecm.hpp"
#include "ecm_sphere/tensor.hpp"

namespace ecm_sphere {

inline constexpr std::size_t kKmeansMaxIterations = 300;

struct ClusteringResult {
  std::vector<std::size_t> assignments;
  Tensor centroids;      // k x d, unit rows
  double inertia = 0.0;  // sum of (1 - cos) to the assigned centroid
  std::size_t iterations = 0;
  std::size_t restart = 0;  // which restart won
};

/// Lloyd iterations under cosine similarity with k-means++ seeding. Restart
/// r draws from its own stream derived from (seed, r); the winner is the
/// lowest (inertia, restart) pair, so `jobs` never changes the result.
ClusteringResult spherical_kmeans(const Tensor& x, std::size_t k, std::size_t restarts = 10,
                                  std::uint64_t seed = 42, std::size_t jobs = 1);

/// One Lloyd run from given initial centroids (rows are normalized first).
/// `history`, if given, receives the inertia after every assignment pass.
ClusteringResult lloyd(const Tensor& x, Tensor centroids, std::vector<double>* history = nullptr);

/// Sum of (1 - cos) between every row and its assigned centroid.
double cosine_inertia(const Tensor& x, const Tensor& centroids, std::span<const std::size_t> assignments);

struct VMeasure {
  double homogeneity = 0.0;
  double completeness = 0.0;
  double v = 0.0;
};

/// Natural-log entropies; h = 1 when H(C) = 0, c = 1 when H(K) = 0.
VMeasure v_measure(std::span<const std::size_t> truth, std::span<const std::size_t> pred);

/// E x E; entry (i, j) is the mean of e_k . e_l over all k with label i
/// and l with label j (self pairs included on the diagonal).
Tensor avg_cos_sim(const Tensor& x, std::span<const std::size_t> labels, const EcmConfig& ecm);

/// Pearson r between CD(i, j) and 1 - avg(i, j) over unordered pairs i < j.
double cd_r(const Tensor& avg_cos, const EcmConfig& ecm);
double pearson(std::span<const double> a, std::span<const double> b);

struct PcaResult {
  Tensor projected;    // N x out_dim, centered data on the components
  Tensor components;   // out_dim x d, orthonormal rows
  std::vector<double> mean;
  std::vector<double> variance_ratios;
};

/// Covariance uses divisor N - 1. Each component is flipped so its
/// largest-magnitude coordinate is positive (first one on ties).
PcaResult pca_project(const Tensor& x, std::size_t out_dim);

/// Classical MDS on Euclidean distances, same sign convention as PCA.
Tensor mds_project(const Tensor& x, std::size_t out_dim = 2);

/// Smallest angle in degrees between the normalized per-label mean directions.
double min_intercentroid_angle(const Tensor& x, std::span<const std::size_t> labels, std::size_t n_labels);

struct SimplexCheckConfig {
  std::size_t n_classes = 12;  // E
  std::size_t d = 16;
  double tau = 0.1;
  std::size_t steps = 5000;
  double learning_rate = 0.05;
  std::uint64_t seed = 42;
  bool allow_infeasible = false;  // permit d < E - 1
};

struct SimplexCheckReport {
  Tensor prototypes;  // E x d
  Tensor sims;        // E x E inner products
  double target = 0.0;         // -1 / (E - 1)
  double max_deviation = 0.0;  // over off-diagonal sims
  double mean_offdiag = 0.0;
  double loss = 0.0;
  double bound = 0.0;  // loss of the regular simplex
  double grad_norm = 0.0;
  std::size_t steps_run = 0;
  bool converged = false;
};

/// Population SINCERE loss over E free unit prototypes, one per class with
/// itself as the positive and every other prototype as a negative:
///   L = mean_i [ log(exp(1/tau) + sum_{j != i} exp(s_ij/tau)) - 1/tau ].
double population_sincere_loss(const Tensor& prototypes, double tau);
double simplex_loss_bound(std::size_t n_classes, double tau);

/// Adam on the tangent space with cosine-decayed learning rate, rows
/// renormalized after every step; keeps the lowest-loss iterate.
SimplexCheckReport theory_check_sincere_simplex(const SimplexCheckConfig& cfg);

struct EvalOptions {
  std::size_t restarts = 10;
  std::uint64_t seed = 42;
  std::size_t mds_per_label = 40;  // 0 = all points
  std::size_t jobs = 1;
};

struct EvalReport {
  std::size_t n = 0;
  VMeasure vm;
  double inertia = 0.0;
  Tensor avg_cos;
  double cd_r = 0.0;
  double min_angle_deg = 0.0;
  std::vector<double> pca_variance_ratios;
  Tensor pca_coords;                   // N x 2
  Tensor mds_coords;                   // M x 2
  std::vector<std::size_t> mds_labels; // labels of the MDS subset
};

/// k-means with k = E, V-Measure, AvgCosSim, CD-r, PCA(2) and MDS(2).
EvalReport evaluate(const Tensor& embeddings, std::span<const std::size_t> labels, const EcmConfig& ecm,
                    const EvalOptions& opts = {});

/// First `per_label` indices of every label in order of appearance.
std::vector<std::size_t> subsample_per_label(std::span<const std::size_t> labels, std::size_t per_label);

/// Projects rows onto the leading `dim` principal axes of x without
/// centering, then renormalizes rows. At dim = d this is a rotation.
Tensor pca_reduce_unit(const Tensor& x, std::size_t dim);

struct DimSweepPoint {
  std::size_t dim = 0;
  bool skipped = false;  // dim outside [1, min(N, d)]
  VMeasure vm;
};

/// For each dim: pca_reduce_unit, k-means with k = E, V-Measure.
std::vector<DimSweepPoint> sweep_dims(const Tensor& x, std::span<const std::size_t> labels, const EcmConfig& ecm,
                                      std::span<const std::size_t> dims, const EvalOptions& opts = {});

}  // namespace ecm_sphere
