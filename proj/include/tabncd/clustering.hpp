#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "tabncd/dataset.hpp"
#include "tabncd/error.hpp"
#include "tabncd/random.hpp"

namespace tabncd {

struct KmeansConfig {
  std::size_t k = 2;
  std::size_t n_init = 10;
  std::size_t max_iter = 300;
  double tol = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    if (k < 1) fail(ErrorCode::BadConfig, "k must be >= 1");
    if (n_init < 1) fail(ErrorCode::BadConfig, "n_init must be >= 1");
    if (max_iter < 1) fail(ErrorCode::BadConfig, "max_iter must be >= 1");
    if (!(tol >= 0.0)) fail(ErrorCode::BadConfig, "tol must be >= 0");
  }
};

struct ClusterAssignment {
  std::vector<int> labels;
  double inertia = 0.0;
  std::size_t iterations_run = 0;
  Matrix centroids;
  std::vector<double> inertia_history;  // winning run, one entry per assignment step
};

namespace detail {

inline double sq_dist(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

inline Matrix kmeans_plus_plus(const Matrix& x, std::size_t k, Rng& rng) {
  const Eigen::Index n = x.rows();
  Matrix centers(static_cast<Eigen::Index>(k), x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n))));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = sq_dist(x, i, centers, 0);
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : d2) total += d;
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double u = uniform01(rng) * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        u -= d2[static_cast<std::size_t>(i)];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
      while (d2[static_cast<std::size_t>(pick)] == 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(n)));
    }
    centers.row(static_cast<Eigen::Index>(c)) = x.row(pick);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], sq_dist(x, i, centers, static_cast<Eigen::Index>(c)));
  }
  return centers;
}

// Nearest-centroid assignment, ties to the lower centroid index. Returns
// inertia; `dist` receives each row's squared distance.
inline double assign(const Matrix& x, const Matrix& centers, std::vector<int>& labels,
                     std::vector<double>& dist) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      const double d = sq_dist(x, i, centers, c);
      if (d < bd) {
        bd = d;
        best = static_cast<int>(c);
      }
    }
    labels[static_cast<std::size_t>(i)] = best;
    dist[static_cast<std::size_t>(i)] = bd;
    inertia += bd;
  }
  return inertia;
}

// Moves the point farthest from its centroid into each empty cluster.
inline void repair_empty(std::vector<int>& labels, std::vector<double>& dist, std::size_t k) {
  std::vector<std::size_t> sizes(k, 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] != 0) continue;
    std::size_t far = labels.size();
    double fd = -1.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (sizes[static_cast<std::size_t>(labels[i])] > 1 && dist[i] > fd) {
        fd = dist[i];
        far = i;
      }
    }
    if (far == labels.size()) return;
    --sizes[static_cast<std::size_t>(labels[far])];
    labels[far] = static_cast<int>(c);
    dist[far] = 0.0;
    sizes[c] = 1;
  }
}

inline Matrix centroids_of(const Matrix& x, const std::vector<int>& labels, const Matrix& previous) {
  Matrix sums = Matrix::Zero(previous.rows(), previous.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(previous.rows()), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    sums.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
    ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (Eigen::Index c = 0; c < sums.rows(); ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      sums.row(c) = previous.row(c);
    else
      sums.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }
  return sums;
}

inline double inertia_of(const Matrix& x, const std::vector<int>& labels, const Matrix& centers) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += sq_dist(x, i, centers, labels[static_cast<std::size_t>(i)]);
  return s;
}

inline ClusterAssignment lloyd_run(const Matrix& x, const KmeansConfig& cfg, Rng& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  ClusterAssignment run;
  run.labels.assign(n, 0);
  std::vector<double> dist(n, 0.0);
  Matrix centers = kmeans_plus_plus(x, cfg.k, rng);
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    assign(x, centers, run.labels, dist);
    repair_empty(run.labels, dist, cfg.k);
    Matrix next = centroids_of(x, run.labels, centers);
    run.inertia_history.push_back(inertia_of(x, run.labels, centers));
    const double shift = (next - centers).rowwise().norm().maxCoeff();
    centers = std::move(next);
    run.iterations_run = it + 1;
    if (shift < cfg.tol) break;
  }
  // Final labels are consistent with the returned centroids.
  assign(x, centers, run.labels, dist);
  repair_empty(run.labels, dist, cfg.k);
  run.centroids = centroids_of(x, run.labels, centers);
  run.inertia = inertia_of(x, run.labels, run.centroids);
  run.inertia_history.push_back(run.inertia);
  return run;
}

}  // namespace detail

// Best of n_init k-means++ seeded Lloyd runs, by inertia. Run r draws from
// an independent stream derived from (seed, r).
inline ClusterAssignment kmeans_fit(const Matrix& x, const KmeansConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) < cfg.k)
    fail(ErrorCode::TooFewRows, "k-means needs at least k=" + std::to_string(cfg.k) + " rows, got " +
                                    std::to_string(x.rows()));
  std::optional<ClusterAssignment> best;
  for (std::size_t r = 0; r < cfg.n_init; ++r) {
    Rng rng = make_rng(cfg.seed, r);
    ClusterAssignment run = detail::lloyd_run(x, cfg, rng);
    if (!best || run.inertia < best->inertia) best = std::move(run);
  }
  return std::move(*best);
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition by cyclic Jacobi rotations.

struct EigenDecomposition {
  Vector values;   // ascending
  Matrix vectors;  // column i pairs with values(i)
};

inline EigenDecomposition jacobi_eigen(Matrix a, std::size_t max_sweeps = 100) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) fail(ErrorCode::ShapeError, "eigendecomposition needs a square matrix");
  Matrix v = Matrix::Identity(n, n);
  const double scale = std::max(a.norm(), std::numeric_limits<double>::min());
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index q = 1; q < n; ++q)
      for (Eigen::Index p = 0; p < q; ++p) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= 1e-14 * scale) break;

    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double app = a(p, p), aqq = a(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        double* colp = a.col(p).data();
        double* colq = a.col(q).data();
        for (Eigen::Index k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const double akp = colp[k], akq = colq[k];
          colp[k] = c * akp - s * akq;
          colq[k] = s * akp + c * akq;
          a(p, k) = colp[k];
          a(q, k) = colq[k];
        }
        a(p, p) = app - t * apq;
        a(q, q) = aqq + t * apq;
        a(p, q) = a(q, p) = 0.0;
        double* vp = v.col(p).data();
        double* vq = v.col(q).data();
        for (Eigen::Index k = 0; k < n; ++k) {
          const double x = vp[k], y = vq[k];
          vp[k] = c * x - s * y;
          vq[k] = s * x + c * y;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return a(i, i) < a(j, j); });
  EigenDecomposition out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral clustering

struct RbfAffinity {
  std::optional<double> gamma;  // unset: 1 / (2 median^2) of pairwise distances
};

struct KnnAffinity {
  std::size_t n_neighbors = 10;
  bool mutual = false;
};

struct SpectralConfig {
  std::size_t k = 2;
  std::variant<RbfAffinity, KnnAffinity> affinity = KnnAffinity{};
  std::uint64_t seed = 0;
  std::size_t n_init = 10;

  void validate() const {
    if (k < 1) fail(ErrorCode::BadConfig, "k must be >= 1");
    if (const auto* knn = std::get_if<KnnAffinity>(&affinity); knn && knn->n_neighbors < 1)
      fail(ErrorCode::BadConfig, "n_neighbors must be >= 1");
    if (const auto* rbf = std::get_if<RbfAffinity>(&affinity); rbf && rbf->gamma && !(*rbf->gamma > 0.0))
      fail(ErrorCode::BadConfig, "gamma must be > 0");
  }
};

inline Matrix pairwise_sq_distances(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (x.row(i) - x.row(j)).squaredNorm();
  }
  return d;
}

inline double median_heuristic_gamma(const Matrix& d2) {
  std::vector<double> dist;
  for (Eigen::Index i = 0; i < d2.rows(); ++i)
    for (Eigen::Index j = i + 1; j < d2.cols(); ++j) dist.push_back(std::sqrt(d2(i, j)));
  if (dist.empty()) return 1.0;
  auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
  std::nth_element(dist.begin(), mid, dist.end());
  double med = *mid;
  if (dist.size() % 2 == 0) {
    med = (med + *std::max_element(dist.begin(), mid)) / 2.0;
  }
  return med > 0.0 ? 1.0 / (2.0 * med * med) : 1.0;
}

inline Matrix affinity_matrix(const Matrix& x, const SpectralConfig& cfg) {
  const Eigen::Index n = x.rows();
  const Matrix d2 = pairwise_sq_distances(x);
  Matrix w = Matrix::Zero(n, n);
  if (const auto* rbf = std::get_if<RbfAffinity>(&cfg.affinity)) {
    const double gamma = rbf->gamma ? *rbf->gamma : median_heuristic_gamma(d2);
    w = (-gamma * d2.array()).exp().matrix();
    w.diagonal().setZero();
    return w;
  }
  const auto& knn = std::get<KnnAffinity>(cfg.affinity);
  const auto kn = std::min<std::size_t>(knn.n_neighbors, static_cast<std::size_t>(n - 1));
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> chosen =
      Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    idx.clear();
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(kn), idx.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        return d2(i, a) < d2(i, b) || (d2(i, a) == d2(i, b) && a < b);
                      });
    for (std::size_t t = 0; t < kn; ++t) chosen(i, idx[t]) = true;
  }
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const bool edge = knn.mutual ? (chosen(i, j) && chosen(j, i)) : (chosen(i, j) || chosen(j, i));
      w(i, j) = edge ? 1.0 : 0.0;
    }
  return w;
}

// L = I - D^{-1/2} W D^{-1/2}; isolated vertices get D^{-1/2} = 0.
inline Matrix normalized_laplacian(const Matrix& w) {
  const Eigen::Index n = w.rows();
  Vector inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double deg = w.row(i).sum();
    inv_sqrt(i) = deg > 0.0 ? 1.0 / std::sqrt(deg) : 0.0;
  }
  Matrix l = -(inv_sqrt.asDiagonal() * w * inv_sqrt.asDiagonal());
  l.diagonal().array() += 1.0;
  return l;
}

// Rows of the k smallest-eigenvalue eigenvectors, normalized to unit length
// (zero rows stay zero).
inline Matrix spectral_embedding(const Matrix& x, const SpectralConfig& cfg) {
  const Matrix l = normalized_laplacian(affinity_matrix(x, cfg));
  const EigenDecomposition eig = jacobi_eigen(l);
  Matrix u = eig.vectors.leftCols(static_cast<Eigen::Index>(cfg.k));
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    const double norm = u.row(i).norm();
    if (norm > 0.0) u.row(i) /= norm;
  }
  return u;
}

inline ClusterAssignment spectral_fit(const Matrix& x, const SpectralConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(x.rows()) < cfg.k)
    fail(ErrorCode::TooFewRows, "spectral clustering needs at least k rows");
  if (cfg.k == 1) {
    ClusterAssignment a;
    a.labels.assign(static_cast<std::size_t>(x.rows()), 0);
    return a;
  }
  KmeansConfig km;
  km.k = cfg.k;
  km.n_init = cfg.n_init;
  km.seed = cfg.seed;
  return kmeans_fit(spectral_embedding(x, cfg), km);
}

}  // namespace tabncd
