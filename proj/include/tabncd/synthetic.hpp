#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tabncd/dataset.hpp"
#include "tabncd/nn.hpp"
#include "tabncd/random.hpp"

// Small generated datasets for demos and tests.
namespace tabncd::synthetic {

struct LabeledPoints {
  Matrix x;
  std::vector<int> labels;
};

// Four isotropic Gaussian classes A..D in three features: class means sit
// on a square of side `separation` in (f0, f1); f2 is pure noise.
inline LabeledPoints four_gaussians(std::size_t per_class, double separation, std::uint64_t seed,
                                    double sigma = 1.0) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  const double means[4][2] = {{0, 0}, {separation, 0}, {0, separation}, {separation, separation}};
  LabeledPoints out;
  out.x.resize(static_cast<Eigen::Index>(4 * per_class), 3);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto r = static_cast<Eigen::Index>(c * per_class + i);
      out.x(r, 0) = means[c][0] + noise(rng);
      out.x(r, 1) = means[c][1] + noise(rng);
      out.x(r, 2) = noise(rng);
      out.labels.push_back(static_cast<int>(c));
    }
  return out;
}

inline std::string class_letter(int c) { return std::string(1, static_cast<char>('A' + c)); }

// CSV with header f0,f1,f2,class and classes A..D.
inline std::string four_gaussians_csv(std::size_t per_class = 200, double separation = 10.0,
                                      std::uint64_t seed = 7) {
  const auto pts = four_gaussians(per_class, separation, seed);
  std::string csv = "f0,f1,f2,class\n";
  for (Eigen::Index i = 0; i < pts.x.rows(); ++i) {
    for (Eigen::Index j = 0; j < 3; ++j) csv += detail::format_real(pts.x(i, j)) + ",";
    csv += class_letter(pts.labels[static_cast<std::size_t>(i)]) + "\n";
  }
  return csv;
}

// Two concentric rings of the given radii, evenly spaced in angle (as in
// the usual make_circles construction), with Gaussian noise on both axes.
inline LabeledPoints rings(std::size_t per_ring, double r_inner, double r_outer, double noise_sigma,
                           std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma);
  LabeledPoints out;
  out.x.resize(static_cast<Eigen::Index>(2 * per_ring), 2);
  const double radii[2] = {r_inner, r_outer};
  for (std::size_t ring = 0; ring < 2; ++ring)
    for (std::size_t i = 0; i < per_ring; ++i) {
      const double angle = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(per_ring);
      const auto r = static_cast<Eigen::Index>(ring * per_ring + i);
      out.x(r, 0) = radii[ring] * std::cos(angle) + noise(rng);
      out.x(r, 1) = radii[ring] * std::sin(angle) + noise(rng);
      out.labels.push_back(static_cast<int>(ring));
    }
  return out;
}

}  // namespace tabncd::synthetic
