#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <vector>

#include "tabncd/clustering.hpp"
#include "tabncd/dataset.hpp"
#include "tabncd/error.hpp"
#include "tabncd/nn.hpp"
#include "tabncd/progress.hpp"
#include "tabncd/random.hpp"

namespace tabncd {

inline const std::string kClassifierHead = "classifier";
inline const std::string kClusterHead = "cluster";
inline const std::string kMaskHead = "mask_estimator";
inline const std::string kReconstructionHead = "reconstruction";

inline ArchitectureSpec default_architecture() {
  return ArchitectureSpec{1, {{64, Activation::ReLU, 0.0}, {32, Activation::ReLU, 0.0}}};
}

struct BaselineNcdConfig {
  ArchitectureSpec arch = default_architecture();
  TrainConfig train;
  std::size_t k = 2;
};

struct SslConfig {
  double corruption_rate = 0.3;
  std::size_t epochs = 15;
  double recon_weight = 1.0;
};

struct JointConfig {
  std::size_t epochs = 30;
  double top_k_fraction = 0.1;
  double consistency_weight = 1.0;
  double pseudo_weight = 1.0;
};

struct TabularNcdConfig {
  ArchitectureSpec arch = default_architecture();
  SslConfig ssl;
  JointConfig joint;
  TrainConfig train;
  std::size_t k = 2;

  void validate() const {
    train.validate();
    if (k < 1) fail(ErrorCode::BadConfig, "k must be >= 1");
    if (!(ssl.corruption_rate > 0.0 && ssl.corruption_rate < 1.0))
      fail(ErrorCode::BadConfig, "corruption rate must lie in (0, 1)");
    if (!(ssl.recon_weight >= 0.0)) fail(ErrorCode::BadConfig, "reconstruction weight must be >= 0");
    if (!(joint.top_k_fraction > 0.0 && joint.top_k_fraction < 1.0))
      fail(ErrorCode::BadConfig, "top_k_fraction must lie strictly between 0 and 1");
    if (!(joint.consistency_weight >= 0.0) || !(joint.pseudo_weight >= 0.0))
      fail(ErrorCode::BadConfig, "loss weights must be >= 0");
  }
};

struct NcdResult {
  std::vector<int> unknown_labels;
  std::vector<int> known_predictions;
  Matrix latent_known;
  Matrix latent_unknown;
  std::shared_ptr<const Mlp> model;  // empty for pure clustering runs
  std::vector<double> history;       // supervised / joint loss per epoch
  std::vector<double> ssl_history;   // pretraining loss per epoch
  std::size_t k = 0;
};

inline std::string cluster_name(int label) { return "cluster_" + std::to_string(label); }

inline std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    m.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

namespace detail {

inline void check_view(const DataView& view, std::size_t k) {
  if (view.n_known() < 2) fail(ErrorCode::TooFewRows, "need at least 2 known rows");
  if (view.n_unknown() < k)
    fail(ErrorCode::TooFewRows, "need at least k=" + std::to_string(k) + " unknown rows");
}

}  // namespace detail

inline NcdResult run_baseline(const DataView& view, BaselineNcdConfig cfg, ProgressSink& sink) {
  cfg.train.validate();
  if (cfg.k < 1) fail(ErrorCode::BadConfig, "k must be >= 1");
  detail::check_view(view, cfg.k);
  cfg.arch.input_dim = view.n_features();

  const std::size_t classes = view.n_classes();
  auto mlp = std::make_shared<Mlp>(init_mlp(cfg.arch, {{kClassifierHead, classes, Activation::None}},
                                            derive_seed(cfg.train.seed, 1)));
  Rng rng = make_rng(cfg.train.seed, 2);
  Optimizer opt(cfg.train.optimizer, cfg.train.learning_rate);
  const Loss loss = Loss::single(kClassifierHead, LossKind::CrossEntropy);
  const std::map<std::string, Matrix> targets{{kClassifierHead, one_hot(view.y_known, classes)}};

  ProgressReporter progress(sink);
  progress.update(0.0);
  NcdResult result;
  result.k = cfg.k;
  const double total = static_cast<double>(cfg.train.epochs + 1);
  for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
    auto batches = make_batches(view.x_known, targets, cfg.train.batch_size, rng);
    result.history.push_back(train_epoch(*mlp, batches, loss, opt, rng));
    progress.update(static_cast<double>(e + 1) / total);
  }

  result.latent_known = embed(*mlp, view.x_known);
  result.latent_unknown = embed(*mlp, view.x_unknown);
  result.known_predictions = argmax_rows(forward(*mlp, view.x_known, kClassifierHead, Mode::Eval).first);
  KmeansConfig km;
  km.k = cfg.k;
  km.seed = derive_seed(cfg.train.seed, 3);
  result.unknown_labels = kmeans_fit(result.latent_unknown, km).labels;
  result.model = std::move(mlp);
  progress.update(1.0);
  return result;
}

struct Corruption {
  Matrix x;
  Matrix mask;
};

// Swap noise: each entry is masked with probability p_m and, when masked,
// replaced by the same column's value from a uniformly drawn row.
inline Corruption vime_corrupt(const Matrix& x, double p_m, Rng& rng) {
  if (!(p_m > 0.0 && p_m < 1.0)) fail(ErrorCode::BadConfig, "corruption rate must lie in (0, 1)");
  Corruption c{x, Matrix::Zero(x.rows(), x.cols())};
  const auto n = static_cast<std::size_t>(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (uniform01(rng) < p_m) {
        c.mask(i, j) = 1.0;
        c.x(i, j) = x(static_cast<Eigen::Index>(uniform_index(rng, n)), j);
      }
  return c;
}

// Self-supervised pretraining of the trunk with a mask estimator (BCE) and
// a feature reconstructor (MSE, weighted by recon_weight). Both heads are
// temporary. Reports per-epoch progress through `on_epoch`.
template <typename OnEpoch>
std::vector<double> ssl_pretrain(Mlp& encoder, const Matrix& x_all, const SslConfig& ssl,
                                 const TrainConfig& train, Rng& rng, OnEpoch&& on_epoch) {
  const auto d = static_cast<std::size_t>(x_all.cols());
  encoder.add_head({kMaskHead, d, Activation::Sigmoid}, rng);
  encoder.add_head({kReconstructionHead, d, Activation::None}, rng);
  Loss loss{{{kMaskHead, LossKind::Bce, 1.0}, {kReconstructionHead, LossKind::Mse, ssl.recon_weight}}};
  Optimizer opt(train.optimizer, train.learning_rate);
  std::vector<double> losses;
  for (std::size_t e = 0; e < ssl.epochs; ++e) {
    Corruption c = vime_corrupt(x_all, ssl.corruption_rate, rng);
    auto batches = make_batches(c.x, {{kMaskHead, c.mask}, {kReconstructionHead, x_all}}, train.batch_size, rng);
    losses.push_back(train_epoch(encoder, batches, loss, opt, rng));
    on_epoch(e);
  }
  encoder.remove_head(kMaskHead);
  encoder.remove_head(kReconstructionHead);
  return losses;
}

inline std::vector<double> ssl_pretrain(Mlp& encoder, const Matrix& x_all, const SslConfig& ssl,
                                        const TrainConfig& train, Rng& rng) {
  return ssl_pretrain(encoder, x_all, ssl, train, rng, [](std::size_t) {});
}

struct PairLabel {
  std::size_t i = 0;
  std::size_t j = 0;
  int y = 0;
};

inline double cosine_similarity(const Matrix& z, Eigen::Index i, Eigen::Index j) {
  const double ni = z.row(i).norm(), nj = z.row(j).norm();
  if (ni == 0.0 || nj == 0.0) return 0.0;
  return z.row(i).dot(z.row(j)) / (ni * nj);
}

// Number of positive pairs: ceil(fraction * pairs), at least one.
inline std::size_t positive_pair_count(double fraction, std::size_t pairs) {
  if (pairs == 0) return 0;
  const double prod = fraction * static_cast<double>(pairs);
  auto m = static_cast<std::size_t>(std::ceil(prod - 1e-9 * std::max(1.0, prod)));
  return std::clamp<std::size_t>(m, 1, pairs);
}

// All unordered pairs (i < j, lexicographic order). The most cosine-similar
// ceil(fraction * #pairs) pairs are positive; ties go to the lower pair index.
inline std::vector<PairLabel> pseudo_labels(const Matrix& z, double top_k_fraction) {
  const auto n = static_cast<std::size_t>(z.rows());
  std::vector<PairLabel> pairs;
  std::vector<double> sim;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      pairs.push_back({i, j, 0});
      sim.push_back(cosine_similarity(z, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  const std::size_t positives = positive_pair_count(top_k_fraction, pairs.size());
  for (std::size_t t = 0; t < positives; ++t) pairs[order[t]].y = 1;
  return pairs;
}

// Mean BCE between pair targets and the pair score p_i . p_j. Returns the
// loss and dL/dp.
inline LossValue pairwise_bce(const Matrix& probs, const std::vector<PairLabel>& pairs) {
  LossValue r;
  r.grad = Matrix::Zero(probs.rows(), probs.cols());
  if (pairs.empty()) return r;
  const auto count = static_cast<double>(pairs.size());
  for (const auto& pl : pairs) {
    const auto i = static_cast<Eigen::Index>(pl.i), j = static_cast<Eigen::Index>(pl.j);
    const double s = std::clamp(probs.row(i).dot(probs.row(j)), kProbClamp, 1.0 - kProbClamp);
    const double y = pl.y;
    r.value += -(y * std::log(s) + (1.0 - y) * std::log(1.0 - s));
    const double ds = (s - y) / (s * (1.0 - s)) / count;
    r.grad.row(i) += ds * probs.row(j);
    r.grad.row(j) += ds * probs.row(i);
  }
  r.value /= count;
  return r;
}

namespace detail {

// Splits shuffled known and unknown indices into `batches` slices each so
// every batch mixes both in their global proportion.
inline std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> mixed_batches(
    std::size_t n_known, std::size_t n_unknown, std::size_t batch_size, Rng& rng) {
  const auto known = shuffled_indices(n_known, rng);
  const auto unknown = shuffled_indices(n_unknown, rng);
  const std::size_t count = std::max<std::size_t>(1, (n_known + n_unknown + batch_size - 1) / batch_size);
  std::vector<std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> out(count);
  for (std::size_t b = 0; b < count; ++b) {
    auto slice = [&](const std::vector<std::size_t>& v) {
      const std::size_t lo = b * v.size() / count, hi = (b + 1) * v.size() / count;
      return std::vector<std::size_t>(v.begin() + static_cast<std::ptrdiff_t>(lo),
                                      v.begin() + static_cast<std::ptrdiff_t>(hi));
    };
    out[b] = {slice(known), slice(unknown)};
  }
  return out;
}

inline std::vector<int> take(const std::vector<int>& v, const std::vector<std::size_t>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

}  // namespace detail

struct JointStep {
  double loss = 0.0;
  Gradients grads;
};

// Loss and gradients of one joint-phase batch: cross-entropy on known rows,
// pairwise pseudo-label BCE on unknown rows, and a consistency MSE between
// head probabilities on the batch and on its swap-noise view.
inline JointStep joint_step(const Mlp& mlp, const Matrix& xk, const std::vector<int>& yk, const Matrix& xu,
                            const TabularNcdConfig& cfg, Rng& rng) {
  const Eigen::Index nk = xk.rows(), nu = xu.rows();
  Matrix x(nk + nu, xk.cols());
  x << xk, xu;
  const std::vector<std::string> heads{kClassifierHead, kClusterHead};
  const ForwardPass clean = forward_pass(mlp, x, heads, &rng);

  JointStep step;
  std::map<std::string, Matrix> g_clean;
  for (const auto& h : heads) g_clean[h] = Matrix::Zero(x.rows(), clean.head_outputs.at(h).cols());

  if (nk > 0) {
    LossValue ce = cross_entropy(clean.head_outputs.at(kClassifierHead).topRows(nk),
                                 one_hot(yk, mlp.head(kClassifierHead).fan_out()));
    step.loss += ce.value;
    g_clean[kClassifierHead].topRows(nk) += ce.grad;
  }

  if (nu >= 2 && cfg.joint.pseudo_weight > 0.0) {
    const Matrix logits = clean.head_outputs.at(kClusterHead).bottomRows(nu);
    const Matrix probs = softmax_rows(logits);
    const auto labels = pseudo_labels(clean.embedding.bottomRows(nu), cfg.joint.top_k_fraction);
    LossValue pair = pairwise_bce(probs, labels);
    step.loss += cfg.joint.pseudo_weight * pair.value;
    g_clean[kClusterHead].bottomRows(nu) += cfg.joint.pseudo_weight * softmax_backward(probs, pair.grad);
  }

  if (cfg.joint.consistency_weight > 0.0) {
    const Corruption view = vime_corrupt(x, cfg.ssl.corruption_rate, rng);
    const ForwardPass noisy = forward_pass(mlp, view.x, heads, &rng);
    std::map<std::string, Matrix> g_noisy;
    for (const auto& h : heads) {
      const Matrix p1 = softmax_rows(clean.head_outputs.at(h));
      const Matrix p2 = softmax_rows(noisy.head_outputs.at(h));
      LossValue c = mse(p1, p2);
      step.loss += cfg.joint.consistency_weight * c.value;
      const Matrix dp = cfg.joint.consistency_weight * c.grad;
      g_clean[h] += softmax_backward(p1, dp);
      g_noisy[h] = softmax_backward(p2, -dp);
    }
    step.grads = backward(mlp, noisy, g_noisy);
  }
  step.grads.add(backward(mlp, clean, g_clean));
  return step;
}

inline NcdResult run_tabular_ncd(const DataView& view, TabularNcdConfig cfg, ProgressSink& sink) {
  cfg.validate();
  detail::check_view(view, cfg.k);
  cfg.arch.input_dim = view.n_features();

  const std::size_t classes = view.n_classes();
  auto mlp = std::make_shared<Mlp>(init_mlp(
      cfg.arch, {{kClassifierHead, classes, Activation::None}, {kClusterHead, cfg.k, Activation::None}},
      derive_seed(cfg.train.seed, 1)));
  Rng rng = make_rng(cfg.train.seed, 2);

  ProgressReporter progress(sink);
  progress.update(0.0);
  const double total = static_cast<double>(cfg.ssl.epochs + cfg.joint.epochs + 1);

  NcdResult result;
  result.k = cfg.k;
  result.ssl_history = ssl_pretrain(*mlp, view.x_all(), cfg.ssl, cfg.train, rng, [&](std::size_t e) {
    progress.update(static_cast<double>(e + 1) / total);
  });

  Optimizer opt(cfg.train.optimizer, cfg.train.learning_rate);
  for (std::size_t e = 0; e < cfg.joint.epochs; ++e) {
    const auto batches = detail::mixed_batches(view.n_known(), view.n_unknown(), cfg.train.batch_size, rng);
    double sum = 0.0;
    for (const auto& [ki, ui] : batches) {
      JointStep s = joint_step(*mlp, select_rows(view.x_known, ki), detail::take(view.y_known, ki),
                               select_rows(view.x_unknown, ui), cfg, rng);
      check_finite(s.loss);
      opt.step(*mlp, s.grads);
      sum += s.loss;
    }
    result.history.push_back(sum / static_cast<double>(batches.size()));
    progress.update(static_cast<double>(cfg.ssl.epochs + e + 1) / total);
  }

  result.latent_known = embed(*mlp, view.x_known);
  result.latent_unknown = embed(*mlp, view.x_unknown);
  result.known_predictions = argmax_rows(forward(*mlp, view.x_known, kClassifierHead, Mode::Eval).first);
  result.unknown_labels = argmax_rows(forward(*mlp, view.x_unknown, kClusterHead, Mode::Eval).first);
  result.model = std::move(mlp);
  progress.update(1.0);
  return result;
}

}  // namespace tabncd
