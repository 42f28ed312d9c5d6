#pragma once

#include <functional>
#include <string>

#include "tabncd/dataset.hpp"
#include "tabncd/error.hpp"
#include "tabncd/progress.hpp"
#include "tabncd/nn.hpp"
#include "tabncd/random.hpp"
#include "tabncd/synthetic.hpp"

namespace tabncd::test_support {

// Runs `f` and returns the code of the tabncd::Error it throws; throws
// std::logic_error when nothing is thrown.
inline ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::logic_error("expected a tabncd::Error");
}

struct GradCheck {
  std::size_t total = 0;
  std::size_t passed = 0;
  double worst = 0.0;
  double pass_rate() const { return total ? static_cast<double>(passed) / static_cast<double>(total) : 1.0; }
};

// Central finite differences over every parameter against backward().
// Dropout masks are frozen by replaying the same generator state.
inline GradCheck check_gradients(const Mlp& mlp, const Loss& loss, const Batch& batch, std::uint64_t mask_seed,
                                 double h = 1e-5, double tol = 1e-4) {
  const Rng base = make_rng(mask_seed);
  const auto heads = loss.heads();
  auto loss_at = [&](const Mlp& m) {
    Rng r = base;
    return evaluate_loss(forward_pass(m, batch.x, heads, &r), loss, batch).value;
  };
  Rng r = base;
  const ForwardPass pass = forward_pass(mlp, batch.x, heads, &r);
  const Gradients g = backward(mlp, pass, evaluate_loss(pass, loss, batch).output_grads);

  GradCheck out;
  Mlp probe = mlp;
  auto visit = [&](auto& param, const auto& analytic) {
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const double keep = param.data()[i];
      param.data()[i] = keep + h;
      const double up = loss_at(probe);
      param.data()[i] = keep - h;
      const double down = loss_at(probe);
      param.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = scale < 1e-7 ? 0.0 : std::abs(a - numeric) / scale;
      ++out.total;
      out.passed += rel < tol;
      out.worst = std::max(out.worst, rel);
    }
  };
  for (std::size_t l = 0; l < probe.trunk.size(); ++l) {
    visit(probe.trunk[l].weight, g.trunk[l].weight);
    visit(probe.trunk[l].bias, g.trunk[l].bias);
  }
  for (auto& [name, layer] : probe.heads) {
    auto it = g.heads.find(name);
    if (it == g.heads.end()) continue;
    visit(layer.weight, it->second.weight);
    visit(layer.bias, it->second.bias);
  }
  return out;
}

struct GradCase {
  Mlp mlp;
  Loss loss;
  Batch batch;
  std::string description;
};

// A random network of at most 3 hidden layers x 8 units with one of the
// losses (CE, MSE, BCE on a sigmoid head, or a CE+MSE composite).
inline GradCase random_grad_case(std::uint64_t seed) {
  Rng rng = make_rng(seed, 99);
  const Activation acts[] = {Activation::ReLU, Activation::Sigmoid, Activation::Tanh, Activation::None};
  ArchitectureSpec spec;
  spec.input_dim = 1 + uniform_index(rng, 5);
  const std::size_t layers = 1 + uniform_index(rng, 3);
  GradCase c;
  for (std::size_t l = 0; l < layers; ++l) {
    LayerSpec ls{1 + uniform_index(rng, 8), acts[uniform_index(rng, 4)], uniform01(rng) < 0.3 ? 0.25 : 0.0};
    spec.hidden.push_back(ls);
    c.description += std::to_string(ls.width) + std::string(to_string(ls.activation)) + " ";
  }
  const std::size_t n = 2 + uniform_index(rng, 6);
  const std::size_t classes = 2 + uniform_index(rng, 3);
  const int kind = static_cast<int>(uniform_index(rng, 4));
  std::vector<HeadSpec> heads;
  Batch b;
  b.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.input_dim));
  for (Eigen::Index i = 0; i < b.x.size(); ++i) b.x.data()[i] = uniform(rng, -2, 2);
  std::vector<int> labels(n);
  for (auto& y : labels) y = static_cast<int>(uniform_index(rng, classes));
  Matrix reg(static_cast<Eigen::Index>(n), 2);
  for (Eigen::Index i = 0; i < reg.size(); ++i) reg.data()[i] = uniform(rng, -1, 1);
  Matrix bin(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < bin.size(); ++i) bin.data()[i] = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  switch (kind) {
    case 0:
      heads = {{"cls", classes, Activation::None}};
      b.targets["cls"] = one_hot(labels, classes);
      c.loss = Loss::single("cls", LossKind::CrossEntropy);
      c.description += "CE";
      break;
    case 1:
      heads = {{"reg", 2, Activation::None}};
      b.targets["reg"] = reg;
      c.loss = Loss::single("reg", LossKind::Mse);
      c.description += "MSE";
      break;
    case 2:
      heads = {{"bin", 3, Activation::Sigmoid}};
      b.targets["bin"] = bin;
      c.loss = Loss::single("bin", LossKind::Bce);
      c.description += "BCE";
      break;
    default:
      heads = {{"cls", classes, Activation::None}, {"reg", 2, Activation::Tanh}};
      b.targets["cls"] = one_hot(labels, classes);
      b.targets["reg"] = reg;
      c.loss = Loss{{{"cls", LossKind::CrossEntropy, 1.0}, {"reg", LossKind::Mse, 0.7}}};
      c.description += "CE+MSE";
      break;
  }
  c.mlp = init_mlp(spec, heads, seed);
  // Zero biases put stacked ReLUs exactly on their kink whenever the layer
  // below is dead; random biases keep the check at a differentiable point.
  auto jitter = [&](Vector& bias) {
    for (Eigen::Index i = 0; i < bias.size(); ++i) bias(i) = uniform(rng, -0.5, 0.5);
  };
  for (auto& layer : c.mlp.trunk) jitter(layer.bias);
  for (auto& [name, layer] : c.mlp.heads) jitter(layer.bias);
  c.batch = std::move(b);
  return c;
}

// Four-Gaussian fixture with A, B known and C, D unknown.
inline SelectionState gaussian_selection(const std::string& dataset_id = "fixture") {
  return {dataset_id,
          {"f0", "f1", "f2"},
          "class",
          {{"A", ClassStatus::Known}, {"B", ClassStatus::Known}, {"C", ClassStatus::Unknown}, {"D", ClassStatus::Unknown}}};
}

inline Dataset gaussian_dataset(std::size_t per_class = 200, std::uint64_t seed = 7) {
  return load_csv(synthetic::four_gaussians_csv(per_class, 10.0, seed), true, "fixture");
}

inline DataView gaussian_view(std::size_t per_class = 200, std::uint64_t seed = 7) {
  return materialize_view(gaussian_dataset(per_class, seed), gaussian_selection());
}

// Unknown-row truth as dense integers (C -> 0, D -> 1, ...).
inline std::vector<int> unknown_truth_codes(const DataView& v) {
  std::vector<int> out;
  for (const auto& s : v.unknown_truth) out.push_back(s[0] - 'C');
  return out;
}

class RecordingSink final : public ProgressSink {
 public:
  void report(double fraction, std::optional<double> eta) override {
    fractions.push_back(fraction);
    etas.push_back(eta);
  }
  std::vector<double> fractions;
  std::vector<std::optional<double>> etas;
};

}  // namespace tabncd::test_support
