#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tabncd/dataset.hpp"
#include "tabncd/error.hpp"
#include "tabncd/random.hpp"

namespace tabncd {

enum class Activation { ReLU, Sigmoid, Tanh, None };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
    case Activation::None: return "none";
  }
  return "none";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  if (s == "none" || s == "linear") return Activation::None;
  fail(ErrorCode::BadConfig, "unknown activation '" + std::string(s) + "'");
}

struct LayerSpec {
  std::size_t width = 1;
  Activation activation = Activation::ReLU;
  double dropout_rate = 0.0;
};

struct ArchitectureSpec {
  std::size_t input_dim = 1;
  std::vector<LayerSpec> hidden;

  void validate() const {
    if (input_dim < 1) fail(ErrorCode::BadConfig, "input_dim must be >= 1");
    for (const auto& l : hidden) {
      if (l.width < 1) fail(ErrorCode::BadConfig, "layer width must be >= 1");
      if (!(l.dropout_rate >= 0.0 && l.dropout_rate < 1.0))
        fail(ErrorCode::BadConfig, "dropout rate must lie in [0, 1)");
    }
  }

  std::size_t embedding_dim() const { return hidden.empty() ? input_dim : hidden.back().width; }
};

struct HeadSpec {
  std::string name;
  std::size_t width = 1;
  Activation activation = Activation::None;
};

// y = act(x W^T + b); `weight` is out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;
  Activation activation = Activation::None;
  double dropout_rate = 0.0;

  std::size_t fan_in() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t fan_out() const { return static_cast<std::size_t>(weight.rows()); }
};

class Mlp {
 public:
  ArchitectureSpec spec;
  std::vector<DenseLayer> trunk;
  std::map<std::string, DenseLayer> heads;

  std::size_t embedding_dim() const { return spec.embedding_dim(); }

  const DenseLayer& head(const std::string& name) const {
    auto it = heads.find(name);
    if (it == heads.end()) fail(ErrorCode::UnknownHead, "no head named '" + name + "'");
    return it->second;
  }

  void add_head(const HeadSpec& h, Rng& rng);
  void remove_head(const std::string& name) { heads.erase(name); }
};

inline DenseLayer glorot_layer(std::size_t fan_in, std::size_t fan_out, Activation act,
                               double dropout, Rng& rng) {
  if (fan_out < 1) fail(ErrorCode::BadConfig, "layer width must be >= 1");
  DenseLayer l;
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  l.weight.resize(static_cast<Eigen::Index>(fan_out), static_cast<Eigen::Index>(fan_in));
  for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = uniform(rng, -limit, limit);
  l.bias = Vector::Zero(static_cast<Eigen::Index>(fan_out));
  l.activation = act;
  l.dropout_rate = dropout;
  return l;
}

inline void Mlp::add_head(const HeadSpec& h, Rng& rng) {
  heads[h.name] = glorot_layer(embedding_dim(), h.width, h.activation, 0.0, rng);
}

inline Mlp init_mlp(const ArchitectureSpec& spec, const std::vector<HeadSpec>& heads,
                    std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed);
  Mlp m;
  m.spec = spec;
  std::size_t prev = spec.input_dim;
  for (const auto& l : spec.hidden) {
    m.trunk.push_back(glorot_layer(prev, l.width, l.activation, l.dropout_rate, rng));
    prev = l.width;
  }
  for (const auto& h : heads) m.add_head(h, rng);
  return m;
}

namespace detail {

inline void activate(Matrix& z, Activation a) {
  switch (a) {
    case Activation::ReLU: z = z.cwiseMax(0.0); break;
    case Activation::Sigmoid: z = (1.0 + (-z.array()).exp()).inverse().matrix(); break;
    case Activation::Tanh: z = z.array().tanh().matrix(); break;
    case Activation::None: break;
  }
}

// d act / d z expressed through the activation output.
inline Matrix activation_grad(const Matrix& out, Activation a) {
  switch (a) {
    case Activation::ReLU: return (out.array() > 0.0).cast<double>().matrix();
    case Activation::Sigmoid: return (out.array() * (1.0 - out.array())).matrix();
    case Activation::Tanh: return (1.0 - out.array().square()).matrix();
    case Activation::None: return Matrix::Ones(out.rows(), out.cols());
  }
  return Matrix::Ones(out.rows(), out.cols());
}

inline Matrix affine(const Matrix& x, const DenseLayer& l) {
  Matrix z = x * l.weight.transpose();
  z.rowwise() += l.bias.transpose();
  return z;
}

}  // namespace detail

// Cached intermediate values of one forward pass, enough to backpropagate.
struct ForwardPass {
  std::vector<Matrix> inputs;       // input to trunk layer l
  std::vector<Matrix> activations;  // act(z_l), before dropout
  std::vector<Matrix> dropout;      // scale mask per layer (empty when unused)
  Matrix embedding;                 // final trunk output (after dropout)
  std::map<std::string, Matrix> head_outputs;
};

// Runs the trunk and the requested heads. `train_rng` selects Train mode
// (inverted dropout drawn from the generator); nullptr means Eval mode.
inline ForwardPass forward_pass(const Mlp& mlp, const Matrix& x,
                                const std::vector<std::string>& heads, Rng* train_rng) {
  if (static_cast<std::size_t>(x.cols()) != mlp.spec.input_dim)
    fail(ErrorCode::ShapeError, "input has " + std::to_string(x.cols()) + " columns, expected " +
                                    std::to_string(mlp.spec.input_dim));
  for (const auto& h : heads) (void)mlp.head(h);

  ForwardPass pass;
  Matrix cur = x;
  for (const auto& layer : mlp.trunk) {
    pass.inputs.push_back(cur);
    Matrix a = detail::affine(cur, layer);
    detail::activate(a, layer.activation);
    pass.activations.push_back(a);
    if (train_rng != nullptr && layer.dropout_rate > 0.0) {
      const double p = layer.dropout_rate;
      const double keep_scale = 1.0 / (1.0 - p);
      Matrix mask(a.rows(), a.cols());
      for (Eigen::Index i = 0; i < mask.rows(); ++i)
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
          mask(i, j) = uniform01(*train_rng) >= p ? keep_scale : 0.0;
      a = a.cwiseProduct(mask);
      pass.dropout.push_back(std::move(mask));
    } else {
      pass.dropout.emplace_back();
    }
    cur = std::move(a);
  }
  pass.embedding = cur;
  for (const auto& h : heads) {
    const DenseLayer& layer = mlp.head(h);
    Matrix out = detail::affine(pass.embedding, layer);
    detail::activate(out, layer.activation);
    pass.head_outputs[h] = std::move(out);
  }
  return pass;
}

enum class Mode { Eval, Train };

// Returns (head output, trunk embedding).
inline std::pair<Matrix, Matrix> forward(const Mlp& mlp, const Matrix& x, const std::string& head,
                                         Mode mode, Rng* rng = nullptr) {
  if (mode == Mode::Train && rng == nullptr)
    fail(ErrorCode::BadConfig, "train mode needs a random generator");
  auto pass = forward_pass(mlp, x, {head}, mode == Mode::Train ? rng : nullptr);
  return {std::move(pass.head_outputs.at(head)), std::move(pass.embedding)};
}

inline Matrix embed(const Mlp& mlp, const Matrix& x) {
  return forward_pass(mlp, x, {}, nullptr).embedding;
}

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

struct Gradients {
  std::vector<LayerGrad> trunk;
  std::map<std::string, LayerGrad> heads;

  void add(const Gradients& other) {
    if (trunk.empty()) {
      *this = other;
      return;
    }
    for (std::size_t l = 0; l < trunk.size(); ++l) {
      trunk[l].weight += other.trunk[l].weight;
      trunk[l].bias += other.trunk[l].bias;
    }
    for (const auto& [name, g] : other.heads) {
      auto it = heads.find(name);
      if (it == heads.end()) {
        heads[name] = g;
      } else {
        it->second.weight += g.weight;
        it->second.bias += g.bias;
      }
    }
  }
};

// Backpropagates dL/d(head output) for each head in `output_grads`, plus an
// optional dL/d(embedding) injected directly at the trunk output.
inline Gradients backward(const Mlp& mlp, const ForwardPass& pass,
                          const std::map<std::string, Matrix>& output_grads,
                          const Matrix* embedding_grad = nullptr) {
  Gradients g;
  Matrix d_emb = Matrix::Zero(pass.embedding.rows(), pass.embedding.cols());
  if (embedding_grad != nullptr) d_emb += *embedding_grad;
  for (const auto& [name, d_out] : output_grads) {
    const DenseLayer& layer = mlp.head(name);
    const Matrix& out = pass.head_outputs.at(name);
    Matrix dz = d_out.cwiseProduct(detail::activation_grad(out, layer.activation));
    g.heads[name] = {dz.transpose() * pass.embedding, dz.colwise().sum().transpose()};
    d_emb += dz * layer.weight;
  }
  g.trunk.resize(mlp.trunk.size());
  Matrix d = std::move(d_emb);
  for (std::size_t l = mlp.trunk.size(); l-- > 0;) {
    const DenseLayer& layer = mlp.trunk[l];
    if (pass.dropout[l].size() > 0) d = d.cwiseProduct(pass.dropout[l]);
    Matrix dz = d.cwiseProduct(detail::activation_grad(pass.activations[l], layer.activation));
    g.trunk[l] = {dz.transpose() * pass.inputs[l], dz.colwise().sum().transpose()};
    if (l > 0) d = dz * layer.weight;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Losses

enum class LossKind { CrossEntropy, Mse, Bce };

struct LossTerm {
  std::string head;
  LossKind kind = LossKind::Mse;
  double weight = 1.0;
};

// A single term is a plain loss; several terms form a composite loss.
struct Loss {
  std::vector<LossTerm> terms;

  static Loss single(std::string head, LossKind kind) { return Loss{{{std::move(head), kind, 1.0}}}; }

  std::vector<std::string> heads() const {
    std::vector<std::string> h;
    for (const auto& t : terms) h.push_back(t.head);
    return h;
  }
};

inline Matrix one_hot(const std::vector<int>& labels, std::size_t classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return y;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

// dL/dz from dL/dp where p = softmax(z), row by row.
inline Matrix softmax_backward(const Matrix& p, const Matrix& dp) {
  Matrix dz(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double dot = p.row(i).dot(dp.row(i));
    dz.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
  }
  return dz;
}

struct LossValue {
  double value = 0.0;
  Matrix grad;  // dL/d(output)
};

inline constexpr double kProbClamp = 1e-12;

// Mean softmax cross-entropy over rows; `out` holds logits, `target` holds
// class probabilities (usually one-hot).
inline LossValue cross_entropy(const Matrix& out, const Matrix& target) {
  LossValue r;
  const auto n = static_cast<double>(out.rows());
  r.grad.resize(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    const double lse = m + std::log((out.row(i).array() - m).exp().sum());
    r.value += -(target.row(i).array() * (out.row(i).array() - lse)).sum();
    Eigen::RowVectorXd p = (out.row(i).array() - lse).exp().matrix();
    r.grad.row(i) = (p * target.row(i).sum() - target.row(i)) / n;
  }
  r.value /= n;
  return r;
}

inline LossValue mse(const Matrix& out, const Matrix& target) {
  const auto count = static_cast<double>(out.size());
  Matrix diff = out - target;
  return {diff.squaredNorm() / count, 2.0 * diff / count};
}

// Mean binary cross-entropy; `out` holds probabilities.
inline LossValue bce(const Matrix& out, const Matrix& target) {
  const auto count = static_cast<double>(out.size());
  LossValue r;
  r.grad.resize(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      const double p = std::clamp(out(i, j), kProbClamp, 1.0 - kProbClamp);
      const double y = target(i, j);
      r.value += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      r.grad(i, j) = (p - y) / (p * (1.0 - p)) / count;
    }
  }
  r.value /= count;
  return r;
}

inline LossValue evaluate_term(LossKind kind, const Matrix& out, const Matrix& target) {
  if (out.rows() != target.rows() || out.cols() != target.cols())
    fail(ErrorCode::ShapeError, "loss target shape does not match head output");
  switch (kind) {
    case LossKind::CrossEntropy: return cross_entropy(out, target);
    case LossKind::Mse: return mse(out, target);
    case LossKind::Bce: return bce(out, target);
  }
  return {};
}

struct Batch {
  Matrix x;
  std::map<std::string, Matrix> targets;
};

struct LossEvaluation {
  double value = 0.0;
  std::map<std::string, Matrix> output_grads;
};

inline LossEvaluation evaluate_loss(const ForwardPass& pass, const Loss& loss, const Batch& batch) {
  LossEvaluation e;
  for (const auto& t : loss.terms) {
    auto target = batch.targets.find(t.head);
    if (target == batch.targets.end()) fail(ErrorCode::ShapeError, "no target for head '" + t.head + "'");
    LossValue v = evaluate_term(t.kind, pass.head_outputs.at(t.head), target->second);
    e.value += t.weight * v.value;
    auto it = e.output_grads.find(t.head);
    if (it == e.output_grads.end())
      e.output_grads[t.head] = t.weight * v.grad;
    else
      it->second += t.weight * v.grad;
  }
  return e;
}

// Eval-mode loss of a whole batch.
inline double evaluation_loss(const Mlp& mlp, const Loss& loss, const Batch& batch) {
  return evaluate_loss(forward_pass(mlp, batch.x, loss.heads(), nullptr), loss, batch).value;
}

// ---------------------------------------------------------------------------
// Optimization

enum class OptimizerKind { Sgd, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double momentum = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) fail(ErrorCode::BadConfig, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorCode::BadConfig, "batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      fail(ErrorCode::BadConfig, "learning_rate must be >= 0");
  }
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, double learning_rate) : cfg_(cfg), lr_(learning_rate) {}

  void step(Mlp& mlp, const Gradients& g) {
    ++t_;
    for (std::size_t l = 0; l < mlp.trunk.size() && l < g.trunk.size(); ++l) {
      const std::string key = "trunk." + std::to_string(l);
      update(key + ".w", mlp.trunk[l].weight, g.trunk[l].weight);
      update(key + ".b", mlp.trunk[l].bias, g.trunk[l].bias);
    }
    for (const auto& [name, hg] : g.heads) {
      auto it = mlp.heads.find(name);
      if (it == mlp.heads.end()) continue;
      update("head." + name + ".w", it->second.weight, hg.weight);
      update("head." + name + ".b", it->second.bias, hg.bias);
    }
  }

 private:
  struct Slot {
    Eigen::ArrayXd m;
    Eigen::ArrayXd v;
  };

  template <typename Param, typename Grad>
  void update(const std::string& key, Param& param, const Grad& grad) {
    Eigen::Map<Eigen::ArrayXd> p(param.data(), param.size());
    Eigen::Map<const Eigen::ArrayXd> gr(grad.data(), grad.size());
    Slot& s = slots_[key];
    if (s.m.size() != p.size()) {
      s.m = Eigen::ArrayXd::Zero(p.size());
      s.v = Eigen::ArrayXd::Zero(p.size());
    }
    if (cfg_.kind == OptimizerKind::Sgd) {
      s.m = cfg_.momentum * s.m + gr;
      p -= lr_ * s.m;
      return;
    }
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * gr;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * gr.square();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    p -= lr_ * (s.m / c1) / ((s.v / c2).sqrt() + cfg_.epsilon);
  }

  OptimizerConfig cfg_;
  double lr_;
  std::uint64_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

inline Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// Shuffles rows with Fisher-Yates and cuts them into batches; the last
// batch may be smaller.
inline std::vector<Batch> make_batches(const Matrix& x, const std::map<std::string, Matrix>& targets,
                                       std::size_t batch_size, Rng& rng) {
  const auto order = shuffled_indices(static_cast<std::size_t>(x.rows()), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
    Batch b;
    b.x = select_rows(x, idx);
    for (const auto& [name, t] : targets) b.targets[name] = select_rows(t, idx);
    batches.push_back(std::move(b));
  }
  return batches;
}

inline void check_finite(double loss) {
  if (!std::isfinite(loss)) fail(ErrorCode::DivergedError, "training loss became non-finite");
}

// One optimizer step per batch; returns the mean per-batch loss.
inline double train_epoch(Mlp& mlp, const std::vector<Batch>& batches, const Loss& loss,
                          Optimizer& opt, Rng& rng) {
  if (batches.empty()) return 0.0;
  double total = 0.0;
  const auto heads = loss.heads();
  for (const auto& b : batches) {
    ForwardPass pass = forward_pass(mlp, b.x, heads, &rng);
    LossEvaluation e = evaluate_loss(pass, loss, b);
    check_finite(e.value);
    opt.step(mlp, backward(mlp, pass, e.output_grads));
    total += e.value;
  }
  return total / static_cast<double>(batches.size());
}

// ---------------------------------------------------------------------------
// Checkpoints: line-oriented text, reals in shortest round-trip form so that
// save -> load -> save reproduces the same bytes.

namespace detail {

inline std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline void write_layer(std::ostringstream& os, const DenseLayer& l) {
  os << "weights " << l.weight.rows() << ' ' << l.weight.cols() << '\n';
  for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < l.weight.cols(); ++j) os << (j ? " " : "") << format_real(l.weight(i, j));
    os << '\n';
  }
  os << "bias";
  for (Eigen::Index i = 0; i < l.bias.size(); ++i) os << ' ' << format_real(l.bias(i));
  os << '\n';
}

inline double read_real(std::istringstream& is) {
  std::string tok;
  if (!(is >> tok)) fail(ErrorCode::BadConfig, "truncated checkpoint");
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) fail(ErrorCode::BadConfig, "bad real '" + tok + "'");
  return v;
}

inline void expect(std::istringstream& is, std::string_view word) {
  std::string tok;
  if (!(is >> tok) || tok != word)
    fail(ErrorCode::BadConfig, "checkpoint: expected '" + std::string(word) + "', got '" + tok + "'");
}

inline void read_layer(std::istringstream& is, DenseLayer& l) {
  expect(is, "weights");
  Eigen::Index r = 0, c = 0;
  is >> r >> c;
  l.weight.resize(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) l.weight(i, j) = read_real(is);
  expect(is, "bias");
  l.bias.resize(r);
  for (Eigen::Index i = 0; i < r; ++i) l.bias(i) = read_real(is);
}

}  // namespace detail

inline std::string save_checkpoint(const Mlp& m) {
  std::ostringstream os;
  os << "tabncd-mlp 1\n";
  os << "input_dim " << m.spec.input_dim << '\n';
  os << "trunk " << m.trunk.size() << '\n';
  for (const auto& l : m.trunk) {
    os << "layer " << l.fan_out() << ' ' << to_string(l.activation) << ' '
       << detail::format_real(l.dropout_rate) << '\n';
    detail::write_layer(os, l);
  }
  os << "heads " << m.heads.size() << '\n';
  for (const auto& [name, l] : m.heads) {
    os << "head " << name << ' ' << l.fan_out() << ' ' << to_string(l.activation) << '\n';
    detail::write_layer(os, l);
  }
  return os.str();
}

inline Mlp load_checkpoint(const std::string& text) {
  std::istringstream is(text);
  detail::expect(is, "tabncd-mlp");
  int version = 0;
  is >> version;
  if (version != 1) fail(ErrorCode::BadConfig, "unsupported checkpoint version");
  Mlp m;
  detail::expect(is, "input_dim");
  is >> m.spec.input_dim;
  detail::expect(is, "trunk");
  std::size_t layers = 0;
  is >> layers;
  for (std::size_t i = 0; i < layers; ++i) {
    detail::expect(is, "layer");
    LayerSpec ls;
    std::string act;
    is >> ls.width >> act;
    ls.activation = parse_activation(act);
    ls.dropout_rate = detail::read_real(is);
    DenseLayer l;
    detail::read_layer(is, l);
    l.activation = ls.activation;
    l.dropout_rate = ls.dropout_rate;
    m.spec.hidden.push_back(ls);
    m.trunk.push_back(std::move(l));
  }
  detail::expect(is, "heads");
  std::size_t nheads = 0;
  is >> nheads;
  for (std::size_t i = 0; i < nheads; ++i) {
    detail::expect(is, "head");
    std::string name, act;
    std::size_t width = 0;
    is >> name >> width >> act;
    DenseLayer l;
    detail::read_layer(is, l);
    l.activation = parse_activation(act);
    m.heads[name] = std::move(l);
  }
  if (!is && !is.eof()) fail(ErrorCode::BadConfig, "malformed checkpoint");
  return m;
}

}  // namespace tabncd
