#pragma once

// Fully connected binary classifier: dense hidden layers (tanh or ReLU), one
// sigmoid output unit, mean binary cross-entropy with an L2 penalty on the
// weights, trained with Adam and early stopping on a held-out split.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layerprobe/aggregate.hpp"
#include "layerprobe/common.hpp"
#include "layerprobe/scaler.hpp"

namespace layerprobe {

enum class Activation { tanh, relu };

inline std::string_view to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation parse_activation(std::string_view s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  fail(ErrorCategory::invalid_argument, "unknown activation '" + std::string(s) + "'");
}

struct FfnConfig {
  int hidden_layers = 2;
  int hidden_units = 64;
  Activation activation = Activation::relu;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double l2 = 1e-4;
  int max_epochs = 200;
  int batch_size = 32;
  int patience = 20;
  double validation_fraction = 0.1;
  /// A validation loss counts as an improvement only if it beats the best so
  /// far by more than this.
  double min_delta = 1e-4;
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& m) { fail(ErrorCategory::invalid_argument, "ffn config: " + m); };
    if (hidden_layers < 1) bad("hidden_layers must be >= 1");
    if (hidden_units < 1) bad("hidden_units must be >= 1");
    if (!(learning_rate > 0)) bad("learning_rate must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) bad("betas must lie in [0, 1)");
    if (!(l2 >= 0)) bad("l2 must be >= 0");
    if (max_epochs < 1 || batch_size < 1 || patience < 1) bad("epochs, batch size and patience must be >= 1");
    if (!(validation_fraction >= 0 && validation_fraction < 1)) bad("validation_fraction must lie in [0, 1)");
  }
};

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;  // out
};

using LayerParams = std::vector<DenseLayer>;

struct FfnModel {
  LayerParams layers;  // hidden..., then the 1-unit output layer
  Activation activation = Activation::relu;
  Standardizer scaler;

  std::size_t input_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().w.cols()); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
    return n;
  }
};

inline std::size_t ffn_parameter_count(std::size_t input_dim, int hidden_layers, int hidden_units) {
  std::size_t n = 0, in = input_dim;
  for (int h = 0; h < hidden_layers; ++h) {
    n += in * static_cast<std::size_t>(hidden_units) + static_cast<std::size_t>(hidden_units);
    in = static_cast<std::size_t>(hidden_units);
  }
  return n + in + 1;
}

/// Glorot-uniform weights from the config seed, zero biases, identity scaler.
inline FfnModel init_ffn(const FfnConfig& cfg, std::size_t input_dim = kEmbeddingDim) {
  cfg.validate();
  if (input_dim == 0) fail(ErrorCategory::invalid_argument, "ffn: input_dim must be >= 1");
  std::mt19937_64 rng(derive_seed(cfg.seed, "ffn-init"));
  FfnModel m;
  m.activation = cfg.activation;
  m.scaler = Standardizer::identity(static_cast<Eigen::Index>(input_dim));
  Eigen::Index in = static_cast<Eigen::Index>(input_dim);
  for (int h = 0; h <= cfg.hidden_layers; ++h) {
    const Eigen::Index out = h == cfg.hidden_layers ? 1 : cfg.hidden_units;
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer l{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (Eigen::Index r = 0; r < out; ++r)
      for (Eigen::Index c = 0; c < in; ++c) l.w(r, c) = dist(rng);
    m.layers.push_back(std::move(l));
    in = out;
  }
  return m;
}

namespace detail {

inline void activate(Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::tanh) z = z.array().tanh().matrix();
  else z = z.cwiseMax(0.0);
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Output logits for a batch of already-scaled rows; keeps activations when
/// `acts` is non-null (acts[0] = input, acts[k] = output of hidden layer k).
inline Eigen::VectorXd logits(const FfnModel& m, const Eigen::MatrixXd& a0, std::vector<Eigen::MatrixXd>* acts) {
  Eigen::MatrixXd a = a0;
  if (acts) {
    acts->clear();
    acts->push_back(a);
  }
  for (std::size_t k = 0; k + 1 < m.layers.size(); ++k) {
    Eigen::MatrixXd z = a * m.layers[k].w.transpose();
    z.rowwise() += m.layers[k].b.transpose();
    activate(z, m.activation);
    a = std::move(z);
    if (acts) acts->push_back(a);
  }
  Eigen::VectorXd out = a * m.layers.back().w.transpose();
  out.array() += m.layers.back().b[0];
  return out;
}

inline double l2_penalty(const FfnModel& m, double l2) {
  if (l2 == 0) return 0;
  double s = 0;
  for (const auto& l : m.layers) s += l.w.squaredNorm();
  return l2 * s;
}

inline void check_batch(const FfnModel& m, const Eigen::MatrixXd& x, std::span<const int> y) {
  if (x.rows() == 0) fail(ErrorCategory::invalid_argument, "ffn: empty batch");
  if (static_cast<std::size_t>(x.rows()) != y.size()) fail(ErrorCategory::invalid_argument, "ffn: label count mismatch");
  if (static_cast<std::size_t>(x.cols()) != m.input_dim())
    fail(ErrorCategory::invalid_argument, "dimension mismatch: model expects " + std::to_string(m.input_dim()) +
                                              " features, got " + std::to_string(x.cols()));
}

}  // namespace detail

inline double forward(const FfnModel& m, const Eigen::VectorXd& x) {
  if (!x.allFinite()) fail(ErrorCategory::invalid_argument, "ffn forward: non-finite input");
  const Eigen::MatrixXd a0 = m.scaler.transform(x).transpose();
  return detail::sigmoid(detail::logits(m, a0, nullptr)[0]);
}

inline Eigen::VectorXd forward_batch(const FfnModel& m, const Eigen::MatrixXd& x) {
  Eigen::VectorXd z = detail::logits(m, m.scaler.transform_rows(x), nullptr);
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = detail::sigmoid(z[i]);
  return z;
}

inline double predict_proba(const FfnModel& m, const Eigen::VectorXd& x) { return forward(m, x); }
inline int predict(const FfnModel& m, const Eigen::VectorXd& x) { return forward(m, x) >= 0.5 ? 1 : 0; }

/// Mean binary cross-entropy of the batch (no penalty).
inline double bce(const FfnModel& m, const Eigen::MatrixXd& x, std::span<const int> y) {
  detail::check_batch(m, x, y);
  const Eigen::VectorXd z = detail::logits(m, m.scaler.transform_rows(x), nullptr);
  double s = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) s += detail::softplus(z[i]) - y[static_cast<std::size_t>(i)] * z[i];
  return s / static_cast<double>(z.size());
}

/// Mean BCE + l2 * sum of squared weights (biases are not penalized).
inline double loss(const FfnModel& m, const Eigen::MatrixXd& x, std::span<const int> y, double l2) {
  return bce(m, x, y) + detail::l2_penalty(m, l2);
}

struct LossAndGrad {
  double loss = 0;
  LayerParams grad;
};

namespace detail {

/// Scratch buffers reused across minibatches so the training loop does not
/// allocate (and page-fault) fresh matrices on every step. Activations are
/// stored feature-major (units x rows), which keeps every product a plain
/// untransposed GEMM on the wide first layer.
struct BackpropWorkspace {
  std::vector<Eigen::MatrixXd> acts;  // acts[k], k >= 1: hidden layer k, units x rows
  Eigen::MatrixXd delta, da;
  Eigen::RowVectorXd z;
};

/// Forward pass on already-scaled, feature-major input (dim x rows).
inline void forward_keep(const FfnModel& m, const Eigen::MatrixXd& a0t, BackpropWorkspace& ws) {
  ws.acts.resize(m.layers.size());
  for (std::size_t k = 0; k + 1 < m.layers.size(); ++k) {
    auto& a = ws.acts[k + 1];
    a.noalias() = m.layers[k].w * (k == 0 ? a0t : ws.acts[k]);
    a.colwise() += m.layers[k].b;
    activate(a, m.activation);
  }
  ws.z.noalias() = m.layers.back().w * (m.layers.size() == 1 ? a0t : ws.acts.back());
  ws.z.array() += m.layers.back().b[0];
}

/// Loss and gradient for already-scaled rows given feature-major (dim x
/// rows); `out.grad` keeps its storage between calls.
inline void loss_and_gradients_scaled(const FfnModel& m, const Eigen::MatrixXd& a0t, std::span<const int> y, double l2,
                                      LossAndGrad& out, BackpropWorkspace& ws) {
  forward_keep(m, a0t, ws);
  const Eigen::RowVectorXd& z = ws.z;
  const auto n = static_cast<double>(z.size());
  out.grad.resize(m.layers.size());
  ws.delta.resize(1, z.size());  // dLoss/dz for the current layer, units x rows
  double bce_sum = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double yi = y[static_cast<std::size_t>(i)];
    bce_sum += softplus(z[i]) - yi * z[i];
    ws.delta(0, i) = (sigmoid(z[i]) - yi) / n;
  }
  out.loss = bce_sum / n + l2_penalty(m, l2);
  for (std::size_t k = m.layers.size(); k-- > 0;) {
    const auto& a_in = k == 0 ? a0t : ws.acts[k];
    auto& g = out.grad[k];
    if (l2 != 0) {
      g.w = (2.0 * l2) * m.layers[k].w;
      g.w.noalias() += ws.delta * a_in.transpose();
    } else {
      g.w.noalias() = ws.delta * a_in.transpose();
    }
    g.b = ws.delta.rowwise().sum();
    if (k == 0) break;
    ws.da.noalias() = m.layers[k].w.transpose() * ws.delta;
    if (m.activation == Activation::tanh) ws.da.array() *= 1.0 - a_in.array().square();
    else ws.da.array() *= (a_in.array() > 0.0).cast<double>();
    ws.delta.swap(ws.da);
  }
}

}  // namespace detail

/// Exact gradient of loss() by backpropagation.
inline LossAndGrad loss_and_gradients(const FfnModel& m, const Eigen::MatrixXd& x, std::span<const int> y, double l2) {
  detail::check_batch(m, x, y);
  LossAndGrad out;
  detail::BackpropWorkspace ws;
  const Eigen::MatrixXd a0t = m.scaler.transform_rows(x).transpose();
  detail::loss_and_gradients_scaled(m, a0t, y, l2, out, ws);
  return out;
}

inline LayerParams backward(const FfnModel& m, const Eigen::MatrixXd& x, std::span<const int> y, double l2) {
  return loss_and_gradients(m, x, y, l2).grad;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of a single parameter block; `t` is the
/// 1-based step number.
template <typename Param, typename Grad>
void adam_update(Param& param, const Grad& grad, Param& m, Param& v, std::size_t t, double lr, const AdamHyper& h) {
  if (t < 1) fail(ErrorCategory::invalid_argument, "adam: step number must be >= 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    fail(ErrorCategory::invalid_argument, "adam: parameter, gradient and moment sizes differ");
  const double step = lr / c1, inv_c2 = 1.0 / c2;
  // chunked so each slice of param/grad/m/v is touched once while in cache
  constexpr Eigen::Index kChunk = 1024;
  for (Eigen::Index at = 0; at < param.size(); at += kChunk) {
    const Eigen::Index len = std::min(kChunk, param.size() - at);
    Eigen::Map<Eigen::ArrayXd> p(param.data() + at, len), pm(m.data() + at, len), pv(v.data() + at, len);
    Eigen::Map<const Eigen::ArrayXd> g(grad.data() + at, len);
    pm = h.beta1 * pm + (1.0 - h.beta1) * g;
    pv = h.beta2 * pv + (1.0 - h.beta2) * g.square();
    p -= step * pm / ((pv * inv_c2).sqrt() + h.epsilon);
  }
}

struct AdamState {
  LayerParams m, v;
  std::size_t t = 0;

  static AdamState zeros_like(const LayerParams& p) {
    AdamState s;
    for (const auto& l : p) {
      s.m.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()), Eigen::VectorXd::Zero(l.b.size())});
      s.v.push_back(s.m.back());
    }
    return s;
  }
};

inline void adam_step(LayerParams& params, const LayerParams& grads, AdamState& state, double lr, const AdamHyper& h = {}) {
  if (state.m.size() != params.size()) state = AdamState::zeros_like(params);
  const std::size_t t = ++state.t;
  for (std::size_t k = 0; k < params.size(); ++k) {
    adam_update(params[k].w, grads[k].w, state.m[k].w, state.v[k].w, t, lr, h);
    adam_update(params[k].b, grads[k].b, state.m[k].b, state.v[k].b, t, lr, h);
  }
}

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;  // averaged over the epoch's minibatches, as they were seen
  double validation_loss = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
  std::size_t validation_rows = 0;
};

struct FfnTrainResult {
  FfnModel model;
  TrainingLog log;
};

inline FfnTrainResult train_ffn(const Eigen::MatrixXd& x, std::span<const int> labels, const FfnConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(x.rows());
  if (n == 0) fail(ErrorCategory::invalid_argument, "train_ffn: empty dataset");
  if (labels.size() != n) fail(ErrorCategory::invalid_argument, "train_ffn: label count mismatch");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) fail(ErrorCategory::invalid_argument, "train_ffn: labels must be 0/1");
    by_class[labels[i]].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) fail(ErrorCategory::invalid_argument, "train_ffn: single-class input");

  // stratified validation split; every class keeps at least one training row
  std::mt19937_64 split_rng(derive_seed(cfg.seed, "ffn-validation"));
  std::vector<std::size_t> train_idx, val_idx;
  for (auto& cls : by_class) {
    std::shuffle(cls.begin(), cls.end(), split_rng);
    auto n_val = static_cast<std::size_t>(std::lround(cfg.validation_fraction * static_cast<double>(cls.size())));
    n_val = std::min(n_val, cls.size() - 1);
    val_idx.insert(val_idx.end(), cls.begin(), cls.begin() + static_cast<std::ptrdiff_t>(n_val));
    train_idx.insert(train_idx.end(), cls.begin() + static_cast<std::ptrdiff_t>(n_val), cls.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  auto gather = [&](const std::vector<std::size_t>& idx, Eigen::MatrixXd& xs, std::vector<int>& ys) {
    xs.resize(static_cast<Eigen::Index>(idx.size()), x.cols());
    ys.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
      ys[i] = labels[idx[i]];
    }
  };
  Eigen::MatrixXd x_train, x_val;
  std::vector<int> y_train, y_val;
  gather(train_idx, x_train, y_train);
  gather(val_idx, x_val, y_val);

  FfnModel model = init_ffn(cfg, static_cast<std::size_t>(x.cols()));
  model.scaler = Standardizer::fit(x_train);
  // train on pre-scaled rows with an identity scaler, then attach the real one
  const Eigen::MatrixXd z_train = model.scaler.transform_rows(x_train);
  const Eigen::MatrixXd z_val = x_val.rows() ? model.scaler.transform_rows(x_val) : Eigen::MatrixXd();
  const Eigen::MatrixXd z_train_t = z_train.transpose();  // columns gather contiguously
  const Standardizer fitted = model.scaler;
  model.scaler = Standardizer::identity(x.cols());

  const AdamHyper hyper{cfg.beta1, cfg.beta2, cfg.epsilon};
  AdamState adam = AdamState::zeros_like(model.layers);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, "ffn-shuffle"));
  std::vector<std::size_t> order(y_train.size());
  std::iota(order.begin(), order.end(), 0);

  FfnTrainResult result;
  result.log.validation_rows = val_idx.size();
  LayerParams best = model.layers;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  // full batches and the short tail batch each keep their own buffer
  Eigen::MatrixXd xb_full, xb_tail;
  std::vector<int> yb;
  LossAndGrad lg;
  detail::BackpropWorkspace ws;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;  // row-weighted mean of the batch losses
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      Eigen::MatrixXd& xb = len == bs ? xb_full : xb_tail;
      xb.resize(z_train_t.rows(), static_cast<Eigen::Index>(len));
      yb.resize(len);
      for (std::size_t i = 0; i < len; ++i) {
        xb.col(static_cast<Eigen::Index>(i)) = z_train_t.col(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = y_train[order[start + i]];
      }
      detail::loss_and_gradients_scaled(model, xb, yb, cfg.l2, lg, ws);
      if (!std::isfinite(lg.loss))
        fail(ErrorCategory::computation, "train_ffn: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += lg.loss * static_cast<double>(len) / static_cast<double>(order.size());
      adam_step(model.layers, lg.grad, adam, cfg.learning_rate, hyper);
    }
    EpochRecord rec{epoch, epoch_loss, 0.0};
    rec.validation_loss = y_val.empty() ? bce(model, z_train, y_train) : bce(model, z_val, y_val);
    if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.validation_loss))
      fail(ErrorCategory::computation, "train_ffn: non-finite loss at epoch " + std::to_string(epoch));
    result.log.epochs.push_back(rec);
    if (rec.validation_loss < best_loss - cfg.min_delta) {
      best_loss = rec.validation_loss;
      best = model.layers;
      result.log.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      result.log.stopped_early = true;
      break;
    }
  }
  model.layers = std::move(best);
  model.scaler = fitted;
  result.model = std::move(model);
  return result;
}

inline FfnTrainResult train_ffn(const FeatureMatrix& fm, const FfnConfig& cfg) {
  if (fm.rows() == 0) fail(ErrorCategory::invalid_argument, "train_ffn: empty dataset");
  return train_ffn(fm.x, fm.y, cfg);
}

inline nlohmann::json to_json(const TrainingLog& log) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : log.epochs)
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}});
  return {{"best_epoch", log.best_epoch},
          {"stopped_early", log.stopped_early},
          {"validation_rows", log.validation_rows},
          {"epochs", std::move(epochs)}};
}

inline nlohmann::json to_json(const FfnModel& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) layers.push_back({{"weights", to_json(l.w)}, {"bias", to_json(l.b)}});
  return {{"kind", "ffn"},
          {"format_version", 1},
          {"activation", std::string(to_string(m.activation))},
          {"input_dim", m.input_dim()},
          {"layer_sizes",
           [&] {
             std::vector<Eigen::Index> s;
             for (const auto& l : m.layers) s.push_back(l.w.rows());
             return s;
           }()},
          {"scaler", to_json(m.scaler)},
          {"layers", std::move(layers)}};
}

inline FfnModel ffn_from_json(const nlohmann::json& j) {
  if (j.at("kind") != "ffn" || j.at("format_version") != 1) fail(ErrorCategory::validation, "not an ffn v1 model");
  FfnModel m;
  m.activation = parse_activation(j.at("activation").get<std::string>());
  m.scaler = standardizer_from_json(j.at("scaler"));
  for (const auto& l : j.at("layers")) m.layers.push_back({matrix_from_json(l.at("weights")), vector_from_json(l.at("bias"))});
  if (m.layers.empty() || m.layers.back().w.rows() != 1) fail(ErrorCategory::validation, "ffn must end in a single output unit");
  Eigen::Index in = m.scaler.dim();
  for (const auto& l : m.layers) {
    if (l.w.cols() != in || l.b.size() != l.w.rows()) fail(ErrorCategory::validation, "ffn layer shapes are inconsistent");
    if (!l.w.allFinite() || !l.b.allFinite()) fail(ErrorCategory::validation, "ffn parameters must be finite");
    in = l.w.rows();
  }
  return m;
}

}  // namespace layerprobe
