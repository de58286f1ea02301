// SPDX-License-Identifier: Apache-2.0
//
// Language-model training: one-hot (char) or embedded (word) inputs, a stack
// of recurrent layers, a dense softmax readout, cross-entropy in nats and
// plain SGD with global-norm clipping and per-epoch learning-rate decay.

#pragma once

#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "strnn/autodiff.hpp"
#include "strnn/cells.hpp"
#include "strnn/data.hpp"
#include "strnn/layer.hpp"

namespace strnn {

enum class InitKind : std::uint8_t { uniform008, identity };

inline std::string_view to_string(InitKind k) { return k == InitKind::identity ? "identity" : "uniform008"; }

inline InitKind parse_init_kind(std::string_view s) {
  if (s == "uniform008") return InitKind::uniform008;
  if (s == "identity") return InitKind::identity;
  throw std::invalid_argument("unknown init '" + std::string(s) + "' (expected uniform008 or identity)");
}

struct TrainConfig {
  CellKind arch = CellKind::t_lstm;
  std::size_t layers = 1;
  std::size_t hidden = 64;
  std::size_t seq_len = 35;
  std::size_t batch = 20;
  std::size_t epochs = 1;
  double lr = 1.0;
  double lr_decay = 1.0;        // multiplier per epoch once past decay_start
  std::size_t decay_start = 1;  // last epoch trained at the full rate
  std::optional<double> clip = 5.0;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  InitKind init = InitKind::uniform008;
  double init_scale = 0.08;      // half-width of the uniform init
  double recurrent_scale = 1.0;  // multiplies the vanilla RNN's V after init
  std::size_t log_every = 0;     // extra train rows every N steps; 0 = per epoch only
  unsigned threads = 1;
  bool record_wall_time = true;  // false writes wall_ms = 0

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw std::invalid_argument(std::string("train: ") + what + " must be positive");
    };
    positive(layers, "layers");
    positive(hidden, "hidden");
    positive(seq_len, "seq_len");
    positive(batch, "batch");
    positive(epochs, "epochs");
    positive(threads, "threads");
    if (arch == CellKind::scrn_state) throw std::invalid_argument("train: scrn_state is not a trainable architecture");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be finite and non-negative");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw std::invalid_argument("train: lr_decay must lie in (0, 1]");
    if (!(init_scale > 0.0) || !std::isfinite(init_scale)) throw std::invalid_argument("train: init_scale must be positive");
    if (clip && !(*clip > 0.0)) throw std::invalid_argument("train: clip must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("train: dropout must lie in [0, 1)");
    if (init == InitKind::identity && arch != CellKind::rnn) {
      throw std::invalid_argument("train: identity init applies to the vanilla rnn only");
    }
  }

  double lr_at(std::size_t epoch) const {
    const std::size_t k = epoch > decay_start ? epoch - decay_start : 0;
    return lr * std::pow(lr_decay, static_cast<double>(k));
  }
};

// ---------------------------------------------------------------------------
// Model

struct NamedTensor {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::span<double> values;
  bool is_vector;
};

struct LanguageModel {
  CellKind arch = CellKind::t_lstm;
  Vocab vocab;
  std::size_t hidden = 0;
  std::vector<CellParams> layers;
  Matrix embedding;  // K x hidden, word level only
  Matrix out_W;      // K x hidden
  Vector out_b;      // K

  Level level() const noexcept { return vocab.level(); }
  std::size_t input_dim() const noexcept { return level() == Level::word ? hidden : vocab.size(); }

  /// All trainable tensors in serialization order.
  std::vector<NamedTensor> tensors() {
    std::vector<NamedTensor> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (auto t : layers[l].tensors()) {
        out.push_back({"layer" + std::to_string(l) + "." + std::string(t.name), t.rows, t.cols, t.values,
                       t.is_vector});
      }
    }
    if (level() == Level::word) out.push_back({"embedding", embedding.rows(), embedding.cols(), embedding.span(), false});
    out.push_back({"output.W", out_W.rows(), out_W.cols(), out_W.span(), false});
    out.push_back({"output.b", out_b.dim(), 1, out_b.span(), true});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : const_cast<LanguageModel*>(this)->tensors()) n += t.values.size();
    return n;
  }

  friend bool operator==(const LanguageModel&, const LanguageModel&) = default;
};

/// Zero-valued model with the shapes implied by (arch, vocab, layers, hidden).
inline LanguageModel make_model(CellKind arch, const Vocab& vocab, std::size_t layers, std::size_t hidden) {
  LanguageModel m;
  m.arch = arch;
  m.vocab = vocab;
  m.hidden = hidden;
  const std::size_t k = vocab.size();
  for (std::size_t l = 0; l < layers; ++l) {
    m.layers.push_back(make_params(arch, l == 0 ? m.input_dim() : hidden, hidden));
  }
  if (vocab.level() == Level::word) m.embedding = Matrix(k, hidden);
  m.out_W = Matrix(k, hidden);
  m.out_b = Vector(k);
  return m;
}

inline LanguageModel init_model(const TrainConfig& cfg, const Vocab& vocab, Rng& rng) {
  cfg.validate();
  if (vocab.size() == 0) throw std::invalid_argument("init_model: empty vocabulary");
  LanguageModel m = make_model(cfg.arch, vocab, cfg.layers, cfg.hidden);
  InitOptions opt;
  opt.init_scale = cfg.init_scale;
  opt.identity_recurrent = cfg.init == InitKind::identity;
  opt.recurrent_scale = cfg.recurrent_scale;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    m.layers[l] = init_params(cfg.arch, m.layers[l].input_dim, cfg.hidden, opt, rng);
  }
  for (double& x : m.embedding.span()) x = rng.uniform(-opt.init_scale, opt.init_scale);
  for (double& x : m.out_W.span()) x = rng.uniform(-opt.init_scale, opt.init_scale);
  return m;
}

inline Vector input_vector(const LanguageModel& m, std::uint32_t token) {
  if (token >= m.vocab.size()) throw DataError("token id " + std::to_string(token) + " outside the vocabulary");
  if (m.level() == Level::word) {
    const auto row = m.embedding.row(token);
    return Vector(std::vector<double>(row.begin(), row.end()));
  }
  Vector v(m.vocab.size());
  v[token] = 1.0;
  return v;
}

/// −log softmax(logits)[target] in nats.
inline double cross_entropy(const Vector& logits, std::size_t target) {
  if (target >= logits.dim()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside " +
                            std::to_string(logits.dim()) + " classes");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - mx);
  return mx + std::log(z) - logits[target];
}

// ---------------------------------------------------------------------------
// Gradients

struct ModelGradients {
  std::vector<Gradients> layers;
  Matrix embedding;
  Matrix out_W;
  Vector out_b;

  static ModelGradients zeros_like(const LanguageModel& m) {
    ModelGradients g;
    for (const auto& p : m.layers) g.layers.push_back(zero_gradients(p));
    g.embedding = Matrix(m.embedding.rows(), m.embedding.cols());
    g.out_W = Matrix(m.out_W.rows(), m.out_W.cols());
    g.out_b = Vector(m.out_b.dim());
    return g;
  }

  /// Same order as LanguageModel::tensors().
  std::vector<std::span<double>> spans() {
    std::vector<std::span<double>> out;
    for (auto& g : layers)
      for (auto t : g.tensors()) out.push_back(t.values);
    if (!embedding.empty()) out.push_back(embedding.span());
    out.push_back(out_W.span());
    out.push_back(out_b.span());
    return out;
  }
};

inline void add_into(std::vector<std::span<double>> dst, const std::vector<std::span<double>>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t j = 0; j < dst[i].size(); ++j) dst[i][j] += src[i][j];
}

/// params -= lr * grads, tensor by tensor.
inline void sgd_update(const std::vector<std::span<double>>& params, const std::vector<std::span<double>>& grads,
                       double lr) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_update: tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    detail::require_dims(params[i].size() == grads[i].size(), "sgd_update", grads[i].size(), params[i].size());
    for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= lr * grads[i][j];
  }
}

inline void sgd_update(LanguageModel& m, ModelGradients& g, double lr) {
  std::vector<std::span<double>> ps;
  for (auto& t : m.tensors()) ps.push_back(t.values);
  sgd_update(ps, g.spans(), lr);
}

namespace detail {

struct StreamPass {
  double loss_sum = 0.0;
  ModelGradients grads;  // embedding left empty; see d_inputs
  std::vector<Vector> d_inputs;
  StackState final_state;
};

/// Forward and backward over one stream's window; gradients are of the
/// summed (not averaged) loss.
inline StreamPass stream_pass(const LanguageModel& m, const Matrix& out_Wt, const std::vector<std::uint32_t>& in,
                              const std::vector<std::uint32_t>& tgt, const StackState& init, double dropout,
                              std::uint64_t seed) {
  const std::size_t T = in.size();
  std::vector<Vector> xs;
  xs.reserve(T);
  for (auto id : in) xs.push_back(input_vector(m, id));
  Rng rng(seed);
  StackTape tape = stack_forward(m.layers, xs, init, dropout, &rng);

  StreamPass r;
  r.grads.out_W = Matrix(m.out_W.rows(), m.out_W.cols());
  r.grads.out_b = Vector(m.out_b.dim());
  std::vector<Vector> dh(T, Vector(m.hidden));
  for (std::size_t t = 0; t < T; ++t) {
    const Vector& h = tape.outputs[t];
    Vector logits = m.out_b;
    matvec_acc_pretransposed(out_Wt, h.span(), logits.span());
    r.loss_sum += cross_entropy(logits, tgt[t]);
    Vector d = softmax(logits);
    d[tgt[t]] -= 1.0;
    for (std::size_t k = 0; k < d.dim(); ++k) r.grads.out_b[k] += d[k];
    outer_acc(d.span(), h.span(), r.grads.out_W);
    matvec_transposed_acc(m.out_W, d.span(), dh[t].span());
  }
  StackGradients sg = bptt(m.layers, tape, dh);
  r.grads.layers = std::move(sg.layers);
  if (m.level() == Level::word) r.d_inputs = std::move(sg.d_inputs);
  r.final_state = std::move(tape.final_state);
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string split;
  double loss_nats = 0.0;
  double perplexity = 0.0;
  double grad_norm = 0.0;
  std::int64_t wall_ms = 0;
};

inline constexpr std::string_view kMetricsHeader = "epoch,step,split,loss_nats,perplexity,grad_norm,wall_ms";

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, end);
}

inline std::string format_metrics_row(const MetricsRow& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + r.split + "," + format_double(r.loss_nats) +
         "," + format_double(r.perplexity) + "," + format_double(r.grad_norm) + "," + std::to_string(r.wall_ms);
}

class TrainingDiverged : public std::runtime_error {
public:
  TrainingDiverged(std::size_t step, double loss, double grad_norm)
      : std::runtime_error("non-finite loss at step " + std::to_string(step) + " (loss " + format_double(loss) +
                           ", grad_norm " + format_double(grad_norm) + ")"),
        step_(step), grad_norm_(grad_norm) {}
  std::size_t step() const noexcept { return step_; }
  double grad_norm() const noexcept { return grad_norm_; }

private:
  std::size_t step_;
  double grad_norm_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double loss_nats = 0.0;
  double perplexity = 0.0;
  std::size_t tokens = 0;  // number of predictions
};

/// Mean next-token loss over `tokens`, read as one sequence with the state
/// carried across windows of `window` steps.
inline EvalResult evaluate(const LanguageModel& m, const std::vector<std::uint32_t>& tokens,
                           std::size_t window = 256) {
  if (tokens.size() < 2) throw DataError("evaluate: need at least two tokens");
  for (auto id : tokens)
    if (id >= m.vocab.size()) throw DataError("evaluate: token id outside the model vocabulary");
  const Matrix out_Wt = m.out_W.transposed();
  StackState state = StackState::zeros(m.layers);
  double sum = 0.0;
  const std::size_t n = tokens.size() - 1;
  for (std::size_t start = 0; start < n; start += window) {
    const std::size_t len = std::min(window, n - start);
    std::vector<Vector> xs;
    xs.reserve(len);
    for (std::size_t t = 0; t < len; ++t) xs.push_back(input_vector(m, tokens[start + t]));
    StackTape tape = stack_forward(m.layers, xs, state);
    for (std::size_t t = 0; t < len; ++t) {
      Vector logits = m.out_b;
      matvec_acc_pretransposed(out_Wt, tape.outputs[t].span(), logits.span());
      sum += cross_entropy(logits, tokens[start + t + 1]);
    }
    state = std::move(tape.final_state);
  }
  EvalResult r;
  r.tokens = n;
  r.loss_nats = sum / static_cast<double>(n);
  r.perplexity = std::exp(r.loss_nats);
  return r;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  LanguageModel model;
  std::vector<MetricsRow> rows;
  std::vector<double> epoch_train_loss;  // mean per-token loss of each epoch
  std::size_t steps = 0;
};

/// Truncated BPTT over `seq_len` windows of `batch` parallel streams, state
/// carried between windows and reset each epoch. Stream gradients are summed
/// in stream order whatever the thread count, then averaged over tokens.
inline TrainResult train(const TrainConfig& cfg, const Vocab& vocab, const EncodedCorpus& corpus,
                         const std::function<void(const MetricsRow&)>& on_row = {}) {
  cfg.validate();
  if (corpus.level != vocab.level()) throw DataError("train: corpus and vocabulary levels differ");
  const BatchWindows windows(corpus.train, cfg.seq_len, cfg.batch);
  for (auto id : corpus.train)
    if (id >= vocab.size()) throw DataError("train: token id outside the vocabulary");

  Rng rng(cfg.seed);
  TrainResult res;
  res.model = init_model(cfg, vocab, rng);
  LanguageModel& m = res.model;
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&]() -> std::int64_t {
    if (!cfg.record_wall_time) return 0;
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
  };
  auto emit = [&](MetricsRow row) {
    row.wall_ms = wall();
    res.rows.push_back(row);
    if (on_row) on_row(res.rows.back());
  };

  const std::size_t B = cfg.batch;
  const double inv_tokens = 1.0 / static_cast<double>(B * cfg.seq_len);
  const unsigned threads = std::min<unsigned>(cfg.threads, static_cast<unsigned>(B));

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    std::vector<StackState> states(B, StackState::zeros(m.layers));
    double epoch_sum = 0.0, since_sum = 0.0;
    std::size_t since_n = 0;
    for (std::size_t k = 0; k < windows.size(); ++k) {
      const auto w = windows.window(k);
      const Matrix out_Wt = m.out_W.transposed();
      std::vector<std::uint64_t> seeds(B);
      for (auto& s : seeds) s = rng.next_u64();

      ModelGradients total = ModelGradients::zeros_like(m);
      double loss_sum = 0.0;
      auto absorb = [&](std::size_t b, detail::StreamPass& p) {
        loss_sum += p.loss_sum;
        ModelGradients& g = p.grads;
        for (std::size_t l = 0; l < g.layers.size(); ++l) {
          std::vector<std::span<double>> dst, src;
          for (auto t : total.layers[l].tensors()) dst.push_back(t.values);
          for (auto t : g.layers[l].tensors()) src.push_back(t.values);
          add_into(dst, src);
        }
        add_into({total.out_W.span(), total.out_b.span()}, {g.out_W.span(), g.out_b.span()});
        for (std::size_t t = 0; t < p.d_inputs.size(); ++t) {
          auto row = total.embedding.row(w.inputs[b][t]);
          for (std::size_t i = 0; i < row.size(); ++i) row[i] += p.d_inputs[t][i];
        }
        states[b] = std::move(p.final_state);
      };

      if (threads <= 1) {
        for (std::size_t b = 0; b < B; ++b) {
          auto p = detail::stream_pass(m, out_Wt, w.inputs[b], w.targets[b], states[b], cfg.dropout, seeds[b]);
          absorb(b, p);
        }
      } else {
        std::vector<detail::StreamPass> passes(B);
        std::vector<std::exception_ptr> errors(threads);
        std::vector<std::thread> pool;
        for (unsigned ti = 0; ti < threads; ++ti) {
          pool.emplace_back([&, ti] {
            try {
              for (std::size_t b = ti; b < B; b += threads) {
                passes[b] = detail::stream_pass(m, out_Wt, w.inputs[b], w.targets[b], states[b], cfg.dropout,
                                                seeds[b]);
              }
            } catch (...) {
              errors[ti] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
        for (std::size_t b = 0; b < B; ++b) absorb(b, passes[b]);
      }

      ++res.steps;
      const double loss = loss_sum * inv_tokens;
      auto spans = total.spans();
      for (auto s : spans)
        for (double& x : s) x *= inv_tokens;
      const ClipResult clip = clip_global_norm(spans, cfg.clip);
      if (!std::isfinite(loss) || !std::isfinite(clip.norm)) throw TrainingDiverged(res.steps, loss, clip.norm);
      sgd_update(m, total, lr);

      epoch_sum += loss;
      since_sum += loss;
      ++since_n;
      const bool last = k + 1 == windows.size();
      if (last || (cfg.log_every && res.steps % cfg.log_every == 0)) {
        const double mean = since_sum / static_cast<double>(since_n);
        emit({epoch, res.steps, "train", mean, std::exp(mean), clip.norm, 0});
        since_sum = 0.0;
        since_n = 0;
      }
    }
    res.epoch_train_loss.push_back(epoch_sum / static_cast<double>(windows.size()));
    if (corpus.valid.size() >= 2) {
      const EvalResult ev = evaluate(m, corpus.valid);
      emit({epoch, res.steps, "valid", ev.loss_nats, ev.perplexity, 0.0, 0});
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Sampling

/// Symbols of `text` missing from `vocab`, in first-occurrence order.
inline std::vector<std::string> missing_symbols(std::string_view text, const Vocab& vocab) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(text, vocab.level())) {
    if (!vocab.find(t) && std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

inline std::uint32_t draw(const Vector& logits, double temperature, Rng& rng) {
  Vector scaled = logits;
  for (double& x : scaled) x /= temperature;
  const Vector p = softmax(scaled);
  const double u = rng.uniform();
  double acc = 0.0;
  std::uint32_t last = 0;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last = static_cast<std::uint32_t>(i);
    if (u < acc) return last;
  }
  return last;
}

/// Feeds `seed_text`, then draws `n` symbols from softmax(logits / temperature).
inline std::string sample(const LanguageModel& m, std::string_view seed_text, std::size_t n, double temperature,
                          std::uint64_t seed) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample: temperature must be positive");
  const auto missing = missing_symbols(seed_text, m.vocab);
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += (list.empty() ? "'" : ", '") + s + "'";
    throw DataError("seed text has symbols not in the vocabulary: " + list);
  }
  if (n == 0) return std::string(seed_text);
  const auto ids = encode(seed_text, m.vocab);
  if (ids.empty()) throw std::invalid_argument("sample: seed text must contain at least one symbol");

  Rng rng(seed);
  const Matrix out_Wt = m.out_W.transposed();
  auto logits_of = [&](const Vector& h) {
    Vector l = m.out_b;
    matvec_acc_pretransposed(out_Wt, h.span(), l.span());
    return l;
  };
  std::vector<Vector> xs;
  for (auto id : ids) xs.push_back(input_vector(m, id));
  StackTape tape = stack_forward(m.layers, xs, StackState::zeros(m.layers));
  StackState state = std::move(tape.final_state);
  Vector logits = logits_of(tape.outputs.back());

  std::string out(seed_text);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t id = draw(logits, temperature, rng);
    if (m.level() == Level::word) out += ' ';
    out += m.vocab.symbol(id);
    if (i + 1 == n) break;
    const Vector x = input_vector(m, id);
    StackTape step = stack_forward(m.layers, std::span<const Vector>(&x, 1), state);
    state = std::move(step.final_state);
    logits = logits_of(step.outputs.back());
  }
  return out;
}

}  // namespace strnn
