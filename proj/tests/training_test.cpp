// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "strnn/checkpoint.hpp"
#include "strnn/training.hpp"

namespace strnn {
namespace {

std::string abab(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i % 2 ? 'b' : 'a');
  return s;
}

struct Toy {
  Vocab vocab;
  EncodedCorpus corpus;
  explicit Toy(const std::string& text, Level level = Level::character)
      : vocab(build_vocab(text, level)), corpus(encode_and_split(text, vocab)) {}
};

TrainConfig abab_config() {
  TrainConfig c;
  c.arch = CellKind::t_rnn;
  c.layers = 1;
  c.hidden = 16;
  c.seq_len = 10;
  c.batch = 4;
  c.epochs = 5;
  c.lr = 1.0;
  c.lr_decay = 0.1;
  c.decay_start = 3;
  c.seed = 7;
  c.record_wall_time = false;
  return c;
}

std::vector<double> flat(LanguageModel m) {
  std::vector<double> out;
  for (auto& t : m.tensors()) out.insert(out.end(), t.values.begin(), t.values.end());
  return out;
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(cross_entropy(Vector(4, 0.0), 2), 1.3862943611198906, 1e-15);
  EXPECT_NEAR(cross_entropy(Vector{1.0, 0.0}, 0), 0.3132617, 1e-7);
  EXPECT_NEAR(cross_entropy(Vector{50.0, 0.0, 0.0}, 0), 0.0, 1e-20);
  EXPECT_THROW(cross_entropy(Vector{1.0, 0.0}, 2), std::out_of_range);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
  EXPECT_NEAR(cross_entropy(Vector{1000.0, 0.0}, 1), 1000.0, 1e-9);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr_decay = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.init = InitKind::identity;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.arch = CellKind::rnn;
  EXPECT_NO_THROW(c.validate());
  c = TrainConfig{};
  c.hidden = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainConfig, LearningRateSchedule) {
  TrainConfig c;
  c.lr = 1.0;
  c.lr_decay = 0.5;
  c.decay_start = 2;
  EXPECT_EQ(c.lr_at(1), 1.0);
  EXPECT_EQ(c.lr_at(2), 1.0);
  EXPECT_EQ(c.lr_at(3), 0.5);
  EXPECT_EQ(c.lr_at(5), 0.125);
}

TEST(Model, ParameterCounts) {
  const Vocab chars(Level::character, {"a", "b", "c"});
  const Vocab words(Level::word, {"x", "y", "<unk>"});
  // K=3, d=4: readout 3*4 + 3 = 15.
  EXPECT_EQ(make_model(CellKind::rnn, chars, 1, 4).parameter_count(), 4 * 4 + 4 * 3 + 4 + 15u);
  EXPECT_EQ(make_model(CellKind::lstm, chars, 1, 4).parameter_count(), 3 * (16 + 12 + 4) + 15u);
  EXPECT_EQ(make_model(CellKind::t_rnn, chars, 1, 4).parameter_count(), 2 * 12 + 4 + 15u);
  EXPECT_EQ(make_model(CellKind::t_lstm, chars, 1, 4).parameter_count(), 3 * (12 + 12 + 4) + 15u);
  EXPECT_EQ(make_model(CellKind::t_mr, chars, 1, 4).parameter_count(), 12 + 4 + 4 + 15u);
  // Word level adds a K x d embedding and the first layer reads d inputs.
  EXPECT_EQ(make_model(CellKind::t_rnn, words, 2, 4).parameter_count(), 2 * (2 * 16 + 4) + 12 + 15u);
}

// Whole-model gradient, output layer and embedding included, against
// central differences of the summed window loss.
TEST(Model, StreamGradientMatchesFiniteDifferences) {
  for (Level level : {Level::character, Level::word}) {
    for (CellKind kind : {CellKind::lstm, CellKind::t_lstm, CellKind::t_gru}) {
      const Vocab v = level == Level::word ? Vocab(level, {"p", "q", "r", "<unk>"}) : Vocab(level, {"p", "q", "r"});
      TrainConfig cfg;
      cfg.arch = kind;
      cfg.layers = 2;
      cfg.hidden = 3;
      Rng rng(11);
      LanguageModel m = init_model(cfg, v, rng);
      for (auto& t : m.tensors())
        for (double& x : t.values) x = rng.uniform(-0.6, 0.6);
      const std::vector<std::uint32_t> in{0, 2, 1, 1, 0}, tgt{2, 1, 1, 0, 2};
      StackState init = StackState::zeros(m.layers);
      auto loss = [&](const LanguageModel& q) {
        return detail::stream_pass(q, q.out_W.transposed(), in, tgt, init, 0.0, 1).loss_sum;
      };
      auto pass = detail::stream_pass(m, m.out_W.transposed(), in, tgt, init, 0.0, 1);
      ModelGradients g = ModelGradients::zeros_like(m);
      auto gs = g.spans();
      add_into({gs.begin(), gs.end() - (level == Level::word ? 3 : 2)}, [&] {
        std::vector<std::span<double>> s;
        for (auto& lg : pass.grads.layers)
          for (auto t : lg.tensors()) s.push_back(t.values);
        return s;
      }());
      add_into({g.out_W.span(), g.out_b.span()}, {pass.grads.out_W.span(), pass.grads.out_b.span()});
      for (std::size_t t = 0; t < pass.d_inputs.size(); ++t)
        for (std::size_t i = 0; i < m.hidden; ++i) g.embedding(in[t], i) += pass.d_inputs[t][i];

      auto ts = m.tensors();
      gs = g.spans();
      ASSERT_EQ(ts.size(), gs.size());
      const double eps = 1e-5;
      for (std::size_t k = 0; k < ts.size(); ++k) {
        for (std::size_t j = 0; j < ts[k].values.size(); ++j) {
          const double keep = ts[k].values[j];
          ts[k].values[j] = keep + eps;
          const double up = loss(m);
          ts[k].values[j] = keep - eps;
          const double down = loss(m);
          ts[k].values[j] = keep;
          EXPECT_NEAR(gs[k][j], (up - down) / (2 * eps), 1e-6)
              << to_string(kind) << " " << to_string(level) << " " << ts[k].name << "[" << j << "]";
        }
      }
    }
  }
}

TEST(Train, ZeroLearningRateLeavesParametersUntouched) {
  Toy toy(abab(1000));
  TrainConfig cfg = abab_config();
  cfg.lr = 0.0;
  cfg.epochs = 2;
  const auto res = train(cfg, toy.vocab, toy.corpus);
  Rng rng(cfg.seed);
  const LanguageModel init = init_model(cfg, toy.vocab, rng);
  EXPECT_EQ(flat(res.model), flat(init));
  ASSERT_EQ(res.epoch_train_loss.size(), 2u);
  EXPECT_EQ(res.epoch_train_loss[0], res.epoch_train_loss[1]);
}

TEST(Train, LearnsAlternation) {
  Toy toy(abab(1000));
  const TrainConfig cfg = abab_config();
  const auto res = train(cfg, toy.vocab, toy.corpus);
  ASSERT_EQ(res.epoch_train_loss.size(), 5u);
  EXPECT_LT(res.epoch_train_loss.back(), std::log(2.0));

  EXPECT_EQ(sample(res.model, "a", 6, 1e-6, 3), "abababa");
  EXPECT_EQ(sample(res.model, "ab", 0, 1.0, 3), "ab");

  const EvalResult ev = evaluate(res.model, toy.corpus.train);
  EXPECT_NEAR(ev.loss_nats, res.epoch_train_loss.back(), 0.05 * res.epoch_train_loss.back());
  EXPECT_NEAR(ev.perplexity, std::exp(ev.loss_nats), 1e-9);
}

TEST(Train, MetricsRows) {
  Toy toy(abab(1000));
  TrainConfig cfg = abab_config();
  cfg.epochs = 2;
  cfg.seq_len = 20;
  cfg.log_every = 4;
  std::vector<MetricsRow> seen;
  const auto res = train(cfg, toy.vocab, toy.corpus, [&](const MetricsRow& r) { seen.push_back(r); });
  ASSERT_EQ(seen.size(), res.rows.size());
  // 9 windows per epoch: rows at steps 4, 8, 9 (epoch end), then valid; 12, 16, 18, valid.
  std::vector<std::size_t> steps;
  std::vector<std::string> splits;
  for (const auto& r : res.rows) {
    steps.push_back(r.step);
    splits.push_back(r.split);
    EXPECT_NEAR(r.perplexity, std::exp(r.loss_nats), 1e-9);
    EXPECT_EQ(r.wall_ms, 0);
  }
  EXPECT_EQ(steps, (std::vector<std::size_t>{4, 8, 9, 9, 12, 16, 18, 18}));
  EXPECT_EQ(splits, (std::vector<std::string>{"train", "train", "train", "valid", "train", "train", "train", "valid"}));
  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    EXPECT_LE(std::pair(res.rows[i - 1].epoch, res.rows[i - 1].step), std::pair(res.rows[i].epoch, res.rows[i].step));
  }
}

TEST(Train, Deterministic) {
  Toy toy(abab(1000));
  TrainConfig cfg = abab_config();
  cfg.epochs = 2;
  cfg.dropout = 0.3;
  cfg.layers = 2;
  const auto a = train(cfg, toy.vocab, toy.corpus);
  const auto b = train(cfg, toy.vocab, toy.corpus);
  EXPECT_EQ(serialize_checkpoint(a.model), serialize_checkpoint(b.model));
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(format_metrics_row(a.rows[i]), format_metrics_row(b.rows[i]));

  cfg.threads = 3;
  const auto c = train(cfg, toy.vocab, toy.corpus);
  EXPECT_EQ(serialize_checkpoint(a.model), serialize_checkpoint(c.model));
}

TEST(Train, WordLevel) {
  std::string text;
  for (int i = 0; i < 300; ++i) text += "the cat sat on the mat . ";
  Toy toy(text, Level::word);
  TrainConfig cfg = abab_config();
  cfg.arch = CellKind::t_gru;
  cfg.batch = 2;
  cfg.seq_len = 10;
  cfg.epochs = 8;
  cfg.lr_decay = 1.0;
  const auto res = train(cfg, toy.vocab, toy.corpus);
  EXPECT_LT(res.epoch_train_loss.back(), 0.5 * std::log(static_cast<double>(toy.vocab.size())));
  const std::string s = sample(res.model, "the cat", 3, 1e-6, 1);
  EXPECT_EQ(s, "the cat sat on the");
}

TEST(Train, DivergenceIsReported) {
  Toy toy(abab(1000));
  TrainConfig cfg = abab_config();
  cfg.arch = CellKind::rnn;
  cfg.lr = 1e300;
  cfg.clip.reset();
  try {
    train(cfg, toy.vocab, toy.corpus);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.step(), 2u);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

TEST(Train, TooShortCorpus) {
  Toy toy("abababab");
  EXPECT_THROW(train(abab_config(), toy.vocab, toy.corpus), DataError);
}

TEST(Evaluate, UniformModelHasVocabularyPerplexity) {
  const Vocab v = build_vocab("abcdefg", Level::character);
  const LanguageModel m = make_model(CellKind::t_lstm, v, 2, 5);
  const EvalResult ev = evaluate(m, encode("abcdefgabcdefggfedcba", v));
  EXPECT_NEAR(ev.perplexity, 7.0, 1e-12);
  EXPECT_EQ(ev.tokens, 20u);
}

TEST(Evaluate, RejectsForeignTokens) {
  const LanguageModel m = make_model(CellKind::t_rnn, Vocab(Level::character, {"a", "b"}), 1, 2);
  EXPECT_THROW(evaluate(m, {0, 1, 5}), DataError);
  EXPECT_THROW(evaluate(m, {0}), DataError);
}

TEST(Evaluate, WindowSizeDoesNotMatter) {
  Toy toy(abab(1000));
  TrainConfig cfg = abab_config();
  cfg.epochs = 1;
  const auto res = train(cfg, toy.vocab, toy.corpus);
  EXPECT_NEAR(evaluate(res.model, toy.corpus.train, 7).loss_nats, evaluate(res.model, toy.corpus.train).loss_nats,
              1e-12);
}

TEST(Sample, Errors) {
  const LanguageModel m = make_model(CellKind::t_rnn, Vocab(Level::character, {"a", "b"}), 1, 2);
  try {
    sample(m, "abxyx", 3, 1.0, 1);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'x', 'y'"), std::string::npos);
  }
  EXPECT_THROW(sample(m, "a", 3, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(sample(m, "", 3, 1.0, 1), std::invalid_argument);
}

TEST(Sample, DeterministicGivenSeed) {
  Toy toy(abab(1000));
  TrainConfig cfg = abab_config();
  cfg.epochs = 1;
  const auto res = train(cfg, toy.vocab, toy.corpus);
  EXPECT_EQ(sample(res.model, "a", 40, 1.5, 9), sample(res.model, "a", 40, 1.5, 9));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Toy toy(abab(1000));
  TrainConfig cfg = abab_config();
  cfg.epochs = 1;
  cfg.arch = CellKind::t_lstm;
  cfg.layers = 2;
  const auto res = train(cfg, toy.vocab, toy.corpus);
  const std::string path = ::testing::TempDir() + "roundtrip.trnn";
  save_checkpoint(res.model, path);
  const LanguageModel back = load_checkpoint(path);
  EXPECT_TRUE(back == res.model);
  const double a = evaluate(res.model, toy.corpus.test).loss_nats;
  const double b = evaluate(back, toy.corpus.test).loss_nats;
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a), std::bit_cast<std::uint64_t>(b));
}

TEST(Checkpoint, HeaderLayout) {
  LanguageModel m = make_model(CellKind::t_rnn, Vocab(Level::word, {"hi", "<unk>"}), 1, 1);
  m.out_b[1] = 0.5;
  const std::string bytes = serialize_checkpoint(m);
  ASSERT_GE(bytes.size(), 21u);
  EXPECT_EQ(bytes.substr(0, 4), "TRNN");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes[8], 3);  // t_rnn
  EXPECT_EQ(bytes[9], 1);  // word
  EXPECT_EQ(bytes.substr(10, 2), std::string("\x01\x00", 2));
  EXPECT_EQ(bytes.substr(12, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(16, 4), std::string("\x02\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(20, 6), std::string("\x02\x00\x00\x00hi", 6));
  // Last tensor: output.b = (0, 0.5), rank 1.
  EXPECT_EQ(bytes.substr(bytes.size() - 8), std::string("\x00\x00\x00\x00\x00\x00\xe0\x3f", 8));
}

TEST(Checkpoint, RefusesBadInput) {
  const LanguageModel m = make_model(CellKind::lstm, Vocab(Level::character, {"a", "b"}), 1, 2);
  const std::string good = serialize_checkpoint(m);
  EXPECT_TRUE(deserialize_checkpoint(good) == m);

  std::string bad = good;
  bad[4] = 2;
  EXPECT_THROW(deserialize_checkpoint(bad), CheckpointError);
  bad = good;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), CheckpointError);
  bad = good;
  bad[12] = 3;  // hidden 2 -> 3: every stored shape now disagrees
  try {
    deserialize_checkpoint(bad);
    FAIL() << "expected CheckpointError";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
  }
  EXPECT_THROW(deserialize_checkpoint(good.substr(0, good.size() - 1)), CheckpointError);
  EXPECT_THROW(deserialize_checkpoint(good + "x"), CheckpointError);
  EXPECT_THROW(load_checkpoint("/nonexistent/model.trnn"), CheckpointError);
}

TEST(Metrics, HeaderMatchesGolden) {
  std::ifstream in(std::string(STRNN_SOURCE_DIR) + "/tests/golden/metrics/header.txt");
  ASSERT_TRUE(in);
  std::string golden;
  std::getline(in, golden);
  EXPECT_EQ(kMetricsHeader, golden);
}

TEST(Metrics, RowFormat) {
  MetricsRow r{3, 120, "valid", 1.5, std::exp(1.5), 0.0, 42};
  EXPECT_EQ(format_metrics_row(r), "3,120,valid,1.5," + format_double(std::exp(1.5)) + ",0,42");
  const std::string s = format_double(std::exp(1.5));
  EXPECT_EQ(std::stod(s), std::exp(1.5));
}

}  // namespace
}  // namespace strnn
