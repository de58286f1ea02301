// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. `run` is separate from main() so the tests can
// drive it with captured streams.
//
// Exit codes: 0 success, 1 usage error, 2 failed check, 3 runtime or data error.

#pragma once

#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "strnn/checkpoint.hpp"
#include "strnn/checks.hpp"
#include "strnn/data.hpp"
#include "strnn/shipped_specs.hpp"
#include "strnn/spec_dsl.hpp"
#include "strnn/training.hpp"
#include "strnn/typecheck.hpp"

namespace strnn::cli {

enum Exit : int { ok = 0, usage = 1, check_failed = 2, runtime = 3 };

namespace detail {

const std::vector<std::string> kArchNames{"rnn", "lstm", "gru", "t-rnn", "t-lstm", "t-gru", "t-mr"};

struct CorpusArgs {
  std::string corpus, train, valid, test;
  std::string level = "char";
  std::optional<std::size_t> max_words;

  void add(CLI::App* cmd, bool with_level) {
    cmd->add_option("--corpus", corpus, "Single UTF-8 text, split 80/10/10");
    cmd->add_option("--train", train, "Pre-split training text (with --valid, --test)");
    cmd->add_option("--valid", valid, "Pre-split validation text");
    cmd->add_option("--test", test, "Pre-split test text");
    if (with_level) {
      cmd->add_option("--level", level, "Token level")->check(CLI::IsMember({"char", "word"}))->capture_default_str();
      cmd->add_option("--max-words", max_words, "Word-level vocabulary cap, <unk> included");
    }
  }

  bool presplit() const { return corpus.empty(); }

  void require() const {
    const bool any_split = !train.empty() || !valid.empty() || !test.empty();
    if (!corpus.empty() && any_split) {
      throw CLI::ValidationError("corpus", "--corpus cannot be combined with --train, --valid or --test");
    }
    if (!corpus.empty()) return;
    if (train.empty() || valid.empty() || test.empty()) {
      throw CLI::ValidationError("corpus", "give --corpus, or all of --train, --valid and --test");
    }
  }

  /// Character vocabularies cover every split; word vocabularies come from the
  /// training text alone and map the rest to <unk>.
  Vocab build(Level lvl) const {
    if (!presplit()) return build_vocab(read_text_file(corpus), lvl, max_words);
    const std::string tr = read_text_file(train);
    if (lvl == Level::word) return build_vocab(tr, lvl, max_words);
    return build_vocab(tr + read_text_file(valid) + read_text_file(test), lvl);
  }

  EncodedCorpus encode(const Vocab& v) const {
    if (!presplit()) return encode_and_split(read_text_file(corpus), v);
    return encode_presplit(read_text_file(train), read_text_file(valid), read_text_file(test), v);
  }
};

inline std::string fixed(double x, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << x;
  return s.str();
}

inline std::string sci(double x) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(3) << x;
  return s.str();
}

}  // namespace detail

/// Parses and executes one command line. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Strongly-typed recurrent networks: training, checks and cell type checking", "strnn"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // train ------------------------------------------------------------------
  std::string arch = "t-lstm";
  TrainConfig tc;
  std::string clip = "5", init = "uniform008", out_path, metrics_path;
  bool wall_time = false;
  detail::CorpusArgs train_corpus;
  auto* train_cmd = app.add_subcommand("train", "Train a language model and write a checkpoint");
  train_cmd->add_option("--arch", arch, "Cell architecture")->required()->check(CLI::IsMember(detail::kArchNames));
  train_cmd->add_option("--layers", tc.layers, "Stacked layers")->capture_default_str();
  train_cmd->add_option("--hidden", tc.hidden, "Hidden units per layer")->capture_default_str();
  train_corpus.add(train_cmd, true);
  train_cmd->add_option("--seq-len", tc.seq_len, "Truncated BPTT window")->capture_default_str();
  train_cmd->add_option("--batch", tc.batch, "Parallel streams")->capture_default_str();
  train_cmd->add_option("--epochs", tc.epochs, "Passes over the training split")->capture_default_str();
  train_cmd->add_option("--lr", tc.lr, "SGD learning rate")->capture_default_str();
  train_cmd->add_option("--lr-decay", tc.lr_decay, "Per-epoch learning-rate multiplier")->capture_default_str();
  train_cmd->add_option("--decay-start", tc.decay_start, "Last epoch at the full learning rate")
      ->capture_default_str();
  train_cmd->add_option("--clip", clip, "Global gradient-norm limit, or none")->capture_default_str();
  train_cmd->add_option("--dropout", tc.dropout, "Dropout rate on vertical connections")->capture_default_str();
  train_cmd->add_option("--seed", tc.seed, "Random seed")->capture_default_str();
  train_cmd->add_option("--init", init, "Weight initialisation")
      ->check(CLI::IsMember({"uniform008", "identity"}))
      ->capture_default_str();
  train_cmd->add_option("--init-scale", tc.init_scale, "Half-width of the uniform weight init")
      ->capture_default_str();
  train_cmd->add_option("--out", out_path, "Checkpoint to write")->required();
  train_cmd->add_option("--metrics", metrics_path, "Metrics CSV to write");
  train_cmd->add_option("--log-every", tc.log_every, "Extra train rows every N steps (0: per epoch)")
      ->capture_default_str();
  train_cmd->add_flag("--wall-time", wall_time, "Record elapsed milliseconds (otherwise wall_ms is 0)");
  train_cmd->add_option("--threads", tc.threads, "Worker threads for the batch")->capture_default_str();

  // sample -----------------------------------------------------------------
  std::string ckpt, seed_text;
  std::size_t length = 100;
  double temperature = 1.0;
  std::uint64_t seed = 1;
  auto* sample_cmd = app.add_subcommand("sample", "Generate text from a checkpoint");
  sample_cmd->add_option("--ckpt", ckpt, "Checkpoint to read")->required();
  sample_cmd->add_option("--seed-text", seed_text, "Text fed before sampling")->required();
  sample_cmd->add_option("--length", length, "Symbols to generate")->capture_default_str();
  sample_cmd->add_option("--temperature", temperature, "Softmax temperature (> 0)")->capture_default_str();
  sample_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();

  // eval -------------------------------------------------------------------
  std::string split = "test";
  detail::CorpusArgs eval_corpus;
  auto* eval_cmd = app.add_subcommand("eval", "Mean loss and perplexity of a checkpoint on one split");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint to read")->required();
  eval_corpus.add(eval_cmd, false);
  eval_cmd->add_option("--split", split, "Split to evaluate")
      ->check(CLI::IsMember({"train", "valid", "test"}))
      ->capture_default_str();

  // gradcheck --------------------------------------------------------------
  std::string check_arch;
  std::size_t hidden = 4, steps = 8, trials = 20;
  double eps = 1e-5, tol = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "BPTT against finite differences and closed forms");
  grad_cmd->add_option("--arch", check_arch, "Cell architecture")
      ->required()
      ->check(CLI::IsMember(detail::kArchNames));
  grad_cmd->add_option("--hidden", hidden, "Largest hidden size drawn")->capture_default_str();
  grad_cmd->add_option("--steps", steps, "Longest sequence drawn")->capture_default_str();
  grad_cmd->add_option("--trials", trials, "Random instances")->capture_default_str();
  grad_cmd->add_option("--eps", eps, "Finite-difference step")->capture_default_str();
  grad_cmd->add_option("--tol", tol, "Largest accepted relative error")->capture_default_str();
  grad_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();

  // semcheck ---------------------------------------------------------------
  std::size_t sem_hidden = 8, sem_steps = 20, sem_trials = 100;
  double sem_tol = 1e-10;
  auto* sem_cmd = app.add_subcommand("semcheck", "Pooled forward against recurrent forward");
  sem_cmd->add_option("--arch", check_arch, "Cell architecture")
      ->required()
      ->check(CLI::IsMember({"t-rnn", "t-lstm", "t-gru"}));
  sem_cmd->add_option("--hidden", sem_hidden, "Largest hidden size drawn")->capture_default_str();
  sem_cmd->add_option("--steps", sem_steps, "Longest sequence drawn")->capture_default_str();
  sem_cmd->add_option("--trials", sem_trials, "Random instances")->capture_default_str();
  sem_cmd->add_option("--tol", sem_tol, "Largest accepted absolute error")->capture_default_str();
  sem_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();

  // typecheck --------------------------------------------------------------
  std::string spec_path, spec_arch;
  bool spans = false;
  auto* type_cmd = app.add_subcommand("typecheck", "Type-check a cell specification");
  auto* source = type_cmd->add_option_group("source", "Specification to check");
  source->add_option("--spec", spec_path, "Specification file");
  source->add_option("--arch", spec_arch, "Shipped specification by name");
  source->require_option(1);
  type_cmd->add_flag("--spans", spans, "Append line:column to each diagnostic");

  // bench ------------------------------------------------------------------
  std::string bench_arch = "t-lstm";
  std::size_t bench_hidden = 128, bench_steps = 100, reps = 10;
  unsigned threads = 1;
  auto* bench_cmd = app.add_subcommand("bench", "Per-step forward+backward time, with the T-LSTM:LSTM ratio");
  bench_cmd->add_option("--arch", bench_arch, "Cell architecture")
      ->check(CLI::IsMember(detail::kArchNames))
      ->capture_default_str();
  bench_cmd->add_option("--hidden", bench_hidden, "Hidden size (= input size)")->capture_default_str();
  bench_cmd->add_option("--steps", bench_steps, "Sequence length")->capture_default_str();
  bench_cmd->add_option("--reps", reps, "Timed repetitions")->capture_default_str();
  bench_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
  bench_cmd->add_option("--threads", threads, "Worker threads")->capture_default_str();

  std::vector<std::string> argv_store{"strnn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? Exit::ok : Exit::usage;
  }

  try {
    if (train_cmd->parsed()) {
      train_corpus.require();
      tc.arch = parse_cell_kind(arch);
      tc.init = parse_init_kind(init);
      if (clip == "none") {
        tc.clip.reset();
      } else {
        try {
          tc.clip = std::stod(clip);
        } catch (const std::exception&) {
          throw CLI::ValidationError("--clip", "expected a number or none, got '" + clip + "'");
        }
      }
      tc.record_wall_time = wall_time;
      tc.validate();
      const Level level = parse_level(train_corpus.level);
      const Vocab vocab = train_corpus.build(level);
      const EncodedCorpus corpus = train_corpus.encode(vocab);
      std::ofstream metrics;
      if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::trunc);
        if (!metrics) throw DataError("cannot write '" + metrics_path + "'");
        metrics << kMetricsHeader << '\n';
      }
      out << "vocab " << vocab.size() << ", train " << corpus.train.size() << ", valid " << corpus.valid.size()
          << ", test " << corpus.test.size() << " tokens\n";
      auto on_row = [&](const MetricsRow& r) {
        if (metrics.is_open()) metrics << format_metrics_row(r) << '\n' << std::flush;
        out << "epoch " << r.epoch << " step " << r.step << " " << r.split << " loss " << detail::fixed(r.loss_nats)
            << " ppl " << detail::fixed(r.perplexity, 2) << '\n';
      };
      const TrainResult res = train(tc, vocab, corpus, on_row);
      save_checkpoint(res.model, out_path);
      out << "wrote " << out_path << " (" << res.model.parameter_count() << " parameters)\n";
      return Exit::ok;
    }

    if (sample_cmd->parsed()) {
      const LanguageModel m = load_checkpoint(ckpt);
      out << sample(m, seed_text, length, temperature, seed) << '\n';
      return Exit::ok;
    }

    if (eval_cmd->parsed()) {
      eval_corpus.require();
      const LanguageModel m = load_checkpoint(ckpt);
      const EncodedCorpus corpus = eval_corpus.encode(m.vocab);
      const EvalResult r = evaluate(m, corpus.split(split));
      out << split << " tokens " << r.tokens << '\n';
      out << "loss_nats " << format_double(r.loss_nats) << '\n';
      out << "perplexity " << format_double(r.perplexity) << '\n';
      return Exit::ok;
    }

    if (grad_cmd->parsed()) {
      const CellKind kind = parse_cell_kind(check_arch);
      const GradcheckReport r = gradcheck(kind, hidden, steps, trials, eps, seed);
      out << "tensor  rel_err_vs_fd" << (has_closed_form(kind) ? "  abs_err_vs_closed_form" : "") << '\n';
      for (const auto& [name, e] : r.max_rel_error) {
        out << "  " << std::left << std::setw(6) << name << detail::sci(e);
        if (has_closed_form(kind)) out << "  " << detail::sci(r.max_closed_error.at(name));
        out << '\n';
      }
      const bool pass = r.worst_rel() <= tol && (!has_closed_form(kind) || r.worst_closed() <= 1e-8);
      out << (pass ? "OK" : "FAIL") << '\n';
      return pass ? Exit::ok : Exit::check_failed;
    }

    if (sem_cmd->parsed()) {
      const SemcheckReport r = semcheck(parse_cell_kind(check_arch), sem_hidden, sem_steps, sem_trials, seed);
      out << "max |pooled - recurrent| " << detail::sci(r.max_forward_error) << '\n';
      out << "max |pooling mass - 1|   " << detail::sci(r.max_mass_error) << '\n';
      const bool pass = r.ok(sem_tol);
      out << (pass ? "OK" : "FAIL") << '\n';
      return pass ? Exit::ok : Exit::check_failed;
    }

    if (type_cmd->parsed()) {
      std::string text;
      if (!spec_arch.empty()) {
        const auto* s = dsl::find_shipped(spec_arch);
        if (s == nullptr) {
          std::string names;
          for (const auto& sp : dsl::shipped_specs()) names += (names.empty() ? "" : ", ") + std::string(sp.name);
          throw CLI::ValidationError("--arch", "no shipped specification '" + spec_arch + "' (have " + names + ")");
        }
        text = std::string(s->text);
      } else {
        text = read_text_file(spec_path);
      }
      const dsl::Verdict v = dsl::typecheck(dsl::parse_spec(text));
      out << dsl::format_verdict(v, spans);
      return v.well_typed ? Exit::ok : Exit::check_failed;
    }

    if (bench_cmd->parsed()) {
      const CellKind kind = parse_cell_kind(bench_arch);
      const double t = measure_step_time(kind, bench_hidden, bench_steps, reps, seed, threads);
      out << bench_arch << " " << detail::fixed(t, 2) << " us/step (forward+backward, hidden " << bench_hidden
          << ", " << bench_steps << " steps)\n";
      const double lstm = kind == CellKind::lstm ? t
                                                 : measure_step_time(CellKind::lstm, bench_hidden, bench_steps,
                                                                     reps, seed, threads);
      const double tlstm = kind == CellKind::t_lstm ? t
                                                    : measure_step_time(CellKind::t_lstm, bench_hidden,
                                                                        bench_steps, reps, seed, threads);
      out << "lstm " << detail::fixed(lstm, 2) << " us/step, t-lstm " << detail::fixed(tlstm, 2) << " us/step\n";
      out << "t-lstm:lstm speedup " << detail::fixed(lstm / tlstm, 2) << "x\n";
      return Exit::ok;
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return Exit::usage;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return Exit::usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return Exit::runtime;
  }
  return Exit::usage;
}

}  // namespace strnn::cli
