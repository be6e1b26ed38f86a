// SPDX-License-Identifier: Apache-2.0
//
// keydyn: keystroke-dynamics verification toolkit.
//
// Subcommands: generate, train, embed, evaluate, sweep. Every stochastic
// subcommand takes a --seed and is bit-reproducible: rerunning with identical
// flags produces byte-identical primary outputs. Exit codes: 0 success,
// 2 usage/configuration, 3 data/protocol, 4 numerical, 5 I/O.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "keydyn/checkpoint.hpp"
#include "keydyn/data.hpp"
#include "keydyn/eval.hpp"
#include "keydyn/io_util.hpp"
#include "keydyn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kVersion[] = "0.1.0";

std::string default_out_dir() {
  if (const char* env = std::getenv("KEYDYN_OUT_DIR")) return env;
  return ".";
}

fs::path ensure_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw keydyn::IoError("cannot create output directory: " + dir);
  return p;
}

void write_manifest(const fs::path& path, const std::string& command,
                    const json& config, const std::vector<std::string>& outputs) {
  json manifest = {{"tool", "keydyn"},
                   {"version", kVersion},
                   {"command", command},
                   {"config", config},
                   {"outputs", outputs}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw keydyn::IoError("cannot write manifest: " + path.string());
  out << manifest.dump(2) << '\n';
}

struct GenerateArgs {
  keydyn::SyntheticSpec spec;
  std::string out_dir = default_out_dir();
};

int run_generate(const GenerateArgs& args) {
  args.spec.validate();
  const fs::path dir = ensure_out_dir(args.out_dir);
  const auto users = keydyn::generate_synthetic(args.spec);
  keydyn::write_dataset(users, dir / "keystrokes.tsv");

  const json config = {{"users", args.spec.num_users},
                       {"seqs", args.spec.sequences_per_user},
                       {"min_keys", args.spec.min_keys},
                       {"max_keys", args.spec.max_keys},
                       {"mean_hold_ms", args.spec.mean_hold_ms},
                       {"mean_interkey_ms", args.spec.mean_interkey_ms},
                       {"user_jitter", args.spec.user_jitter},
                       {"noise", args.spec.noise_scale},
                       {"seed", args.spec.seed}};
  write_manifest(dir / "manifest.json", "generate", config,
                 {"keystrokes.tsv"});
  std::cout << "wrote " << (dir / "keystrokes.tsv").string() << " ("
            << users.user_count() << " users, " << users.sequence_count()
            << " sequences)\n";
  return 0;
}

struct TrainArgs {
  std::string data_path;
  double train_fraction = 0.5;
  keydyn::ModelConfig model;
  keydyn::TrainConfig config;
  std::string batch_unit = "pairs";
  std::string precision = "float64";
  std::string out_dir = default_out_dir();
};

int run_train(TrainArgs& args) {
  args.config.batch_unit = args.batch_unit == "sequences"
                               ? keydyn::BatchSizeUnit::sequences
                               : keydyn::BatchSizeUnit::pairs;
  args.config.precision = keydyn::precision_from_name(args.precision);
  args.model.validate();
  args.config.validate();

  const fs::path dir = ensure_out_dir(args.out_dir);
  const auto loaded = keydyn::parse_dataset(args.data_path);
  if (loaded.report.rows_rejected() > 0 ||
      loaded.report.short_sequences_dropped > 0) {
    std::cerr << "dataset: " << loaded.report.summary() << '\n';
  }

  auto [train_users, holdout] =
      keydyn::split_users(loaded.users, args.train_fraction, args.config.seed);
  if (holdout.empty()) {
    throw keydyn::ProtocolError("user split left no held-out users");
  }

  const auto result = keydyn::train(train_users, args.model, args.config);
  keydyn::save_checkpoint(result.checkpoint, dir / "model.ckpt");
  keydyn::write_train_log(result.log, dir / "train_log.tsv");
  keydyn::write_dataset(holdout, dir / "holdout.tsv");

  const json config = {
      {"data", args.data_path},
      {"train_fraction", args.train_fraction},
      {"train_users", train_users.user_count()},
      {"holdout_users", holdout.user_count()},
      {"epochs", args.config.epochs},
      {"batches_per_epoch", args.config.batches_per_epoch},
      {"batch_size", args.config.batch_size},
      {"batch_unit", args.batch_unit},
      {"learning_rate", args.config.hyper.learning_rate},
      {"beta1", args.config.hyper.beta1},
      {"beta2", args.config.hyper.beta2},
      {"epsilon", args.config.hyper.epsilon},
      {"margin", args.config.hyper.margin},
      {"M", args.model.input_length},
      {"lstm_units", args.model.lstm_units},
      {"inter_layer_dropout", args.model.inter_layer_dropout},
      {"input_dropout", args.model.input_dropout},
      {"precision", args.precision},
      {"seed", args.config.seed}};
  write_manifest(dir / "manifest.json", "train", config,
                 {"model.ckpt", "train_log.tsv", "holdout.tsv"});

  if (result.diverged) {
    std::cerr << "training " << result.diagnostic
              << "; wrote last good checkpoint\n";
    return 4;
  }
  std::cout << "trained " << result.total_steps << " steps; final loss "
            << keydyn::shortest(result.log.back().mean_loss) << '\n';
  return 0;
}

struct EmbedArgs {
  std::string checkpoint_path;
  std::string data_path;
  keydyn::Index input_length = 0;  // 0: use the checkpoint's M
  int threads = 1;
  std::string out_dir = default_out_dir();
};

int run_embed(const EmbedArgs& args) {
  const fs::path dir = ensure_out_dir(args.out_dir);
  const auto ckpt = keydyn::load_checkpoint(args.checkpoint_path);
  const keydyn::Index m =
      args.input_length > 0 ? args.input_length : ckpt.config.input_length;
  const auto loaded = keydyn::parse_dataset(args.data_path);

  std::vector<keydyn::KeystrokeSequence> sequences;
  for (const auto& [user, seqs] : loaded.users.users) {
    sequences.insert(sequences.end(), seqs.begin(), seqs.end());
  }
  const auto outcome =
      keydyn::embed_sequences(ckpt, sequences, m, args.threads);
  if (outcome.skipped > 0) {
    std::cerr << "skipped " << outcome.skipped
              << " sequences too short to embed\n";
  }

  const fs::path out_path = dir / "embeddings.tsv";
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw keydyn::IoError("cannot write " + out_path.string());
  out << "user_id\tsession_id";
  for (keydyn::Index j = 0; j < ckpt.config.embedding_dim(); ++j) {
    out << "\te" << j;
  }
  out << '\n';
  for (std::size_t i = 0; i < outcome.embeddings.size(); ++i) {
    const auto& seq = sequences[outcome.kept_indices[i]];
    out << seq.user_id << '\t' << seq.session_id;
    for (keydyn::Index j = 0; j < outcome.embeddings[i].size(); ++j) {
      out << '\t' << keydyn::shortest(outcome.embeddings[i](j));
    }
    out << '\n';
  }

  const json config = {{"checkpoint", args.checkpoint_path},
                       {"data", args.data_path},
                       {"M", m},
                       {"skipped", outcome.skipped}};
  write_manifest(dir / "manifest.json", "embed", config, {"embeddings.tsv"});
  std::cout << "wrote " << out_path.string() << " ("
            << outcome.embeddings.size() << " embeddings)\n";
  return 0;
}

struct EvaluateArgs {
  std::string checkpoint_path;
  std::string data_path;
  keydyn::ProtocolConfig protocol;
  keydyn::Index m_flag = 0;
  bool roc = false;
  int threads = 1;
  std::string out_dir = default_out_dir();
};

int run_evaluate(EvaluateArgs& args) {
  const fs::path dir = ensure_out_dir(args.out_dir);
  const auto ckpt = keydyn::load_checkpoint(args.checkpoint_path);
  args.protocol.input_length =
      args.m_flag > 0 ? args.m_flag : ckpt.config.input_length;
  args.protocol.validate();
  const auto loaded = keydyn::parse_dataset(args.data_path);

  const auto report = keydyn::evaluate(ckpt, loaded.users, args.protocol,
                                       args.roc, args.threads);
  keydyn::write_user_eers(report, dir / "eval_users.tsv");
  keydyn::write_eval_summary(report, dir / "eval_summary.tsv");
  std::vector<std::string> outputs = {"eval_users.tsv", "eval_summary.tsv"};
  if (args.roc) {
    keydyn::write_roc(report.roc, dir / "roc.tsv");
    outputs.push_back("roc.tsv");
  }

  const json config = {{"checkpoint", args.checkpoint_path},
                       {"data", args.data_path},
                       {"M", args.protocol.input_length},
                       {"G", args.protocol.gallery_size},
                       {"K", args.protocol.enrolled_users},
                       {"test_seqs", args.protocol.test_sequences_per_user},
                       {"seed", args.protocol.seed}};
  write_manifest(dir / "manifest.json", "evaluate", config, outputs);
  std::cout << "mean EER " << keydyn::shortest(report.mean_eer) << " over "
            << report.user_ids.size() << " users (std "
            << keydyn::shortest(report.std_eer) << ")\n";
  return 0;
}

struct SweepArgs {
  std::string checkpoint_path;
  std::string data_path;
  std::vector<keydyn::Index> m_list = {50};
  std::vector<int> g_list = {5};
  std::vector<int> k_list = {100};
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = default_out_dir();
};

int run_sweep(const SweepArgs& args) {
  const fs::path dir = ensure_out_dir(args.out_dir);
  const auto ckpt = keydyn::load_checkpoint(args.checkpoint_path);
  const auto loaded = keydyn::parse_dataset(args.data_path);

  const auto rows =
      keydyn::sweep(ckpt, loaded.users, args.m_list, args.g_list, args.k_list,
                    args.seed, args.threads);
  keydyn::write_sweep_table(rows, dir / "sweep.tsv");

  const json config = {{"checkpoint", args.checkpoint_path},
                       {"data", args.data_path},
                       {"M", args.m_list},
                       {"G", args.g_list},
                       {"K", args.k_list},
                       {"seed", args.seed}};
  write_manifest(dir / "manifest.json", "sweep", config, {"sweep.tsv"});
  std::cout << "wrote " << (dir / "sweep.tsv").string() << " (" << rows.size()
            << " cells)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keystroke-dynamics verification toolkit"};
  app.set_version_flag("--version", std::string("keydyn ") + kVersion);
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads,
                 "worker-thread cap for embedding and scoring; does not "
                 "affect results")
      ->check(CLI::PositiveNumber);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "write a synthetic dataset");
  c_gen->add_option("--users", gen.spec.num_users)->check(CLI::PositiveNumber);
  c_gen->add_option("--seqs", gen.spec.sequences_per_user)
      ->check(CLI::PositiveNumber);
  c_gen->add_option("--min-keys", gen.spec.min_keys)
      ->check(CLI::Range(2, 100000));
  c_gen->add_option("--max-keys", gen.spec.max_keys)->check(CLI::PositiveNumber);
  c_gen->add_option("--mean-hold", gen.spec.mean_hold_ms);
  c_gen->add_option("--mean-interkey", gen.spec.mean_interkey_ms);
  c_gen->add_option("--user-jitter", gen.spec.user_jitter);
  c_gen->add_option("--noise", gen.spec.noise_scale);
  c_gen->add_option("--seed", gen.spec.seed);
  c_gen->add_option("--out", gen.out_dir, "output directory");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "train a Siamese checkpoint");
  c_train->add_option("--data", tr.data_path, "keystroke log (tsv)")->required();
  c_train->add_option("--train-fraction", tr.train_fraction);
  c_train->add_option("--epochs", tr.config.epochs)->check(CLI::PositiveNumber);
  c_train->add_option("--batches", tr.config.batches_per_epoch)
      ->check(CLI::PositiveNumber);
  c_train->add_option("--batch-size", tr.config.batch_size)
      ->check(CLI::PositiveNumber);
  c_train->add_option("--batch-unit", tr.batch_unit)
      ->check(CLI::IsMember({"pairs", "sequences"}));
  c_train->add_option("--lr", tr.config.hyper.learning_rate);
  c_train->add_option("--margin", tr.config.hyper.margin);
  c_train->add_option("--M", tr.model.input_length)->check(CLI::PositiveNumber);
  c_train->add_option("--units", tr.model.lstm_units)->check(CLI::PositiveNumber);
  c_train->add_option("--dropout-inter", tr.model.inter_layer_dropout);
  c_train->add_option("--dropout-input", tr.model.input_dropout);
  c_train->add_option("--precision", tr.precision)
      ->check(CLI::IsMember({"float32", "float64"}));
  c_train->add_option("--seed", tr.config.seed);
  c_train->add_option("--out", tr.out_dir, "output directory");

  EmbedArgs em;
  auto* c_embed =
      app.add_subcommand("embed", "embed sequences with a checkpoint");
  c_embed->add_option("--checkpoint", em.checkpoint_path)->required();
  c_embed->add_option("--data", em.data_path)->required();
  c_embed->add_option("--M", em.input_length)->check(CLI::PositiveNumber);
  c_embed->add_option("--out", em.out_dir, "output directory");

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "run the verification protocol");
  c_eval->add_option("--checkpoint", ev.checkpoint_path)->required();
  c_eval->add_option("--data", ev.data_path)->required();
  c_eval->add_option("--M", ev.m_flag)->check(CLI::PositiveNumber);
  c_eval->add_option("--G", ev.protocol.gallery_size)->check(CLI::Range(1, 10));
  c_eval->add_option("--K", ev.protocol.enrolled_users)
      ->check(CLI::Range(2, 10000000));
  c_eval->add_option("--test-seqs", ev.protocol.test_sequences_per_user)
      ->check(CLI::PositiveNumber);
  c_eval->add_option("--seed", ev.protocol.seed);
  c_eval->add_flag("--roc", ev.roc, "emit pooled ROC points");
  c_eval->add_option("--out", ev.out_dir, "output directory");

  SweepArgs sw;
  auto* c_sweep = app.add_subcommand("sweep", "evaluate an M x G x K grid");
  c_sweep->add_option("--checkpoint", sw.checkpoint_path)->required();
  c_sweep->add_option("--data", sw.data_path)->required();
  c_sweep->add_option("--M", sw.m_list)->delimiter(',');
  c_sweep->add_option("--G", sw.g_list)->delimiter(',');
  c_sweep->add_option("--K", sw.k_list)->delimiter(',');
  c_sweep->add_option("--seed", sw.seed);
  c_sweep->add_option("--out", sw.out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    em.threads = threads;
    ev.threads = threads;
    sw.threads = threads;
    if (c_gen->parsed()) return run_generate(gen);
    if (c_train->parsed()) return run_train(tr);
    if (c_embed->parsed()) return run_embed(em);
    if (c_eval->parsed()) return run_evaluate(ev);
    if (c_sweep->parsed()) return run_sweep(sw);
  } catch (const keydyn::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
