// transrev command-line tool: preprocessing, training, baselines, grid
// search, evaluation, retrieval and word-score export over one shared
// dataset-directory format.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <variant>
#include <vector>

#include <CLI/CLI11.hpp>

#include "transrev/transrev.hpp"

namespace fs = std::filesystem;
using namespace transrev;

namespace {

struct HyperFlags {
  Hyperparameters hp;
  void attach(CLI::App* cmd, bool with_lambda = true) {
    cmd->add_option("--k", hp.k, "embedding dimension")
        ->capture_default_str();
    cmd->add_option("--lr", hp.learning_rate, "SGD learning rate")
        ->capture_default_str();
    cmd->add_option("--mu", hp.mu, "L2 regularization weight")
        ->capture_default_str();
    if (with_lambda)
      cmd->add_option("--lambda", hp.lambda, "translation loss weight")
          ->capture_default_str();
    cmd->add_option("--batch", hp.batch_size, "mini-batch size")
        ->capture_default_str();
    cmd->add_option("--epochs", hp.max_epochs, "training epochs")
        ->capture_default_str();
    cmd->add_option("--validate-every", hp.validate_every,
                    "epochs between validation points")
        ->capture_default_str();
    cmd->add_option("--seed", hp.seed, "random seed")->capture_default_str();
    cmd->add_flag("--drop-last", hp.drop_last,
                  "drop the final short batch each epoch");
  }
};

CLI::Option* add_data_option(CLI::App* cmd, std::string& data_dir) {
  return cmd
      ->add_option("--data", data_dir, "preprocessed dataset directory")
      ->envname("TRANSREV_DATA_ROOT")
      ->required();
}

fs::path metrics_path_for(const std::string& metrics,
                          const std::string& model_out) {
  if (!metrics.empty()) return metrics;
  return fs::path(model_out).replace_extension(".metrics.tsv");
}

std::uint32_t resolve_id(const std::vector<std::string>& ids,
                         const std::string& given, const char* what) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == given) return static_cast<std::uint32_t>(i);
  // fall back to a dense index
  try {
    const std::uint64_t idx = parse_u64(given);
    if (idx < ids.size()) return static_cast<std::uint32_t>(idx);
  } catch (const std::exception&) {
  }
  throw std::runtime_error(std::string("unknown ") + what + " '" + given +
                           "' (not a raw id or dense index)");
}

std::span<const Interaction> pick_split(const Dataset& ds,
                                        const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "validation" || name == "valid") return ds.validation;
  if (name == "test") return ds.test;
  throw std::runtime_error("unknown split '" + name + "'");
}

const ModelParameters& require_full_model(const ModelFile& file,
                                          const Dataset& ds) {
  const auto* params = std::get_if<ModelParameters>(&file.model);
  if (!params)
    throw std::runtime_error("this subcommand needs a full model file");
  if (file.vocab_hash != vocabulary_hash(ds.vocab))
    throw std::runtime_error(
        "model was trained on a different vocabulary than this dataset");
  return *params;
}

int run(int argc, char** argv) {
  CLI::App app{
      "TransRev: rating prediction from reviews via translation embeddings"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a config file");
  app.config_formatter(std::make_shared<CLI::ConfigTOML>());

  // preprocess
  auto* preprocess = app.add_subcommand(
      "preprocess", "tokenize a raw corpus and write dataset splits");
  std::string pre_input, pre_format = "amazon", pre_out;
  std::uint64_t pre_seed = 42;
  double pre_min_df = 0.001;
  preprocess->add_option("--input", pre_input, "JSON-lines review file")
      ->required();
  preprocess->add_option("--format", pre_format, "corpus format")
      ->check(CLI::IsMember({"amazon", "yelp"}))
      ->capture_default_str();
  preprocess->add_option("--out", pre_out, "output dataset directory")
      ->required();
  preprocess->add_option("--seed", pre_seed, "split shuffle seed")
      ->capture_default_str();
  preprocess
      ->add_option("--min-df", pre_min_df,
                   "minimum fraction of training reviews a word must appear in")
      ->capture_default_str();
  preprocess->callback([&] {
    const CorpusFormat format = parse_format(pre_format);
    ParseResult parsed = parse_corpus(pre_input, format);
    if (parsed.reviews.empty())
      throw std::runtime_error("no reviews parsed from " + pre_input);
    Dataset ds = split_dataset(parsed.reviews, pre_seed, format, pre_min_df);
    DatasetSummary summary{format, parsed.reviews.size(), parsed.skipped,
                           parsed.rating_out_of_range};
    save_dataset(pre_out, ds, summary);
    if (parsed.rating_out_of_range > 0)
      std::cerr << "warning: " << parsed.rating_out_of_range
                << " ratings outside [1,5] kept as-is\n";
    std::cout << "wrote " << pre_out << ": train=" << ds.train.size()
              << " validation=" << ds.validation.size()
              << " test=" << ds.test.size() << " users=" << ds.n_users()
              << " items=" << ds.n_items() << " vocab=" << ds.vocab.size()
              << " removed=" << ds.stats.removed_validation << "+"
              << ds.stats.removed_test << "\n";
  });

  // synth
  auto* synth = app.add_subcommand(
      "synth", "generate a planted-sentiment synthetic corpus");
  SynthConfig synth_config;
  std::string synth_out;
  synth->add_option("--out", synth_out, "output JSON-lines file")->required();
  synth->add_option("--users", synth_config.n_users, "number of users")
      ->capture_default_str();
  synth->add_option("--items", synth_config.n_items, "number of items")
      ->capture_default_str();
  synth->add_option("--reviews", synth_config.n_reviews, "number of reviews")
      ->capture_default_str();
  synth->add_option("--seed", synth_config.seed, "generator seed")
      ->capture_default_str();
  synth->callback([&] {
    SynthCorpus corpus = generate_planted(synth_config);
    write_synth_corpus(corpus, synth_out);
    std::cout << "wrote " << synth_out << ": reviews="
              << corpus.reviews.size() << " vocab="
              << corpus.positive_words.size() + corpus.negative_words.size() +
                     corpus.filler_words.size()
              << "\n";
  });

  // train
  auto* train_cmd =
      app.add_subcommand("train", "train the full model on a dataset");
  std::string train_data, train_out = "model.bin", train_metrics;
  HyperFlags train_hp;
  add_data_option(train_cmd, train_data);
  train_hp.attach(train_cmd);
  train_cmd->add_option("--out", train_out, "model file to write")
      ->capture_default_str();
  train_cmd->add_option("--metrics", train_metrics,
                        "metrics log path (default: alongside --out)");
  train_cmd->callback([&] {
    Dataset ds = load_dataset(train_data);
    TrainingRun run = train(ds, train_hp.hp);
    save_model(run.best_parameters, vocabulary_hash(ds.vocab), train_out);
    const fs::path metrics = metrics_path_for(train_metrics, train_out);
    write_metrics_log(metrics, run.history);
    std::cout << "best_epoch=" << run.best_epoch
              << " valid_mse=" << format_double(run.best_validation_mse)
              << " model=" << train_out << " metrics=" << metrics.string()
              << "\n";
  });

  // train-baseline
  auto* baseline = app.add_subcommand(
      "train-baseline", "train the offset or biased-SVD baseline");
  std::string base_model = "offset", base_data, base_out = "baseline.bin",
              base_metrics;
  bool base_freeze = false;
  HyperFlags base_hp;
  baseline->add_option("--model", base_model, "baseline kind")
      ->check(CLI::IsMember({"offset", "svd"}))
      ->capture_default_str();
  add_data_option(baseline, base_data);
  base_hp.attach(baseline, /*with_lambda=*/false);
  baseline->add_option("--out", base_out, "model file to write")
      ->capture_default_str();
  baseline->add_option("--metrics", base_metrics,
                       "metrics log path (default: alongside --out)");
  baseline->add_flag("--freeze-latents", base_freeze,
                     "pin SVD latent matrices at zero (biased mean model)");
  baseline->callback([&] {
    Dataset ds = load_dataset(base_data);
    const fs::path metrics = metrics_path_for(base_metrics, base_out);
    if (base_model == "offset") {
      OffsetModel model = fit_offset(ds.train);
      save_model(model, base_out);
      const double train_mse =
          evaluate_mse([&](std::uint32_t u, std::uint32_t i) {
            return predict(model, u, i);
          }, ds.train).mse;
      const double valid_mse =
          evaluate_mse([&](std::uint32_t u, std::uint32_t i) {
            return predict(model, u, i);
          }, ds.validation).mse;
      write_metrics_log(metrics, std::vector<EpochPoint>{
                                     {0, train_mse, valid_mse}});
      std::cout << "global_mean=" << format_double(model.global_mean)
                << " valid_mse=" << format_double(valid_mse)
                << " model=" << base_out << "\n";
    } else {
      SvdTrainingRun run =
          fit_svd(ds, base_hp.hp, SvdOptions{base_freeze});
      save_model(run.best_parameters, base_out);
      write_metrics_log(metrics, run.history);
      std::cout << "best_epoch=" << run.best_epoch
                << " valid_mse=" << format_double(run.best_validation_mse)
                << " model=" << base_out << "\n";
    }
  });

  // grid
  auto* grid_cmd = app.add_subcommand(
      "grid", "exhaustive hyperparameter search with parallel cells");
  std::string grid_data, grid_model = "transrev", grid_out_dir = "runs";
  std::size_t grid_threads = std::thread::hardware_concurrency();
  HyperFlags grid_hp;
  GridSpec grid_spec;
  add_data_option(grid_cmd, grid_data);
  grid_cmd->add_option("--model", grid_model, "model family to search")
      ->check(CLI::IsMember({"transrev", "svd"}))
      ->capture_default_str();
  grid_hp.attach(grid_cmd);
  grid_cmd->add_option("--out-dir", grid_out_dir, "directory for results")
      ->capture_default_str();
  grid_cmd
      ->add_option("--grid-lr", grid_spec.learning_rates,
                   "learning rates to sweep")
      ->delimiter(',');
  grid_cmd
      ->add_option("--grid-mu", grid_spec.mus,
                   "regularization weights to sweep")
      ->delimiter(',');
  grid_cmd
      ->add_option("--grid-lambda", grid_spec.lambdas,
                   "translation weights to sweep")
      ->delimiter(',');
  grid_cmd->add_option("--threads", grid_threads, "parallel cells");
  grid_cmd->callback([&] {
    Dataset ds = load_dataset(grid_data);
    fs::create_directories(grid_out_dir);
    const fs::path dir = grid_out_dir;
    auto write_cells = [&](const std::vector<GridCell>& cells,
                           bool with_lambda) {
      auto out = open_output(dir / "cells.tsv");
      out << (with_lambda ? "cell\tlr\tmu\tlambda\tvalid_mse\tbest_epoch\n"
                          : "cell\tlr\tmu\tvalid_mse\tbest_epoch\n");
      for (const GridCell& c : cells) {
        out << c.index << '\t' << format_double(c.hp.learning_rate) << '\t'
            << format_double(c.hp.mu);
        if (with_lambda) out << '\t' << format_double(c.hp.lambda);
        if (c.diverged)
          out << "\tdiverged\t-\n";
        else
          out << '\t' << format_double(c.valid_mse) << '\t' << c.best_epoch
              << '\n';
      }
    };
    if (grid_model == "transrev") {
      GridResult result = grid_search(ds, grid_hp.hp, grid_spec, grid_threads);
      write_cells(result.cells, true);
      save_model(result.best_run.best_parameters, vocabulary_hash(ds.vocab),
                 dir / "model.bin");
      write_metrics_log(dir / "metrics.tsv", result.best_run.history);
      const GridCell& best = result.cells[result.best_index];
      std::cout << "best_cell=" << best.index
                << " lr=" << format_double(best.hp.learning_rate)
                << " mu=" << format_double(best.hp.mu)
                << " lambda=" << format_double(best.hp.lambda)
                << " valid_mse=" << format_double(best.valid_mse) << "\n";
    } else {
      SvdGridResult result =
          svd_grid_search(ds, grid_hp.hp, grid_spec, grid_threads);
      write_cells(result.cells, false);
      save_model(result.best_run.best_parameters, dir / "model.bin");
      write_metrics_log(dir / "metrics.tsv", result.best_run.history);
      const GridCell& best = result.cells[result.best_index];
      std::cout << "best_cell=" << best.index
                << " lr=" << format_double(best.hp.learning_rate)
                << " mu=" << format_double(best.hp.mu)
                << " valid_mse=" << format_double(best.valid_mse) << "\n";
    }
  });

  // evaluate
  auto* evaluate = app.add_subcommand(
      "evaluate", "mean squared error of a saved model on a split");
  std::string eval_model, eval_data, eval_split = "test";
  evaluate->add_option("--model", eval_model, "model file")->required();
  add_data_option(evaluate, eval_data);
  evaluate->add_option("--split", eval_split, "train, validation or test")
      ->capture_default_str();
  evaluate->callback([&] {
    Dataset ds = load_dataset(eval_data);
    ModelFile file = load_model(eval_model);
    if (const auto* params = std::get_if<ModelParameters>(&file.model);
        params && file.vocab_hash != vocabulary_hash(ds.vocab))
      throw std::runtime_error(
          "model was trained on a different vocabulary than this dataset");
    EvalReport report = evaluate_mse(
        [&](std::uint32_t u, std::uint32_t i) { return predict(file, u, i); },
        pick_split(ds, eval_split));
    std::cout << "mse=" << format_double(report.mse) << " n=" << report.n
              << "\n";
  });

  // retrieve
  auto* retrieve = app.add_subcommand(
      "retrieve", "nearest training reviews for a (user, item) pair");
  std::string ret_model, ret_data, ret_user, ret_item;
  std::size_t ret_top = 5;
  bool ret_same_item = false;
  retrieve->add_option("--model", ret_model, "model file")->required();
  add_data_option(retrieve, ret_data);
  retrieve->add_option("--user", ret_user, "raw user id or dense index")
      ->required();
  retrieve->add_option("--item", ret_item, "raw item id or dense index")
      ->required();
  retrieve->add_option("--top", ret_top, "neighbors to return")
      ->capture_default_str();
  retrieve->add_flag("--same-item-only", ret_same_item,
                     "only consider training reviews of the queried item");
  retrieve->callback([&] {
    Dataset ds = load_dataset(ret_data, /*with_texts=*/true);
    ModelFile file = load_model(ret_model);
    const ModelParameters& params = require_full_model(file, ds);
    const std::uint32_t user = resolve_id(ds.user_ids, ret_user, "user");
    const std::uint32_t item = resolve_id(ds.item_ids, ret_item, "item");
    ReviewIndex index(params, ds.train);
    RetrievalResult result =
        retrieve_reviews(params, index, user, item, ret_top, ret_same_item);
    std::cout << "query user=" << ds.user_ids[user]
              << " item=" << ds.item_ids[item] << "\n";
    for (std::size_t rank = 0; rank < result.neighbors.size(); ++rank) {
      const RetrievedReview& nb = result.neighbors[rank];
      std::cout << rank + 1 << '\t' << format_double(nb.distance) << '\t'
                << format_double(nb.rating) << '\t' << ds.item_ids[nb.item]
                << '\t' << ds.train_texts[nb.train_index] << "\n";
    }
  });

  // export-words
  auto* export_words = app.add_subcommand(
      "export-words", "write per-word scores and embeddings as TSV");
  std::string words_model, words_data, words_out = "words.tsv";
  export_words->add_option("--model", words_model, "model file")->required();
  add_data_option(export_words, words_data);
  export_words->add_option("--out", words_out, "output TSV path")
      ->capture_default_str();
  export_words->callback([&] {
    Dataset ds = load_dataset(words_data);
    ModelFile file = load_model(words_model);
    const ModelParameters& params = require_full_model(file, ds);
    export_word_scores(params, ds.vocab, ds.train, words_out);
    std::cout << "wrote " << words_out << ": words=" << ds.vocab.size()
              << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    app.exit(e);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
