#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <limits>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "transrev/corpus.hpp"
#include "transrev/evaluation.hpp"
#include "transrev/io_util.hpp"
#include "transrev/model.hpp"
#include "transrev/rng.hpp"

namespace transrev {

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch)
      : std::runtime_error("training diverged at epoch " +
                           std::to_string(epoch) + ", batch " +
                           std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

// Shuffle 0..n-1 and slice into consecutive batches. The last batch may be
// short unless drop_last; with drop_last and n < batch_size the epoch is
// empty. Every index appears exactly once before slicing.
inline std::vector<std::vector<std::uint32_t>> make_epoch_batches(
    std::size_t n, std::size_t batch_size, bool drop_last, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::uint32_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
  rng.shuffle(order);
  std::vector<std::vector<std::uint32_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

struct EpochPoint {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // epoch objective, averaged per example
  double valid_mse = 0.0;
};

template <typename Params>
struct TrainingRunT {
  Params best_parameters;
  double best_validation_mse = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::vector<EpochPoint> history;  // one row per validation point
  Hyperparameters hyperparameters;
};

using TrainingRun = TrainingRunT<ModelParameters>;

inline void write_metrics_log(const std::filesystem::path& path,
                              std::span<const EpochPoint> history) {
  auto out = open_output(path);
  out << "epoch\ttrain_loss\tvalid_mse\n";
  for (const EpochPoint& p : history)
    out << p.epoch << '\t' << format_double(p.train_loss) << '\t'
        << format_double(p.valid_mse) << '\n';
}

namespace detail {

template <typename Params>
void sgd_step(Params& params, const Params& grads, double lr) {
  std::vector<std::span<double>> dst;
  params.for_each_tensor([&](std::span<double> t) { dst.push_back(t); });
  std::vector<std::span<const double>> src;
  grads.for_each_tensor([&](std::span<const double> t) { src.push_back(t); });
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t j = 0; j < dst[i].size(); ++j)
      dst[i][j] -= lr * src[i][j];
}

// Mini-batch SGD with periodic validation and best-snapshot selection,
// shared by the full model and the factorization baseline. A Problem binds
// the data and exposes:
//   initial()                                  -> Params
//   loss_and_gradients(params, indices, scale, grads) -> double
//   validation_mse(params)                     -> double
// Gradients are summed over the batch and applied in one update. reg_scale
// = |batch| / n_train, so an epoch regularizes each parameter exactly once.
template <typename Problem>
auto run_sgd(Problem& problem, std::size_t n_train, const Hyperparameters& hp)
    -> TrainingRunT<decltype(problem.initial())> {
  hp.validate();
  if (n_train == 0) throw std::invalid_argument("empty training set");
  using Params = decltype(problem.initial());

  Params params = problem.initial();
  Params grads = params;  // same shape; zeroed by loss_and_gradients
  TrainingRunT<Params> run;
  run.hyperparameters = hp;
  Rng shuffle_rng(Rng::mix(hp.seed, 0x65706f6368ULL));  // epoch stream
  // Clamp so short runs still validate at least once, at epoch
  // validate_every itself; history epochs stay exact multiples of it.
  const std::size_t validate_every =
      std::min(std::max<std::size_t>(hp.validate_every, 1), hp.max_epochs);
  const double inv_n = 1.0 / static_cast<double>(n_train);

  for (std::size_t epoch = 1; epoch <= hp.max_epochs; ++epoch) {
    auto batches =
        make_epoch_batches(n_train, hp.batch_size, hp.drop_last, shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const double reg_scale =
          static_cast<double>(batches[b].size()) * inv_n;
      const double loss =
          problem.loss_and_gradients(params, batches[b], reg_scale, grads);
      if (!std::isfinite(loss)) throw TrainingDiverged(epoch, b);
      epoch_loss += loss;
      sgd_step(params, grads, hp.learning_rate);
    }
    if (epoch % validate_every == 0) {
      const double valid_mse = problem.validation_mse(params);
      run.history.push_back({epoch, epoch_loss * inv_n, valid_mse});
      if (valid_mse < run.best_validation_mse) {
        run.best_validation_mse = valid_mse;
        run.best_epoch = epoch;
        run.best_parameters = params;
      }
    }
  }
  return run;
}

}  // namespace detail

struct ProblemDims {
  std::size_t n_users = 0, n_items = 0, vocab_size = 0;
};

namespace detail {

struct TransRevProblem {
  std::span<const Interaction> train;
  std::span<const Interaction> valid;
  ProblemDims dims;
  const Hyperparameters& hp;
  std::vector<Interaction> buffer;  // gathered batch

  ModelParameters initial() const {
    return init_parameters(hp, dims.n_users, dims.n_items, dims.vocab_size);
  }
  double loss_and_gradients(const ModelParameters& params,
                            std::span<const std::uint32_t> indices,
                            double reg_scale, Gradients& grads) {
    buffer.assign(indices.size(), {});
    for (std::size_t i = 0; i < indices.size(); ++i)
      buffer[i] = train[indices[i]];
    return batch_loss_and_gradients(params, buffer, hp, reg_scale, grads);
  }
  double validation_mse(const ModelParameters& params) const {
    return evaluate_mse(params, valid).mse;
  }
};

}  // namespace detail

inline TrainingRun train(std::span<const Interaction> train_set,
                         std::span<const Interaction> valid_set,
                         const ProblemDims& dims, const Hyperparameters& hp) {
  if (valid_set.empty())
    throw std::invalid_argument("empty validation set");
  detail::TransRevProblem problem{train_set, valid_set, dims, hp, {}};
  return detail::run_sgd(problem, train_set.size(), hp);
}

inline TrainingRun train(const Dataset& dataset, const Hyperparameters& hp) {
  return train(dataset.train, dataset.validation,
               {dataset.n_users(), dataset.n_items(), dataset.vocab.size()},
               hp);
}

// Runs fn(0..n-1) across a small thread pool; exceptions propagate after all
// workers join. Work is claimed through an atomic counter, so results must be
// written to per-index slots to stay deterministic.
template <typename Fn>
void parallel_for_index(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct GridSpec {
  std::vector<double> learning_rates{0.001, 0.005, 0.01, 0.05, 0.1};
  std::vector<double> mus{1e-5, 5e-5, 1e-4, 5e-4, 1e-3};
  std::vector<double> lambdas{0.1, 0.25, 0.5, 1.0};
};

struct GridCell {
  std::size_t index = 0;
  Hyperparameters hp;
  double valid_mse = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  bool diverged = false;
};

struct GridResult {
  std::vector<GridCell> cells;  // lexicographic by (lr, mu, lambda) position
  std::size_t best_index = 0;
  TrainingRun best_run;  // retrained winner, bit-identical to its cell
};

// Exhaustive search over the hyperparameter grid. Cells run in parallel but
// each is seeded from (base seed, cell index), so the outcome does not depend
// on thread count or scheduling. Divergent cells are recorded and skipped in
// selection; ties prefer the earliest cell.
inline GridResult grid_search(std::span<const Interaction> train_set,
                              std::span<const Interaction> valid_set,
                              const ProblemDims& dims,
                              const Hyperparameters& base,
                              const GridSpec& grid = {},
                              std::size_t threads =
                                  std::thread::hardware_concurrency()) {
  if (grid.learning_rates.empty() || grid.mus.empty() || grid.lambdas.empty())
    throw std::invalid_argument("empty hyperparameter grid");
  GridResult result;
  const std::size_t n_cells =
      grid.learning_rates.size() * grid.mus.size() * grid.lambdas.size();
  result.cells.resize(n_cells);
  for (std::size_t idx = 0; idx < n_cells; ++idx) {
    const std::size_t li = idx / (grid.mus.size() * grid.lambdas.size());
    const std::size_t mi = idx / grid.lambdas.size() % grid.mus.size();
    const std::size_t gi = idx % grid.lambdas.size();
    GridCell& cell = result.cells[idx];
    cell.index = idx;
    cell.hp = base;
    cell.hp.learning_rate = grid.learning_rates[li];
    cell.hp.mu = grid.mus[mi];
    cell.hp.lambda = grid.lambdas[gi];
    cell.hp.seed = Rng::mix(base.seed, idx);
  }
  parallel_for_index(n_cells, threads, [&](std::size_t idx) {
    GridCell& cell = result.cells[idx];
    try {
      TrainingRun run = train(train_set, valid_set, dims, cell.hp);
      cell.valid_mse = run.best_validation_mse;
      cell.best_epoch = run.best_epoch;
    } catch (const TrainingDiverged&) {
      cell.diverged = true;
    }
  });
  std::size_t best = n_cells;
  for (std::size_t idx = 0; idx < n_cells; ++idx) {
    const GridCell& cell = result.cells[idx];
    if (cell.diverged) continue;
    if (best == n_cells || cell.valid_mse < result.cells[best].valid_mse)
      best = idx;
  }
  if (best == n_cells)
    throw std::runtime_error("every grid cell diverged");
  result.best_index = best;
  result.best_run = train(train_set, valid_set, dims, result.cells[best].hp);
  return result;
}

inline GridResult grid_search(const Dataset& dataset,
                              const Hyperparameters& base,
                              const GridSpec& grid = {},
                              std::size_t threads =
                                  std::thread::hardware_concurrency()) {
  return grid_search(
      dataset.train, dataset.validation,
      {dataset.n_users(), dataset.n_items(), dataset.vocab.size()}, base, grid,
      threads);
}

}  // namespace transrev
