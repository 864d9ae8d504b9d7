#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "transrev/corpus.hpp"
#include "transrev/model.hpp"
#include "transrev/rng.hpp"
#include "transrev/training.hpp"

namespace transrev {

// Constant predictor: the training-set mean rating.
struct OffsetModel {
  double global_mean = 0.0;
};

inline OffsetModel fit_offset(std::span<const Interaction> train) {
  if (train.empty()) throw std::invalid_argument("empty training set");
  double sum = 0.0;
  for (const Interaction& x : train) sum += x.rating;
  return {sum / static_cast<double>(train.size())};
}

inline double predict(const OffsetModel& model, std::uint32_t, std::uint32_t) {
  return model.global_mean;
}

// Biased matrix factorization: b_0 + b_u + b_i + p_u . q_i.
struct SvdModel {
  std::size_t n_users = 0, n_items = 0, k = 0;
  std::vector<double> p;          // U x k user latents, row-major
  std::vector<double> q;          // I x k item latents
  std::vector<double> user_bias;  // U
  std::vector<double> item_bias;  // I
  double global_bias = 0.0;

  SvdModel() = default;
  SvdModel(std::size_t users, std::size_t items, std::size_t dim)
      : n_users(users),
        n_items(items),
        k(dim),
        p(users * dim, 0.0),
        q(items * dim, 0.0),
        user_bias(users, 0.0),
        item_bias(items, 0.0) {}

  std::span<double> user_latent(std::uint32_t u) {
    return {p.data() + static_cast<std::size_t>(u) * k, k};
  }
  std::span<const double> user_latent(std::uint32_t u) const {
    return {p.data() + static_cast<std::size_t>(u) * k, k};
  }
  std::span<double> item_latent(std::uint32_t i) {
    return {q.data() + static_cast<std::size_t>(i) * k, k};
  }
  std::span<const double> item_latent(std::uint32_t i) const {
    return {q.data() + static_cast<std::size_t>(i) * k, k};
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(std::span<double>(p));
    fn(std::span<double>(q));
    fn(std::span<double>(user_bias));
    fn(std::span<double>(item_bias));
    fn(std::span<double>(&global_bias, 1));
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    fn(std::span<const double>(p));
    fn(std::span<const double>(q));
    fn(std::span<const double>(user_bias));
    fn(std::span<const double>(item_bias));
    fn(std::span<const double>(&global_bias, 1));
  }

  double squared_l2() const {
    double sum = 0.0;
    for_each_tensor([&](std::span<const double> t) {
      for (double v : t) sum += v * v;
    });
    return sum;
  }
  bool is_finite() const {
    bool ok = true;
    for_each_tensor([&](std::span<const double> t) {
      for (double v : t)
        if (!std::isfinite(v)) ok = false;
    });
    return ok;
  }
  void zero() {
    for_each_tensor([](std::span<double> t) {
      std::fill(t.begin(), t.end(), 0.0);
    });
  }
  bool operator==(const SvdModel& o) const {
    return n_users == o.n_users && n_items == o.n_items && k == o.k &&
           p == o.p && q == o.q && user_bias == o.user_bias &&
           item_bias == o.item_bias && global_bias == o.global_bias;
  }
};

inline double predict(const SvdModel& model, std::uint32_t user,
                      std::uint32_t item) {
  if (user >= model.n_users)
    throw std::out_of_range("user index out of range");
  if (item >= model.n_items)
    throw std::out_of_range("item index out of range");
  auto pu = model.user_latent(user);
  auto qi = model.item_latent(item);
  double dot = 0.0;
  for (std::size_t j = 0; j < model.k; ++j) dot += pu[j] * qi[j];
  return model.global_bias + model.user_bias[user] + model.item_bias[item] +
         dot;
}

struct SvdOptions {
  // Pin the latent matrices at zero: the model degenerates to the biased
  // mean b_0 + b_u + b_i. With zero init the latent gradients vanish
  // identically, so zero init alone enforces it.
  bool freeze_latents = false;
};

using SvdTrainingRun = TrainingRunT<SvdModel>;

namespace detail {

inline SvdModel init_svd(const Hyperparameters& hp, std::size_t n_users,
                         std::size_t n_items, bool freeze_latents) {
  SvdModel model(n_users, n_items, hp.k);
  if (freeze_latents) return model;
  Rng rng(Rng::mix(hp.seed, 0x73766400ULL));  // svd init stream
  const double bound = std::sqrt(3.0 / static_cast<double>(hp.k));
  for (double& v : model.p) v = rng.uniform(-bound, bound);
  for (double& v : model.q) v = rng.uniform(-bound, bound);
  return model;
}

struct SvdProblem {
  std::span<const Interaction> train;
  std::span<const Interaction> valid;
  std::size_t n_users, n_items;
  const Hyperparameters& hp;
  bool freeze_latents;

  SvdModel initial() const {
    return init_svd(hp, n_users, n_items, freeze_latents);
  }

  double loss_and_gradients(const SvdModel& model,
                            std::span<const std::uint32_t> indices,
                            double reg_scale, SvdModel& grads) const {
    grads.zero();
    double loss = 0.0;
    for (std::uint32_t idx : indices) {
      const Interaction& x = train[idx];
      const double err = predict(model, x.user, x.item) - x.rating;
      loss += err * err;
      const double dpred = 2.0 * err;
      auto pu = model.user_latent(x.user);
      auto qi = model.item_latent(x.item);
      auto gp = grads.user_latent(x.user);
      auto gq = grads.item_latent(x.item);
      for (std::size_t j = 0; j < model.k; ++j) {
        gp[j] += dpred * qi[j];
        gq[j] += dpred * pu[j];
      }
      grads.user_bias[x.user] += dpred;
      grads.item_bias[x.item] += dpred;
      grads.global_bias += dpred;
    }
    if (hp.mu > 0.0) {
      loss += reg_scale * hp.mu * model.squared_l2();
      const double decay = 2.0 * reg_scale * hp.mu;
      std::vector<std::span<double>> dst;
      grads.for_each_tensor([&](std::span<double> t) { dst.push_back(t); });
      std::vector<std::span<const double>> src;
      model.for_each_tensor(
          [&](std::span<const double> t) { src.push_back(t); });
      for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t j = 0; j < dst[i].size(); ++j)
          dst[i][j] += decay * src[i][j];
    }
    return loss;
  }

  double validation_mse(const SvdModel& model) const {
    return evaluate_mse(
               [&](std::uint32_t u, std::uint32_t i) {
                 return predict(model, u, i);
               },
               valid)
        .mse;
  }
};

}  // namespace detail

// Same epoch/validation/snapshot protocol as the full model; the translation
// weight in hp is simply unused here.
inline SvdTrainingRun fit_svd(std::span<const Interaction> train_set,
                              std::span<const Interaction> valid_set,
                              std::size_t n_users, std::size_t n_items,
                              const Hyperparameters& hp,
                              const SvdOptions& options = {}) {
  if (valid_set.empty()) throw std::invalid_argument("empty validation set");
  detail::SvdProblem problem{train_set, valid_set,         n_users,
                             n_items,   hp,                options.freeze_latents};
  return detail::run_sgd(problem, train_set.size(), hp);
}

inline SvdTrainingRun fit_svd(const Dataset& dataset,
                              const Hyperparameters& hp,
                              const SvdOptions& options = {}) {
  return fit_svd(dataset.train, dataset.validation, dataset.n_users(),
                 dataset.n_items(), hp, options);
}

struct SvdGridResult {
  std::vector<GridCell> cells;  // lexicographic by (lr, mu) position
  std::size_t best_index = 0;
  SvdTrainingRun best_run;
};

// Baseline grid: learning rate and regularization weight only.
inline SvdGridResult svd_grid_search(std::span<const Interaction> train_set,
                                     std::span<const Interaction> valid_set,
                                     std::size_t n_users, std::size_t n_items,
                                     const Hyperparameters& base,
                                     const GridSpec& grid = {},
                                     std::size_t threads =
                                         std::thread::hardware_concurrency()) {
  if (grid.learning_rates.empty() || grid.mus.empty())
    throw std::invalid_argument("empty hyperparameter grid");
  SvdGridResult result;
  const std::size_t n_cells = grid.learning_rates.size() * grid.mus.size();
  result.cells.resize(n_cells);
  for (std::size_t idx = 0; idx < n_cells; ++idx) {
    GridCell& cell = result.cells[idx];
    cell.index = idx;
    cell.hp = base;
    cell.hp.learning_rate = grid.learning_rates[idx / grid.mus.size()];
    cell.hp.mu = grid.mus[idx % grid.mus.size()];
    cell.hp.seed = Rng::mix(base.seed, idx);
  }
  parallel_for_index(n_cells, threads, [&](std::size_t idx) {
    GridCell& cell = result.cells[idx];
    try {
      SvdTrainingRun run =
          fit_svd(train_set, valid_set, n_users, n_items, cell.hp);
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
  if (best == n_cells) throw std::runtime_error("every grid cell diverged");
  result.best_index = best;
  result.best_run =
      fit_svd(train_set, valid_set, n_users, n_items, result.cells[best].hp);
  return result;
}

inline SvdGridResult svd_grid_search(const Dataset& dataset,
                                     const Hyperparameters& base,
                                     const GridSpec& grid = {},
                                     std::size_t threads =
                                         std::thread::hardware_concurrency()) {
  return svd_grid_search(dataset.train, dataset.validation, dataset.n_users(),
                         dataset.n_items(), base, grid, threads);
}

}  // namespace transrev
