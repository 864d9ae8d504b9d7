#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "transrev/corpus.hpp"
#include "transrev/rng.hpp"

namespace transrev {

struct Hyperparameters {
  std::size_t k = 16;            // embedding dimension
  double lambda = 0.5;           // translation-loss weight
  double mu = 1e-4;              // L2 regularization weight
  double learning_rate = 0.01;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t validate_every = 10;  // epochs between validation points
  std::uint64_t seed = 42;
  bool drop_last = false;  // drop the final partial batch each epoch

  void validate() const {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    if (lambda < 0) throw std::invalid_argument("lambda must be >= 0");
    if (mu < 0) throw std::invalid_argument("mu must be >= 0");
    if (learning_rate <= 0)
      throw std::invalid_argument("learning rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  }
};

// All learnable tensors. The same structure doubles as the gradient
// accumulator. Tensor traversal order is pinned (serialization, finiteness
// checks and the finite-difference harness all rely on it).
struct ModelParameters {
  std::size_t n_users = 0, n_items = 0, vocab_size = 0, k = 0;

  std::vector<double> word_embeddings;  // V x k, row-major
  std::vector<double> user_embeddings;  // U x k
  std::vector<double> item_embeddings;  // I x k
  std::vector<double> review_bias;      // k  (h_0)
  std::vector<double> regressor_weights;  // k  (w)
  std::vector<double> user_bias;        // U
  std::vector<double> item_bias;        // I
  double global_bias = 0.0;             // b_0

  ModelParameters() = default;
  ModelParameters(std::size_t users, std::size_t items, std::size_t vocab,
                  std::size_t dim)
      : n_users(users),
        n_items(items),
        vocab_size(vocab),
        k(dim),
        word_embeddings(vocab * dim, 0.0),
        user_embeddings(users * dim, 0.0),
        item_embeddings(items * dim, 0.0),
        review_bias(dim, 0.0),
        regressor_weights(dim, 0.0),
        user_bias(users, 0.0),
        item_bias(items, 0.0) {}

  std::span<double> word(std::uint32_t t) {
    return {word_embeddings.data() + static_cast<std::size_t>(t) * k, k};
  }
  std::span<const double> word(std::uint32_t t) const {
    return {word_embeddings.data() + static_cast<std::size_t>(t) * k, k};
  }
  std::span<double> user(std::uint32_t u) {
    return {user_embeddings.data() + static_cast<std::size_t>(u) * k, k};
  }
  std::span<const double> user(std::uint32_t u) const {
    return {user_embeddings.data() + static_cast<std::size_t>(u) * k, k};
  }
  std::span<double> item(std::uint32_t i) {
    return {item_embeddings.data() + static_cast<std::size_t>(i) * k, k};
  }
  std::span<const double> item(std::uint32_t i) const {
    return {item_embeddings.data() + static_cast<std::size_t>(i) * k, k};
  }

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn(std::span<double>(word_embeddings));
    fn(std::span<double>(user_embeddings));
    fn(std::span<double>(item_embeddings));
    fn(std::span<double>(review_bias));
    fn(std::span<double>(regressor_weights));
    fn(std::span<double>(user_bias));
    fn(std::span<double>(item_bias));
    fn(std::span<double>(&global_bias, 1));
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    fn(std::span<const double>(word_embeddings));
    fn(std::span<const double>(user_embeddings));
    fn(std::span<const double>(item_embeddings));
    fn(std::span<const double>(review_bias));
    fn(std::span<const double>(regressor_weights));
    fn(std::span<const double>(user_bias));
    fn(std::span<const double>(item_bias));
    fn(std::span<const double>(&global_bias, 1));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](std::span<const double> t) { n += t.size(); });
    return n;
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

  bool operator==(const ModelParameters& o) const {
    return n_users == o.n_users && n_items == o.n_items &&
           vocab_size == o.vocab_size && k == o.k &&
           word_embeddings == o.word_embeddings &&
           user_embeddings == o.user_embeddings &&
           item_embeddings == o.item_embeddings &&
           review_bias == o.review_bias &&
           regressor_weights == o.regressor_weights &&
           user_bias == o.user_bias && item_bias == o.item_bias &&
           global_bias == o.global_bias;
  }
};

using Gradients = ModelParameters;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Glorot-uniform init. Embedding rows (and h_0) use fan_in = fan_out = k,
// giving bound sqrt(3/k); the regressor weights use fans (k, 1). Bias terms
// start at zero. Fill order is pinned for seed determinism.
inline ModelParameters init_parameters(const Hyperparameters& hp,
                                       std::size_t n_users,
                                       std::size_t n_items,
                                       std::size_t vocab_size) {
  hp.validate();
  if (n_users < 1 || n_items < 1 || vocab_size < 1)
    throw std::invalid_argument("need at least one user, item and word");
  ModelParameters params(n_users, n_items, vocab_size, hp.k);
  Rng rng(Rng::mix(hp.seed, 0x696e6974ULL));  // init stream
  const double kd = static_cast<double>(hp.k);
  const double emb_bound = std::sqrt(3.0 / kd);
  const double w_bound = std::sqrt(6.0 / (kd + 1.0));
  auto fill = [&](std::span<double> t, double bound) {
    for (double& v : t) v = rng.uniform(-bound, bound);
  };
  fill(params.word_embeddings, emb_bound);
  fill(params.user_embeddings, emb_bound);
  fill(params.item_embeddings, emb_bound);
  fill(params.review_bias, emb_bound);
  fill(params.regressor_weights, w_bound);
  return params;
}

namespace detail {

inline void check_user_item(const ModelParameters& p, std::uint32_t user,
                            std::uint32_t item) {
  if (user >= p.n_users)
    throw std::out_of_range("user index " + std::to_string(user) +
                            " out of range (U=" + std::to_string(p.n_users) + ")");
  if (item >= p.n_items)
    throw std::out_of_range("item index " + std::to_string(item) +
                            " out of range (I=" + std::to_string(p.n_items) + ")");
}

// h = mean of token embeddings + h_0; empty token list leaves exactly h_0.
inline void embed_review_into(const ModelParameters& p,
                              std::span<const std::uint32_t> tokens,
                              std::span<double> h) {
  std::copy(p.review_bias.begin(), p.review_bias.end(), h.begin());
  if (tokens.empty()) return;
  const double inv_n = 1.0 / static_cast<double>(tokens.size());
  for (std::uint32_t t : tokens) {
    if (t >= p.vocab_size)
      throw std::out_of_range("token id " + std::to_string(t) +
                              " out of range (V=" +
                              std::to_string(p.vocab_size) + ")");
    auto v = p.word(t);
    for (std::size_t j = 0; j < p.k; ++j) h[j] += inv_n * v[j];
  }
}

}  // namespace detail

inline std::vector<double> embed_review(const ModelParameters& p,
                                        std::span<const std::uint32_t> tokens) {
  std::vector<double> h(p.k);
  detail::embed_review_into(p, tokens, h);
  return h;
}

// g(h) = sigma(h) . w + b_u + b_i + b_0, sigma applied elementwise.
// Output is intentionally unclipped.
inline double predict_from_embedding(const ModelParameters& p,
                                     std::span<const double> h,
                                     std::uint32_t user, std::uint32_t item) {
  detail::check_user_item(p, user, item);
  double dot = 0.0;
  for (std::size_t j = 0; j < p.k; ++j)
    dot += sigmoid(h[j]) * p.regressor_weights[j];
  return dot + p.user_bias[user] + p.item_bias[item] + p.global_bias;
}

// r = e_u + h - e_i and its (unsquared) L2 norm.
inline std::pair<std::vector<double>, double> translation_residual(
    const ModelParameters& p, std::uint32_t user, std::span<const double> h,
    std::uint32_t item) {
  detail::check_user_item(p, user, item);
  auto eu = p.user(user);
  auto ei = p.item(item);
  std::vector<double> r(p.k);
  double sq = 0.0;
  for (std::size_t j = 0; j < p.k; ++j) {
    r[j] = eu[j] + h[j] - ei[j];
    sq += r[j] * r[j];
  }
  return {std::move(r), std::sqrt(sq)};
}

// Intermediates of one training-time forward pass.
struct ForwardTrace {
  std::vector<double> review_embedding;      // h
  std::vector<double> sigmoid_activations;   // sigma(h), componentwise in (0,1)
  double prediction = 0.0;
  std::vector<double> translation_residual;  // e_u + h - e_i
  double residual_norm = 0.0;
};

inline ForwardTrace forward(const ModelParameters& p, const Interaction& x) {
  ForwardTrace trace;
  trace.review_embedding = embed_review(p, x.tokens);
  trace.sigmoid_activations.resize(p.k);
  for (std::size_t j = 0; j < p.k; ++j)
    trace.sigmoid_activations[j] = sigmoid(trace.review_embedding[j]);
  trace.prediction =
      predict_from_embedding(p, trace.review_embedding, x.user, x.item);
  auto [r, norm] = translation_residual(p, x.user, trace.review_embedding, x.item);
  trace.translation_residual = std::move(r);
  trace.residual_norm = norm;
  return trace;
}

// Joint objective over one batch:
//   sum (g(h) - r)^2  +  lambda * sum ||e_u + h - e_i||_2
//   +  reg_scale * mu * sum theta^2  (over every parameter)
// reg_scale defaults to the full regularizer; the trainer passes
// |batch|/|train| so one epoch applies mu exactly once per parameter.
inline double batch_loss(const ModelParameters& p,
                         std::span<const Interaction> batch,
                         const Hyperparameters& hp, double reg_scale = 1.0) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double loss = 0.0;
  std::vector<double> h(p.k);
  for (const Interaction& x : batch) {
    detail::check_user_item(p, x.user, x.item);
    detail::embed_review_into(p, x.tokens, h);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.k; ++j)
      dot += sigmoid(h[j]) * p.regressor_weights[j];
    const double pred =
        dot + p.user_bias[x.user] + p.item_bias[x.item] + p.global_bias;
    const double err = pred - x.rating;
    loss += err * err;
    auto eu = p.user(x.user);
    auto ei = p.item(x.item);
    double sq = 0.0;
    for (std::size_t j = 0; j < p.k; ++j) {
      const double r = eu[j] + h[j] - ei[j];
      sq += r * r;
    }
    loss += hp.lambda * std::sqrt(sq);
  }
  if (hp.mu > 0.0) loss += reg_scale * hp.mu * p.squared_l2();
  return loss;
}

// Exact analytic gradient of batch_loss, accumulated into `grads` (which is
// zeroed first). Returns the batch loss from the same pass. The gradient of
// ||r||_2 at r = 0 uses the epsilon guard r / max(||r||, 1e-12).
inline double batch_loss_and_gradients(const ModelParameters& p,
                                       std::span<const Interaction> batch,
                                       const Hyperparameters& hp,
                                       double reg_scale, Gradients& grads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  grads.zero();
  double loss = 0.0;
  std::vector<double> h(p.k), s(p.k), gh(p.k);
  for (const Interaction& x : batch) {
    detail::check_user_item(p, x.user, x.item);
    detail::embed_review_into(p, x.tokens, h);
    double dot = 0.0;
    for (std::size_t j = 0; j < p.k; ++j) {
      s[j] = sigmoid(h[j]);
      dot += s[j] * p.regressor_weights[j];
    }
    const double pred =
        dot + p.user_bias[x.user] + p.item_bias[x.item] + p.global_bias;
    const double err = pred - x.rating;
    loss += err * err;

    const double dpred = 2.0 * err;
    for (std::size_t j = 0; j < p.k; ++j) {
      grads.regressor_weights[j] += dpred * s[j];
      gh[j] = dpred * p.regressor_weights[j] * s[j] * (1.0 - s[j]);
    }
    grads.user_bias[x.user] += dpred;
    grads.item_bias[x.item] += dpred;
    grads.global_bias += dpred;

    auto eu = p.user(x.user);
    auto ei = p.item(x.item);
    auto geu = grads.user(x.user);
    auto gei = grads.item(x.item);
    double sq = 0.0;
    for (std::size_t j = 0; j < p.k; ++j) {
      const double r = eu[j] + h[j] - ei[j];
      sq += r * r;
      s[j] = r;  // reuse as residual scratch
    }
    const double norm = std::sqrt(sq);
    loss += hp.lambda * norm;
    if (hp.lambda > 0.0) {
      const double scale = hp.lambda / std::max(norm, 1e-12);
      for (std::size_t j = 0; j < p.k; ++j) {
        const double g = scale * s[j];
        geu[j] += g;
        gei[j] -= g;
        gh[j] += g;
      }
    }

    if (!x.tokens.empty()) {
      const double inv_n = 1.0 / static_cast<double>(x.tokens.size());
      for (std::uint32_t t : x.tokens) {
        auto gv = grads.word(t);
        for (std::size_t j = 0; j < p.k; ++j) gv[j] += inv_n * gh[j];
      }
    }
    for (std::size_t j = 0; j < p.k; ++j) grads.review_bias[j] += gh[j];
  }

  if (hp.mu > 0.0) {
    loss += reg_scale * hp.mu * p.squared_l2();
    const double decay = 2.0 * reg_scale * hp.mu;
    auto add_reg = [&](std::span<double> g, std::span<const double> theta) {
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += decay * theta[j];
    };
    add_reg(grads.word_embeddings, p.word_embeddings);
    add_reg(grads.user_embeddings, p.user_embeddings);
    add_reg(grads.item_embeddings, p.item_embeddings);
    add_reg(grads.review_bias, p.review_bias);
    add_reg(grads.regressor_weights, p.regressor_weights);
    add_reg(grads.user_bias, p.user_bias);
    add_reg(grads.item_bias, p.item_bias);
    grads.global_bias += decay * p.global_bias;
  }
  return loss;
}

inline Gradients batch_gradients(const ModelParameters& p,
                                 std::span<const Interaction> batch,
                                 const Hyperparameters& hp,
                                 double reg_scale = 1.0) {
  Gradients grads(p.n_users, p.n_items, p.vocab_size, p.k);
  batch_loss_and_gradients(p, batch, hp, reg_scale, grads);
  return grads;
}

// Test-time surrogate for the review embedding of an unseen (u, i) pair.
inline std::vector<double> approximate_review_embedding(
    const ModelParameters& p, std::uint32_t user, std::uint32_t item) {
  detail::check_user_item(p, user, item);
  auto eu = p.user(user);
  auto ei = p.item(item);
  std::vector<double> h(p.k);
  for (std::size_t j = 0; j < p.k; ++j) h[j] = ei[j] - eu[j];
  return h;
}

// Rating prediction for a pair without a review: g applied to e_i - e_u.
inline double predict_rating(const ModelParameters& p, std::uint32_t user,
                             std::uint32_t item) {
  return predict_from_embedding(p, approximate_review_embedding(p, user, item),
                                user, item);
}

}  // namespace transrev
