#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "transrev/corpus.hpp"
#include "transrev/io_util.hpp"
#include "transrev/model.hpp"

namespace transrev {

struct EvalReport {
  double mse = 0.0;
  std::size_t n = 0;
  std::vector<double> residuals;  // prediction - rating, kept on request
};

// Mean squared error of a predictor over held-out pairs. The predictor sees
// only (user, item); review tokens are never touched here, by construction.
template <typename Predictor>
  requires std::is_invocable_r_v<double, Predictor&, std::uint32_t,
                                 std::uint32_t>
EvalReport evaluate_mse(Predictor&& predict, std::span<const Interaction> pairs,
                        bool keep_residuals = false) {
  if (pairs.empty()) throw std::invalid_argument("no pairs to evaluate");
  EvalReport report;
  report.n = pairs.size();
  if (keep_residuals) report.residuals.reserve(pairs.size());
  double sum = 0.0;
  for (const Interaction& x : pairs) {
    const double residual = predict(x.user, x.item) - x.rating;
    sum += residual * residual;
    if (keep_residuals) report.residuals.push_back(residual);
  }
  report.mse = sum / static_cast<double>(pairs.size());
  return report;
}

inline EvalReport evaluate_mse(const ModelParameters& params,
                               std::span<const Interaction> pairs,
                               bool keep_residuals = false) {
  return evaluate_mse(
      [&](std::uint32_t u, std::uint32_t i) {
        return predict_rating(params, u, i);
      },
      pairs, keep_residuals);
}

// Brute-force nearest-review search over cached training review embeddings.
class ReviewIndex {
 public:
  ReviewIndex(const ModelParameters& params,
              std::span<const Interaction> train)
      : k_(params.k) {
    embeddings_.reserve(train.size() * params.k);
    items_.reserve(train.size());
    ratings_.reserve(train.size());
    std::vector<double> h(params.k);
    for (const Interaction& x : train) {
      detail::embed_review_into(params, x.tokens, h);
      embeddings_.insert(embeddings_.end(), h.begin(), h.end());
      items_.push_back(x.item);
      ratings_.push_back(x.rating);
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t dimension() const { return k_; }
  std::span<const double> embedding(std::size_t idx) const {
    return {embeddings_.data() + idx * k_, k_};
  }
  std::uint32_t item(std::size_t idx) const { return items_[idx]; }
  double rating(std::size_t idx) const { return ratings_[idx]; }

 private:
  std::size_t k_;
  std::vector<double> embeddings_;  // size() x k, row-major
  std::vector<std::uint32_t> items_;
  std::vector<double> ratings_;
};

struct RetrievedReview {
  std::size_t train_index = 0;  // position in the training split
  double distance = 0.0;        // Euclidean distance between embeddings
  std::uint32_t item = 0;
  double rating = 0.0;
};

struct RetrievalResult {
  std::uint32_t user = 0, item = 0;           // the query pair
  std::vector<RetrievedReview> neighbors;     // distances non-decreasing
};

// Top-n training reviews closest to `query` in embedding space, sorted by
// (distance, train index) so ties break on training-set order. Optionally
// restricted to reviews of one item.
inline std::vector<RetrievedReview> retrieve_nearest(
    const ReviewIndex& index, std::span<const double> query, std::size_t top_n,
    bool same_item_only = false, std::uint32_t item = 0) {
  if (query.size() != index.dimension())
    throw std::invalid_argument("query dimension mismatch");
  if (top_n < 1) throw std::invalid_argument("top_n must be >= 1");
  std::vector<RetrievedReview> hits;
  for (std::size_t idx = 0; idx < index.size(); ++idx) {
    if (same_item_only && index.item(idx) != item) continue;
    auto e = index.embedding(idx);
    double sq = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) {
      const double d = e[j] - query[j];
      sq += d * d;
    }
    hits.push_back({idx, std::sqrt(sq), index.item(idx), index.rating(idx)});
  }
  auto by_distance = [](const RetrievedReview& a, const RetrievedReview& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.train_index < b.train_index;
  };
  if (hits.size() > top_n) {
    std::partial_sort(hits.begin(), hits.begin() + top_n, hits.end(),
                      by_distance);
    hits.resize(top_n);
  } else {
    std::sort(hits.begin(), hits.end(), by_distance);
  }
  return hits;
}

// Ranks training reviews against the approximated embedding e_i - e_u of a
// pair whose review is unseen.
inline RetrievalResult retrieve_reviews(const ModelParameters& params,
                                        const ReviewIndex& index,
                                        std::uint32_t user, std::uint32_t item,
                                        std::size_t top_n,
                                        bool same_item_only = false) {
  const std::vector<double> query =
      approximate_review_embedding(params, user, item);
  RetrievalResult result;
  result.user = user;
  result.item = item;
  result.neighbors =
      retrieve_nearest(index, query, top_n, same_item_only, item);
  return result;
}

// Learned sentiment projection of a single word: sigma(v_t) . w. Higher means
// the word pulls predicted ratings up when it appears in a review.
inline double word_projection(const ModelParameters& params,
                              std::uint32_t token) {
  if (token >= params.vocab_size)
    throw std::out_of_range("token id out of range");
  auto v = params.word(token);
  double dot = 0.0;
  for (std::size_t j = 0; j < params.k; ++j)
    dot += sigmoid(v[j]) * params.regressor_weights[j];
  return dot;
}

struct WordScore {
  std::string token;
  double score = 0.0;             // mean rating of train reviews with the token
  std::vector<double> embedding;  // v_t, k values
};

// One record per vocabulary word: the average rating of the training reviews
// containing it (each review counted once) plus its embedding row.
inline std::vector<WordScore> score_words(const ModelParameters& params,
                                          const Vocabulary& vocab,
                                          std::span<const Interaction> train) {
  if (vocab.size() != params.vocab_size)
    throw std::invalid_argument("vocabulary size does not match model");
  if (train.empty()) throw std::invalid_argument("empty training set");
  std::vector<double> rating_sum(vocab.size(), 0.0);
  std::vector<std::size_t> doc_count(vocab.size(), 0);
  std::vector<std::uint32_t> distinct;
  for (const Interaction& x : train) {
    distinct.assign(x.tokens.begin(), x.tokens.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()),
                   distinct.end());
    for (std::uint32_t t : distinct) {
      if (t >= vocab.size())
        throw std::out_of_range("token id out of range in training set");
      rating_sum[t] += x.rating;
      ++doc_count[t];
    }
  }
  std::vector<WordScore> scores;
  scores.reserve(vocab.size());
  for (std::uint32_t t = 0; t < vocab.size(); ++t) {
    if (doc_count[t] == 0)
      throw std::invalid_argument("vocabulary word '" + vocab.id_to_token[t] +
                                  "' absent from the training set");
    auto v = params.word(t);
    scores.push_back({vocab.id_to_token[t],
                      rating_sum[t] / static_cast<double>(doc_count[t]),
                      {v.begin(), v.end()}});
  }
  return scores;
}

// TSV rows: token, score, k embedding values. Row order follows vocabulary
// ids, so the file is reproducible.
inline void export_word_scores(const ModelParameters& params,
                               const Vocabulary& vocab,
                               std::span<const Interaction> train,
                               const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const WordScore& ws : score_words(params, vocab, train)) {
    out << ws.token << '\t' << format_double(ws.score);
    for (double v : ws.embedding) out << '\t' << format_double(v);
    out << '\n';
  }
}

}  // namespace transrev
