#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "transrev/corpus.hpp"
#include "transrev/io_util.hpp"
#include "transrev/rng.hpp"

namespace transrev {

// Synthetic corpus with planted sentiment: each item has a latent quality,
// each user a disposition, and the rating decides which sentiment words the
// review contains. The word pattern pins the rating exactly (two positive
// words = 5, one = 4, none = 3, one negative = 2, two = 1), so a model that
// reads the text can recover it.
struct SynthConfig {
  std::size_t n_users = 500;
  std::size_t n_items = 200;
  std::size_t n_reviews = 8000;  // distinct (user, item) pairs
  std::size_t n_positive = 10;
  std::size_t n_negative = 10;
  std::size_t n_filler = 30;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_users < 1 || n_items < 1) throw std::invalid_argument("empty world");
    if (n_reviews > n_users * n_items)
      throw std::invalid_argument("more reviews than distinct pairs");
    if (n_positive < 2 || n_negative < 2)
      throw std::invalid_argument("need at least two words per sentiment");
  }
};

struct SynthCorpus {
  std::vector<RawReview> reviews;
  std::vector<std::string> positive_words;
  std::vector<std::string> negative_words;
  std::vector<std::string> filler_words;
};

inline SynthCorpus generate_planted(const SynthConfig& config) {
  config.validate();
  SynthCorpus corpus;
  for (std::size_t i = 0; i < config.n_positive; ++i)
    corpus.positive_words.push_back("great" + std::to_string(i));
  for (std::size_t i = 0; i < config.n_negative; ++i)
    corpus.negative_words.push_back("awful" + std::to_string(i));
  for (std::size_t i = 0; i < config.n_filler; ++i)
    corpus.filler_words.push_back("filler" + std::to_string(i));

  Rng rng(config.seed);
  std::vector<double> item_quality(config.n_items);
  for (double& q : item_quality) q = rng.uniform(1.5, 4.5);
  std::vector<int> user_mood(config.n_users);
  for (int& m : user_mood) {
    const double p = rng.uniform();
    m = p < 0.25 ? -1 : (p < 0.75 ? 0 : 1);
  }

  std::unordered_set<std::uint64_t> used;
  used.reserve(config.n_reviews * 2);
  corpus.reviews.reserve(config.n_reviews);
  std::vector<std::string> tokens;
  while (corpus.reviews.size() < config.n_reviews) {
    const std::uint64_t u = rng.below(config.n_users);
    const std::uint64_t i = rng.below(config.n_items);
    if (!used.insert(u * config.n_items + i).second) continue;

    const double raw = item_quality[i] + user_mood[u];
    const double rating =
        std::clamp<double>(static_cast<double>(std::llround(raw)), 1.0, 5.0);

    tokens.clear();
    auto pick_two = [&](const std::vector<std::string>& pool) {
      const std::uint64_t a = rng.below(pool.size());
      std::uint64_t b = rng.below(pool.size() - 1);
      if (b >= a) ++b;
      tokens.push_back(pool[a]);
      tokens.push_back(pool[b]);
    };
    if (rating == 5.0) {
      pick_two(corpus.positive_words);
    } else if (rating == 4.0) {
      tokens.push_back(corpus.positive_words[rng.below(config.n_positive)]);
    } else if (rating == 2.0) {
      tokens.push_back(corpus.negative_words[rng.below(config.n_negative)]);
    } else if (rating == 1.0) {
      pick_two(corpus.negative_words);
    }
    const std::size_t n_filler = 3 + rng.below(4);  // 3..6, repeats allowed
    for (std::size_t f = 0; f < n_filler; ++f)
      tokens.push_back(corpus.filler_words[rng.below(config.n_filler)]);
    rng.shuffle(tokens);

    std::string text;
    for (const std::string& t : tokens) {
      if (!text.empty()) text += ' ';
      text += t;
    }
    RawReview review;
    review.user_id = "u" + std::to_string(u);
    review.item_id = "i" + std::to_string(i);
    review.rating = rating;
    review.text = std::move(text);
    review.timestamp = 1'000'000'000 + static_cast<std::int64_t>(
                                           corpus.reviews.size());
    corpus.reviews.push_back(std::move(review));
  }
  return corpus;
}

// One JSON object per line, in the field layout the amazon reader expects.
inline void write_synth_corpus(const SynthCorpus& corpus,
                               const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const RawReview& r : corpus.reviews) {
    nlohmann::json j;
    j["reviewerID"] = r.user_id;
    j["asin"] = r.item_id;
    j["overall"] = r.rating;
    j["summary"] = r.text;
    if (r.timestamp) j["unixReviewTime"] = *r.timestamp;
    out << j.dump() << '\n';
  }
}

}  // namespace transrev
