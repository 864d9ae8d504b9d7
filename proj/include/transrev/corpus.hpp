#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "transrev/io_util.hpp"
#include "transrev/rng.hpp"
#include "transrev/text.hpp"

namespace transrev {

struct RawReview {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::string text;
  std::optional<std::int64_t> timestamp;  // retained, unused by the model
};

struct ParseResult {
  std::vector<RawReview> reviews;
  std::size_t skipped = 0;              // malformed or missing a required field
  std::size_t rating_out_of_range = 0;  // accepted anyway, counted for the log
};

inline CorpusFormat parse_format(std::string_view name) {
  if (name == "amazon") return CorpusFormat::amazon;
  if (name == "yelp") return CorpusFormat::yelp;
  throw std::runtime_error("unknown corpus format: '" + std::string(name) +
                           "' (expected amazon or yelp)");
}

inline std::string format_name(CorpusFormat f) {
  return f == CorpusFormat::amazon ? "amazon" : "yelp";
}

// One JSON object per line. Lines that fail to parse or miss a required
// field are skipped and counted; ratings outside [1,5] are kept but counted.
inline ParseResult parse_corpus(const std::filesystem::path& path,
                                CorpusFormat format) {
  auto in = open_input(path);
  const char* user_key = format == CorpusFormat::amazon ? "reviewerID" : "user_id";
  const char* item_key = format == CorpusFormat::amazon ? "asin" : "business_id";
  const char* rating_key = format == CorpusFormat::amazon ? "overall" : "stars";
  const char* text_key = format == CorpusFormat::amazon ? "summary" : "text";

  ParseResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      ++result.skipped;
      continue;
    }
    auto u = obj.find(user_key);
    auto i = obj.find(item_key);
    auto r = obj.find(rating_key);
    auto t = obj.find(text_key);
    if (u == obj.end() || !u->is_string() || i == obj.end() ||
        !i->is_string() || r == obj.end() || !r->is_number() ||
        t == obj.end() || !t->is_string()) {
      ++result.skipped;
      continue;
    }
    RawReview rev;
    rev.user_id = u->get<std::string>();
    rev.item_id = i->get<std::string>();
    rev.rating = r->get<double>();
    rev.text = t->get<std::string>();
    if (auto ts = obj.find("unixReviewTime");
        ts != obj.end() && ts->is_number_integer())
      rev.timestamp = ts->get<std::int64_t>();
    if (rev.rating < 1.0 || rev.rating > 5.0) ++result.rating_out_of_range;
    result.reviews.push_back(std::move(rev));
  }
  return result;
}

struct Vocabulary {
  std::unordered_map<std::string, std::uint32_t> token_to_id;
  std::vector<std::string> id_to_token;            // dense ids 0..V-1
  std::vector<std::uint32_t> document_frequency;   // indexed by id
  double min_review_fraction = 0.0;
  std::size_t total_reviews = 0;

  std::size_t size() const { return id_to_token.size(); }

  std::optional<std::uint32_t> id_of(std::string_view token) const {
    auto it = token_to_id.find(std::string(token));
    return it == token_to_id.end() ? std::nullopt
                                   : std::optional<std::uint32_t>(it->second);
  }
};

// ceil(fraction * n) with a downward epsilon so float artifacts on exact
// integer products (0.001 * 1000) cannot bump the threshold up by one.
inline std::size_t df_threshold(double fraction, std::size_t n) {
  double x = fraction * static_cast<double>(n);
  double c = std::ceil(x - 1e-9);
  return c <= 0.0 ? 0 : static_cast<std::size_t>(c);
}

// Retains a token iff it appears in >= ceil(fraction * #reviews) distinct
// training reviews. Ids are assigned by descending document frequency,
// lexicographic on ties.
inline Vocabulary build_vocabulary(
    const std::vector<std::vector<std::string>>& train_reviews,
    double min_review_fraction) {
  std::unordered_map<std::string, std::uint32_t> df;
  std::vector<std::string_view> seen;
  for (const auto& review : train_reviews) {
    seen.assign(review.begin(), review.end());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (auto token : seen) ++df[std::string(token)];
  }

  const std::size_t threshold =
      df_threshold(min_review_fraction, train_reviews.size());
  std::vector<std::pair<std::string, std::uint32_t>> retained;
  for (auto& [token, count] : df)
    if (count >= threshold) retained.emplace_back(token, count);
  std::sort(retained.begin(), retained.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.min_review_fraction = min_review_fraction;
  vocab.total_reviews = train_reviews.size();
  vocab.id_to_token.reserve(retained.size());
  vocab.document_frequency.reserve(retained.size());
  for (std::uint32_t id = 0; id < retained.size(); ++id) {
    vocab.token_to_id.emplace(retained[id].first, id);
    vocab.id_to_token.push_back(std::move(retained[id].first));
    vocab.document_frequency.push_back(retained[id].second);
  }
  return vocab;
}

// One training/eval record: dense indices, encoded tokens, rating.
struct Interaction {
  std::uint32_t user = 0;
  std::uint32_t item = 0;
  std::vector<std::uint32_t> tokens;  // possibly empty after filtering
  double rating = 0.0;
};

struct SplitStats {
  std::size_t removed_validation = 0;  // cold-start records dropped
  std::size_t removed_test = 0;
};

struct Dataset {
  std::vector<Interaction> train;
  std::vector<Interaction> validation;
  std::vector<Interaction> test;
  std::vector<std::string> user_ids;  // dense index -> raw id, train order
  std::vector<std::string> item_ids;
  std::vector<std::string> train_texts;  // original text per train triple
  Vocabulary vocab;
  std::uint64_t split_seed = 0;
  SplitStats stats;

  std::size_t n_users() const { return user_ids.size(); }
  std::size_t n_items() const { return item_ids.size(); }
};

// Canonical vocabulary file body; its FNV-1a hash binds models to datasets.
inline std::string vocabulary_file_body(const Vocabulary& vocab) {
  std::string body;
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    body += vocab.id_to_token[id];
    body += '\t';
    body += std::to_string(id);
    body += '\t';
    body += std::to_string(vocab.document_frequency[id]);
    body += '\n';
  }
  return body;
}

inline std::uint64_t vocabulary_hash(const Vocabulary& vocab) {
  return fnv1a64(vocabulary_file_body(vocab));
}

// 80/10/10 split under a deterministic shuffle, then cold-start filtering:
// validation/test records whose user or item never occurs in train are
// dropped. Dense indices come from the shuffled train partition, in order
// of first appearance; token encoding uses the train-built vocabulary.
inline Dataset split_dataset(const std::vector<RawReview>& reviews,
                             std::uint64_t seed, CorpusFormat format,
                             double min_review_fraction) {
  const std::size_t n = reviews.size();
  std::vector<std::uint32_t> order(n);
  for (std::uint32_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const std::size_t n_train = static_cast<std::size_t>(
      std::floor(0.8 * static_cast<double>(n)));
  const std::size_t n_valid = static_cast<std::size_t>(
      std::floor(0.1 * static_cast<double>(n)));

  Dataset ds;
  ds.split_seed = seed;

  std::vector<std::vector<std::string>> train_tokens(n_train);
  for (std::size_t i = 0; i < n_train; ++i)
    train_tokens[i] = tokenize(reviews[order[i]].text, format);
  ds.vocab = build_vocabulary(train_tokens, min_review_fraction);

  std::unordered_map<std::string, std::uint32_t> user_index, item_index;
  auto intern = [](std::unordered_map<std::string, std::uint32_t>& map,
                   std::vector<std::string>& names, const std::string& raw) {
    auto [it, inserted] = map.emplace(raw, static_cast<std::uint32_t>(names.size()));
    if (inserted) names.push_back(raw);
    return it->second;
  };

  auto encode_tokens = [&](const std::vector<std::string>& tokens) {
    std::vector<std::uint32_t> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens)
      if (auto id = ds.vocab.id_of(t)) ids.push_back(*id);
    return ids;
  };

  ds.train.reserve(n_train);
  ds.train_texts.reserve(n_train);
  for (std::size_t i = 0; i < n_train; ++i) {
    const RawReview& raw = reviews[order[i]];
    Interaction t;
    t.user = intern(user_index, ds.user_ids, raw.user_id);
    t.item = intern(item_index, ds.item_ids, raw.item_id);
    t.tokens = encode_tokens(train_tokens[i]);
    t.rating = raw.rating;
    ds.train.push_back(std::move(t));
    ds.train_texts.push_back(raw.text);
  }

  auto encode_heldout = [&](std::size_t begin, std::size_t end,
                            std::vector<Interaction>& out,
                            std::size_t& removed) {
    for (std::size_t i = begin; i < end; ++i) {
      const RawReview& raw = reviews[order[i]];
      auto u = user_index.find(raw.user_id);
      auto v = item_index.find(raw.item_id);
      if (u == user_index.end() || v == item_index.end()) {
        ++removed;
        continue;
      }
      Interaction t;
      t.user = u->second;
      t.item = v->second;
      t.tokens = encode_tokens(tokenize(raw.text, format));
      t.rating = raw.rating;
      out.push_back(std::move(t));
    }
  };
  encode_heldout(n_train, n_train + n_valid, ds.validation,
                 ds.stats.removed_validation);
  encode_heldout(n_train + n_valid, n, ds.test, ds.stats.removed_test);
  return ds;
}

// ---------------------------------------------------------------------------
// Preprocessed-dataset directory
//
//   vocab.tsv       token<TAB>id<TAB>df, sorted by id
//   train.tsv       user_idx<TAB>item_idx<TAB>rating<TAB>space-separated ids
//   validation.tsv  same
//   test.tsv        same
//   users.tsv       raw_id<TAB>dense_index
//   items.tsv       raw_id<TAB>dense_index
//   train_texts.txt original review text, one line per train triple
//   manifest.json   counts, seed, threshold, format, removal statistics
// ---------------------------------------------------------------------------

namespace detail {

inline void write_split_file(const std::filesystem::path& path,
                             const std::vector<Interaction>& split) {
  auto out = open_output(path);
  std::string line;
  for (const Interaction& t : split) {
    line.clear();
    line += std::to_string(t.user);
    line += '\t';
    line += std::to_string(t.item);
    line += '\t';
    line += format_double(t.rating);
    line += '\t';
    for (std::size_t j = 0; j < t.tokens.size(); ++j) {
      if (j) line += ' ';
      line += std::to_string(t.tokens[j]);
    }
    line += '\n';
    out << line;
  }
}

inline std::vector<Interaction> read_split_file(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<Interaction> split;
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split_on(line, '\t');
    if (fields.size() != 4)
      throw std::runtime_error("bad split line in " + path.string());
    Interaction t;
    t.user = static_cast<std::uint32_t>(parse_u64(fields[0]));
    t.item = static_cast<std::uint32_t>(parse_u64(fields[1]));
    t.rating = parse_double(fields[2]);
    if (!fields[3].empty())
      for (auto id : split_on(fields[3], ' '))
        t.tokens.push_back(static_cast<std::uint32_t>(parse_u64(id)));
    split.push_back(std::move(t));
  }
  return split;
}

inline void write_id_map(const std::filesystem::path& path,
                         const std::vector<std::string>& names) {
  auto out = open_output(path);
  for (std::size_t i = 0; i < names.size(); ++i)
    out << names[i] << '\t' << i << '\n';
}

inline std::vector<std::string> read_id_map(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    auto fields = split_on(line, '\t');
    if (fields.size() != 2 || parse_u64(fields[1]) != names.size())
      throw std::runtime_error("bad id map line in " + path.string());
    names.emplace_back(fields[0]);
  }
  return names;
}

}  // namespace detail

struct DatasetSummary {
  CorpusFormat format = CorpusFormat::amazon;
  std::size_t parsed = 0;
  std::size_t skipped = 0;
  std::size_t rating_out_of_range = 0;
};

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds,
                         const DatasetSummary& summary) {
  std::filesystem::create_directories(dir);
  open_output(dir / "vocab.tsv") << vocabulary_file_body(ds.vocab);
  detail::write_split_file(dir / "train.tsv", ds.train);
  detail::write_split_file(dir / "validation.tsv", ds.validation);
  detail::write_split_file(dir / "test.tsv", ds.test);
  detail::write_id_map(dir / "users.tsv", ds.user_ids);
  detail::write_id_map(dir / "items.tsv", ds.item_ids);
  {
    auto out = open_output(dir / "train_texts.txt");
    for (std::string text : ds.train_texts) {
      std::replace(text.begin(), text.end(), '\n', ' ');
      std::replace(text.begin(), text.end(), '\r', ' ');
      out << text << '\n';
    }
  }
  nlohmann::json manifest{
      {"format", format_name(summary.format)},
      {"seed", ds.split_seed},
      {"min_review_fraction", ds.vocab.min_review_fraction},
      {"fractions", {0.8, 0.1, 0.1}},
      {"counts",
       {{"parsed", summary.parsed},
        {"skipped", summary.skipped},
        {"rating_out_of_range", summary.rating_out_of_range},
        {"train", ds.train.size()},
        {"validation", ds.validation.size()},
        {"test", ds.test.size()},
        {"removed_validation", ds.stats.removed_validation},
        {"removed_test", ds.stats.removed_test},
        {"users", ds.n_users()},
        {"items", ds.n_items()},
        {"vocabulary", ds.vocab.size()}}},
      {"vocab_hash", vocabulary_hash(ds.vocab)}};
  open_output(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir,
                            bool with_texts = false) {
  Dataset ds;
  {
    auto in = open_input(dir / "vocab.tsv");
    std::string line;
    while (std::getline(in, line)) {
      auto fields = split_on(line, '\t');
      if (fields.size() != 3 ||
          parse_u64(fields[1]) != ds.vocab.id_to_token.size())
        throw std::runtime_error("bad vocab line in " +
                                 (dir / "vocab.tsv").string());
      ds.vocab.token_to_id.emplace(std::string(fields[0]),
                                   ds.vocab.id_to_token.size());
      ds.vocab.id_to_token.emplace_back(fields[0]);
      ds.vocab.document_frequency.push_back(
          static_cast<std::uint32_t>(parse_u64(fields[2])));
    }
  }
  ds.train = detail::read_split_file(dir / "train.tsv");
  ds.validation = detail::read_split_file(dir / "validation.tsv");
  ds.test = detail::read_split_file(dir / "test.tsv");
  ds.user_ids = detail::read_id_map(dir / "users.tsv");
  ds.item_ids = detail::read_id_map(dir / "items.tsv");
  if (with_texts) {
    auto in = open_input(dir / "train_texts.txt");
    std::string line;
    while (std::getline(in, line)) ds.train_texts.push_back(line);
    if (ds.train_texts.size() != ds.train.size())
      throw std::runtime_error("train_texts.txt does not match train.tsv");
  }
  auto manifest =
      nlohmann::json::parse(read_file(dir / "manifest.json"));
  if (manifest.contains("vocab_hash") &&
      manifest.at("vocab_hash").get<std::uint64_t>() != vocabulary_hash(ds.vocab))
    throw std::runtime_error("vocab.tsv does not match manifest vocab_hash in " +
                             dir.string());
  ds.split_seed = manifest.at("seed").get<std::uint64_t>();
  ds.vocab.min_review_fraction =
      manifest.at("min_review_fraction").get<double>();
  ds.vocab.total_reviews = ds.train.size();
  const auto& counts = manifest.at("counts");
  ds.stats.removed_validation =
      counts.at("removed_validation").get<std::size_t>();
  ds.stats.removed_test = counts.at("removed_test").get<std::size_t>();
  return ds;
}

}  // namespace transrev
