#pragma once

// Per-(ticker, day) sentiment: precomputed class-probability files from an
// external scorer, and a word-list fallback that works offline.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "stockformer/csv.hpp"
#include "stockformer/error.hpp"
#include "stockformer/market_data.hpp"

namespace stockformer {

struct SentimentRecord {
  std::string date;
  std::string ticker;
  double p_pos = 0.0;
  double p_neu = 0.0;
  double p_neg = 0.0;
  double score = 0.0;  // p_pos - p_neg
};

using ScoreKey = std::pair<std::string, std::string>;  // (ticker, date)
using ScoreMap = std::map<ScoreKey, SentimentRecord>;

inline constexpr double kSimplexTolerance = 1e-3;

/// Reads `date,ticker,p_pos,p_neu,p_neg`. Lines starting with '#' are
/// comments (the exporter records its model revision there).
inline ScoreMap load_scores(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::vector<std::string>> header;
  while (!header && std::getline(in, line)) {
    ++line_no;
    const auto t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    header = csv::split(line);
  }
  if (!header) throw EmptyFile("score file has no header");
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < header->size(); ++i) pos[std::string(csv::trim((*header)[i]))] = i;
  for (const char* c : {"date", "ticker", "p_pos", "p_neu", "p_neg"}) {
    if (!pos.contains(c)) throw MissingColumn(c);
  }

  ScoreMap scores;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = csv::trim(line);
    if (t.empty() || t == "\r" || t.front() == '#') continue;
    auto f = csv::split(line);
    if (!f || f->size() < header->size()) throw MalformedRow(line_no, "wrong field count");
    SentimentRecord r;
    r.date = std::string(csv::trim((*f)[pos["date"]]));
    r.ticker = std::string(csv::trim((*f)[pos["ticker"]]));
    if (!parse_date(r.date)) throw MalformedRow(line_no, "invalid date '" + r.date + "'");
    auto p = csv::parse_double((*f)[pos["p_pos"]]);
    auto u = csv::parse_double((*f)[pos["p_neu"]]);
    auto n = csv::parse_double((*f)[pos["p_neg"]]);
    if (!p || !u || !n) throw MalformedRow(line_no, "non-numeric probability");
    for (double v : {*p, *u, *n}) {
      if (v < 0.0 || v > 1.0) throw SimplexViolation("line " + std::to_string(line_no) + ": probability outside [0, 1]");
    }
    if (std::abs(*p + *u + *n - 1.0) > kSimplexTolerance) {
      throw SimplexViolation("line " + std::to_string(line_no) + ": probabilities sum to " + csv::format(*p + *u + *n));
    }
    r.p_pos = *p;
    r.p_neu = *u;
    r.p_neg = *n;
    r.score = r.p_pos - r.p_neg;
    scores[{r.ticker, r.date}] = r;
  }
  return scores;
}

inline ScoreMap load_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return load_scores(in);
}

/// Lower-cased alphanumeric tokens; apostrophes vanish ("don't" -> "dont"),
/// other punctuation separates tokens.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (ch == '\'') {
      continue;
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

class LexiconScorer {
 public:
  LexiconScorer(std::set<std::string> positive, std::set<std::string> negative, std::set<std::string> negation)
      : positive_(std::move(positive)), negative_(std::move(negative)), negation_(std::move(negation)) {
    auto overlap = [](const std::set<std::string>& a, const std::set<std::string>& b) {
      for (const auto& w : a) {
        if (b.contains(w)) return std::optional<std::string>(w);
      }
      return std::optional<std::string>();
    };
    for (auto [a, b] : {std::pair{&positive_, &negative_}, std::pair{&positive_, &negation_}, std::pair{&negative_, &negation_}}) {
      if (auto w = overlap(*a, *b)) throw InvalidArgument("lexicon word '" + *w + "' appears in two sections");
    }
  }

  /// Finance word lists shipped with the library.
  static const LexiconScorer& builtin() {
    static const LexiconScorer scorer(
        {"surge",   "surges",   "surged",     "rally",     "rallies",    "soar",       "soars",     "gain",
         "gains",   "climb",    "climbs",     "jump",      "jumps",      "rise",       "rises",     "beat",
         "beats",   "profit",   "profits",    "growth",    "strong",     "upgrade",    "upgrades",  "upgraded",
         "outperform", "bullish", "boost",    "boosts",    "optimism",   "good",       "positive",  "expansion",
         "exceeds", "rebound",  "rebounds",   "win",       "wins",       "success",    "breakthrough", "tops"},
        {"plunge",  "plunges",  "plunged",    "fall",      "falls",      "drop",       "drops",     "slump",
         "slumps",  "tumble",   "tumbles",    "sink",      "sinks",      "decline",    "declines",  "miss",
         "misses",  "loss",     "losses",     "weak",      "downgrade",  "downgrades", "downgraded", "underperform",
         "bearish", "lawsuit",  "probe",      "recall",    "layoffs",    "bad",        "negative",  "concern",
         "concerns", "slowdown", "crash",     "warning",   "warns",      "selloff",    "fraud",     "cuts"},
        {"not", "no", "never", "without", "hardly", "neither", "nor", "cannot", "dont", "doesnt", "isnt", "wasnt",
         "wont", "arent", "didnt"});
    return scorer;
  }

  /// Plain text with `[positive]`, `[negative]` and `[negation]` sections,
  /// one word per line; '#' starts a comment line.
  static LexiconScorer from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon " + path.string());
    std::set<std::string> pos, neg, negation;
    std::set<std::string>* section = nullptr;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto t = csv::trim(line);
      if (!t.empty() && t.back() == '\r') t.remove_suffix(1);
      if (t.empty() || t.front() == '#') continue;
      if (t == "[positive]") section = &pos;
      else if (t == "[negative]") section = &neg;
      else if (t == "[negation]") section = &negation;
      else if (!section) throw MalformedRow(line_no, "word outside a section");
      else {
        auto toks = tokenize(t);
        if (toks.size() != 1) throw MalformedRow(line_no, "expected one word");
        section->insert(toks.front());
      }
    }
    return LexiconScorer(std::move(pos), std::move(neg), std::move(negation));
  }

  /// (pos_hits - neg_hits) / max(1, pos_hits + neg_hits). A negation word
  /// immediately before a hit flips its polarity.
  double score(std::string_view headline) const {
    const auto tokens = tokenize(headline);
    int pos = 0, neg = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      int polarity = positive_.contains(tokens[i]) ? 1 : negative_.contains(tokens[i]) ? -1 : 0;
      if (polarity == 0) continue;
      if (i > 0 && negation_.contains(tokens[i - 1])) polarity = -polarity;
      (polarity > 0 ? pos : neg) += 1;
    }
    return static_cast<double>(pos - neg) / static_cast<double>(std::max(1, pos + neg));
  }

  /// Same scorer with the positive and negative lists exchanged.
  LexiconScorer swapped() const { return LexiconScorer(negative_, positive_, negation_); }

  const std::set<std::string>& positive() const noexcept { return positive_; }
  const std::set<std::string>& negative() const noexcept { return negative_; }
  const std::set<std::string>& negation() const noexcept { return negation_; }

 private:
  std::set<std::string> positive_, negative_, negation_;
};

inline double lexicon_score(std::string_view headline) { return LexiconScorer::builtin().score(headline); }

/// Three-channel view of a scalar score when class probabilities are unknown.
inline std::array<double, 3> probs_from_score(double s) {
  return {std::max(s, 0.0), 1.0 - std::abs(s), std::max(-s, 0.0)};
}

/// Fills every entry's sentiment. Precedence: score file match, then a value
/// already present on the entry, then the lexicon over the headline, then 0.
inline MarketSeries attach(MarketSeries series, const ScoreMap* scores, const LexiconScorer& fallback) {
  for (auto& e : series.entries) {
    if (scores) {
      if (auto it = scores->find({e.ticker, e.date}); it != scores->end()) {
        e.sentiment = it->second.score;
        e.sentiment_probs = std::array<double, 3>{it->second.p_pos, it->second.p_neu, it->second.p_neg};
        continue;
      }
    }
    if (e.sentiment) {
      if (!e.sentiment_probs) e.sentiment_probs = probs_from_score(*e.sentiment);
      continue;
    }
    const double s = e.headline ? fallback.score(*e.headline) : 0.0;
    e.sentiment = s;
    e.sentiment_probs = probs_from_score(s);
  }
  return series;
}

}  // namespace stockformer
