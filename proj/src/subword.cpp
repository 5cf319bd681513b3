// Copyright 2026 The h2ke Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "h2ke/subword.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "h2ke/error.hpp"
#include "h2ke/hash.hpp"
#include "h2ke/utf8.hpp"

namespace h2ke::subword {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Expected counts below this are clamped before taking logs.
constexpr double kMinCount = 1e-30;
constexpr int kFormatVersion = 1;

const char* const kCoreSpecialText[kNumCoreSpecials] = {"<pad>", "<unk>", "<s>",
                                                        "</s>"};

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

std::string join(const std::vector<std::string>& chars, std::size_t b, std::size_t e) {
  std::string s;
  for (std::size_t i = b; i < e; ++i) s += chars[i];
  return s;
}

// Best path over a code-point sequence. `lookup` maps a substring to
// (id, log-prob) or nullopt; ids equal to `disabled` are skipped. Returns
// the chosen (begin, end, id) spans; id -1 marks an uncovered character.
template <typename Lookup>
std::vector<std::tuple<std::size_t, std::size_t, int>> best_path(
    const std::vector<std::string>& chars, std::size_t max_len, Lookup&& lookup,
    double unk_logp, int disabled = -2) {
  const std::size_t n = chars.size();
  std::vector<double> best(n + 1, kNegInf);
  std::vector<std::tuple<std::size_t, int>> back(n + 1, {0, -1});
  best[0] = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    if (best[b] == kNegInf) continue;
    bool covered = false;
    std::string sub;
    for (std::size_t len = 1; len <= max_len && b + len <= n; ++len) {
      sub += chars[b + len - 1];
      auto hit = lookup(sub);
      if (!hit || hit->first == disabled) continue;
      if (len == 1) covered = true;
      const double s = best[b] + hit->second;
      // Strict '>' keeps the earliest-found (shortest) piece on ties.
      if (s > best[b + len]) {
        best[b + len] = s;
        back[b + len] = {b, hit->first};
      }
    }
    if (!covered) {
      const double s = best[b] + unk_logp;
      if (s > best[b + 1]) {
        best[b + 1] = s;
        back[b + 1] = {b, -1};
      }
    }
  }
  std::vector<std::tuple<std::size_t, std::size_t, int>> path;
  for (std::size_t e = n; e > 0;) {
    const auto [b, id] = back[e];
    path.emplace_back(b, e, id);
    e = b;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace

void TokenizerConfig::validate() const {
  if (vocab_size <= 0) throw InvalidArgument("vocab_size must be positive");
  if (max_piece_len < 1) throw InvalidArgument("max_piece_len must be >= 1");
  if (seed_size < 1) throw InvalidArgument("seed_size must be >= 1");
  if (!(shrink_factor > 0.0 && shrink_factor < 1.0)) {
    throw InvalidArgument("shrink_factor must lie in (0, 1)");
  }
  if (em_sub_iters < 1) throw InvalidArgument("em_sub_iters must be >= 1");
  if (max_em_iters < 1) throw InvalidArgument("max_em_iters must be >= 1");
}

std::string mark_spaces(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == ' ') {
      out += kSpaceMarker;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

SubwordModel::SubwordModel(std::vector<std::pair<std::string, double>> pieces,
                           std::vector<std::string> tag_codes)
    : tags_(std::move(tag_codes)) {
  for (int i = 0; i < kNumCoreSpecials; ++i) {
    pieces_.emplace_back(kCoreSpecialText[i], 0.0);
  }
  for (const auto& code : tags_) pieces_.emplace_back("<" + code + ">", 0.0);
  double min_logp = 0.0;
  for (auto& p : pieces) {
    if (p.first.empty()) throw InvalidArgument("empty piece in vocabulary");
    const int id = static_cast<int>(pieces_.size());
    if (!index_.emplace(p.first, id).second) {
      throw InvalidArgument("duplicate piece '" + p.first + "'");
    }
    max_piece_chars_ = std::max<int>(max_piece_chars_,
                                     static_cast<int>(utf8::decode(p.first).size()));
    min_logp = std::min(min_logp, p.second);
    pieces_.push_back(std::move(p));
  }
  unk_log_prob_ = min_logp - 10.0;
}

int SubwordModel::tag_id(std::string_view code) const {
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    if (tags_[i] == code) return kNumCoreSpecials + static_cast<int>(i);
  }
  throw InvalidArgument("language tag '" + std::string(code) +
                        "' is not registered in the subword model");
}

const std::string& SubwordModel::piece(int id) const {
  if (id < 0 || id >= size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " out of range [0, " +
                          std::to_string(size()) + ")");
  }
  return pieces_[id].first;
}

double SubwordModel::log_prob(int id) const {
  piece(id);
  return pieces_[id].second;
}

std::optional<int> SubwordModel::find(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<SegmentPiece> SubwordModel::viterbi_segment(std::string_view text) const {
  const auto chars = utf8::split_chars(mark_spaces(text));
  auto lookup = [this](const std::string& s) -> std::optional<std::pair<int, double>> {
    auto it = index_.find(s);
    if (it == index_.end()) return std::nullopt;
    return std::make_pair(it->second, pieces_[it->second].second);
  };
  std::vector<SegmentPiece> out;
  for (const auto& [b, e, id] :
       best_path(chars, static_cast<std::size_t>(max_piece_chars_), lookup, unk_log_prob_)) {
    out.push_back(SegmentPiece{join(chars, b, e), id < 0 ? kUnkId : id});
  }
  return out;
}

double SubwordModel::score(const std::vector<SegmentPiece>& segmentation) const {
  double s = 0.0;
  for (const auto& p : segmentation) {
    s += p.id == kUnkId ? unk_log_prob_ : log_prob(p.id);
  }
  return s;
}

std::vector<int> SubwordModel::encode(std::string_view text) const {
  std::vector<int> ids;
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    const std::string form = "<" + tags_[i] + ">";
    if (text.substr(0, form.size()) == form &&
        (text.size() == form.size() || text[form.size()] == ' ')) {
      ids.push_back(kNumCoreSpecials + static_cast<int>(i));
      text.remove_prefix(std::min(text.size(), form.size() + 1));
      break;
    }
  }
  if (text.empty()) return ids;
  for (const auto& p : viterbi_segment(text)) ids.push_back(p.id);
  return ids;
}

std::string SubwordModel::decode(std::span<const int> ids) const {
  std::string marked;
  std::string out;
  for (int id : ids) {
    piece(id);  // range check
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (id == kUnkId) {
      marked += "\xEF\xBF\xBD";
    } else if (is_tag(id)) {
      marked += pieces_[id].first + " ";
    } else {
      marked += pieces_[id].first;
    }
  }
  for (std::size_t i = 0; i < marked.size();) {
    if (marked.compare(i, kSpaceMarker.size(), kSpaceMarker) == 0) {
      out.push_back(' ');
      i += kSpaceMarker.size();
    } else {
      out.push_back(marked[i++]);
    }
  }
  return out;
}

std::string SubwordModel::to_json() const {
  nlohmann::ordered_json doc;
  doc["version"] = kFormatVersion;
  doc["model"] = "unigram";
  doc["normalization"] = "none";
  nlohmann::ordered_json specials;
  specials["pad"] = kPadId;
  specials["unk"] = kUnkId;
  specials["bos"] = kBosId;
  specials["eos"] = kEosId;
  nlohmann::ordered_json tags = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < tags_.size(); ++i) {
    tags[tags_[i]] = kNumCoreSpecials + static_cast<int>(i);
  }
  specials["tags"] = tags;
  doc["specials"] = specials;
  auto pieces = nlohmann::ordered_json::array();
  for (const auto& [text, logp] : pieces_) pieces.push_back({text, logp});
  doc["pieces"] = pieces;
  return doc.dump() + "\n";
}

SubwordModel SubwordModel::from_json(std::string_view json) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("subword model: ") + e.what());
  }
  try {
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw ParseError("subword model: unsupported version " +
                       doc.at("version").dump());
    }
    const auto& specials = doc.at("specials");
    if (specials.at("pad") != kPadId || specials.at("unk") != kUnkId ||
        specials.at("bos") != kBosId || specials.at("eos") != kEosId) {
      throw ParseError("subword model: unexpected special ids");
    }
    std::vector<std::pair<int, std::string>> tag_ids;
    for (const auto& [code, id] : specials.at("tags").items()) {
      tag_ids.emplace_back(id.get<int>(), code);
    }
    std::sort(tag_ids.begin(), tag_ids.end());
    std::vector<std::string> tags;
    for (std::size_t i = 0; i < tag_ids.size(); ++i) {
      if (tag_ids[i].first != kNumCoreSpecials + static_cast<int>(i)) {
        throw ParseError("subword model: tag ids must follow the core specials");
      }
      tags.push_back(tag_ids[i].second);
    }
    const auto& arr = doc.at("pieces");
    const std::size_t n_special = kNumCoreSpecials + tags.size();
    if (arr.size() < n_special) throw ParseError("subword model: too few pieces");
    std::vector<std::pair<std::string, double>> pieces;
    for (std::size_t i = n_special; i < arr.size(); ++i) {
      pieces.emplace_back(arr[i].at(0).get<std::string>(), arr[i].at(1).get<double>());
    }
    return SubwordModel(std::move(pieces), std::move(tags));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("subword model: ") + e.what());
  }
}

SubwordModel SubwordModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open subword model " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return from_json(content);
}

void SubwordModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json();
}

std::string SubwordModel::hash() const { return sha256_hex(to_json()); }

// ---------------------------------------------------------------------------
// Training

namespace {

struct Chunk {
  std::vector<std::string> chars;
  double freq = 0.0;
};

struct Candidate {
  std::string text;
  double logp = 0.0;
  bool is_char = false;
};

class Trainer {
 public:
  Trainer(const std::vector<std::string>& sentences, const TokenizerConfig& config)
      : config_(config) {
    std::map<std::string, double> counts;
    for (const auto& s : sentences) {
      const auto marked = utf8::split_chars(mark_spaces(s));
      std::string cur;
      for (const auto& c : marked) {
        if (c == kSpaceMarker && !cur.empty()) {
          counts[cur] += 1.0;
          cur.clear();
        }
        cur += c;
      }
      if (!cur.empty()) counts[cur] += 1.0;
    }
    for (const auto& [text, f] : counts) {
      chunks_.push_back(Chunk{utf8::split_chars(text), f});
    }
  }

  SubwordModel run(TrainingTrace* trace) {
    const int target = config_.vocab_size - kNumCoreSpecials -
                       static_cast<int>(config_.tags.size());
    seed_candidates();
    int n_chars = 0;
    for (const auto& c : pieces_) n_chars += c.is_char ? 1 : 0;
    if (n_chars > target) {
      throw InvalidArgument(
          "vocab_size " + std::to_string(config_.vocab_size) +
          " cannot hold all " + std::to_string(n_chars) +
          " observed characters plus specials; minimum is " +
          std::to_string(config_.vocab_size - target + n_chars));
    }
    if (static_cast<int>(pieces_.size()) < target) {
      throw InvalidArgument(
          "vocab_size " + std::to_string(config_.vocab_size) +
          " is unreachable: only " +
          std::to_string(pieces_.size() + config_.vocab_size - target) +
          " pieces (specials included) can be derived from this corpus");
    }

    for (int round = 0;; ++round) {
      std::vector<double> ll;
      for (int it = 0; it < config_.em_sub_iters; ++it) {
        const auto counts = expected_counts(ll);
        maximize(counts);
      }
      if (trace) trace->em_log_likelihood.push_back(std::move(ll));
      if (static_cast<int>(pieces_.size()) <= target) break;
      const int shrunk = static_cast<int>(std::floor(pieces_.size() * config_.shrink_factor));
      prune(round + 1 >= config_.max_em_iters ? target : std::max(target, shrunk));
    }

    std::sort(pieces_.begin(), pieces_.end(), [](const Candidate& a, const Candidate& b) {
      if (a.logp != b.logp) return a.logp > b.logp;
      return a.text < b.text;
    });
    std::vector<std::pair<std::string, double>> out;
    for (const auto& c : pieces_) out.emplace_back(c.text, c.logp);
    return SubwordModel(std::move(out), config_.tags);
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      index_.emplace(pieces_[i].text, static_cast<int>(i));
    }
  }

  void seed_candidates() {
    std::map<std::string, double> chars;
    std::map<std::string, double> subs;
    for (const auto& ch : chunks_) {
      const std::size_t n = ch.chars.size();
      for (std::size_t b = 0; b < n; ++b) {
        chars[ch.chars[b]] += ch.freq;
        std::string s = ch.chars[b];
        for (std::size_t len = 2;
             len <= static_cast<std::size_t>(config_.max_piece_len) && b + len <= n;
             ++len) {
          if (ch.chars[b + len - 1] == kSpaceMarker) break;
          s += ch.chars[b + len - 1];
          subs[s] += ch.freq * static_cast<double>(len);
        }
      }
    }
    chars.try_emplace(std::string(kSpaceMarker), 0.0);

    std::vector<std::pair<std::string, double>> ranked(subs.begin(), subs.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > static_cast<std::size_t>(config_.seed_size)) {
      ranked.resize(config_.seed_size);
    }

    double total = 0.0;
    for (const auto& [t, f] : chars) total += f;
    for (const auto& [t, s] : ranked) total += s;
    for (const auto& [t, f] : chars) {
      pieces_.push_back({t, std::log(std::max(f, kMinCount) / total), true});
    }
    for (const auto& [t, s] : ranked) {
      pieces_.push_back({t, std::log(s / total), false});
    }
    rebuild_index();
  }

  // Forward-backward over every chunk lattice. Appends the corpus
  // log-likelihood under the current pieces to `ll`.
  std::vector<double> expected_counts(std::vector<double>& ll) const {
    std::vector<double> counts(pieces_.size(), 0.0);
    double total_ll = 0.0;
    const auto max_len = static_cast<std::size_t>(config_.max_piece_len);
    for (const auto& ch : chunks_) {
      const std::size_t n = ch.chars.size();
      // nodes[b] = (end, piece)
      std::vector<std::vector<std::pair<std::size_t, int>>> nodes(n);
      for (std::size_t b = 0; b < n; ++b) {
        std::string s;
        for (std::size_t len = 1; len <= max_len && b + len <= n; ++len) {
          s += ch.chars[b + len - 1];
          if (auto it = index_.find(s); it != index_.end()) {
            nodes[b].emplace_back(b + len, it->second);
          }
        }
      }
      std::vector<double> alpha(n + 1, kNegInf);
      std::vector<double> beta(n + 1, kNegInf);
      alpha[0] = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        if (alpha[b] == kNegInf) continue;
        for (const auto& [e, id] : nodes[b]) {
          alpha[e] = log_add(alpha[e], alpha[b] + pieces_[id].logp);
        }
      }
      beta[n] = 0.0;
      for (std::size_t b = n; b-- > 0;) {
        for (const auto& [e, id] : nodes[b]) {
          beta[b] = log_add(beta[b], pieces_[id].logp + beta[e]);
        }
      }
      const double z = alpha[n];
      total_ll += ch.freq * z;
      for (std::size_t b = 0; b < n; ++b) {
        for (const auto& [e, id] : nodes[b]) {
          counts[id] += ch.freq * std::exp(alpha[b] + pieces_[id].logp + beta[e] - z);
        }
      }
    }
    ll.push_back(total_ll);
    return counts;
  }

  void maximize(const std::vector<double>& counts) {
    double total = 0.0;
    for (double c : counts) total += c;
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      pieces_[i].logp = std::log(std::max(counts[i], kMinCount) / total);
    }
  }

  void prune(int new_size) {
    const auto max_len = static_cast<std::size_t>(config_.max_piece_len);
    auto lookup = [this](const std::string& s) -> std::optional<std::pair<int, double>> {
      auto it = index_.find(s);
      if (it == index_.end()) return std::nullopt;
      return std::make_pair(it->second, pieces_[it->second].logp);
    };

    // Viterbi usage counts and the chunk mass that uses each piece.
    std::vector<double> freq(pieces_.size(), 0.0);
    std::vector<double> usage(pieces_.size(), 0.0);
    double chunk_mass = 0.0;
    for (const auto& ch : chunks_) {
      chunk_mass += ch.freq;
      std::set<int> seen;
      for (const auto& [b, e, id] : best_path(ch.chars, max_len, lookup, -1e9)) {
        if (id < 0) continue;
        freq[id] += ch.freq;
        seen.insert(id);
      }
      for (int id : seen) usage[id] += ch.freq;
    }
    double sum = 0.0;
    for (double f : freq) sum += f;
    const double log_sum = std::log(sum);

    std::vector<std::pair<double, int>> scored;
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      if (pieces_[i].is_char) continue;
      double loss = -std::numeric_limits<double>::infinity();
      if (freq[i] > 0.0) {
        const auto alt = best_path(utf8::split_chars(pieces_[i].text), max_len, lookup,
                                   -1e9, static_cast<int>(i));
        const double log_sp = std::log(freq[i]) - log_sum;
        const double log_sum_alt =
            std::log(sum + freq[i] * (static_cast<double>(alt.size()) - 1.0));
        double log_alt = 0.0;
        for (const auto& [b, e, id] : alt) {
          const double f = id < 0 ? 0.0 : freq[id];
          log_alt += std::log(f + freq[i]) - log_sum_alt;
        }
        loss = (usage[i] / chunk_mass) * (log_sp - log_alt);
      }
      scored.emplace_back(loss, static_cast<int>(i));
    }
    std::stable_sort(scored.begin(), scored.end(), [this](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return pieces_[a.second].text < pieces_[b.second].text;
    });

    std::vector<Candidate> kept;
    for (const auto& c : pieces_) {
      if (c.is_char) kept.push_back(c);
    }
    const std::size_t room = static_cast<std::size_t>(new_size) - kept.size();
    for (std::size_t k = 0; k < scored.size() && k < room; ++k) {
      kept.push_back(pieces_[scored[k].second]);
    }
    pieces_ = std::move(kept);
    rebuild_index();
  }

  TokenizerConfig config_;
  std::vector<Chunk> chunks_;
  std::vector<Candidate> pieces_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace

SubwordModel train_subword(const std::vector<std::string>& sentences,
                           const TokenizerConfig& config, TrainingTrace* trace) {
  config.validate();
  if (sentences.empty()) throw InvalidArgument("train_subword: empty corpus");
  Trainer trainer(sentences, config);
  return trainer.run(trace);
}

}  // namespace h2ke::subword
