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

#include "h2ke/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "h2ke/error.hpp"
#include "h2ke/rng.hpp"
#include "h2ke/utf8.hpp"

namespace h2ke::corpus {

namespace {

std::string line_prefix(const std::string& stem, std::size_t line_no) {
  return stem + ":" + std::to_string(line_no);
}

ParallelExample make_example(std::string id, const std::string& src,
                             const std::string& tgt, const std::string& src_lang,
                             const std::string& tgt_lang,
                             const LanguageRegistry& registry,
                             const std::string& where) {
  for (const auto* code : {&src_lang, &tgt_lang}) {
    if (!registry.contains(*code)) {
      throw ParseError(where + ": unknown language code '" + *code + "'");
    }
  }
  if (utf8::trim(src).empty()) throw ParseError(where + ": empty source text");
  if (utf8::trim(tgt).empty()) throw ParseError(where + ": empty target text");
  if (src_lang == tgt_lang) {
    throw ParseError(where + ": source and target language are both '" +
                     src_lang + "'");
  }
  return ParallelExample{std::move(id), src, tgt, registry.get(src_lang),
                         registry.get(tgt_lang)};
}

std::vector<std::string> split_lines(const std::string& content) {
  std::vector<std::string> lines;
  std::string cur;
  std::istringstream in(content);
  while (std::getline(in, cur)) {
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    lines.push_back(cur);
  }
  return lines;
}

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

LanguageRegistry::LanguageRegistry() {
  for (const char* code : {"Hanja", "oKo", "cKo", "En"}) add(code);
}

const LanguageTag& LanguageRegistry::add(const std::string& code) {
  if (code.empty() || code.find_first_of("<> \t\n") != std::string::npos) {
    throw InvalidArgument("invalid language code '" + code + "'");
  }
  for (const auto& t : tags_) {
    if (t.code == code) return t;
  }
  tags_.push_back(LanguageTag{code, "<" + code + ">"});
  return tags_.back();
}

const LanguageTag& LanguageRegistry::get(const std::string& code) const {
  for (const auto& t : tags_) {
    if (t.code == code) return t;
  }
  throw InvalidArgument("unknown language code '" + code + "'");
}

bool LanguageRegistry::contains(const std::string& code) const {
  return std::any_of(tags_.begin(), tags_.end(),
                     [&](const LanguageTag& t) { return t.code == code; });
}

const LanguageRegistry& LanguageRegistry::builtin() {
  static const LanguageRegistry kRegistry;
  return kRegistry;
}

bool PairSpec::allows(const PairType& p) const {
  return std::find(allowed.begin(), allowed.end(), p) != allowed.end();
}

PairSpec PairSpec::full() {
  return PairSpec{{{"Hanja", "oKo"},
                   {"Hanja", "cKo"},
                   {"Hanja", "En"},
                   {"oKo", "cKo"},
                   {"oKo", "En"}}};
}

PairSpec PairSpec::parse(const std::string& text, const LanguageRegistry& reg) {
  PairSpec spec;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = utf8::trim(item);
    if (item.empty()) continue;
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      throw ParseError("pair '" + item + "' is not of the form SRC-TGT");
    }
    PairType p{item.substr(0, dash), item.substr(dash + 1)};
    reg.get(p.first);
    reg.get(p.second);
    spec.allowed.push_back(p);
  }
  if (spec.allowed.empty()) throw ParseError("empty pair list");
  return spec;
}

CorpusFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".tsv") return CorpusFormat::kTsv;
  if (ext == ".jsonl" || ext == ".json") return CorpusFormat::kJsonl;
  throw ParseError("cannot infer corpus format from '" + path.string() +
                   "' (expected .jsonl or .tsv)");
}

std::vector<ParallelExample> load_corpus(const std::filesystem::path& path,
                                         CorpusFormat format,
                                         const LanguageRegistry& registry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open corpus file " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  const auto stem = path.stem().string();
  return format == CorpusFormat::kJsonl ? parse_jsonl(content, stem, registry)
                                        : parse_tsv(content, stem, registry);
}

std::vector<ParallelExample> parse_jsonl(const std::string& content,
                                         const std::string& stem,
                                         const LanguageRegistry& registry) {
  std::vector<ParallelExample> out;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (is_blank(lines[i])) continue;
    const auto where = line_prefix(stem, line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": malformed JSON record (" + e.what() + ")");
    }
    if (!rec.is_object()) throw ParseError(where + ": record is not an object");
    auto field = [&](const char* key) -> std::string {
      auto it = rec.find(key);
      if (it == rec.end() || !it->is_string()) {
        throw ParseError(where + ": missing string field '" + key + "'");
      }
      return it->get<std::string>();
    };
    std::string id = where;
    if (auto it = rec.find("id"); it != rec.end() && !it->is_null()) {
      id = it->is_string() ? it->get<std::string>() : it->dump();
    }
    out.push_back(make_example(std::move(id), field("src"), field("tgt"),
                               field("src_lang"), field("tgt_lang"), registry,
                               where));
  }
  return out;
}

std::string tsv_escape(const std::string& field) {
  std::string out;
  for (char c : field) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string tsv_unescape(const std::string& field, std::size_t line_no) {
  std::string out;
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] != '\\') {
      out.push_back(field[i]);
      continue;
    }
    if (i + 1 == field.size()) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": dangling backslash in TSV field");
    }
    const char n = field[++i];
    switch (n) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case '\\': out.push_back('\\'); break;
      default:
        throw ParseError("line " + std::to_string(line_no) +
                         ": unknown TSV escape '\\" + std::string(1, n) + "'");
    }
  }
  return out;
}

std::vector<ParallelExample> parse_tsv(const std::string& content,
                                       const std::string& stem,
                                       const LanguageRegistry& registry) {
  std::vector<ParallelExample> out;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (is_blank(lines[i])) continue;
    const auto where = line_prefix(stem, line_no);
    std::vector<std::string> cols;
    std::size_t start = 0;
    while (true) {
      const auto tab = lines[i].find('\t', start);
      cols.push_back(lines[i].substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 4) {
      throw ParseError(where + ": expected 4 tab-separated columns, found " +
                       std::to_string(cols.size()));
    }
    try {
      out.push_back(make_example(where, tsv_unescape(cols[2], line_no),
                                 tsv_unescape(cols[3], line_no), cols[0],
                                 cols[1], registry, where));
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      if (msg.rfind(where, 0) == 0) throw;
      throw ParseError(where + ": " + msg);
    }
  }
  return out;
}

TaggedCorpus build_training_pairs(const std::vector<ParallelExample>& examples,
                                  const PairSpec& spec) {
  TaggedCorpus out;
  for (const auto& ex : examples) {
    if (!spec.allows({ex.source_lang.code, ex.target_lang.code})) {
      ++out.filtered;
      continue;
    }
    TaggedExample tagged{ex};
    tagged.example.source_text = ex.target_lang.token_form + " " + ex.source_text;
    out.examples.push_back(std::move(tagged));
  }
  return out;
}

DatasetSplit split(const std::vector<ParallelExample>& examples,
                   SplitRatios ratios, std::uint64_t seed) {
  if (examples.empty()) throw InvalidArgument("split: no examples");
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw InvalidArgument("split ratios must be non-negative and sum to 1");
  }
  const auto n = examples.size();
  const auto n_valid = static_cast<std::size_t>(std::floor(ratios.valid * n + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n + 1e-9));
  const auto order = epoch_permutation(n, seed, 0);
  DatasetSplit out;
  out.seed = seed;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& id = examples[order[k]].id;
    if (k < n_valid) {
      out.valid.push_back(id);
    } else if (k < n_valid + n_test) {
      out.test.push_back(id);
    } else {
      out.train.push_back(id);
    }
  }
  return out;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::uint64_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch));
  rng.shuffle(idx);
  return idx;
}

std::vector<double> rebalance_probabilities(const std::vector<std::size_t>& sizes,
                                            double temperature) {
  if (temperature < 1.0) throw InvalidArgument("rebalance: temperature must be >= 1");
  const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
  if (total <= 0) throw InvalidArgument("rebalance: empty corpus");
  std::vector<double> q(sizes.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) continue;
    q[i] = std::pow(static_cast<double>(sizes[i]) / total, 1.0 / temperature);
    z += q[i];
  }
  for (double& v : q) v /= z;
  return q;
}

std::map<PairType, std::vector<TaggedExample>> group_by_pair(
    const std::vector<TaggedExample>& examples) {
  std::map<PairType, std::vector<TaggedExample>> groups;
  for (const auto& ex : examples) groups[ex.pair_type()].push_back(ex);
  return groups;
}

std::vector<TaggedExample> rebalance(
    const std::map<PairType, std::vector<TaggedExample>>& groups,
    double temperature, std::size_t epoch_size, std::uint64_t seed) {
  std::vector<std::size_t> sizes;
  std::vector<const std::vector<TaggedExample>*> members;
  for (const auto& [pair, exs] : groups) {
    sizes.push_back(exs.size());
    members.push_back(&exs);
  }
  const auto q = rebalance_probabilities(sizes, temperature);

  Rng rng(seed);
  std::vector<std::size_t> counts(q.size(), 0);
  for (std::size_t k = 0; k < epoch_size; ++k) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t g = 0;
    for (; g + 1 < q.size(); ++g) {
      acc += q[g];
      if (u < acc && q[g] > 0) break;
    }
    while (q[g] == 0) --g;  // guards rounding at the tail of the CDF
    ++counts[g];
  }

  std::vector<TaggedExample> out;
  out.reserve(epoch_size);
  for (std::size_t g = 0; g < q.size(); ++g) {
    const auto& group = *members[g];
    if (counts[g] <= group.size()) {
      std::vector<std::size_t> idx(group.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      rng.shuffle(idx);
      for (std::size_t k = 0; k < counts[g]; ++k) out.push_back(group[idx[k]]);
    } else {
      for (std::size_t k = 0; k < counts[g]; ++k) {
        out.push_back(group[rng.index(group.size())]);
      }
    }
  }
  rng.shuffle(out);
  return out;
}

CorpusStats corpus_stats(const std::vector<ParallelExample>& examples) {
  std::map<PairType, std::size_t> counts;
  for (const auto& ex : examples) {
    ++counts[{ex.source_lang.code, ex.target_lang.code}];
  }
  CorpusStats stats;
  stats.total = examples.size();
  for (const auto& [pair, n] : counts) {
    stats.rows.push_back({pair, n, static_cast<double>(n) / stats.total});
  }
  return stats;
}

namespace {
std::string with_commas(std::size_t n) {
  auto digits = std::to_string(n);
  std::string out;
  const auto len = digits.size();
  for (std::size_t i = 0; i < len; ++i) {
    out.push_back(digits[i]);
    if ((len - i - 1) % 3 == 0 && i + 1 < len) out.push_back(',');
  }
  return out;
}
}  // namespace

std::string CorpusStats::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(20) << "pair" << std::right << std::setw(12)
     << "sentences" << std::setw(9) << "ratio" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(20) << ("<" + r.pair.first + ", " + r.pair.second + ">")
       << std::right << std::setw(12) << with_commas(r.count) << std::setw(8)
       << std::fixed << std::setprecision(1) << 100.0 * r.ratio << "%\n";
  }
  return os.str();
}

}  // namespace h2ke::corpus
