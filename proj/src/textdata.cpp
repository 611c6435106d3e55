#include "fmgan/textdata.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace fmgan::textdata {

namespace {

const std::vector<std::string> kReservedTokens{"<pad>", "<unk>", "<bos>", "<eos>"};

}  // namespace

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& tokens) : id_to_token_(kReservedTokens) {
  for (std::size_t i = 0; i < kReservedTokens.size(); ++i) token_to_id_[kReservedTokens[i]] = static_cast<int>(i);
  for (const auto& t : tokens) {
    if (token_to_id_.count(t)) throw InputError("vocab: duplicate token '" + t + "'");
    token_to_id_[t] = static_cast<int>(id_to_token_.size());
    id_to_token_.push_back(t);
  }
}

int Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw RangeError("vocab: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("vocab: cannot write " + path);
  for (std::size_t i = kReserved; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::vector<std::string> tokens;
  std::ifstream in(path);
  if (!in) throw InputError("vocab: cannot read " + path);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocab(tokens);
}

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  for (std::string tok; is >> tok;) {
    for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    out.push_back(std::move(tok));
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& lines, int min_count, std::size_t cap) {
  if (min_count < 1) throw ParameterError("build_vocab: min_count must be at least 1");
  std::map<std::string, long> counts;
  bool any = false;
  for (const auto& line : lines) {
    for (auto& tok : tokenize(line)) {
      ++counts[tok];
      any = true;
    }
  }
  if (!any) throw InputError("build_vocab: empty input");
  std::vector<std::pair<std::string, long>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_count && std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) == kReservedTokens.end()) {
      ranked.emplace_back(tok, n);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t room = cap > kReserved ? cap - kReserved : 0;
  if (ranked.size() > room) ranked.resize(room);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocab(tokens);
}

Vocab build_vocab(std::istream& lines, int min_count, std::size_t cap) {
  std::vector<std::string> all;
  for (std::string line; std::getline(lines, line);) all.push_back(line);
  return build_vocab(all, min_count, cap);
}

Sequence encode(const Vocab& vocab, const std::string& sentence, std::size_t max_len) {
  if (max_len < 2) throw ParameterError("encode: max length must be at least 2");
  Sequence ids(max_len, kPad);
  const auto toks = tokenize(sentence);
  for (std::size_t t = 0; t < std::min(max_len, toks.size()); ++t) ids[t] = vocab.id(toks[t]);
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kEos) break;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

void Corpus::validate(std::size_t vocab_size) const {
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    if (s.size() != max_len) throw InputError("corpus: sequence " + std::to_string(i) + " has wrong length");
    if (std::all_of(s.begin(), s.end(), [](int id) { return id == kPad; })) {
      throw InputError("corpus: sequence " + std::to_string(i) + " is empty");
    }
    for (int id : s) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw RangeError("corpus: id " + std::to_string(id) + " outside vocabulary");
      }
    }
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read corpus file " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

Corpus encode_corpus(const Vocab& vocab, const std::vector<std::string>& lines, std::size_t max_len,
                     const std::string& source, const std::string& split) {
  Corpus c;
  c.max_len = max_len;
  c.source = source;
  c.split = split;
  for (const auto& line : lines) {
    if (tokenize(line).empty()) continue;
    c.sequences.push_back(encode(vocab, line, max_len));
  }
  return c;
}

Var embed(Var embedding, std::span<const int> ids) { return ndgrad::gather_cols(embedding, ids); }

std::vector<Var> embed_batch(Var embedding, std::span<const Sequence* const> batch) {
  if (batch.empty()) throw DimensionError("embed_batch: empty batch");
  const std::size_t len = batch[0]->size();
  std::vector<Var> steps;
  steps.reserve(len);
  std::vector<int> ids(batch.size());
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t j = 0; j < batch.size(); ++j) {
      if (batch[j]->size() != len) throw DimensionError("embed_batch: ragged batch");
      ids[j] = (*batch[j])[t];
    }
    steps.push_back(ndgrad::gather_cols(embedding, ids));
  }
  return steps;
}

// ---------------------------------------------------------------------------
// Markov chains

std::size_t sample_index(std::mt19937_64& rng, std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double u = unit_uniform(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // Rounding at the top end: last index with positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0) return i;
  }
  return weights.size() - 1;
}

double standard_normal(std::mt19937_64& rng) {
  double u1 = unit_uniform(rng);
  while (u1 <= 0.0) u1 = unit_uniform(rng);
  const double u2 = unit_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

void MarkovChain::validate() const {
  if (states == 0) throw ParameterError("chain: no states");
  if (transitions.rows() != states || transitions.cols() != states) {
    throw ParameterError("chain: transition table must be " + std::to_string(states) + "x" + std::to_string(states));
  }
  if (start.size() != states) throw ParameterError("chain: start distribution has wrong length");
  for (std::size_t i = 0; i < states; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < states; ++j) {
      if (!(transitions(i, j) >= 0.0)) throw ParameterError("chain: negative transition probability");
      s += transitions(i, j);
    }
    if (std::abs(s - 1.0) > 1e-9) {
      throw ParameterError("chain: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  double s = 0.0;
  for (double p : start) {
    if (!(p >= 0.0)) throw ParameterError("chain: negative start probability");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ParameterError("chain: start distribution sums to " + std::to_string(s));
}

double MarkovChain::log_likelihood(std::span<const int> ids, double smoothing) const {
  auto state_of = [&](int id) -> long {
    const long s = id - kReserved;
    return (s >= 0 && static_cast<std::size_t>(s) < states) ? s : -1;
  };
  double ll = 0.0;
  long prev = -2;
  for (int id : ids) {
    if (id == kPad || id == kEos) break;
    const long s = state_of(id);
    double p = 0.0;
    if (prev == -2) {
      p = s >= 0 ? start[static_cast<std::size_t>(s)] : 0.0;
    } else if (prev >= 0 && s >= 0) {
      p = transitions(static_cast<std::size_t>(prev), static_cast<std::size_t>(s));
    }
    ll += std::log(p + smoothing);
    prev = s;
  }
  return ll;
}

MarkovChain MarkovChain::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("chain: cannot read " + path);
  std::map<std::string, std::vector<double>> kv;
  for (std::string line; std::getline(in, line);) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(std::remove_if(key.begin(), key.end(), [](unsigned char c) { return std::isspace(c); }), key.end());
    std::istringstream vs(line.substr(eq + 1));
    std::vector<double> values;
    for (double v; vs >> v;) values.push_back(v);
    kv[key] = std::move(values);
  }
  for (const char* key : {"states", "transitions", "start"}) {
    if (!kv.count(key)) throw InputError(std::string("chain: missing key '") + key + "' in " + path);
  }
  MarkovChain chain;
  if (kv["states"].size() != 1 || kv["states"][0] < 1) throw InputError("chain: bad 'states' value");
  chain.states = static_cast<std::size_t>(kv["states"][0]);
  const auto& tr = kv["transitions"];
  if (tr.size() != chain.states * chain.states) throw ParameterError("chain: transitions has wrong length");
  chain.transitions = Tensor({chain.states, chain.states}, tr);
  const auto& st = kv["start"];
  if (st.size() == 1) {
    const auto s = static_cast<std::size_t>(st[0]);
    if (s >= chain.states) throw ParameterError("chain: start state out of range");
    chain.start.assign(chain.states, 0.0);
    chain.start[s] = 1.0;
  } else {
    chain.start = st;
  }
  chain.validate();
  return chain;
}

void MarkovChain::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("chain: cannot write " + path);
  out.precision(17);
  out << "states = " << states << "\ntransitions =";
  for (double v : transitions.data()) out << ' ' << v;
  out << "\nstart =";
  for (double v : start) out << ' ' << v;
  out << '\n';
}

Vocab chain_vocab(std::size_t states) {
  std::vector<std::string> tokens;
  for (std::size_t s = 0; s < states; ++s) tokens.push_back("w" + std::to_string(s));
  return Vocab(tokens);
}

Corpus synth_corpus(const MarkovChain& chain, std::size_t count, std::size_t max_len, std::uint64_t seed) {
  chain.validate();
  if (max_len < 1) throw ParameterError("synth_corpus: max length must be positive");
  std::mt19937_64 rng(seed);
  Corpus c;
  c.max_len = max_len;
  c.source = "markov";
  c.split = "train";
  c.sequences.reserve(count);
  std::vector<double> row(chain.states);
  for (std::size_t n = 0; n < count; ++n) {
    Sequence seq(max_len);
    std::size_t s = sample_index(rng, chain.start);
    seq[0] = chain.token_id(s);
    for (std::size_t t = 1; t < max_len; ++t) {
      for (std::size_t j = 0; j < chain.states; ++j) row[j] = chain.transitions(s, j);
      s = sample_index(rng, row);
      seq[t] = chain.token_id(s);
    }
    c.sequences.push_back(std::move(seq));
  }
  return c;
}

double bigram_tv_distance(const Corpus& corpus, const MarkovChain& chain) {
  chain.validate();
  const std::size_t s = chain.states;
  // Empirical pair counts; index s*s collects pairs touching non-chain ids.
  std::vector<double> observed(s * s + 1, 0.0);
  std::vector<double> per_position(corpus.max_len, 0.0);
  double total = 0.0;
  for (const auto& seq : corpus.sequences) {
    for (std::size_t t = 0; t + 1 < seq.size(); ++t) {
      const int a = seq[t], b = seq[t + 1];
      if (a == kPad || b == kPad || a == kEos || b == kEos) break;
      const long sa = a - kReserved, sb = b - kReserved;
      const bool in_chain = sa >= 0 && sb >= 0 && static_cast<std::size_t>(sa) < s && static_cast<std::size_t>(sb) < s;
      observed[in_chain ? static_cast<std::size_t>(sa) * s + static_cast<std::size_t>(sb) : s * s] += 1.0;
      per_position[t] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw InputError("bigram_tv_distance: corpus has no bigrams");
  std::vector<double> expected(s * s + 1, 0.0);
  std::vector<double> marginal = chain.start;
  std::vector<double> next(s);
  for (std::size_t t = 0; t < per_position.size(); ++t) {
    if (per_position[t] > 0.0) {
      const double w = per_position[t] / total;
      for (std::size_t a = 0; a < s; ++a)
        for (std::size_t b = 0; b < s; ++b) expected[a * s + b] += w * marginal[a] * chain.transitions(a, b);
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t a = 0; a < s; ++a)
      for (std::size_t b = 0; b < s; ++b) next[b] += marginal[a] * chain.transitions(a, b);
    marginal = next;
  }
  double tv = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) tv += std::abs(observed[k] / total - expected[k]);
  return 0.5 * tv;
}

MarkovChain random_sparse_chain(std::size_t states, std::size_t successors, std::uint64_t seed) {
  if (states == 0 || successors == 0 || successors > states) {
    throw ParameterError("random_sparse_chain: need 0 < successors <= states");
  }
  std::mt19937_64 rng(seed);
  MarkovChain chain;
  chain.states = states;
  chain.transitions = Tensor({states, states});
  std::vector<std::size_t> order(states);
  for (std::size_t a = 0; a < states; ++a) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = 0; i < successors; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(states - i));
      std::swap(order[i], order[j]);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < successors; ++i) {
      const double w = 0.2 + unit_uniform(rng);
      chain.transitions(a, order[i]) = w;
      total += w;
    }
    for (std::size_t b = 0; b < states; ++b) chain.transitions(a, b) /= total;
  }
  chain.start.assign(states, 1.0 / static_cast<double>(states));
  return chain;
}

// ---------------------------------------------------------------------------
// BLEU

namespace {

std::vector<int> content(const Sequence& seq) {
  std::vector<int> out;
  for (int id : seq) {
    if (id == kPad || id == kEos) break;
    if (id != kBos) out.push_back(id);
  }
  return out;
}

std::string ngram_key(const std::vector<int>& toks, std::size_t at, std::size_t n) {
  return std::string(reinterpret_cast<const char*>(toks.data() + at), n * sizeof(int));
}

using NgramCounts = std::unordered_map<std::string, int>;

NgramCounts count_ngrams(const std::vector<int>& toks, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[ngram_key(toks, i, n)];
  return counts;
}

// Largest and second-largest count of one n-gram across references, so the
// maximum with any single reference left out is available in O(1).
struct TopTwo {
  int first = 0;
  int copies = 0;
  int second = 0;

  void add(int count) {
    if (count > first) {
      second = first;
      first = count;
      copies = 1;
    } else if (count == first) {
      ++copies;
      second = first;
    } else {
      second = std::max(second, count);
    }
  }
  int without(int own) const { return (own == first && copies == 1) ? second : first; }
};

struct ReferenceTable {
  std::vector<std::unordered_map<std::string, TopTwo>> orders;  // index n-1
  std::map<std::size_t, int> lengths;

  ReferenceTable(const std::vector<std::vector<int>>& refs, int max_n) : orders(static_cast<std::size_t>(max_n)) {
    for (const auto& r : refs) {
      ++lengths[r.size()];
      for (int n = 1; n <= max_n; ++n) {
        for (auto& [key, c] : count_ngrams(r, static_cast<std::size_t>(n))) orders[n - 1][key].add(c);
      }
    }
  }

  // Closest reference length, ties to the shorter one.
  std::size_t closest(std::size_t len) const {
    std::size_t best = 0;
    std::size_t gap = std::numeric_limits<std::size_t>::max();
    for (auto& [l, k] : lengths) {
      if (k <= 0) continue;
      const std::size_t d = l > len ? l - len : len - l;
      if (d < gap) {
        gap = d;
        best = l;
      }
    }
    return best;
  }
};

struct BleuStats {
  std::vector<double> clipped, total;
  double cand_len = 0.0, ref_len = 0.0;

  explicit BleuStats(int max_n) : clipped(static_cast<std::size_t>(max_n)), total(static_cast<std::size_t>(max_n)) {}

  // `leave_out` removes the candidate's own copy from the reference table.
  void add(const std::vector<int>& cand, ReferenceTable& table, bool leave_out) {
    if (leave_out) --table.lengths[cand.size()];
    cand_len += static_cast<double>(cand.size());
    ref_len += static_cast<double>(table.closest(cand.size()));
    if (leave_out) ++table.lengths[cand.size()];
    for (std::size_t n = 1; n <= clipped.size(); ++n) {
      const auto& refs = table.orders[n - 1];
      for (auto& [key, c] : count_ngrams(cand, n)) {
        auto it = refs.find(key);
        const int cap = it == refs.end() ? 0 : (leave_out ? it->second.without(c) : it->second.first);
        clipped[n - 1] += std::min(c, cap);
        total[n - 1] += c;
      }
    }
  }

  BleuDetail finish() const {
    BleuDetail d;
    double log_sum = 0.0;
    bool zero = cand_len == 0.0;
    for (std::size_t n = 0; n < clipped.size(); ++n) {
      const double p = total[n] > 0.0 ? clipped[n] / total[n] : 0.0;
      d.precisions.push_back(p);
      if (p == 0.0) zero = true;
      else log_sum += std::log(p);
    }
    d.brevity_penalty = (cand_len == 0.0 || cand_len > ref_len) ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    d.score = zero ? 0.0 : std::min(1.0, d.brevity_penalty * std::exp(log_sum / static_cast<double>(clipped.size())));
    return d;
  }
};

void check_order(int max_n) {
  if (max_n < 1 || max_n > 5) throw ParameterError("bleu: max_n must be in 1..5, got " + std::to_string(max_n));
}

std::vector<std::vector<int>> contents(std::span<const Sequence> seqs) {
  std::vector<std::vector<int>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(content(s));
  return out;
}

}  // namespace

BleuDetail bleu_detail(std::span<const Sequence> candidates, std::span<const Sequence> references, int max_n) {
  check_order(max_n);
  if (candidates.empty()) throw InputError("bleu: empty candidate set");
  if (references.empty()) throw InputError("bleu: empty reference set");
  ReferenceTable table(contents(references), max_n);
  BleuStats stats(max_n);
  for (const auto& c : contents(candidates)) stats.add(c, table, false);
  return stats.finish();
}

double test_bleu(std::span<const Sequence> candidates, std::span<const Sequence> references, int max_n) {
  return bleu_detail(candidates, references, max_n).score;
}

double self_bleu(std::span<const Sequence> candidates, int max_n) {
  check_order(max_n);
  if (candidates.size() < 2) throw InputError("self_bleu: need at least 2 candidates");
  const auto all = contents(candidates);
  ReferenceTable table(all, max_n);
  double sum = 0.0;
  for (const auto& c : all) {
    BleuStats stats(max_n);
    stats.add(c, table, true);
    sum += stats.finish().score;
  }
  return sum / static_cast<double>(all.size());
}

}  // namespace fmgan::textdata
