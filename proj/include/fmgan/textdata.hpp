#pragma once

// Vocabulary, padded id corpora, the embedding lookup, synthetic Markov-chain
// corpora and BLEU metrics.

#include <cstdint>
#include <istream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmgan/ndgrad.hpp"

namespace fmgan::textdata {

using ndgrad::Tensor;
using ndgrad::Var;

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kReserved = 4;

class Vocab {
 public:
  Vocab();
  // Tokens in id order starting at id 4.
  explicit Vocab(const std::vector<std::string>& tokens);

  std::size_t size() const noexcept { return id_to_token_.size(); }
  int id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }
  const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Lowercased whitespace tokens.
std::vector<std::string> tokenize(const std::string& line);

// Most frequent first, ties by token; tokens below min_count are left out.
// The total size including the reserved ids never exceeds cap.
Vocab build_vocab(std::istream& lines, int min_count, std::size_t cap);
Vocab build_vocab(const std::vector<std::string>& lines, int min_count, std::size_t cap);

using Sequence = std::vector<int>;

// No BOS or EOS; truncated to max_len and PAD-filled on the right.
Sequence encode(const Vocab& vocab, const std::string& sentence, std::size_t max_len);
// Stops at the first PAD or EOS.
std::string decode(const Vocab& vocab, std::span<const int> ids);

struct Corpus {
  std::vector<Sequence> sequences;
  std::size_t max_len = 0;
  std::string source;
  std::string split;

  std::size_t size() const noexcept { return sequences.size(); }
  void validate(std::size_t vocab_size) const;
};

std::vector<std::string> read_lines(const std::string& path);
Corpus encode_corpus(const Vocab& vocab, const std::vector<std::string>& lines, std::size_t max_len,
                     const std::string& source = {}, const std::string& split = "train");

// Column t is column ids[t] of the embedding matrix.
Var embed(Var embedding, std::span<const int> ids);
// Position-major batch embedding: element t is the k x n matrix of the t-th tokens.
std::vector<Var> embed_batch(Var embedding, std::span<const Sequence* const> batch);

struct MarkovChain {
  std::size_t states = 0;
  Tensor transitions;          // states x states, rows sum to one
  std::vector<double> start;   // initial distribution

  void validate() const;
  int token_id(std::size_t state) const noexcept { return kReserved + static_cast<int>(state); }
  // Log-probability of a sequence under the chain with additive smoothing on each factor.
  double log_likelihood(std::span<const int> ids, double smoothing = 1e-6) const;

  // Key-value file with `states`, row-major `transitions` and `start`
  // (either one state index or a full distribution).
  static MarkovChain load(const std::string& path);
  void save(const std::string& path) const;
};

// Vocabulary whose non-reserved tokens are w0..w{states-1}, in state order.
Vocab chain_vocab(std::size_t states);

Corpus synth_corpus(const MarkovChain& chain, std::size_t count, std::size_t max_len, std::uint64_t seed);

// Total-variation distance between the empirical bigram distribution of the
// corpus and the chain's expected bigram distribution over the same positions.
// Bigrams that touch non-chain ids count entirely as mismatch.
double bigram_tv_distance(const Corpus& corpus, const MarkovChain& chain);

// Random sparse chain: each state gets `successors` next states with random weights.
MarkovChain random_sparse_chain(std::size_t states, std::size_t successors, std::uint64_t seed);

// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
// Categorical draw from nonnegative weights.
std::size_t sample_index(std::mt19937_64& rng, std::span<const double> weights);
// Standard normal via Box-Muller.
double standard_normal(std::mt19937_64& rng);

struct BleuDetail {
  double score = 0.0;
  std::vector<double> precisions;  // modified precision per order 1..max_n
  double brevity_penalty = 1.0;
};

// Corpus BLEU: clipped n-gram counts against the per-n-gram maximum over all
// references, geometric mean over orders 1..max_n, no smoothing, brevity
// penalty from the closest reference length. PAD, BOS and EOS are excluded.
BleuDetail bleu_detail(std::span<const Sequence> candidates, std::span<const Sequence> references, int max_n);
double test_bleu(std::span<const Sequence> candidates, std::span<const Sequence> references, int max_n);
// Mean over candidates of BLEU against all the other candidates.
double self_bleu(std::span<const Sequence> candidates, int max_n);

}  // namespace fmgan::textdata
