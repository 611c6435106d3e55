#pragma once

// The LSTM generator (hard argmax and soft-argmax decoding) and the
// multi-window convolutional feature extractor.
//
// Parameters live in a ParamMap keyed by name. A network is bound to a tape by
// registering those tensors as leaves; the *Vars structs below just hold the
// resulting handles. Batches are column-major in the sentence index: a word
// step is k x n, a feature batch d x n.

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fmgan/ndgrad.hpp"
#include "fmgan/textdata.hpp"

namespace fmgan::nets {

using ndgrad::Tape;
using ndgrad::Tensor;
using ndgrad::Var;
using textdata::Sequence;

using ParamMap = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, Var>;

struct NetConfig {
  std::size_t vocab = 24;
  std::size_t embed_dim = 64;      // k
  std::size_t hidden = 128;        // h
  std::size_t noise_dim = 32;      // z
  std::size_t max_len = 12;        // L
  std::vector<std::size_t> windows{3, 4, 5};
  std::size_t filters = 32;        // per window
  double recurrent_init = 0.08;
  double embed_init = 1.0;

  void validate() const;
  std::size_t feature_dim() const noexcept { return windows.size() * filters; }
};

double uniform(std::mt19937_64& rng, double lo, double hi);
Tensor uniform_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape, double scale);

// Parameter families. Every name gets the given prefix.
//   LSTM:       {p}Wx (4h x in), {p}Wh (4h x h), {p}b (4h), and {p}Wz (4h x drive) when drive > 0
//   decoder:    {p}V (v x h)
//   extractor:  {p}W<l> (filters x k*l), {p}b<l> (filters) for each window l
void add_lstm_params(ParamMap& params, const std::string& prefix, std::size_t in, std::size_t drive,
                     std::size_t hidden, double scale, std::mt19937_64& rng);
void add_extractor_params(ParamMap& params, const std::string& prefix, std::size_t embed_dim,
                          const std::vector<std::size_t>& windows, std::size_t filters, std::mt19937_64& rng);
// embed.W with the PAD column zero.
void add_embedding(ParamMap& params, std::size_t embed_dim, std::size_t vocab, double scale, std::mt19937_64& rng);

// Full FM-GAN parameter set: gen.*, embed.W, ext.*.
ParamMap init_params(const NetConfig& cfg, std::uint64_t seed);

inline const std::string kEmbedding = "embed.W";

bool has_prefix(const std::string& name, const std::string& prefix);

// Registers every parameter on the tape; trainable ones become gradient leaves.
VarMap bind_params(Tape& tape, const ParamMap& params, const std::function<bool(const std::string&)>& trainable);
VarMap bind_constants(Tape& tape, const ParamMap& params);

struct LstmState {
  Var h;
  Var c;
};

struct LstmVars {
  Var wx, wh, b;
  Var wz;  // unset (tape == nullptr) when the cell has no drive input
  std::size_t hidden = 0;

  static LstmVars from(const VarMap& vars, const std::string& prefix);
  bool has_drive() const noexcept { return wz.tape != nullptr; }
  // Per-sequence gate offset: b plus Wz * drive when present (4h x n).
  Var offset(Var drive, std::size_t batch) const;
  LstmState zero_state(Tape& tape, std::size_t batch) const;
};

// Gates are Wx x + Wh h + offset, ordered i, f, g, o.
LstmState lstm_cell(const LstmVars& cell, Var x, const LstmState& prev, Var offset);

struct GeneratorVars {
  LstmVars cell;
  Var v;      // v x h
  Var embed;  // k x v

  static GeneratorVars from(const VarMap& vars, const std::string& prefix = "gen.");
};

struct StepOutput {
  LstmState state;
  Var logits;  // v x n
};

// One generator step: z is concatenated to the input word at every step.
StepOutput lstm_step(const GeneratorVars& g, Var w_prev, const LstmState& prev, Var z);

// Soft-argmax rollout from the BOS embedding: w_t = W_e softmax(V h_t / tau).
// Returns the L soft word embeddings, each k x n.
std::vector<Var> generate_soft(const GeneratorVars& g, Var z, std::size_t len, double tau);

struct HardRollout {
  std::vector<Sequence> sequences;
  double min_gap = 0.0;  // smallest top-1 minus top-2 logit over all steps and sentences
};

// Greedy argmax rollout (ties to the lowest id) feeding back embedded tokens.
HardRollout generate_hard(const GeneratorVars& g, Var z, std::size_t len);

// Logits for each position when the given words are fed as inputs.
std::vector<Var> teacher_forced_logits(const GeneratorVars& g, Var z, const std::vector<Var>& inputs);

struct ExtractorVars {
  std::vector<std::size_t> windows;
  std::vector<Var> w, b;

  static ExtractorVars from(const VarMap& vars, const std::vector<std::size_t>& windows,
                            const std::string& prefix = "ext.");
};

// Valid convolution per window size, tanh, max over time, windows stacked: d x n.
Var extract_features(const ExtractorVars& ext, std::span<const Var> steps);

// FNV-1a over the names and raw bytes of the selected tensors.
std::uint64_t fingerprint(const ParamMap& params, const std::function<bool(const std::string&)>& which);

}  // namespace fmgan::nets
