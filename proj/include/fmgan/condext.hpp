#pragma once

// Conditional objectives built from the FMD critic: style transfer
// (reconstruction plus two transferred-vs-target FMD terms) and unsupervised
// deciphering (feature-space cycle consistency plus two FMD terms), with the
// toy data generators and trainers used to exercise them.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <vector>

#include "fmgan/fmd.hpp"
#include "fmgan/nets.hpp"
#include "fmgan/textdata.hpp"
#include "fmgan/train.hpp"

namespace fmgan::condext {

using nets::ParamMap;
using nets::VarMap;
using ndgrad::Tape;
using ndgrad::Tensor;
using ndgrad::Var;
using textdata::Corpus;
using textdata::Sequence;
using train::Batch;

struct CondConfig {
  train::TrainConfig base;  // network sizes, optimizer, loop and solver settings
  double lambda = 1.0;
  std::size_t style_dim = 8;

  void validate() const;
};

struct AdvTerms {
  fmd::FmdNode first, second;
  Var total;  // first + second

  double mean_value() const { return 0.5 * total.value().item(); }
  double residual() const { return std::max(first.residual, second.residual); }
};

// ---------------------------------------------------------------------------
// Style transfer

// enc.* (LSTM over words), style.E (style_dim x 2), dec.* (LSTM driven by
// [h_T; s_source; s_target]) with dec.V, embed.W and ext.*.
ParamMap init_style_params(const CondConfig& cfg, std::uint64_t seed);

struct StyleVars {
  nets::LstmVars encoder;
  Var style;  // style_dim x 2
  nets::GeneratorVars decoder;
  nets::ExtractorVars extractor;

  static StyleVars from(const VarMap& vars, const nets::NetConfig& net);
};

// z = [h_T(x); s_c] for a batch of embedded sentences (position-major steps).
Var encode(const StyleVars& m, const std::vector<Var>& steps, int style);
// Decoder drive [z; s_target].
Var decoder_drive(const StyleVars& m, Var z, int target_style);

// Mean token NLL of each batch under teacher forcing with its own style, summed over the two styles.
Var reconstruction_loss(const StyleVars& m, const Batch& batch1, const Batch& batch2);

// FMD(F(G(E(x1,c1),c2)), F(W_e x2)) + FMD(F(G(E(x2,c2),c1)), F(W_e x1)).
AdvTerms style_adv_loss(const StyleVars& m, const Batch& batch1, const Batch& batch2, double tau,
                        const ot::SolverConfig& solver);

Var style_objective(Var reconstruction, Var adversarial, double lambda);

// Greedy transfer of each sentence to the other style.
std::vector<Sequence> transfer(const StyleVars& m, const Batch& batch, int source_style, std::size_t len);

// Fraction of sentences whose likelihood under the target chain exceeds that under the source chain.
double transfer_accuracy(const std::vector<Sequence>& transferred, const textdata::MarkovChain& source,
                         const textdata::MarkovChain& target);

// ---------------------------------------------------------------------------
// Substitution cipher

// g1.M, g1.c, g2.M, g2.c (position-wise word maps), embed.W, ext1.*, ext2.*.
ParamMap init_cipher_params(const CondConfig& cfg, std::uint64_t seed);

struct CipherVars {
  Var m1, c1, m2, c2;
  Var embed;
  nets::ExtractorVars f1, f2;

  static CipherVars from(const VarMap& vars, const nets::NetConfig& net);
};

// Soft mapped words: w~_t = W_e softmax((M w_t + c) / tau).
std::vector<Var> map_words(Var m, Var c, Var embed, const std::vector<Var>& steps, double tau);

// Entrywise L1 distance between matching feature columns, averaged over the columns.
Var feature_l1(Var a, Var b);

// E|F1(G2(G1(x1))) - F1(W_e x1)|_1 + E|F2(G1(G2(x2))) - F2(W_e x2)|_1, L1 summed over feature
// entries and averaged over the batch.
Var cycle_loss(const CipherVars& m, const Batch& batch1, const Batch& batch2, double tau);

// FMD(F1(G2(x2)), F1(W_e x1)) + FMD(F2(G1(x1)), F2(W_e x2)).
AdvTerms cipher_adv_loss(const CipherVars& m, const Batch& batch1, const Batch& batch2, double tau,
                         const ot::SolverConfig& solver);

// Greedy word map of the first (g1) or second (g2) generator for every vocabulary id.
std::vector<int> word_map(const CipherVars& m, bool first);

// Average over both directions of the fraction of word occurrences mapped to the key.
// key[state] is the ciphered state of a plain state.
double decipher_accuracy(const CipherVars& m, const Corpus& plain, const Corpus& ciphered,
                         const std::vector<std::size_t>& key);

// ---------------------------------------------------------------------------
// Toy tasks

struct StyleTask {
  textdata::MarkovChain chain1, chain2;
  Corpus train1, train2, test1, test2;
};

StyleTask make_style_task(std::size_t states, std::size_t successors, std::size_t train_size,
                          std::size_t test_size, std::size_t len, std::uint64_t seed);

struct CipherTask {
  textdata::MarkovChain chain;
  std::vector<std::size_t> key;
  Corpus train1, train2, test1, test2;  // plain and ciphered, drawn independently
};

Sequence apply_key(const Sequence& s, const std::vector<std::size_t>& key);

CipherTask make_cipher_task(std::size_t states, std::size_t successors, std::size_t train_size,
                            std::size_t test_size, std::size_t len, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Trainers: J critic ascent steps, then one step of the min player on fresh batches.

class PairTrainer {
 public:
  virtual ~PairTrainer() = default;

  const CondConfig& config() const noexcept { return cfg_; }
  const ParamMap& params() const noexcept { return params_; }
  ParamMap& params() noexcept { return params_; }
  const train::TrainHistory& history() const noexcept { return history_; }
  int iteration() const noexcept { return iter_; }
  virtual std::vector<std::string> extra_columns() const = 0;

  void step();
  void run(const std::function<void(const train::LogRecord&)>& on_record = {},
           const std::function<void(int)>& on_iteration = {});
  train::LogRecord evaluate();

  Checkpoint checkpoint() const;
  void save(const std::string& path) const;
  void restore(const Checkpoint& ck);

 protected:
  struct Objectives {
    AdvTerms adv;
    Var critic;  // maximized by the critic
    Var min;     // minimized by the other player
  };

  PairTrainer(CondConfig cfg, Corpus train1, Corpus train2, ParamMap params, std::uint64_t config_hash);

  virtual bool critic_owns(const std::string& name) const = 0;
  virtual Objectives objectives(Tape& tape, const VarMap& vars, const Batch& b1, const Batch& b2) const = 0;
  virtual void fill_eval(train::LogRecord& r) const = 0;

  double tau() const { return cfg_.base.temperature(std::max(iter_, 1)); }
  train::LogRecord& log(train::LogRecord r);

  CondConfig cfg_;
  Corpus train1_, train2_;
  std::uint64_t config_hash_;
  ParamMap params_;
  train::AdamState adam_critic_, adam_min_;
  train::BatchSampler sampler1_, sampler2_;
  int iter_ = 0;
  long step_ = 0;
  train::TrainHistory history_;
  std::function<void(const train::LogRecord&)> sink_;
  std::chrono::steady_clock::time_point start_;

 private:
  void update(bool critic);
};

class StyleTrainer : public PairTrainer {
 public:
  StyleTrainer(CondConfig cfg, StyleTask task, std::uint64_t config_hash = 0);

  std::vector<std::string> extra_columns() const override { return {"accuracy", "rec_nll"}; }
  const StyleTask& task() const noexcept { return task_; }
  // Transfer accuracy over both directions on the test splits.
  double accuracy() const;
  // Per-token reconstruction NLL averaged over both styles on the test splits.
  double reconstruction_nll() const;

 protected:
  bool critic_owns(const std::string& name) const override;
  Objectives objectives(Tape& tape, const VarMap& vars, const Batch& b1, const Batch& b2) const override;
  void fill_eval(train::LogRecord& r) const override;

 private:
  StyleTask task_;
};

class CipherTrainer : public PairTrainer {
 public:
  CipherTrainer(CondConfig cfg, CipherTask task, std::uint64_t config_hash = 0);

  std::vector<std::string> extra_columns() const override { return {"accuracy", "cycle"}; }
  const CipherTask& task() const noexcept { return task_; }
  double accuracy() const;

 protected:
  bool critic_owns(const std::string& name) const override;
  Objectives objectives(Tape& tape, const VarMap& vars, const Batch& b1, const Batch& b2) const override;
  void fill_eval(train::LogRecord& r) const override;

 private:
  CipherTask task_;
};

}  // namespace fmgan::condext
