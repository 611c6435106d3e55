#pragma once

// Alternating FMD min-max training: J critic ascent steps on the extractor
// (and the embedding, by default), then one generator descent step on a fresh
// batch. Adam on both players, global-norm clipping, per-epoch shuffled real
// batches, periodic held-out FMD and BLEU evaluation, checkpoint and resume.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fmgan/checkpoint.hpp"
#include "fmgan/nets.hpp"
#include "fmgan/ot.hpp"
#include "fmgan/textdata.hpp"

namespace fmgan::train {

using nets::ParamMap;
using ndgrad::Gradients;
using ndgrad::Tensor;
using ndgrad::Var;

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::map<std::string, Tensor> m, v;
  long step = 0;
};

// Bias-corrected Adam on every parameter that has a gradient entry.
void adam_step(ParamMap& params, const Gradients& grads, AdamState& state, const AdamConfig& cfg);

// Scales the gradients so their joint L2 norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

enum class EmbeddingOwner { critic, generator };

struct TrainConfig {
  nets::NetConfig net;
  std::size_t batch = 32;
  double lr_critic = 1e-4;
  double lr_generator = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  int iterations = 2000;
  int critic_steps = 5;  // J
  double tau = 0.1;
  double tau_final = 0.1;  // linear anneal target; equal to tau means no anneal
  ot::SolverConfig solver = ot::SolverConfig::training();
  double clip = 5.0;
  EmbeddingOwner embedding_owner = EmbeddingOwner::critic;
  bool reuse_batch = false;
  std::uint64_t seed = 1;
  int heldout_every = 10;
  std::size_t heldout_size = 128;
  int eval_every = 100;
  std::size_t eval_samples = 500;

  void validate() const;
  double temperature(int iter) const;
  bool critic_owns(const std::string& name) const;
  bool generator_owns(const std::string& name) const;
};

// Real batches drawn without replacement; each epoch is a fresh permutation
// derived from (seed, epoch). A trailing partial batch is dropped.
class BatchSampler {
 public:
  BatchSampler(std::size_t corpus_size, std::size_t batch, std::uint64_t seed);

  std::vector<std::size_t> next();
  long epoch() const noexcept { return epoch_; }
  std::size_t cursor() const noexcept { return cursor_; }
  void restore(long epoch, std::size_t cursor);

 private:
  void reshuffle();

  std::size_t size_, batch_;
  std::uint64_t seed_;
  long epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// Fisher-Yates permutation of 0..n-1 driven by unit_uniform.
std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng);
Tensor gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols);

struct LogRecord {
  long step = 0;  // strictly increasing over the run
  int iter = 0;
  std::string phase;  // critic, generator, heldout, eval
  double fmd = 0.0;
  double residual = 0.0;
  std::optional<double> bleu2, bleu3, selfbleu2, selfbleu3;
  double wall_ms = 0.0;
  std::map<std::string, double> extra;  // task-specific columns appended after wall_ms
};

struct TrainHistory {
  std::vector<LogRecord> records;

  std::vector<LogRecord> phase(const std::string& name) const;
};

inline const char* kMetricsHeader = "iter,phase,fmd,residual,bleu2,bleu3,selfbleu2,selfbleu3,wall_ms";
std::string metrics_header(const std::vector<std::string>& extra_columns = {});
// Extra columns missing from the record are left empty.
std::string to_csv_row(const LogRecord& r, const std::vector<std::string>& extra_columns = {});

struct UpdateResult {
  double fmd = 0.0;
  double residual = 0.0;
  double grad_norm = 0.0;
};

using Batch = std::vector<const textdata::Sequence*>;

class Trainer {
 public:
  Trainer(TrainConfig cfg, textdata::Corpus train, textdata::Corpus test, std::uint64_t config_hash = 0);

  const TrainConfig& config() const noexcept { return cfg_; }
  const ParamMap& params() const noexcept { return params_; }
  ParamMap& params() noexcept { return params_; }
  const TrainHistory& history() const noexcept { return history_; }
  int iteration() const noexcept { return iter_; }

  // Alg. 2 building blocks on explicit inputs. Both return the FMD before the step.
  UpdateResult critic_update(const Batch& real, const Tensor& z, double tau);
  UpdateResult generator_update(const Batch& real, const Tensor& z, double tau);
  // FMD of the current networks without updating anything.
  UpdateResult evaluate_fmd(const Batch& real, const Tensor& z, double tau) const;

  Batch sample_batch();
  Tensor sample_noise(std::size_t count);

  // One outer iteration: J critic updates, then a generator update.
  void step();
  // Runs until cfg.iterations, logging through the callback as records appear.
  // Evaluates at iteration 0 when starting fresh.
  void run(const std::function<void(const LogRecord&)>& on_record = {},
           const std::function<void(int)>& on_iteration = {});

  double heldout_fmd();
  LogRecord evaluate();
  // Hard samples for a fixed, seed-derived set of noise vectors.
  std::vector<textdata::Sequence> samples(std::size_t count) const;
  std::vector<textdata::Sequence> samples_for(const Tensor& z) const;

  Checkpoint checkpoint() const;
  void save(const std::string& path) const;
  // Restores parameters, optimizer state, sampler and RNG from a checkpoint of the same config.
  void restore(const Checkpoint& ck);

 private:
  LogRecord& log(LogRecord r);

  TrainConfig cfg_;
  textdata::Corpus train_, test_;
  std::uint64_t config_hash_;
  ParamMap params_;
  AdamState adam_critic_, adam_generator_;
  BatchSampler sampler_;
  std::mt19937_64 rng_;
  Batch heldout_batch_;
  Tensor heldout_z_;
  Tensor eval_z_;
  int iter_ = 0;
  long step_ = 0;
  TrainHistory history_;
  std::function<void(const LogRecord&)> sink_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace fmgan::train
