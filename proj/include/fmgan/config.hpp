#pragma once

// Flat key=value run configuration with section prefixes (net., train., ...).
//
// Every key has a documented default and a type. Lines are `key = value`,
// `#` starts a comment. A key without a section resolves to the unique full
// key whose last component matches it, so `beta` means `solver.beta`.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fmgan/condext.hpp"
#include "fmgan/ot.hpp"
#include "fmgan/train.hpp"

namespace fmgan::config {

enum class Type { integer, real, boolean, text, integer_list, real_list, owner };

struct Key {
  std::string name;
  Type type;
  std::string fallback;
  std::string doc;
};

// All known keys in documentation order.
const std::vector<Key>& keys();

class Config {
 public:
  // Documented defaults, with the command-specific overrides applied
  // ("train", "style-train", "cipher-train", "generate", "eval", "ot-bench").
  static Config defaults(const std::string& command = "train");

  // Full key for a possibly short key; ConfigError naming it when unknown or ambiguous.
  static std::string resolve(const std::string& key);

  // Type-checked assignment; ConfigError naming the key on a bad value.
  void set(const std::string& key, const std::string& value);
  void load_file(const std::string& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");

  const std::string& get(const std::string& key) const;
  long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<std::size_t> sizes(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

  // One `key = value` line per key, sorted.
  std::string dump() const;
  // FNV-1a over every key that shapes the trajectory. Output cadence is left out, and so is
  // the iteration count unless the temperature is annealed.
  std::uint64_t hash() const;

  train::TrainConfig train() const;
  ot::SolverConfig solver() const;
  condext::CondConfig cond() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fmgan::config
