#pragma once

// Single-file checkpoints: a text manifest followed by raw little-endian
// 64-bit floats for every tensor in manifest order.
//
//   fmgan-checkpoint 1
//   meta <key> <value...>
//   tensor <name> f64 <rank> <extents...>
//   end
//   <binary payload>

#include <map>
#include <string>

#include "fmgan/ndgrad.hpp"

namespace fmgan {

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, ndgrad::Tensor> tensors;

  const std::string& get(const std::string& key) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace fmgan
