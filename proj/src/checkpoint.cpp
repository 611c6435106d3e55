#include "fmgan/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fmgan {

namespace {

constexpr const char* kMagic = "fmgan-checkpoint 1";

void put_le(std::ostream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw InputError("checkpoint: truncated tensor payload");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw InputError("checkpoint: missing meta entry '" + key + "'");
  return it->second;
}

void Checkpoint::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw InputError("checkpoint: cannot write " + path);
    out << kMagic << '\n';
    for (const auto& [k, v] : meta) {
      if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
        throw ContractError("checkpoint: meta entries must be single-line, key without spaces");
      }
      out << "meta " << k << ' ' << v << '\n';
    }
    for (const auto& [name, t] : tensors) {
      out << "tensor " << name << " f64 " << t.rank();
      for (auto e : t.shape()) out << ' ' << e;
      out << '\n';
    }
    out << "end\n";
    for (const auto& [name, t] : tensors)
      for (double v : t.data()) put_le(out, v);
    if (!out) throw InputError("checkpoint: write failed for " + path);
  }
  std::rename(tmp.c_str(), path.c_str());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("checkpoint: cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw InputError("checkpoint: " + path + " is not a checkpoint");
  Checkpoint ck;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> order;
  while (true) {
    if (!std::getline(in, line)) throw InputError("checkpoint: manifest not terminated");
    if (line == "end") break;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ck.meta[key] = value;
    } else if (kind == "tensor") {
      std::string name, dtype;
      std::size_t rank = 0;
      ls >> name >> dtype >> rank;
      if (dtype != "f64" || rank < 1 || rank > 2) throw InputError("checkpoint: bad tensor entry '" + line + "'");
      std::vector<std::size_t> shape(rank);
      for (auto& e : shape) ls >> e;
      if (!ls) throw InputError("checkpoint: bad tensor entry '" + line + "'");
      order.emplace_back(name, shape);
    } else {
      throw InputError("checkpoint: unexpected manifest line '" + line + "'");
    }
  }
  for (auto& [name, shape] : order) {
    ndgrad::Tensor t(shape);
    for (auto& v : t.data()) v = get_le(in);
    ck.tensors[name] = std::move(t);
  }
  return ck;
}

}  // namespace fmgan
