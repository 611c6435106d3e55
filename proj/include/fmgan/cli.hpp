#pragma once

// The fmgan command line: train, style-train, cipher-train, generate, eval and ot-bench.

#include <iosfwd>
#include <string>
#include <vector>

#include "fmgan/condext.hpp"
#include "fmgan/config.hpp"
#include "fmgan/textdata.hpp"

namespace fmgan::cli {

// args excludes the program name. Returns the process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Built-in toy data, as the subcommands construct it from data.* keys.
struct ToyCorpus {
  textdata::MarkovChain chain;
  textdata::Vocab vocab;
  textdata::Corpus train, test;
};
ToyCorpus toy_corpus(const config::Config& c);
condext::StyleTask style_task(const config::Config& c);
condext::CipherTask cipher_task(const config::Config& c);

}  // namespace fmgan::cli
