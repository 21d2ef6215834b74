#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "corpus.hpp"
#include "model.hpp"
#include "tokenizer.hpp"
#include "training.hpp"

namespace testing {

// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("tod_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline tod::Vocab small_vocab(const tod::Corpus& corpus, std::size_t size = 400) {
  return tod::train_bpe(tod::tokenizer_texts(corpus), size, tod::schema_placeholders(corpus.db));
}

inline tod::ModelConfig tiny_config(std::size_t vocab_size, int layers = 1, int d = 16) {
  tod::ModelConfig c;
  c.n_layers = layers;
  c.n_heads = 2;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.context_limit = 128;
  c.vocab_size = static_cast<int>(vocab_size);
  c.seed = 3;
  return c;
}

inline tod::TokenSequence random_sequence(std::mt19937_64& rng, std::size_t len, int vocab) {
  tod::TokenSequence s;
  for (std::size_t i = 0; i < len; ++i)
    s.push(static_cast<tod::TokenId>(rng() % static_cast<unsigned>(vocab)),
           static_cast<tod::Role>(rng() % 2));
  return s;
}

// Up to 40 code points mixing ASCII, spaces, and 2- and 3-byte sequences.
inline std::string random_utf8(std::mt19937_64& rng) {
  std::string s;
  const int n = static_cast<int>(rng() % 40);
  for (int i = 0; i < n; ++i) {
    std::uint32_t cp;
    switch (rng() % 4) {
      case 0: cp = 0x20 + rng() % 0x5f; break;
      case 1: cp = ' '; break;
      case 2: cp = 0x80 + rng() % 0x780; break;
      default: cp = 0x800 + rng() % 0xd000; break;
    }
    if (cp < 0x80) {
      s += static_cast<char>(cp);
    } else if (cp < 0x800) {
      s += static_cast<char>(0xc0 | (cp >> 6));
      s += static_cast<char>(0x80 | (cp & 0x3f));
    } else {
      s += static_cast<char>(0xe0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
      s += static_cast<char>(0x80 | (cp & 0x3f));
    }
  }
  return s;
}

}  // namespace testing
