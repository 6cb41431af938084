#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirnet/model.hpp"

namespace cirnet::config {

struct TrainConfig {
  double lr = 1e-4;
  double lr_decay_div = 5.0;    // divide lr by this ...
  int64_t lr_decay_every = 4;   // ... after every this many epochs
  int64_t batch_size = 4;
  int64_t epochs = 10;
  uint64_t seed = 7;
  std::vector<int64_t> scales{48, 64, 80};
  double flip_prob = 0.5;
  bool rotate = true;
};

struct Paths {
  std::string train_dir;
  std::string out_dir;
};

struct Config {
  model::CirNetConfig model;
  TrainConfig train;
  Paths paths;
};

// Sectioned key=value text:
//   [model]  image_size, channels, decoder_width, reduction, pai, smar, cmwr, igf
//   [train]  lr, lr_decay_div, lr_decay_every, batch_size, epochs, seed,
//            scales, flip_prob, rotate
//   [paths]  train_dir, out_dir
// '#' starts a comment. Any unknown section or key rejects the whole file.
Config parse_config_string(const std::string& text);
Config parse_config_file(const std::string& path);

}  // namespace cirnet::config
