#pragma once

// Shared fixtures: a model small enough for exhaustive gradient checks and a
// codec whose action ids sit directly above the text vocabulary.

#include <vector>

#include "omni/action_codec.hpp"
#include "omni/data.hpp"
#include "omni/model.hpp"

namespace testing {

inline omni::ModelConfig small_config() {
  omni::ModelConfig c;
  c.n_layers = 4;
  c.share_threshold = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.max_seq_len = 64;
  c.vocab_size = 192;
  c.patch_size = 8;
  c.image_side = 32;
  c.topology = omni::Topology::kLayerHet;
  return c;
}

inline const omni::ActionCodecConfig& small_codec() {
  static const omni::ActionCodecConfig c = omni::build_default_table(192, 32, omni::default_vocab().size());
  return c;
}

inline std::vector<omni::UnifiedSample> gui_samples(std::size_t n, std::uint64_t seed = 1) {
  return omni::gen_gui_dataset(seed, n);
}

inline std::vector<omni::UnifiedSample> robot_samples(std::size_t n, std::uint64_t seed = 1) {
  auto all = omni::gen_robot_dataset(seed, n);
  all.resize(n);
  return all;
}

}  // namespace testing
