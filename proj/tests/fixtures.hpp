#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "flnas/arch_ir.hpp"

namespace flnas::testing {

inline std::filesystem::path data_dir() { return FLNAS_SOURCE_DIR "/data"; }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Fresh scratch directory per call.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("flnas_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// conv 3->16 k3 s1 p1, global avg pool, flatten, dense 8 on 3x32x32.
inline const char* kMinimalArchJson =
    R"({"name":"minimal","input":{"channels":3,"height":32,"width":32},"num_classes":8,)"
    R"("layers":[{"op":"conv2d","out_channels":16,"kernel":3,"stride":1,"padding":1,"bias":true},)"
    R"({"op":"global_pool","kind":"avg"},{"op":"flatten"},{"op":"dense","out_features":8,"bias":true}]})";

inline Architecture minimal_arch() {
  Architecture a;
  a.name = "minimal";
  a.input = {3, 32, 32};
  a.num_classes = 8;
  a.layers = {Conv2d{16, 3, 1, 1, true}, GlobalPool{}, Flatten{}, Dense{8, true}};
  return a;
}

// Random stack of up to `max_layers` layers over small dims. Roughly half
// are shape-valid; the rest trip one of the shape rules.
inline Architecture random_stack(std::mt19937_64& rng, int max_layers = 6, int max_dim = 8) {
  auto pick = [&rng](int lo, int hi) { return static_cast<std::int64_t>(std::uniform_int_distribution<int>(lo, hi)(rng)); };
  Architecture a;
  a.name = "rand";
  a.input = {pick(1, 4), pick(1, max_dim), pick(1, max_dim)};
  a.num_classes = pick(1, 4);
  const auto n = pick(1, max_layers);
  for (std::int64_t i = 0; i < n; ++i) {
    switch (pick(0, 8)) {
      case 0:
      case 1: a.layers.push_back(Conv2d{pick(1, 8), pick(1, 5), pick(1, 3), pick(0, 2), pick(0, 1) == 1}); break;
      case 2: a.layers.push_back(Pool{pick(0, 1) ? PoolKind::max : PoolKind::avg, pick(1, 3), pick(1, 3)}); break;
      case 3: {
        const auto kind = static_cast<NormKind>(pick(0, 3));
        Norm nm{kind, std::nullopt};
        if (kind == NormKind::group) nm.groups = pick(1, 4);
        a.layers.push_back(nm);
        break;
      }
      case 4: a.layers.push_back(Activation{static_cast<ActKind>(pick(0, 3))}); break;
      case 5: a.layers.push_back(GlobalPool{}); break;
      case 6: a.layers.push_back(Flatten{}); break;
      case 7: a.layers.push_back(Dense{pick(1, 8), pick(0, 1) == 1}); break;
      default: a.layers.push_back(Dropout{0.25}); break;
    }
  }
  // Usually end in a classifier so acceptance is not vanishingly rare.
  if (pick(0, 3) != 0) {
    if (pick(0, 1)) a.layers.push_back(Flatten{});
    a.layers.push_back(Dense{a.num_classes, true});
  }
  return a;
}

// Shape-valid by construction: feature stack, global pool or flatten, dense head.
inline Architecture random_valid_arch(std::mt19937_64& rng, int max_dim = 8) {
  auto pick = [&rng](int lo, int hi) { return static_cast<std::int64_t>(std::uniform_int_distribution<int>(lo, hi)(rng)); };
  Architecture a;
  a.name = "valid";
  a.input = {pick(1, 4), pick(1, max_dim), pick(1, max_dim)};
  a.num_classes = pick(1, 6);
  std::int64_t c = a.input.channels, h = a.input.height, w = a.input.width;
  const auto body = pick(0, 4);
  for (std::int64_t i = 0; i < body; ++i) {
    switch (pick(0, 4)) {
      case 0: {
        const auto k = 2 * pick(0, 2) + 1;
        const auto p = pick(0, 2);
        const auto s = pick(1, 2);
        if (h + 2 * p < k || w + 2 * p < k) break;
        const auto oc = pick(1, 8);
        a.layers.push_back(Conv2d{oc, k, s, p, pick(0, 1) == 1});
        c = oc;
        h = (h + 2 * p - k) / s + 1;
        w = (w + 2 * p - k) / s + 1;
        break;
      }
      case 1:
        if (h >= 2 && w >= 2) {
          a.layers.push_back(Pool{PoolKind::max, 2, 2});
          h = (h - 2) / 2 + 1;
          w = (w - 2) / 2 + 1;
        }
        break;
      case 2: a.layers.push_back(Norm{c % 2 == 0 ? NormKind::group : NormKind::batch,
                                      c % 2 == 0 ? std::optional<std::int64_t>(2) : std::nullopt});
        break;
      case 3: a.layers.push_back(Activation{ActKind::relu}); break;
      default: a.layers.push_back(Dropout{0.1}); break;
    }
  }
  if (pick(0, 1)) a.layers.push_back(GlobalPool{});
  a.layers.push_back(Flatten{});
  if (pick(0, 1)) {
    a.layers.push_back(Dense{pick(1, 8), true});
    a.layers.push_back(Activation{ActKind::relu});
  }
  a.layers.push_back(Dense{a.num_classes, pick(0, 1) == 1});
  return a;
}

}  // namespace flnas::testing
