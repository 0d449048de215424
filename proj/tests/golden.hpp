#pragma once

#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include "fixtures.hpp"

namespace flnas::testing {

inline std::filesystem::path golden_path(const std::string& name) {
  return std::filesystem::path(FLNAS_SOURCE_DIR) / "tests" / "golden" / name;
}

// Compares against tests/golden/<name>; FLNAS_UPDATE_GOLDEN=1 rewrites it.
inline void expect_golden(const std::string& name, const std::string& actual) {
  const auto path = golden_path(name);
  if (std::getenv("FLNAS_UPDATE_GOLDEN")) {
    write_file(path, actual);
    return;
  }
  ASSERT_TRUE(std::filesystem::exists(path)) << "missing golden " << path;
  EXPECT_EQ(actual, read_file(path)) << "golden mismatch: " << name;
}

}  // namespace flnas::testing
