#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "flnas/errors.hpp"

namespace flnas {

class IoError : public Error {
 public:
  using Error::Error;
};

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Relative paths in a config file are relative to the file's directory.
inline std::filesystem::path resolve_path(const std::filesystem::path& base_dir, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path;
  return base_dir / path;
}

}  // namespace flnas
