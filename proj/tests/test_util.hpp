#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "gaitrt/common.hpp"

namespace testutil {

template <typename F>
gaitrt::ErrorCode code_of(F&& fn) {
  try {
    fn();
  } catch (const gaitrt::Error& e) {
    return e.code();
  }
  return gaitrt::ErrorCode::Ok;
}

template <typename F>
std::string message_of(F&& fn) {
  try {
    fn();
  } catch (const gaitrt::Error& e) {
    return e.what();
  }
  return {};
}

// Fresh directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gaitrt_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil
