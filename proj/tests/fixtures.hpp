#pragma once

// Small configs and scratch directories shared by the trainer and CLI tests.

#include "pbdr/config.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace pbdr::testing {

/// Scratch directory removed on destruction. The path itself does not exist
/// until something creates it.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pbdr_test_" + std::to_string(rd()) + std::to_string(rd()));
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

/// A few seconds of training at toy sizes.
inline std::string tiny_config_text(const std::string& name = "Tiny", int K = 1, int N = 1, int T = 4) {
  std::ostringstream out;
  out << "name = " << name << "\nK = " << K << "\nN = " << N << "\nT = " << T
      << "\nensemble = 2\ndeter = 8\nstoch = 4\nembed = 8\nunits = 8\n"
         "batch = 4\nseq_len = 6\niterations = 2\nenv_steps = 200\nimagined_steps = 64\n"
         "warmup_episodes = 1\neval_episodes = 3\niteration_eval_episodes = 2\ncheckpoint_every = 1\n";
  return out.str();
}

inline TrainConfig tiny_config(const std::string& name = "Tiny", int K = 1, int N = 1, int T = 4) {
  return parse_config(tiny_config_text(name, K, N, T));
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace pbdr::testing
