#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "layerprobe/layerprobe.hpp"

namespace testutil {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag)
      : path_(std::filesystem::temp_directory_path() /
              ("layerprobe_" + tag + "_" + std::to_string(::getpid()))) {
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
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) { return layerprobe::detail::read_file_bytes(p); }

/// Small default-geometry spec for tests that need a real corpus on disk.
inline layerprobe::SynthSpec small_spec(std::size_t speakers, std::uint64_t seed, std::string id = "t") {
  layerprobe::SynthSpec s;
  s.corpus_id = std::move(id);
  s.n_speakers_per_class = speakers;
  s.utterances_per_speaker = 2;
  s.frames_per_utterance = 1;
  s.seed = seed;
  return s;
}

}  // namespace testutil
