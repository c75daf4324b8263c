#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace asr {

inline constexpr double kPi = 3.14159265358979323846;

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when a covariance matrix has too few significant directions.
class RankError : public Error {
 public:
  explicit RankError(const std::string& msg) : Error(msg) {}
};

/// Raised when a reference patch is too small for the requested warp.
class PatchTooSmallError : public Error {
 public:
  explicit PatchTooSmallError(const std::string& msg) : Error(msg) {}
};

enum class IoCode {
  bad_magic,
  bad_version,
  truncated,
  dim_mismatch,
  parse_error,
  io_failure,
};

/// File-format and filesystem errors, with a machine-checkable code and the
/// section of the file that failed.
class IoError : public Error {
 public:
  IoError(IoCode code, const std::string& section, const std::string& msg)
      : Error(section.empty() ? msg : msg + " (section: " + section + ")"),
        code_(code),
        section_(section) {}

  IoCode code() const { return code_; }
  const std::string& section() const { return section_; }

 private:
  IoCode code_;
  std::string section_;
};

// ---------------------------------------------------------------------------
// Little-endian binary helpers. x86-64 only for now; the static_assert keeps
// a big-endian port honest.

static_assert(sizeof(float) == 4 && sizeof(double) == 8);

inline void write_raw(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void write_u32(std::ostream& os, uint32_t v) { write_raw(os, &v, 4); }
inline void write_f32(std::ostream& os, float v) { write_raw(os, &v, 4); }
inline void write_f64(std::ostream& os, double v) { write_raw(os, &v, 8); }

inline void read_raw(std::istream& is, void* p, size_t n, const std::string& section) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw IoError(IoCode::truncated, section, "unexpected end of file");
}

inline uint32_t read_u32(std::istream& is, const std::string& section) {
  uint32_t v;
  read_raw(is, &v, 4, section);
  return v;
}

inline float read_f32(std::istream& is, const std::string& section) {
  float v;
  read_raw(is, &v, 4, section);
  return v;
}

inline double read_f64(std::istream& is, const std::string& section) {
  double v;
  read_raw(is, &v, 8, section);
  return v;
}

/// Writes a file through a temporary sibling and renames it into place, so a
/// crashed or interrupted job never leaves a truncated artifact.
inline void atomic_write_file(const std::filesystem::path& path,
                              const std::function<void(std::ostream&)>& writer) {
  namespace fs = std::filesystem;
  fs::path dir = path.parent_path();
  if (!dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(IoCode::io_failure, "", "cannot open " + tmp.string() + " for writing");
    writer(os);
    os.flush();
    if (!os) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError(IoCode::io_failure, "", "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError(IoCode::io_failure, "", "cannot rename " + tmp.string() + " to " + path.string());
  }
}

}  // namespace asr
