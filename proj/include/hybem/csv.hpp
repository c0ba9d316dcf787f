#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace hybem::io {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// Round-trip exact decimal rendering; identical input bits give identical
/// text, which the byte-identical-rerun guarantee relies on.
std::string format_double(double v);

std::uint64_t fnv1a64(std::string_view bytes);

/// 16 lowercase hex digits.
std::string hex64(std::uint64_t v);

/// "# config_hash=<hex> master_seed=<n> artifact_version=<v>"
std::string provenance_line(const std::string& config_hash_hex, std::uint64_t master_seed);

/// Writes the whole file or throws IoError; used for JSON summaries.
void write_text_file(const std::string& path, const std::string& content);

/// Comma-separated rows under a provenance comment. Cells are preformatted
/// strings; numeric formatting stays with the caller.
class CsvFile {
 public:
  CsvFile(const std::string& path, const std::string& provenance_comment);
  ~CsvFile();

  CsvFile(const CsvFile&) = delete;
  CsvFile& operator=(const CsvFile&) = delete;

  void row(const std::vector<std::string>& cells);
  void close();  // flushes and checks stream health; throws IoError

 private:
  std::string path_;
  std::ofstream out_;
  bool closed_ = false;
};

}  // namespace hybem::io
