#include "hybem/csv.hpp"

#include <cstdio>

#include "hybem/errors.hpp"

namespace hybem::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string provenance_line(const std::string& config_hash_hex, std::uint64_t master_seed) {
  return "# config_hash=" + config_hash_hex + " master_seed=" + std::to_string(master_seed) +
         " artifact_version=" + kArtifactVersion;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io_error, "cannot open " + path + " for writing");
  out << content;
  out.flush();
  if (!out) throw Error(Errc::io_error, "write failed for " + path);
}

CsvFile::CsvFile(const std::string& path, const std::string& provenance_comment)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error(Errc::io_error, "cannot open " + path + " for writing");
  out_ << provenance_comment << "\n";
}

CsvFile::~CsvFile() {
  if (!closed_) {
    // Destructor must not throw; explicit close() reports failures.
    out_.flush();
  }
}

void CsvFile::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

void CsvFile::close() {
  out_.flush();
  if (!out_) throw Error(Errc::io_error, "write failed for " + path_);
  out_.close();
  closed_ = true;
}

}  // namespace hybem::io
