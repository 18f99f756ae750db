#include "pgdpo/io.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pgdpo {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    const double back = std::strtod(buf, nullptr);
    if (std::memcmp(&back, &v, sizeof(double)) == 0) return buf;
  }
  return buf;  // %.17g always round-trips
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(f.good(), "io: cannot open " + tmp);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    require(f.good(), "io: short write to " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0,
          "io: rename failed for " + path);
}

void write_csv(const std::string& path, const CsvTable& table) {
  require(!table.columns.empty(), "csv: no columns");
  require(table.column_notes.empty() ||
              table.column_notes.size() == table.columns.size(),
          "csv: column_notes size mismatch");
  std::ostringstream os;
  for (size_t c = 0; c < table.columns.size(); ++c)
    os << (c ? "," : "") << table.columns[c];
  os << "\n";
  for (const auto& row : table.rows) {
    require(row.size() == table.columns.size(), "csv: ragged row");
    for (size_t c = 0; c < row.size(); ++c)
      os << (c ? "," : "") << format_double(row[c]);
    os << "\n";
  }
  write_text_atomic(path, os.str());
  if (!table.column_notes.empty()) {
    std::ostringstream sc;
    for (size_t c = 0; c < table.columns.size(); ++c)
      sc << table.columns[c] << ": " << table.column_notes[c] << "\n";
    write_text_atomic(path + ".schema.txt", sc.str());
  }
}

uint64_t fnv1a64(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "io: cannot open " + path + " for checksum");
  uint64_t h = 14695981039346656037ull;
  char buf[1 << 16];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    const std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!f) break;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string make_run_dir(const std::string& out_dir, const std::string& tag,
                         uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm);
  const std::string base = std::string(stamp) + "-seed" + std::to_string(seed) +
                           (tag.empty() ? "" : "-" + tag);
  for (int k = 0;; ++k) {
    const std::string name = k == 0 ? base : base + "-" + std::to_string(k);
    const fs::path p = fs::path(out_dir) / name;
    std::error_code ec;
    if (fs::create_directory(p, ec)) return p.string();
    require(!ec || ec == std::errc::file_exists,
            "io: cannot create run directory " + p.string());
  }
}

namespace {

std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 8);
  for (unsigned char ch : s) {
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (ch < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", ch);
          out += buf;
        } else {
          out += static_cast<char>(ch);
        }
    }
  }
  return out;
}

}  // namespace

void write_manifest(const std::string& run_dir, const RunManifest& m) {
  namespace fs = std::filesystem;
  std::ostringstream os;
  os << "{\n";
  os << "  \"command\": \"" << json_escape(m.command) << "\",\n";
  os << "  \"seed\": " << m.seed << ",\n";
  os << "  \"started_utc\": \"" << json_escape(m.started_utc) << "\",\n";
  os << "  \"finished_utc\": \"" << json_escape(m.finished_utc) << "\",\n";
  os << "  \"wall_seconds\": " << format_double(m.wall_seconds) << ",\n";
  os << "  \"exit_code\": " << m.exit_code << ",\n";
  os << "  \"config\": \"" << json_escape(m.config_text) << "\",\n";
  os << "  \"metrics\": {";
  for (size_t i = 0; i < m.metrics.size(); ++i) {
    os << (i ? "," : "") << "\n    \"" << json_escape(m.metrics[i].first)
       << "\": \"" << json_escape(m.metrics[i].second) << "\"";
  }
  os << (m.metrics.empty() ? "" : "\n  ") << "},\n";
  os << "  \"files\": {";
  for (size_t i = 0; i < m.files.size(); ++i) {
    const std::string full = (fs::path(run_dir) / m.files[i]).string();
    os << (i ? "," : "") << "\n    \"" << json_escape(m.files[i])
       << "\": \"fnv1a64:" << hex64(fnv1a64_file(full)) << "\"";
  }
  os << (m.files.empty() ? "" : "\n  ") << "}\n";
  os << "}\n";
  write_text_atomic((fs::path(run_dir) / "manifest.json").string(), os.str());
}

}  // namespace pgdpo
