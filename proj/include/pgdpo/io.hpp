#pragma once

// Run artifacts: CSV export with schema sidecars, FNV-1a checksums, the run
// manifest, and run-directory management (one directory per run, never
// overwritten). All files are written atomically (tmp + rename). Numeric
// formatting is locale-independent and deterministic, so identical runs
// produce byte-identical artifacts.

#include "pgdpo/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pgdpo {

std::string format_double(double v);  // shortest round-trip decimal

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> column_notes;  // schema sidecar text, per column
};

void write_csv(const std::string& path, const CsvTable& table);

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64_file(const std::string& path);
std::string hex64(uint64_t v);

void write_text_atomic(const std::string& path, const std::string& content);

// <out_dir>/<stamp>-seed<seed>-<tag>[-k]; creates parents, never reuses
std::string make_run_dir(const std::string& out_dir, const std::string& tag,
                         uint64_t seed);

struct RunManifest {
  std::string command;
  std::string config_text;   // resolved configuration, INI round-trip
  uint64_t seed = 0;
  std::string started_utc, finished_utc;
  double wall_seconds = 0;
  int exit_code = 0;
  std::vector<std::pair<std::string, std::string>> metrics;  // name -> value
  std::vector<std::string> files;  // run-relative paths; checksummed on write
};

// writes manifest.json (atomic); checksums every listed file
void write_manifest(const std::string& run_dir, const RunManifest& m);

}  // namespace pgdpo
