#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mcki/config.hpp"
#include "mcki/harness.hpp"

namespace mcki {

/// Flat key-value form of a report. `config` is echoed under "config.".
KeyValues report_values(const SingleReport& report, const KeyValues& config);
KeyValues report_values(const SequentialReport& report, const KeyValues& config);
KeyValues report_values(const EfficiencyReport& report, const KeyValues& config);

/// Plain-text tables rendered from report_values output.
std::string render_table(const KeyValues& values);

/// Tab-separated rows: inserted step, its partition, measured-after step, its
/// partition, score kind, value. Empty when retention was not measured.
std::string retention_rows(const SequentialReport& report);

std::string format_key_values(const KeyValues& values);
KeyValues parse_key_values(std::string_view text);
KeyValues read_report(const std::filesystem::path& path);

struct EmittedFiles {
  std::filesystem::path report;
  std::filesystem::path table;
  std::filesystem::path retention;  // empty when not written
};

/// Writes <dir>/<run_id>.report and <dir>/<run_id>.txt, plus
/// <dir>/<run_id>.retention when `retention` is non-empty.
EmittedFiles emit_report(const KeyValues& values, const std::string& retention,
                         const std::filesystem::path& dir, const std::string& run_id);

}  // namespace mcki
