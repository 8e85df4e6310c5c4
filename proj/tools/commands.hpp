#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rupformer/kpi_data.hpp"
#include "rupformer/run_config.hpp"

namespace rupf::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

/// Parses argv and dispatches to a subcommand. Never throws; failures are
/// reported on stderr and mapped onto ExitCode.
int run_cli(int argc, char** argv);
/// Convenience overload for tests; args excludes the program name.
int run_cli(const std::vector<std::string>& args);

/// Split used by `train` and `eval --config`: the configured day counts when
/// the data is long enough, otherwise the same proportions of the common span.
SplitSpec resolve_split(const SplitDays& split, std::span<const KpiSeries> series);

}  // namespace rupf::cli
