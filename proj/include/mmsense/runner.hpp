#pragma once

#include <iosfwd>
#include <string>

#include "mmsense/config.hpp"

namespace mmsense {

/// Command dispatch shared by the CLI and the language bindings. Every
/// command writes the fully resolved config to <out_dir>/config.json next to
/// its artifacts, which use fixed filenames:
///   gen       -> dataset.jsonl
///   train     -> checkpoint.json + checkpoint.bin, log.jsonl, metrics.csv
///   eval      -> metrics.csv
///   ablate    -> ablation.csv (3 variants x 4 metric columns)
///   gradcheck -> (prints max relative error; nonzero exit if >= 1e-4)
///   splits    -> splits.json
/// Returns the process exit status. Unknown commands throw ConfigError.
int run_command(const std::string& command, const RunConfig& cfg, const std::string& out_dir,
                std::ostream& out);

/// Per-command starting defaults before the config file and key=value
/// overrides are applied. gradcheck starts from a small configuration sized
/// so the finite-difference sweep finishes within a couple of minutes.
RunConfig default_config(const std::string& command);

}  // namespace mmsense
