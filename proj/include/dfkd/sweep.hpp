#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dfkd/config.hpp"
#include "dfkd/run.hpp"

namespace dfkd::harness {

struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

// "spl.lambda0=2,2.2,2.5,2.8" -> one axis. The key must exist in the base
// config so typos fail loudly instead of sweeping a no-op.
GridAxis parse_grid_axis(const std::string& spec);

struct SweepRow {
  std::vector<std::string> values;  // one per axis, same order
  bool ok = false;
  std::string error;
  RunSummary summary;
};

struct SweepResult {
  std::vector<GridAxis> axes;
  std::vector<SweepRow> rows;
};

// Cartesian product over the axes; one distill run per grid point under
// out_dir/point_NNN. A failed point records its error and the sweep moves on.
SweepResult run_sweep(const Config& base, const std::vector<GridAxis>& axes,
                      const std::filesystem::path& out_dir);

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& r);

}  // namespace dfkd::harness
