#include "dfkd/sweep.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include "dfkd/errors.hpp"

namespace dfkd::harness {

GridAxis parse_grid_axis(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos)
    throw argument_error("grid spec '" + spec + "': expected key=v1,v2,...");
  GridAxis axis;
  axis.key = spec.substr(0, eq);
  std::string rest = spec.substr(eq + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string v = rest.substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (v.empty()) throw argument_error("grid spec '" + spec + "': empty value");
    axis.values.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return axis;
}

SweepResult run_sweep(const Config& base, const std::vector<GridAxis>& axes,
                      const std::filesystem::path& out_dir) {
  if (axes.empty()) throw argument_error("run_sweep: no grid axes given");
  for (const auto& a : axes)
    if (!base.has(a.key))
      throw argument_error("grid key '" + a.key +
                           "' is not present in the base config");

  std::filesystem::create_directories(out_dir);
  SweepResult result;
  result.axes = axes;

  std::size_t total = 1;
  for (const auto& a : axes) total *= a.values.size();

  std::vector<std::size_t> index(axes.size(), 0);
  for (std::size_t point = 0; point < total; ++point) {
    SweepRow row;
    Config cfg = base;
    for (std::size_t i = 0; i < axes.size(); ++i) {
      row.values.push_back(axes[i].values[index[i]]);
      cfg.set(axes[i].key, axes[i].values[index[i]]);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "point_%03zu", point);
    cfg.set("out_dir", (out_dir / name).string());

    try {
      row.summary = run_distill(cfg, /*resume=*/false);
      row.ok = true;
    } catch (const std::exception& e) {
      row.ok = false;
      row.error = e.what();
      std::cerr << "[sweep] " << name << " failed: " << e.what() << "\n";
    }
    result.rows.push_back(std::move(row));
    write_sweep_csv(out_dir / "sweep_summary.csv", result);

    for (std::size_t i = axes.size(); i-- > 0;) {
      if (++index[i] < axes[i].values.size()) break;
      index[i] = 0;
    }
  }
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const SweepResult& r) {
  std::ofstream os(path);
  if (!os) throw setup_error("cannot write " + path.string());
  for (const auto& a : r.axes) os << a.key << ',';
  os << "status,epochs_run,best_epoch,best_acc1,agree1_at_best,"
        "loyalty_at_best,peak_agree1,peak_loyalty,stab_mean,stab_var\n";
  for (const auto& row : r.rows) {
    for (const auto& v : row.values) os << v << ',';
    if (row.ok) {
      const RunSummary& s = row.summary;
      os << "ok," << s.epochs_run << ',' << s.best_epoch << ','
         << format_double(s.best_acc1) << ',' << format_double(s.agree1_at_best)
         << ',' << format_double(s.loyalty_at_best) << ','
         << format_double(s.peak_agree1) << ',' << format_double(s.peak_loyalty)
         << ',' << format_double(s.stab_mean) << ',' << format_double(s.stab_var)
         << '\n';
    } else {
      os << "failed,,,,,,,,,\n";
    }
  }
}

}  // namespace dfkd::harness
