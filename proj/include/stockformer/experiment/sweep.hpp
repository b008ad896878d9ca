#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stockformer/csv.hpp"
#include "stockformer/experiment/train.hpp"

namespace stockformer {

using RunCallback = std::function<void(const RunRecord&)>;

/// One run per (lag, model), lags outermost, on data prepared once.
inline std::vector<RunRecord> sweep(const ExperimentConfig& cfg, const PreparedData& data, const RunCallback& on_run = {}) {
  cfg.validate();
  std::vector<RunRecord> out;
  for (auto lag : cfg.lags) {
    for (auto kind : cfg.models) {
      out.push_back(train(kind, cfg, lag, data).record);
      if (on_run) on_run(out.back());
    }
  }
  return out;
}

inline std::vector<RunRecord> sweep(const ExperimentConfig& cfg, const RunCallback& on_run = {}) {
  cfg.validate();
  return sweep(cfg, prepare(load_market(cfg), cfg), on_run);
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

inline void close_out(std::ofstream& out, const std::filesystem::path& path) {
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

inline void write_results_csv(const std::vector<RunRecord>& records, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << EvalReport::csv_header() << '\n';
  for (const auto& r : records) out << r.report.csv_row() << '\n';
  detail::close_out(out, path);
}

inline void write_loss_csv(const RunRecord& r, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "epoch,train_loss\n";
  for (std::size_t e = 0; e < r.loss_curve.size(); ++e) out << e + 1 << ',' << csv::format(r.loss_curve[e]) << '\n';
  detail::close_out(out, path);
}

/// results.csv, loss_<model>_<lag>.csv, summary.txt, dir_acc_vs_lag.csv and
/// runs.json (per-run metadata including wall time).
inline void report(const std::vector<RunRecord>& records, const std::filesystem::path& dir) {
  if (records.empty()) throw InvalidArgument("report: no run records");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  write_results_csv(records, dir / "results.csv");
  for (const auto& r : records) write_loss_csv(r, dir / ("loss_" + to_string(r.model) + "_" + std::to_string(r.lag) + ".csv"));

  std::vector<std::size_t> lags;
  std::vector<std::string> models;
  std::map<std::pair<std::size_t, std::string>, const RunRecord*> cell;
  std::map<std::size_t, double> baseline;
  for (const auto& r : records) {
    if (std::find(lags.begin(), lags.end(), r.lag) == lags.end()) lags.push_back(r.lag);
    if (std::find(models.begin(), models.end(), r.report.model) == models.end()) models.push_back(r.report.model);
    cell[{r.lag, r.report.model}] = &r;
    baseline[r.lag] = r.baseline_dir_acc;
  }

  {
    const auto path = dir / "summary.txt";
    auto out = detail::open_out(path);
    out << "test-split metrics per lag (prices z-scored per ticker)\n\n";
    out << "lag  model        n_test  mse        r2         auc      dir_acc  baseline\n";
    for (auto lag : lags) {
      for (const auto& m : models) {
        auto it = cell.find({lag, m});
        if (it == cell.end()) continue;
        const auto& r = *it->second;
        char line[160];
        std::snprintf(line, sizeof line, "%-4zu %-12s %-7zu %-10s %-10s %-8s %-8s %-8s %s\n", lag, m.c_str(), r.n_test,
                      detail::fixed(r.report.mse, 5).c_str(), detail::fixed(r.report.r2).c_str(),
                      detail::fixed(r.report.auc).c_str(), detail::fixed(r.report.directional_accuracy).c_str(),
                      detail::fixed(r.baseline_dir_acc).c_str(), r.report.directional_accuracy > r.baseline_dir_acc ? "beats baseline" : "");
        out << line;
      }
    }
    detail::close_out(out, path);
  }

  {
    const auto path = dir / "dir_acc_vs_lag.csv";
    auto out = detail::open_out(path);
    out << "lag";
    for (const auto& m : models) out << ',' << m;
    out << ",baseline\n";
    for (auto lag : lags) {
      out << lag;
      for (const auto& m : models) {
        auto it = cell.find({lag, m});
        out << ',' << (it == cell.end() ? std::string() : csv::format(it->second->report.directional_accuracy));
      }
      out << ',' << csv::format(baseline[lag]) << '\n';
    }
    detail::close_out(out, path);
  }

  {
    const auto path = dir / "runs.json";
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : records) {
      runs.push_back({{"model", to_string(r.model)},
                      {"lag", r.lag},
                      {"n_train", r.n_train},
                      {"n_test", r.n_test},
                      {"baseline_dir_acc", r.baseline_dir_acc},
                      {"seconds", r.seconds},
                      {"final_train_loss", r.loss_curve.empty() ? nlohmann::json() : nlohmann::json(r.loss_curve.back())}});
    }
    auto out = detail::open_out(path);
    out << nlohmann::json{{"config", records.front().config}, {"runs", runs}}.dump(2) << '\n';
    detail::close_out(out, path);
  }
}

}  // namespace stockformer
