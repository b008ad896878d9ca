// Acceptance run: one PASS/FAIL line per criterion A1..A9.
//
//   acceptance [--only A1,A5] [--out DIR] [--seed N] [--sweep-d-model D]
//
// A7..A9 train full sweeps and take the better part of an hour each.

#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stockformer/experiment.hpp"
#include "support/experiment_fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/model_fixtures.hpp"
#include "support/op_catalog.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace stockformer;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 0 when equal, else |a - b| / max(|a|, |b|).
double rel_err(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(a - b) / std::max(std::abs(a), std::abs(b));
}

// --- A1 ------------------------------------------------------------------------

MarketSeries series_from_closes(const std::vector<double>& closes) {
  MarketSeries s{"RW", {}, false};
  for (std::size_t i = 0; i < closes.size(); ++i) {
    MarketEntry e;
    e.date = std::to_string(i);
    e.ticker = "RW";
    e.open = e.close = closes[i];
    e.high = closes[i] + 1.0;
    e.low = closes[i] - 1.0;
    s.entries.push_back(e);
  }
  return s;
}

Outcome a1_indicators(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Rng rng(mix_seed(seed, 1));
  double worst = 0.0;
  std::string worst_what = "none";
  double rsi_lo = 100.0, rsi_hi = 0.0;
  std::size_t checked = 0;
  auto track = [&](double got, double want, const char* what) {
    const double e = rel_err(got, want);
    ++checked;
    if (e > worst) {
      worst = e;
      worst_what = what;
    }
  };

  for (int n = 0; n < 1000; ++n) {
    IndicatorConfig cfg;
    if (n % 2 == 1) {
      cfg.rsi_window = 2 + rng.below(49);
      cfg.sma_window = 1 + rng.below(50);
      cfg.ema_window = 1 + rng.below(50);
      cfg.macd_fast = 1 + rng.below(20);
      cfg.macd_slow = cfg.macd_fast + 1 + rng.below(20);
    }
    const std::size_t len = cfg.warmup() + 1 + rng.below(200);
    const double sigma = rng.uniform(0.05, 3.0);
    std::vector<double> closes{rng.uniform(200.0, 600.0)};
    while (closes.size() < len) {
      // some flat days so zero deltas are exercised
      closes.push_back(rng.bernoulli(0.1) ? closes.back() : closes.back() + sigma * rng.normal());
    }
    const auto annotated = annotate(series_from_closes(closes), cfg);
    const auto ema = testkit::oracle_ema(closes, cfg.ema_window);
    const auto fast = testkit::oracle_ema(closes, cfg.macd_fast);
    const auto slow = testkit::oracle_ema(closes, cfg.macd_slow);
    for (std::size_t t = cfg.warmup(); t < len; ++t) {
      const std::vector<double> prefix(closes.begin(), closes.begin() + static_cast<long>(t) + 1);
      const auto& ind = *annotated.entries[t].indicators;
      track(ind.rsi, testkit::oracle_rsi(prefix, cfg.rsi_window), "rsi");
      track(ind.ema, ema[t], "ema");
      track(ind.sma, testkit::oracle_sma(prefix, cfg.sma_window), "sma");
      track(ind.macd, fast[t] - slow[t], "macd");
      rsi_lo = std::min(rsi_lo, ind.rsi);
      rsi_hi = std::max(rsi_hi, ind.rsi);
    }
    // the standalone entry points on the whole series
    track(rsi(closes, cfg.rsi_window), testkit::oracle_rsi(closes, cfg.rsi_window), "rsi");
    track(sma(closes, cfg.sma_window), testkit::oracle_sma(closes, cfg.sma_window), "sma");
    track(macd(closes, cfg.macd_fast, cfg.macd_slow), fast.back() - slow.back(), "macd");
  }

  bool constant_ok = true;
  for (int n = 0; n < 200; ++n) {
    const double c = rng.uniform(0.01, 1e4);
    const std::vector<double> closes(60 + rng.below(200), c);
    constant_ok &= macd(closes, 12, 26) == 0.0;
    for (const auto& e : annotate(series_from_closes(closes), IndicatorConfig{}).entries) {
      if (e.indicators) constant_ok &= e.indicators->macd == 0.0 && e.indicators->rsi == 50.0;
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-10 && rsi_lo >= 0.0 && rsi_hi <= 100.0 && constant_ok && secs < 10.0;
  return {pass, fmt("%zu values, max rel err %.2e (%s), rsi in [%.2f, %.2f], constant-series macd exactly 0: %s, %.1fs",
                    checked, worst, worst_what.c_str(), rsi_lo, rsi_hi, constant_ok ? "yes" : "no", secs)};
}

// --- A2 ------------------------------------------------------------------------

Outcome a2_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string worst_where = "none";
  std::size_t checked = 0, cases = 0;
  auto track = [&](const testkit::GradCheckResult& r, const std::string& name, std::uint64_t seed) {
    checked += r.checked;
    ++cases;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      worst_where = name + " seed " + std::to_string(seed) + " " + r.worst;
    }
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (auto& c : testkit::op_catalog(seed)) track(testkit::check_gradients(c.loss, c.inputs, {}, 1e-5), c.name, seed);
    Rng rng(mix_seed(seed, 2));
    const auto samples = testkit::random_samples(rng, 3, 3, kFeatureDim);
    const auto batch = make_batch(samples, kFeatureDim);
    for (auto kind : {ModelKind::stockformer, ModelKind::bilstm}) {
      auto model = make_model(kind, testkit::tiny_config(seed));
      track(testkit::check_model_gradients(*model, batch), to_string(kind), seed);
    }
    auto per_day = testkit::tiny_config(seed);
    per_day.per_day_embedder = true;
    StockFormer m(per_day);
    track(testkit::check_model_gradients(m, batch), "stockformer(per-day embedder)", seed);
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          fmt("%zu checks over %zu cases, max rel err %.2e at %s, %.1fs", checked, cases, worst, worst_where.substr(0, 120).c_str(), secs)};
}

// --- A3 ------------------------------------------------------------------------

Outcome a3_positional_encoding() {
  const auto pe = positional_encoding(30, 80, 10000.0);
  double worst = 0.0;
  for (std::size_t k = 0; k < 30; ++k) {
    for (std::size_t i = 0; i < 40; ++i) {
      const double angle = static_cast<double>(k) / std::pow(10000.0, 2.0 * static_cast<double>(i) / 80.0);
      worst = std::max(worst, std::abs(pe[k * 80 + 2 * i] - std::sin(angle)));
      worst = std::max(worst, std::abs(pe[k * 80 + 2 * i + 1] - std::cos(angle)));
    }
  }
  bool row0 = true;
  for (std::size_t j = 0; j < 80; ++j) row0 &= pe[j] == (j % 2 == 0 ? 0.0 : 1.0);
  return {worst < 1e-12 && row0 && pe.shape() == ad::Shape{30, 80},
          fmt("30x80 table, max abs err %.2e, row 0 alternates 0/1 exactly: %s", worst, row0 ? "yes" : "no")};
}

// --- A4 ------------------------------------------------------------------------

Outcome a4_attention(std::uint64_t seed) {
  ModelConfig cfg;  // full size: d_model 80, 8 heads, 6 + 6 layers
  cfg.lag = 12;
  cfg.seed = seed;
  StockFormer model(cfg);
  Rng rng(mix_seed(seed, 4));
  const auto samples = testkit::random_samples(rng, 3, cfg.lag, kFeatureDim);

  ForwardTrace trace;
  model.forward(make_batch(samples, kFeatureDim), false, rng, &trace);
  double worst_row = 0.0;
  std::size_t rows = 0, masked_nonzero = 0;
  for (const auto& a : trace.attention) {
    const auto& w = a.value;
    const std::size_t nk = w.dim(3), nq = w.dim(2);
    const bool causal = a.name.find("self_attn") != std::string::npos && a.name.rfind("dec", 0) == 0;
    for (std::size_t r = 0; r < w.size() / nk; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        total += w[r * nk + j];
        if (causal && j > r % nq && w[r * nk + j] != 0.0) ++masked_nonzero;
      }
      worst_row = std::max(worst_row, std::abs(total - 1.0));
      ++rows;
    }
  }

  // Perturb one future prior open at a time; every decoder self-attention
  // output at earlier positions must be bitwise unchanged.
  std::size_t leaks = 0, compared = 0;
  bool perturbation_visible = true;
  const std::size_t d = cfg.d_model;
  for (std::size_t t = 1; t < cfg.lag; ++t) {
    auto perturbed = samples;
    for (auto& s : perturbed) s.prior_opens[t] += 2.5;
    ForwardTrace a, b;
    model.forward(make_batch(samples, kFeatureDim), false, rng, &a);
    model.forward(make_batch(perturbed, kFeatureDim), false, rng, &b);
    for (std::size_t l = 0; l < a.decoder_self_attention.size(); ++l) {
      const auto& x = a.decoder_self_attention[l];
      const auto& y = b.decoder_self_attention[l];
      bool changed = false;
      for (std::size_t bi = 0; bi < samples.size(); ++bi) {
        for (std::size_t pos = 0; pos < cfg.lag; ++pos) {
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t idx = (bi * cfg.lag + pos) * d + j;
            if (pos < t) {
              ++compared;
              if (std::memcmp(&x.data()[idx], &y.data()[idx], sizeof(double)) != 0) ++leaks;
            } else {
              changed |= x[idx] != y[idx];
            }
          }
        }
      }
      perturbation_visible &= changed;
    }
  }
  const bool pass = worst_row < 1e-12 && masked_nonzero == 0 && leaks == 0 && compared > 0 && perturbation_visible;
  return {pass, fmt("%zu attention rows, max |sum-1| %.2e, nonzero masked weights %zu; %zu earlier-position values "
                    "compared across %zu decoder layers, %zu differ",
                    rows, worst_row, masked_nonzero, compared, trace.decoder_self_attention.size(), leaks)};
}

// --- A5 ------------------------------------------------------------------------

Outcome a5_metrics(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 5));
  double worst_mse = 0.0, worst_r2 = 0.0, worst_anti = 0.0;
  std::size_t auc_mismatch = 0, da_mismatch = 0, tie_free = 0;
  for (int n = 0; n < 500; ++n) {
    const std::size_t len = 2 + rng.below(150);
    const bool ties = n % 3 == 0;  // coarse values so both x and y tie
    auto draw = [&] {
      const double v = rng.normal();
      return ties ? std::round(v * 2.0) / 2.0 : v;
    };
    std::vector<double> x, y, prior;
    do {
      x.clear();
      for (std::size_t i = 0; i < len; ++i) x.push_back(draw());
    } while (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }));
    for (std::size_t i = 0; i < len; ++i) {
      y.push_back(draw());
      prior.push_back(draw());
    }
    worst_mse = std::max(worst_mse, std::abs(mse(x, y) - testkit::oracle_mse(x, y)));
    worst_r2 = std::max(worst_r2, std::abs(r2(x, y) - testkit::oracle_r2(x, y)));
    auc_mismatch += regression_auc(x, y) != testkit::oracle_auc(x, y);
    da_mismatch += directional_accuracy(x, y, prior) != testkit::oracle_dir_acc(x, y, prior);
    if (!ties) {
      std::vector<double> neg(y.size());
      std::transform(y.begin(), y.end(), neg.begin(), [](double v) { return -v; });
      worst_anti = std::max(worst_anti, std::abs(regression_auc(x, y) + regression_auc(x, neg) - 1.0));
      ++tie_free;
    }
  }
  const bool pass = worst_mse < 1e-12 && worst_r2 < 1e-12 && auc_mismatch == 0 && da_mismatch == 0 && worst_anti < 1e-12;
  return {pass, fmt("500 instances: mse err %.1e, r2 err %.1e, auc mismatches %zu, dir_acc mismatches %zu, "
                    "antisymmetry err %.1e over %zu tie-free instances",
                    worst_mse, worst_r2, auc_mismatch, da_mismatch, worst_anti, tie_free)};
}

// --- A6 ------------------------------------------------------------------------

Outcome a6_overfit(std::uint64_t seed) {
  const auto t0 = Clock::now();
  ExperimentConfig exp;
  exp.seed = seed;
  const auto data = prepare(load_market(exp), exp);
  // 16 windows spread over the pooled training data
  const auto pool = chrono_split(windows_of(data.series, 4, 1), exp.split).train;
  std::vector<WindowSample> samples;
  for (std::size_t i = 0; i < 16; ++i) samples.push_back(pool[i * (pool.size() / 16)]);
  const auto batch = make_batch(samples, kFeatureDim);

  std::string detail;
  bool pass = true;
  for (auto kind : {ModelKind::stockformer, ModelKind::bilstm}) {
    ModelConfig cfg;  // full architecture, dropout on while training
    cfg.lag = 4;
    cfg.seed = mix_seed(seed, 6);
    auto model = make_model(kind, cfg);
    auto params = model->params().tensors();
    ad::AdamState adam;
    Rng dropout_rng(mix_seed(seed, 7));
    auto eval_mse = [&] {
      ad::NoGradGuard guard;
      return ad::mse_loss(model->forward(batch, false, dropout_rng), batch.labels).item();
    };
    const double start = eval_mse();
    std::optional<std::size_t> reached;
    double last = start;
    for (std::size_t step = 1; step <= 2000 && !reached; ++step) {
      auto loss = ad::mse_loss(model->forward(batch, true, dropout_rng), batch.labels);
      ad::backward(loss);
      ad::adam_step(params, adam, 1e-3);
      if (step % 10 == 0) {
        last = eval_mse();
        if (last < 1e-3) reached = step;
      }
    }
    pass &= reached.has_value();
    detail += fmt("%s%s mse %.3g -> %.3g %s", detail.empty() ? "" : "; ", to_string(kind).c_str(), start, last,
                  reached ? fmt("(below 1e-3 at step %zu)", *reached).c_str() : "(not below 1e-3 in 2000 steps)");
  }
  const double secs = seconds_since(t0);
  return {pass && secs < 300.0, detail + fmt(", %.0fs", secs)};
}

// --- A7 .. A9 ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct SweepRun {
  std::vector<RunRecord> records;
  double seconds = 0.0;
};

SweepRun timed_sweep(const ExperimentConfig& cfg, const fs::path& out) {
  const auto t0 = Clock::now();
  SweepRun run;
  run.records = sweep(cfg, [](const RunRecord& r) {
    std::fprintf(stderr, "  %-11s lag %-2zu dir_acc %.4f baseline %.4f  %.0fs\n", to_string(r.model).c_str(), r.lag,
                 r.report.directional_accuracy, r.baseline_dir_acc, r.seconds);
  });
  run.seconds = seconds_since(t0);
  report(run.records, out);
  return run;
}

ExperimentConfig sweep_config(std::uint64_t seed, std::size_t d_model) {
  ExperimentConfig cfg;  // 5 tickers x 750 days, lags 4 9 14 24 29, 50 epochs, lr 1e-4
  cfg.seed = seed;
  cfg.model.d_model = d_model;
  return cfg;
}

Outcome a7_sweep(const SweepRun& run, const ExperimentConfig& cfg, const fs::path& out) {
  std::size_t rows = 0;
  {
    std::ifstream in(out / "results.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) rows += !line.empty();
  }
  bool beats = true;
  std::string lag4;
  for (const auto& r : run.records) {
    if (r.lag != 4) continue;
    beats &= r.report.directional_accuracy > r.baseline_dir_acc;
    lag4 += fmt("%s %.4f, ", to_string(r.model).c_str(), r.report.directional_accuracy);
  }
  const double minutes = run.seconds / 60.0;
  const bool complete = rows == 10 && run.records.size() == 10;
  return {complete && beats && !lag4.empty(),
          fmt("%zu result rows; lag 4 dir_acc %snaive baseline %.4f; d_model %zu; %.1f min (target 30: %s)", rows, lag4.c_str(),
              run.records.front().baseline_dir_acc, cfg.model.d_model, minutes, minutes < 30.0 ? "met" : "missed")};
}

Outcome a8_determinism(const ExperimentConfig& cfg, const fs::path& first, const fs::path& second) {
  timed_sweep(cfg, second);
  const auto a = slurp(first / "results.csv");
  const auto b = slurp(second / "results.csv");
  return {!a.empty() && a == b, fmt("results.csv %zu bytes, repeat run %s", a.size(), a == b ? "byte-identical" : "differs")};
}

Outcome a9_leakage(const ExperimentConfig& cfg, const SweepRun& reference) {
  const auto raw = load_market(cfg);
  std::size_t curves = 0, identical = 0, test_changed = 0, poisoned_days = 0;
  for (auto lag : cfg.lags) {
    auto poisoned = raw;
    poisoned_days += testkit::poison_test_period(poisoned, testkit::train_horizon(cfg, raw, lag), 10.0);
    const auto data = prepare(poisoned, cfg);
    for (auto kind : cfg.models) {
      const auto rec = train(kind, cfg, lag, data).record;
      std::fprintf(stderr, "  poisoned %-11s lag %-2zu\n", to_string(kind).c_str(), lag);
      for (const auto& ref : reference.records) {
        if (ref.model != kind || ref.lag != lag) continue;
        ++curves;
        identical += ref.loss_curve == rec.loss_curve;
        test_changed += ref.report.csv_row() != rec.report.csv_row();
      }
    }
  }
  return {curves == 10 && identical == curves,
          fmt("%zu test-period ticker-days x10 across lags; %zu/%zu loss curves identical (every epoch, bitwise); "
              "test metrics changed in %zu runs",
              poisoned_days, identical, curves, test_changed)};
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);

  CLI::App app{"acceptance criteria A1..A9"};
  std::vector<std::string> only;
  std::string out = "acceptance_out";
  std::uint64_t seed = 7;
  std::size_t sweep_d_model = 32;
  app.add_option("--only", only, "subset, e.g. A1,A6")->delimiter(',');
  app.add_option("--out", out, "directory for sweep reports");
  app.add_option("--seed", seed);
  app.add_option("--sweep-d-model", sweep_d_model, "d_model for the A7-A9 sweeps");
  CLI11_PARSE(app, argc, argv);

  const std::set<std::string> selected(only.begin(), only.end());
  auto wanted = [&](const std::string& id) { return selected.empty() || selected.contains(id); };
  int failures = 0;
  // ctest hides the output of passing tests, so keep a copy next to the reports
  std::filesystem::create_directories(out);
  std::ofstream log(std::filesystem::path(out) / "acceptance.txt");
  auto emit = [&](const std::string& id, const std::function<Outcome()>& body) {
    if (!wanted(id)) return;
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s  %s\n", id.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    log << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  };

  emit("A1", [&] { return a1_indicators(seed); });
  emit("A2", [&] { return a2_gradients(); });
  emit("A3", [&] { return a3_positional_encoding(); });
  emit("A4", [&] { return a4_attention(seed); });
  emit("A5", [&] { return a5_metrics(seed); });
  emit("A6", [&] { return a6_overfit(seed); });

  if (wanted("A7") || wanted("A8") || wanted("A9")) {
    const auto cfg = sweep_config(seed, sweep_d_model);
    const fs::path root(out);
    std::optional<SweepRun> reference;
    std::string sweep_error;
    try {
      reference = timed_sweep(cfg, root / "run1");
    } catch (const std::exception& e) {
      sweep_error = e.what();
    }
    auto need = [&]() -> const SweepRun& {
      if (!reference) throw std::runtime_error("reference sweep failed: " + sweep_error);
      return *reference;
    };
    emit("A7", [&] { return a7_sweep(need(), cfg, root / "run1"); });
    emit("A8", [&] {
      need();
      return a8_determinism(cfg, root / "run1", root / "run2");
    });
    emit("A9", [&] { return a9_leakage(cfg, need()); });
  }
  return failures == 0 ? 0 : 1;
}
