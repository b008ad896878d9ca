// stockformer: data preparation, training, lag sweeps and inference.

#include <malloc.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "stockformer/experiment.hpp"

namespace fs = std::filesystem;
using namespace stockformer;

namespace {

constexpr int kUsage = 1;
constexpr int kDataError = 2;
constexpr int kNumericError = 3;

constexpr const char* kLagHelp =
    "A lag of n feeds the n business days t-n+1..t and predicts the open of day t+1, "
    "so each window spans n + 1 days including the label day.";

// Every ExperimentConfig field as an optional flag; set flags win over the config file.
struct Overrides {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::vector<std::size_t>> lags;
  std::optional<std::size_t> epochs, batch, synth_days, sentiment_channels;
  std::optional<double> lr, split;
  std::optional<std::vector<std::string>> models, synth_tickers;
  std::optional<std::string> data, regime, scores, lexicon;
  std::optional<bool> per_ticker, normalize_whole, trust_input;
  std::optional<std::size_t> rsi_window, sma_window, ema_window, macd_fast, macd_slow;
  std::optional<std::size_t> d_model, heads, enc_layers, dec_layers, ffn_dim, lstm_hidden, lstm_layers;
  std::optional<double> dropout, pe_n;
  std::optional<bool> lstm_bidirectional, layer_norm, per_day_embedder;

  void attach(CLI::App* app, bool seed_required) {
    app->add_option("--config", config_file, "JSON experiment config")->check(CLI::ExistingFile);
    auto* s = app->add_option("--seed", seed, "master seed");
    if (seed_required) s->required();
    app->add_option("--lags", lags, std::string("lag values. ") + kLagHelp)->delimiter(',');
    app->add_option("--epochs", epochs);
    app->add_option("--lr", lr);
    app->add_option("--batch", batch);
    app->add_option("--split", split, "train fraction per ticker");
    app->add_option("--models", models, "stockformer,bilstm")->delimiter(',');
    app->add_option("--data", data, "market CSV (default: synthetic data)");
    app->add_option("--synth-tickers", synth_tickers)->delimiter(',');
    app->add_option("--synth-days", synth_days);
    app->add_option("--regime", regime, "trend, mean_revert or mix");
    app->add_option("--scores", scores, "sentiment score CSV date,ticker,p_pos,p_neu,p_neg");
    app->add_option("--lexicon", lexicon, "word-list file for the headline fallback");
    app->add_option("--sentiment-channels", sentiment_channels, "1 (p_pos - p_neg) or 3");
    app->add_option("--per-ticker", per_ticker, "train one model per ticker");
    app->add_option("--normalize-whole", normalize_whole, "fit z-score stats on every row, test period included");
    app->add_option("--trust-input", trust_input, "keep indicator values present in the input");
    app->add_option("--rsi-window", rsi_window);
    app->add_option("--sma-window", sma_window);
    app->add_option("--ema-window", ema_window);
    app->add_option("--macd-fast", macd_fast);
    app->add_option("--macd-slow", macd_slow);
    app->add_option("--d-model", d_model);
    app->add_option("--heads", heads);
    app->add_option("--enc-layers", enc_layers);
    app->add_option("--dec-layers", dec_layers);
    app->add_option("--ffn-dim", ffn_dim, "0 means 4 * d_model");
    app->add_option("--dropout", dropout);
    app->add_option("--pe-n", pe_n);
    app->add_option("--lstm-hidden", lstm_hidden, "hidden units per direction");
    app->add_option("--lstm-layers", lstm_layers);
    app->add_option("--lstm-bidirectional", lstm_bidirectional);
    app->add_option("--layer-norm", layer_norm);
    app->add_option("--per-day-embedder", per_day_embedder);
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      if (!in) throw IoError("cannot open " + config_file);
      try {
        c = nlohmann::json::parse(in).get<ExperimentConfig>();
      } catch (const UnknownKey& e) {
        throw InvalidArgument(config_file + ": " + e.what());
      }
    }
    auto set = [](auto& dst, const auto& src) {
      if (src) dst = *src;
    };
    set(c.seed, seed);
    set(c.lags, lags);
    set(c.epochs, epochs);
    set(c.batch, batch);
    set(c.lr, lr);
    set(c.split, split);
    if (models) {
      c.models.clear();
      for (const auto& m : *models) c.models.push_back(parse_model_kind(m));
    }
    if (data) c.data_csv = *data;
    set(c.synth_tickers, synth_tickers);
    set(c.synth_days, synth_days);
    if (regime) c.synth_regime = parse_regime(*regime);
    if (scores) c.scores_csv = *scores;
    set(c.lexicon, lexicon);
    set(c.sentiment_channels, sentiment_channels);
    set(c.per_ticker, per_ticker);
    set(c.normalize_whole, normalize_whole);
    set(c.indicators.trust_input, trust_input);
    set(c.indicators.rsi_window, rsi_window);
    set(c.indicators.sma_window, sma_window);
    set(c.indicators.ema_window, ema_window);
    set(c.indicators.macd_fast, macd_fast);
    set(c.indicators.macd_slow, macd_slow);
    set(c.model.d_model, d_model);
    set(c.model.heads, heads);
    set(c.model.enc_layers, enc_layers);
    set(c.model.dec_layers, dec_layers);
    set(c.model.ffn_dim, ffn_dim);
    set(c.model.dropout, dropout);
    set(c.model.pe_n, pe_n);
    set(c.model.lstm_hidden, lstm_hidden);
    set(c.model.lstm_layers, lstm_layers);
    set(c.model.lstm_bidirectional, lstm_bidirectional);
    set(c.model.use_layer_norm, layer_norm);
    set(c.model.per_day_embedder, per_day_embedder);
    c.validate();
    return c;
  }
};

void write_series(const std::string& out, const std::vector<MarketSeries>& series) {
  if (out == "-") {
    write_csv(std::cout, series);
  } else {
    write_csv(fs::path(out), series);
  }
}

std::vector<MarketSeries> read_series(const std::string& in) {
  auto loaded = load_csv(fs::path(in));
  for (const auto& r : loaded.rejected) std::cerr << "skipped line " << r.line << ": " << r.reason << '\n';
  return std::move(loaded.series);
}

// --- checkpoints ---------------------------------------------------------------
//
// dir/config.json   experiment config, model kind, lag, model config
// dir/norm.csv      z-score stats the model was trained on
// dir/params.csv    weights (params_<ticker>.csv per ticker when per_ticker)

struct Checkpoint {
  ExperimentConfig cfg;
  ModelKind kind = ModelKind::stockformer;
  ModelConfig model;
  NormStats stats;
  fs::path dir;

  std::unique_ptr<Model> load_model(const std::string& ticker) const {
    auto m = make_model(kind, model);
    fs::path file = dir / ("params_" + ticker + ".csv");
    if (!fs::exists(file)) file = dir / "params.csv";
    if (!fs::exists(file)) throw IoError("checkpoint " + dir.string() + " has no weights for " + ticker);
    ad::load_parameters(m->params(), file);
    return m;
  }
};

void save_checkpoint(const fs::path& dir, const TrainedRun& run, const ExperimentConfig& cfg, const NormStats& stats) {
  const auto& rec = run.record;
  const ModelConfig model = cfg.model_for(rec.model, rec.lag);
  const nlohmann::json sidecar{{"experiment", cfg}, {"model_kind", to_string(rec.model)}, {"lag", rec.lag}, {"model", model}};
  for (const auto& [ticker, m] : run.models) {
    if (ticker.empty()) {
      ad::save_checkpoint(dir, m->params(), sidecar);
    } else {
      fs::create_directories(dir);
      ad::save_parameters(m->params(), dir / ("params_" + ticker + ".csv"));
      std::ofstream(dir / "config.json") << sidecar.dump(2) << '\n';
    }
  }
  stats.save_csv(dir / "norm.csv");
  write_loss_csv(rec, dir / "loss.csv");
  std::ofstream out(dir / "report.csv");
  out << EvalReport::csv_header() << '\n' << rec.report.csv_row() << '\n';
}

Checkpoint read_checkpoint(const fs::path& dir) {
  Checkpoint c;
  c.dir = dir;
  const auto side = ad::read_sidecar(dir);
  try {
    c.cfg = side.at("experiment").get<ExperimentConfig>();
    c.kind = parse_model_kind(side.at("model_kind").get<std::string>());
    c.model = side.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint sidecar in " + dir.string() + ": " + e.what());
  }
  c.stats = NormStats::load_csv(dir / "norm.csv");
  return c;
}

/// Market data for a checkpoint, normalized with its stored stats.
std::vector<MarketSeries> checkpoint_data(const Checkpoint& ck, const std::optional<std::string>& data) {
  auto cfg = ck.cfg;
  if (data) cfg.data_csv = *data;
  auto series = annotate_all(load_market(cfg), cfg);
  for (auto& s : series) s = apply_norm(std::move(s), ck.stats);
  return series;
}

void print_record(const RunRecord& r) {
  std::fprintf(stderr, "%-11s lag %-2zu  train %zu test %zu  loss %.5f -> %.5f  dir_acc %.4f (baseline %.4f)  %.1fs\n",
               to_string(r.model).c_str(), r.lag, r.n_train, r.n_test, r.loss_curve.empty() ? 0.0 : r.loss_curve.front(),
               r.loss_curve.empty() ? 0.0 : r.loss_curve.back(), r.report.directional_accuracy, r.baseline_dir_acc, r.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  // The autograd tape allocates and frees many mid-sized buffers per step;
  // keeping them on the heap avoids an mmap/munmap pair (and page faults) each time.
  mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);

  CLI::App app{"Stock trend prediction with a Transformer and a BiLSTM baseline.\n" + std::string(kLagHelp)};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic market CSV");
  std::vector<std::string> synth_tickers{"AAPL", "AMZN", "GOOG", "META", "NFLX"};
  std::size_t synth_days = 750;
  std::uint64_t synth_seed = 0;
  std::string synth_regime = "mix", synth_out;
  synth->add_option("--tickers", synth_tickers)->delimiter(',');
  synth->add_option("--days", synth_days);
  synth->add_option("--seed", synth_seed)->required();
  synth->add_option("--regime", synth_regime, "trend, mean_revert or mix");
  synth->add_option("--out", synth_out, "output CSV, - for stdout")->required();

  // indicators
  auto* ind = app.add_subcommand("indicators", "annotate a market CSV with RSI, EMA, SMA and MACD");
  std::string ind_in, ind_out;
  IndicatorConfig ind_cfg;
  ind->add_option("--in", ind_in)->required()->check(CLI::ExistingFile);
  ind->add_option("--out", ind_out, "output CSV, - for stdout")->required();
  ind->add_option("--rsi-window", ind_cfg.rsi_window);
  ind->add_option("--sma-window", ind_cfg.sma_window);
  ind->add_option("--ema-window", ind_cfg.ema_window);
  ind->add_option("--macd-fast", ind_cfg.macd_fast);
  ind->add_option("--macd-slow", ind_cfg.macd_slow);
  ind->add_flag("--trust-input", ind_cfg.trust_input, "keep indicator values present in the input");

  // sentiment
  auto* sent = app.add_subcommand("sentiment", "attach per-day sentiment to a market CSV");
  std::string sent_in, sent_out, sent_scores, sent_lexicon;
  sent->add_option("--in", sent_in)->required()->check(CLI::ExistingFile);
  sent->add_option("--out", sent_out, "output CSV, - for stdout")->required();
  sent->add_option("--scores", sent_scores, "score CSV date,ticker,p_pos,p_neu,p_neg")->check(CLI::ExistingFile);
  sent->add_option("--lexicon", sent_lexicon, "word-list file for the headline fallback")->check(CLI::ExistingFile);

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model at one lag and save a checkpoint");
  Overrides train_ov;
  train_ov.attach(train_cmd, true);
  std::string train_model, train_out;
  std::optional<std::size_t> train_lag;
  train_cmd->add_option("--model", train_model, "stockformer or bilstm (default: first configured model)");
  train_cmd->add_option("--lag", train_lag, "default: first configured lag");
  train_cmd->add_option("--out", train_out, "checkpoint directory")->required();

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "train every configured model at every lag and write a report");
  Overrides sweep_ov;
  sweep_ov.attach(sweep_cmd, true);
  std::string sweep_out;
  sweep_cmd->add_option("--out", sweep_out, "report directory")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  std::string eval_ckpt;
  std::optional<std::string> eval_data;
  eval_cmd->add_option("--checkpoint", eval_ckpt)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data", eval_data, "market CSV (default: the checkpoint's data source)");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "predict the next open from the latest lag days");
  std::string pred_ckpt, pred_ticker;
  std::optional<std::string> pred_data;
  pred_cmd->add_option("--checkpoint", pred_ckpt)->required()->check(CLI::ExistingDirectory);
  pred_cmd->add_option("--data", pred_data, "market CSV (default: the checkpoint's data source)");
  pred_cmd->add_option("--ticker", pred_ticker, "required when the data holds several tickers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*synth) {
      std::vector<MarketSeries> out;
      for (const auto& t : synth_tickers) out.push_back(synth_series(t, synth_days, synth_seed, parse_regime(synth_regime)));
      write_series(synth_out, out);
    } else if (*ind) {
      auto series = read_series(ind_in);
      for (auto& s : series) s = annotate(std::move(s), ind_cfg);
      write_series(ind_out, series);
    } else if (*sent) {
      auto series = read_series(sent_in);
      std::optional<ScoreMap> scores;
      if (!sent_scores.empty()) scores = load_scores(fs::path(sent_scores));
      std::optional<LexiconScorer> custom;
      if (!sent_lexicon.empty()) custom = LexiconScorer::from_file(sent_lexicon);
      for (auto& s : series) s = attach(std::move(s), scores ? &*scores : nullptr, custom ? *custom : LexiconScorer::builtin());
      write_series(sent_out, series);
    } else if (*train_cmd) {
      const auto cfg = train_ov.resolve();
      const ModelKind kind = train_model.empty() ? cfg.models.front() : parse_model_kind(train_model);
      const std::size_t lag = train_lag.value_or(cfg.lags.front());
      if (lag < 1) throw InvalidArgument("--lag must be >= 1");
      const auto data = prepare(load_market(cfg), cfg);
      const auto run = train(kind, cfg, lag, data);
      print_record(run.record);
      save_checkpoint(train_out, run, cfg, data.stats);
      std::cout << EvalReport::csv_header() << '\n' << run.record.report.csv_row() << '\n';
    } else if (*sweep_cmd) {
      const auto cfg = sweep_ov.resolve();
      const auto records = sweep(cfg, print_record);
      report(records, sweep_out);
      std::ifstream summary(fs::path(sweep_out) / "summary.txt");
      std::cout << summary.rdbuf();
    } else if (*eval_cmd) {
      const auto ck = read_checkpoint(eval_ckpt);
      const auto series = checkpoint_data(ck, eval_data);
      const auto split = chrono_split(windows_of(series, ck.model.lag, ck.cfg.sentiment_channels), ck.cfg.split);
      if (split.test.empty()) throw InsufficientHistory("no test samples");
      EvalSeries s;
      std::map<std::string, std::unique_ptr<Model>> models;
      for (const auto& w : split.test) {
        auto& m = models[w.ticker];
        if (!m) m = ck.load_model(w.ticker);
        s.pred.push_back(predict_all(*m, {w}).front());
        s.truth.push_back(w.label);
        s.prior.push_back(w.prior());
      }
      std::cout << EvalReport::csv_header() << '\n' << evaluate(s, to_string(ck.kind), ck.model.lag, ck.cfg.seed).csv_row() << '\n';
    } else if (*pred_cmd) {
      const auto ck = read_checkpoint(pred_ckpt);
      const auto series = checkpoint_data(ck, pred_data);
      const MarketSeries* target = nullptr;
      for (const auto& s : series) {
        if (pred_ticker.empty() ? series.size() == 1 : s.ticker == pred_ticker) target = &s;
      }
      if (!target) {
        throw InvalidArgument(pred_ticker.empty() ? "data holds several tickers; pass --ticker" : "ticker " + pred_ticker + " not in data");
      }
      const std::size_t lag = ck.model.lag;
      const auto& e = target->entries;
      if (e.size() < lag || !e[e.size() - lag].indicators) {
        throw InsufficientHistory(target->ticker + ": fewer than " + std::to_string(lag) + " annotated days");
      }
      WindowSample w;
      w.ticker = target->ticker;
      for (std::size_t d = e.size() - lag; d < e.size(); ++d) {
        append_day_features(e[d], ck.cfg.sentiment_channels, w.features);
        w.prior_opens.push_back(e[d].open);
      }
      const double z = ck.load_model(w.ticker)->predict(w);
      const double open = invert_norm(z, w.ticker, "open", ck.stats);
      std::cout << "ticker,last_date,predicted_open,normalized\n"
                << w.ticker << ',' << e.back().date << ',' << csv::format(open) << ',' << csv::format(z) << '\n';
    }
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return 0;
}
