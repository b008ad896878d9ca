#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "stockformer/autodiff/adam.hpp"
#include "stockformer/experiment/config.hpp"
#include "stockformer/experiment/pipeline.hpp"
#include "stockformer/experiment/windows.hpp"
#include "stockformer/metrics.hpp"
#include "stockformer/models.hpp"

namespace stockformer {

struct RunRecord {
  ModelKind model = ModelKind::stockformer;
  std::size_t lag = 0;
  nlohmann::json config;           // snapshot of the ExperimentConfig
  std::vector<double> loss_curve;  // mean train MSE per epoch
  EvalReport report;
  // Directional accuracy of predicting the prior open unchanged.
  double baseline_dir_acc = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  double seconds = 0.0;  // wall time, informational only
};

/// A finished run plus the fitted weights: one model for pooled training,
/// one per ticker otherwise (keyed by ticker, "" when pooled).
struct TrainedRun {
  RunRecord record;
  std::map<std::string, std::unique_ptr<Model>> models;
};

/// Eval-mode predictions, in sample order.
inline std::vector<double> predict_all(const Model& model, const std::vector<WindowSample>& samples, std::size_t chunk = 256) {
  ad::NoGradGuard guard;
  Rng unused(0);
  std::vector<double> out;
  out.reserve(samples.size());
  std::vector<const WindowSample*> ptrs;
  for (std::size_t i = 0; i < samples.size(); i += chunk) {
    ptrs.clear();
    for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) ptrs.push_back(&samples[j]);
    const auto batch = make_batch(std::span<const WindowSample* const>(ptrs), model.config().feature_dim);
    const auto pred = model.forward(batch, false, unused);
    out.insert(out.end(), pred.data().begin(), pred.data().end());
  }
  return out;
}

/// Adam on batch MSE for cfg.epochs shuffled passes. Appends the mean
/// per-sample loss of each epoch to `curve`.
inline std::unique_ptr<Model> fit_model(ModelKind kind, const ModelConfig& mcfg, const std::vector<WindowSample>& train,
                                        const ExperimentConfig& cfg, std::vector<double>& curve) {
  if (train.empty()) throw InsufficientHistory("training split is empty; nothing to fit");
  auto model = make_model(kind, mcfg);
  auto params = model->params().tensors();
  ad::AdamState adam;
  Rng order_rng(mix_seed(mcfg.seed, 0xa11));
  Rng dropout_rng(mix_seed(mcfg.seed, 0xd20));

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<const WindowSample*> ptrs;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t i = 0; i < order.size(); i += cfg.batch) {
      ptrs.clear();
      for (std::size_t j = i; j < std::min(order.size(), i + cfg.batch); ++j) ptrs.push_back(&train[order[j]]);
      const auto batch = make_batch(std::span<const WindowSample* const>(ptrs), mcfg.feature_dim);
      auto loss = ad::mse_loss(model->forward(batch, true, dropout_rng), batch.labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError(to_string(kind) + " lag " + std::to_string(mcfg.lag) + ": non-finite loss in epoch " +
                           std::to_string(epoch + 1));
      }
      total += value * static_cast<double>(ptrs.size());
      ad::backward(loss);
      ad::adam_step(params, adam, cfg.lr);
    }
    curve.push_back(total / static_cast<double>(train.size()));
  }
  return model;
}

/// Windows, splits, fits and evaluates one (model, lag) pair on prepared data.
inline TrainedRun train(ModelKind kind, const ExperimentConfig& cfg, std::size_t lag, const PreparedData& data) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  auto split = chrono_split(windows_of(data.series, lag, cfg.sentiment_channels), cfg.split);
  if (split.train.empty()) throw InsufficientHistory("lag " + std::to_string(lag) + ": training split is empty");
  if (split.test.empty()) throw InsufficientHistory("lag " + std::to_string(lag) + ": test split is empty");

  TrainedRun run;
  auto& rec = run.record;
  rec.model = kind;
  rec.lag = lag;
  rec.config = nlohmann::json(cfg);
  rec.n_train = split.train.size();
  rec.n_test = split.test.size();
  const ModelConfig mcfg = cfg.model_for(kind, lag);

  EvalSeries eval;
  for (const auto& s : split.test) {
    eval.truth.push_back(s.label);
    eval.prior.push_back(s.prior());
  }

  if (!cfg.per_ticker) {
    auto model = fit_model(kind, mcfg, split.train, cfg, rec.loss_curve);
    eval.pred = predict_all(*model, split.test);
    run.models[""] = std::move(model);
  } else {
    // One model per ticker; the curve is the sample-weighted mean across them.
    std::map<std::string, std::vector<WindowSample>> train_by, test_by;
    for (auto& s : split.train) train_by[s.ticker].push_back(s);
    for (auto& s : split.test) test_by[s.ticker].push_back(s);
    rec.loss_curve.assign(cfg.epochs, 0.0);
    std::map<std::string, std::vector<double>> preds;
    for (const auto& [ticker, samples] : train_by) {
      ModelConfig per = mcfg;
      per.seed = mix_seed(mcfg.seed, synth::fnv1a(ticker));
      std::vector<double> curve;
      auto model = fit_model(kind, per, samples, cfg, curve);
      for (std::size_t e = 0; e < curve.size(); ++e) {
        rec.loss_curve[e] += curve[e] * static_cast<double>(samples.size()) / static_cast<double>(rec.n_train);
      }
      if (test_by.contains(ticker)) preds[ticker] = predict_all(*model, test_by[ticker]);
      run.models[ticker] = std::move(model);
    }
    std::map<std::string, std::size_t> cursor;
    for (const auto& s : split.test) {
      auto it = preds.find(s.ticker);
      if (it == preds.end()) throw InsufficientHistory(s.ticker + " has test samples but no training samples");
      eval.pred.push_back(it->second[cursor[s.ticker]++]);
    }
  }

  rec.report = evaluate(eval, to_string(kind), lag, cfg.seed);
  rec.baseline_dir_acc = directional_accuracy(eval.truth, eval.prior, eval.prior);
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

}  // namespace stockformer
