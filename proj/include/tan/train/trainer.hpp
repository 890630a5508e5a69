#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "tan/diffcore/optim.hpp"
#include "tan/model/checkpoint.hpp"
#include "tan/train/config.hpp"

namespace tanflow {

/// initial * decay^floor(iteration / period).
inline double lr_at(std::size_t iteration, const TrainConfig& c) {
  return c.learning_rate * std::pow(c.decay, static_cast<double>(iteration / c.decay_period));
}

/// Index of the smallest value; ties go to the earliest. NaN never wins.
inline std::size_t select_best(std::span<const double> values) {
  if (values.empty()) throw ContractViolation("select_best on an empty list");
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    const bool better = std::isnan(values[best]) ? !std::isnan(values[k]) : values[k] < values[best];
    if (better) best = k;
  }
  return best;
}

struct ValidationRecord {
  std::size_t iteration;
  double train_nll;
  double validation_nll;
  double lr;
};

struct TrainHistory {
  std::vector<ValidationRecord> records;
  std::size_t best = 0;
  std::vector<double> losses;      // minibatch loss at each iteration
  std::vector<double> grad_norms;  // global gradient norm before clipping

  const ValidationRecord& best_record() const { return records.at(best); }
};

struct TrainResult {
  TrainHistory history;
  std::vector<Array> best_parameters;
  CheckpointMeta best_meta;
};

/// Mean negative log-likelihood over a full matrix.
inline double mean_nll(const TanModel& model, const Array& x, std::size_t workers = 1) {
  const Array lp = model.log_prob(x, workers);
  double s = 0.0;
  for (double v : lp.data()) s += v;
  return -s / static_cast<double>(lp.size());
}

/// Minimizes the mean NLL with Adam, step-decayed learning rate and global
/// norm clipping. Validation runs at iteration 0, every validation period
/// and after the final update; the model is left at the best validated
/// parameters. Deterministic given config.seed.
inline TrainResult train(TanModel& model, const Array& train_x, const Array& val_x, const TrainConfig& config,
                         const std::function<void(const ValidationRecord&)>& on_validation = {}) {
  config.validate();
  if (train_x.rank() != 2 || train_x.rows() == 0) throw ContractViolation("training data is empty");
  if (val_x.rank() != 2 || val_x.rows() == 0) throw ContractViolation("validation data is empty");
  if (train_x.cols() != model.dim() || val_x.cols() != model.dim()) {
    throw ContractViolation("data dimension " + std::to_string(train_x.cols()) + "/" + std::to_string(val_x.cols()) +
                            " does not match model dimension " + std::to_string(model.dim()));
  }
  const RandomStream root(config.seed);
  const std::vector<Parameter*> params = model.parameters();
  AdamState adam(params);

  // Fixed subset of the training data for the recorded train NLL.
  const std::size_t probe_rows = std::min<std::size_t>(train_x.rows(), 4096);
  std::vector<std::size_t> probe(probe_rows);
  RandomStream probe_rng = root.split("probe");
  for (std::size_t k = 0; k < probe_rows; ++k)
    probe[k] = probe_rows == train_x.rows() ? k : probe_rng.below(train_x.rows());
  const Array probe_x = train_x.take_rows(probe);

  TrainResult result;
  TrainHistory& h = result.history;
  auto validate = [&](std::size_t it) {
    ValidationRecord rec{it, mean_nll(model, probe_x, config.workers), mean_nll(model, val_x, config.workers),
                         lr_at(it, config)};
    h.records.push_back(rec);
    std::vector<double> vals;
    for (const auto& r : h.records) vals.push_back(r.validation_nll);
    const std::size_t best = select_best(vals);
    if (best + 1 == h.records.size()) {
      result.best_parameters = model.snapshot();
      result.best_meta = {it, rec.validation_nll, config.seed};
    }
    h.best = best;
    if (on_validation) on_validation(rec);
  };

  const RandomStream batches = root.split("batches");
  std::vector<std::size_t> idx(config.batch_size);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    if (it % config.validation_period == 0) validate(it);
    RandomStream r = batches.split(it);
    for (std::size_t& i : idx) i = r.below(train_x.rows());
    Tape tape;
    Var loss = model.nll_loss(tape, tape.constant(train_x.take_rows(idx)));
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << value << " at iteration " << it << "; parameter norms:";
      for (const Parameter* p : params) {
        double s = 0.0;
        for (double v : p->value.data()) s += v * v;
        msg << " " << p->name << "=" << std::sqrt(s);
      }
      throw TrainingError(msg.str());
    }
    h.losses.push_back(value);
    if (params.empty()) {
      h.grad_norms.push_back(0.0);
      continue;
    }
    tape.backward(loss, params);
    const double norm = clip_global_norm(std::span<Parameter* const>(params), config.clip_norm);
    if (!std::isfinite(norm)) throw TrainingError("non-finite gradient norm at iteration " + std::to_string(it));
    h.grad_norms.push_back(norm);
    adam_step(params, adam, lr_at(it, config));
  }
  validate(config.iterations);
  model.restore(result.best_parameters);
  return result;
}

/// Delimited history rows: iteration, train NLL, validation NLL, lr.
inline std::string history_table(const TrainHistory& h) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,train_nll,validation_nll,lr\n";
  for (const auto& r : h.records) out << r.iteration << "," << r.train_nll << "," << r.validation_nll << "," << r.lr << "\n";
  return out.str();
}

/// Delimited per-iteration loss curve: iteration, loss, gradient norm.
inline std::string loss_curve_table(const TrainHistory& h) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,loss,grad_norm\n";
  for (std::size_t k = 0; k < h.losses.size(); ++k) out << k << "," << h.losses[k] << "," << h.grad_norms[k] << "\n";
  return out.str();
}

}  // namespace tanflow
