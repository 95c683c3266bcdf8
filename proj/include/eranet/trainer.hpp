#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "eranet/autograd.hpp"
#include "eranet/degrade.hpp"
#include "eranet/losses.hpp"
#include "eranet/model.hpp"

namespace eranet {

struct Schedule {
  double base_lr = 1e-3;
  double decay = 0.1;
  std::size_t period = 30;
  std::size_t epochs = 120;
};

inline double lr_at_epoch(const Schedule& s, std::size_t epoch) {
  const std::size_t k = s.period == 0 ? 0 : epoch / s.period;
  return s.base_lr * std::pow(s.decay, static_cast<double>(k));
}

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor4<T>> m;
  std::vector<Tensor4<T>> v;
};

/// Bias-corrected Adam update in place. names (optional) label diagnostics.
template <typename T>
void adam_step(const std::vector<Tensor4<T>*>& params, const std::vector<Tensor4<T>>& grads, AdamState<T>& st,
               double lr, const std::vector<std::string>& names = {}) {
  if (params.size() != grads.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "#" + std::to_string(i); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape())
      throw ShapeError("adam_step: gradient of " + label(i) + " has shape " + grads[i].shape().str() + ", parameter " +
                       params[i]->shape().str());
    if (!all_finite(grads[i])) throw ValueError("adam_step: non-finite gradient for " + label(i));
  }
  if (st.m.empty()) {
    for (const auto* p : params) {
      st.m.emplace_back(p->shape());
      st.v.emplace_back(p->shape());
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameter list");
  ++st.step;
  const double bc1 = 1 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.m[i].shape() != params[i]->shape()) throw ShapeError("adam_step: moment shape mismatch for " + label(i));
    auto& p = *params[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double m = st.beta1 * static_cast<double>(st.m[i][k]) + (1 - st.beta1) * gk;
      const double v = st.beta2 * static_cast<double>(st.v[i][k]) + (1 - st.beta2) * gk * gk;
      st.m[i][k] = static_cast<T>(m);
      st.v[i][k] = static_cast<T>(v);
      p[k] = static_cast<T>(static_cast<double>(p[k]) - lr * (m / bc1) / (std::sqrt(v / bc2) + st.eps));
    }
  }
}

struct TrainingError : Error {
  using Error::Error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0;
  std::size_t steps = 0;
  double loss = 0;
  double ms_ssim = 0;
  double l1 = 0;
  double tv = 0;
};

inline std::string format_epoch(const EpochLog& e) {
  std::ostringstream os;
  os.precision(9);
  os << "epoch=" << e.epoch << " lr=" << e.lr << " steps=" << e.steps << " loss=" << e.loss << " ms_ssim=" << e.ms_ssim
     << " l1=" << e.l1 << " tv=" << e.tv;
  return os.str();
}

struct TrainConfig {
  Schedule schedule{};
  std::size_t epochs = 120;
  /// Stop after this many optimizer steps (0 = no limit).
  std::size_t max_steps = 0;
  std::size_t batch = 4;
  std::uint64_t seed = 7;
  LossWeights weights{};
  SsimParams ssim{};
  bool clip = false;
  double clip_norm = 1.0;
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> curve;
  std::vector<double> step_losses;
  std::size_t steps = 0;
};

template <typename T>
Tensor4<T> stack_batch(const std::vector<const Tensor4<T>*>& items) {
  require(!items.empty(), "stack_batch: empty batch");
  const Shape s = items.front()->shape();
  Tensor4<T> out({items.size() * s.n, s.c, s.h, s.w});
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != s)
      throw ShapeError("stack_batch: item " + std::to_string(i) + " has shape " + items[i]->shape().str() +
                       ", expected " + s.str());
    std::copy(items[i]->storage().begin(), items[i]->storage().end(), out.data() + i * s.numel());
  }
  return out;
}

/// Fisher-Yates order of n items for one epoch.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng(seed).split(epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

template <typename T>
struct Gradients {
  LossTerms<T> loss;
  std::vector<Tensor4<T>> grads;
  std::vector<Tensor4<T>*> params;
  std::vector<std::string> names;
};

/// Loss of the training-mode network on one batch and the gradient of
/// every trainable tensor, via one taped forward/backward sweep.
template <typename T>
Gradients<T> loss_and_gradients(EraNet<T>& model, const Tensor4<T>& x, const Tensor4<T>& y, const LossWeights& w,
                                 const SsimParams& sp, std::uint64_t* branch_signature = nullptr) {
  if (model.mode() != ModelMode::training) throw ValueError("gradients need a training-mode model");
  Tape<T> tape;
  if (branch_signature) tape.track_branches(true);
  Taped<T> e(tape);
  auto vars = rebind<Var>(model.params());
  Gradients<T> g;
  visit_params(model.config(), ModelMode::training, [&](const ParamInfo& info, Var& v, Tensor4<T>& t) {
    v = tape.leaf(t, info.trainable);
    if (info.trainable) {
      g.params.push_back(&t);
      g.names.push_back(info.name);
    }
  }, vars, model.params());
  const Var xv = tape.constant(x), yv = tape.constant(y);
  const Var out = net_forward(e, xv, vars, model.config(), ModelMode::training, false);
  auto terms = total_loss(e, out, yv, w, sp);
  tape.backward(terms.total);
  visit_params(model.config(), ModelMode::training, [&](const ParamInfo& info, Var& v) {
    if (info.trainable) g.grads.push_back(tape.grad(v));
  }, vars);
  g.loss = {tape.value(terms.total)[0], tape.value(terms.ms_ssim)[0], tape.value(terms.l1)[0], tape.value(terms.tv)[0]};
  if (branch_signature) *branch_signature = tape.branch_signature();
  return g;
}

template <typename T>
void clip_by_global_norm(std::vector<Tensor4<T>>& grads, double max_norm) {
  double ss = 0;
  for (const auto& g : grads)
    for (T v : g.storage()) ss += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(ss);
  if (norm <= max_norm || norm == 0) return;
  const T k = static_cast<T>(max_norm / norm);
  for (auto& g : grads)
    for (T& v : g.storage()) v *= k;
}

/// Mean total loss (and terms) of the training-form network over a dataset, batch by batch.
template <typename T>
LossTerms<double> dataset_loss(const EraNet<T>& model, const Dataset<T>& data, const TrainConfig& cfg) {
  LossTerms<double> acc{0, 0, 0, 0};
  std::size_t batches = 0;
  const std::size_t B = std::max<std::size_t>(cfg.batch, 1);
  for (std::size_t i = 0; i < data.size(); i += B) {
    std::vector<const Tensor4<T>*> xs, ys;
    for (std::size_t k = i; k < std::min(data.size(), i + B); ++k) {
      xs.push_back(&data[k].degraded);
      ys.push_back(&data[k].clean);
    }
    const auto out = model.forward(stack_batch(xs), false);
    const auto t = total_loss(out, stack_batch(ys), cfg.weights, cfg.ssim);
    acc.total += static_cast<double>(t.total);
    acc.ms_ssim += static_cast<double>(t.ms_ssim);
    acc.l1 += static_cast<double>(t.l1);
    acc.tv += static_cast<double>(t.tv);
    ++batches;
  }
  if (batches > 0) {
    const double n = static_cast<double>(batches);
    acc = {acc.total / n, acc.ms_ssim / n, acc.l1 / n, acc.tv / n};
  }
  return acc;
}

/// Deterministic mini-batch Adam training of a training-mode model.
template <typename T>
TrainResult train(EraNet<T>& model, const Dataset<T>& data, const TrainConfig& cfg) {
  if (data.empty()) throw ValueError("train: empty dataset");
  if (model.mode() != ModelMode::training) throw ValueError("train: model must be in training mode");
  TrainResult res;
  AdamState<T> adam;
  const std::size_t B = std::max<std::size_t>(cfg.batch, 1);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && res.steps >= cfg.max_steps) break;
    const double lr = lr_at_epoch(cfg.schedule, epoch);
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    EpochLog log{epoch, lr, 0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < order.size(); i += B) {
      if (cfg.max_steps && res.steps >= cfg.max_steps) break;
      std::vector<const Tensor4<T>*> xs, ys;
      for (std::size_t k = i; k < std::min(order.size(), i + B); ++k) {
        xs.push_back(&data[order[k]].degraded);
        ys.push_back(&data[order[k]].clean);
      }
      auto g = loss_and_gradients(model, stack_batch(xs), stack_batch(ys), cfg.weights, cfg.ssim);
      const double loss = static_cast<double>(g.loss.total);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "training diverged at epoch " << epoch << " step " << res.steps << ": lr=" << lr << " loss=" << loss
           << " ms_ssim=" << g.loss.ms_ssim << " l1=" << g.loss.l1 << " tv=" << g.loss.tv;
        for (std::size_t p = 0; p < g.params.size(); ++p)
          if (!all_finite(*g.params[p])) {
            os << " first non-finite parameter=" << g.names[p];
            break;
          }
        throw TrainingError(os.str());
      }
      if (cfg.clip) clip_by_global_norm(g.grads, cfg.clip_norm);
      try {
        adam_step(g.params, g.grads, adam, lr, g.names);
      } catch (const ValueError& e) {
        throw TrainingError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " +
                            std::to_string(res.steps));
      }
      res.step_losses.push_back(loss);
      ++res.steps;
      ++log.steps;
      log.loss += loss;
      log.ms_ssim += static_cast<double>(g.loss.ms_ssim);
      log.l1 += static_cast<double>(g.loss.l1);
      log.tv += static_cast<double>(g.loss.tv);
    }
    if (log.steps == 0) break;
    const double n = static_cast<double>(log.steps);
    log.loss /= n;
    log.ms_ssim /= n;
    log.l1 /= n;
    log.tv /= n;
    res.curve.push_back(log);
    if (cfg.on_epoch) cfg.on_epoch(log);
  }
  return res;
}

struct EvalRow {
  std::size_t id = 0;
  double psnr_in = 0, ssim_in = 0;
  double psnr_out = 0, ssim_out = 0;

  double psnr_delta() const { return psnr_in == psnr_out ? 0.0 : psnr_out - psnr_in; }
  double ssim_delta() const { return ssim_out - ssim_in; }
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr_in = 0, mean_psnr_out = 0;
  double mean_ssim_in = 0, mean_ssim_out = 0;
  double mean_psnr_delta = 0, mean_ssim_delta = 0;
};

/// PSNR/SSIM of the degraded input (the no-op baseline) and of the model output.
template <typename T>
EvalReport evaluate(const EraNet<T>& model, const Dataset<T>& data, const SsimParams& sp = {}) {
  EvalReport r;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data[i];
    const auto out = model.forward(p.degraded);
    EvalRow row{i, psnr(p.degraded, p.clean), static_cast<double>(ssim(p.degraded, p.clean, sp).value),
                psnr(out, p.clean), static_cast<double>(ssim(out, p.clean, sp).value)};
    r.rows.push_back(row);
  }
  if (r.rows.empty()) return r;
  const double n = static_cast<double>(r.rows.size());
  for (const auto& row : r.rows) {
    r.mean_psnr_in += row.psnr_in / n;
    r.mean_psnr_out += row.psnr_out / n;
    r.mean_ssim_in += row.ssim_in / n;
    r.mean_ssim_out += row.ssim_out / n;
    r.mean_psnr_delta += row.psnr_delta() / n;
    r.mean_ssim_delta += row.ssim_delta() / n;
  }
  return r;
}

// ---------------------------------------------------------------- ablation

struct AblationVariant {
  std::string label;
  ModelConfig config;
  LossWeights weights;
};

struct AblationRow {
  std::string label;
  std::size_t params = 0;
  double initial_loss = 0;
  double final_loss = 0;
  double psnr_delta = 0;
  double ssim_delta = 0;
};

inline std::vector<AblationVariant> module_ablation(const ModelConfig& base) {
  std::vector<AblationVariant> v;
  for (int mask = 0; mask < 8; ++mask) {
    ModelConfig c = base;
    c.use_cam = mask & 1;
    c.use_sam = mask & 2;
    c.plain_krm = !(mask & 4);
    std::string label = std::string("cam=") + (c.use_cam ? "on" : "off") + " sam=" + (c.use_sam ? "on" : "off") +
                        " krm=" + (c.plain_krm ? "plain" : "on");
    v.push_back({label, c, {}});
  }
  return v;
}

inline std::vector<AblationVariant> operator_ablation(const ModelConfig& base) {
  std::vector<AblationVariant> v;
  for (auto op : {EdgeOperator::roberts, EdgeOperator::prewitt, EdgeOperator::sobel, EdgeOperator::laplacian,
                  EdgeOperator::kirsch}) {
    ModelConfig c = base;
    c.edge = op;
    c.plain_krm = false;
    v.push_back({"operator=" + std::string(to_string(op)), c, {}});
  }
  return v;
}

inline std::vector<AblationVariant> loss_ablation(const ModelConfig& base) {
  const LossWeights full{};
  return {{"loss=ms_ssim", base, {full.ms_ssim, 0, 0}},
          {"loss=ms_ssim+l1", base, {full.ms_ssim, full.l1, 0}},
          {"loss=ms_ssim+tv", base, {full.ms_ssim, 0, full.tv}},
          {"loss=ms_ssim+l1+tv", base, full}};
}

/// Trains every variant from the same seed and reports loss and metric deltas.
template <typename T>
std::vector<AblationRow> run_ablation(const std::vector<AblationVariant>& variants, const Dataset<T>& train_set,
                                      const Dataset<T>& test_set, TrainConfig cfg,
                                      const std::function<void(const AblationRow&)>& on_row = {}) {
  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    cfg.weights = v.weights;
    auto model = EraNet<T>::initialized(v.config, cfg.seed);
    AblationRow row;
    row.label = v.label;
    row.params = model.param_count();
    row.initial_loss = dataset_loss(model, train_set, cfg).total;
    train(model, train_set, cfg);
    row.final_loss = dataset_loss(model, train_set, cfg).total;
    const auto rep = evaluate(model.fused(), test_set, cfg.ssim);
    row.psnr_delta = rep.mean_psnr_delta;
    row.ssim_delta = rep.mean_ssim_delta;
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

}  // namespace eranet
