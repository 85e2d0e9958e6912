#pragma once

// Training loop: shuffled mini-batches, augmentation, dual-resolution loss,
// Adam with a per-step cosine schedule, and a checkpoint after every epoch.
//
// Everything random comes from one data stream seeded from the run seed and
// saved in each checkpoint, so a resumed run replays the exact draws of an
// uninterrupted one.

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "phaseformer/augment.hpp"
#include "phaseformer/checkpoint.hpp"
#include "phaseformer/config.hpp"
#include "phaseformer/data.hpp"
#include "phaseformer/image_io.hpp"
#include "phaseformer/losses.hpp"
#include "phaseformer/metrics.hpp"
#include "phaseformer/model.hpp"
#include "phaseformer/optim.hpp"

namespace phaseformer {

inline constexpr const char* logits_param_name = "loss_weights.logits";

/// Stacks [3,H,W] images into [N,3,H,W].
inline Tensor<float> batch_of(const std::vector<Tensor<float>>& images) {
    return stack(images);
}

/// Inference in no-grad mode; outputs clamped to [0, 1].
inline ModelOutput<float> infer(const Phaseformer<float>& model, const Tensor<float>& batch) {
    NoGradGuard guard;
    auto out = model.forward(batch);
    return {clamp(out.full_res, 0.0f, 1.0f), clamp(out.double_res, 0.0f, 1.0f)};
}

inline std::string format_step_line(std::size_t step, double lr, double loss, const std::array<double, 4>& omega) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", step, lr, loss, omega[0], omega[1], omega[2],
                  omega[3]);
    return buf;
}

struct TrainHooks {
    std::string checkpoint_path;         // empty: no checkpoint files
    std::ostream* log = nullptr;         // step and epoch lines
    std::size_t stop_after_epochs = 0;   // 0: run to the configured epoch count
    std::size_t eval_every = 1;          // epochs between PSNR evaluations (final epoch always)
    std::function<void(std::size_t step, double loss, const std::array<double, 4>& omega)> on_step;
};

struct EpochSummary {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double psnr = std::numeric_limits<double>::quiet_NaN();
    std::array<double, 4> omega{};
};

struct TrainResult {
    std::vector<EpochSummary> epochs;
    double final_psnr = std::numeric_limits<double>::quiet_NaN();
    std::size_t steps = 0;
    std::vector<std::string> alpha_crossings;  // "<param>[<head>] step <n> value <v>"
};

class Trainer {
public:
    Trainer(RunConfig config, PairedDataset data, std::uint64_t seed)
        : config_(std::move(config)),
          data_(std::move(data)),
          model_(config_.model, seed),
          weights_(LossWeights<float>::from_config(config_.train)),
          suite_(LossSuite<float>::from_config(config_.train)),
          adam_(AdamOptions{config_.train.beta1, config_.train.beta2, config_.train.adam_eps}),
          rng_(derive_seed(seed, 1)) {
        if (data_.empty()) throw UsageError("train: empty dataset");
        if (config_.train.holdout >= data_.size()) {
            throw ConfigError("train: holdout " + std::to_string(config_.train.holdout) + " leaves no training pairs");
        }
        if (config_.train.batch_size == 0) throw ConfigError("train: batch_size must be positive");
        for (const auto& p : data_.pairs) {
            if (p.clean.dim(1) != config_.model.input_height || p.clean.dim(2) != config_.model.input_width ||
                p.degraded.shape() != p.clean.shape()) {
                throw IngestionError("train: image size " + to_string(p.clean.shape()) + " does not match input_size " +
                                     std::to_string(config_.model.input_height) + "x" +
                                     std::to_string(config_.model.input_width));
            }
        }
    }

    std::size_t train_count() const { return data_.size() - config_.train.holdout; }
    std::size_t steps_per_epoch() const {
        return (train_count() + config_.train.batch_size - 1) / config_.train.batch_size;
    }
    std::size_t total_steps() const { return steps_per_epoch() * config_.train.epochs; }

    const Phaseformer<float>& model() const { return model_; }
    Phaseformer<float>& model() { return model_; }
    const LossWeights<float>& loss_weights() const { return weights_; }
    const LossSuite<float>& loss_suite() const { return suite_; }
    std::size_t epoch() const { return epoch_; }
    std::size_t step() const { return step_; }

    /// Tensors updated by the optimizer, in a fixed order.
    Adam<float>::Named trainables() const {
        Adam<float>::Named out;
        for (const auto& [name, t] : model_.params()) out.emplace_back(name, t);
        if (weights_.mode() == LossWeightMode::learnable) out.emplace_back(logits_param_name, weights_.logits());
        return out;
    }

    Checkpoint snapshot() const {
        Checkpoint c;
        c.config_text = format_config(config_);
        for (const auto& [name, t] : model_.params()) c.params.emplace(name, to_record(t));
        for (const auto& [name, t] : trainables()) {
            auto it = adam_.moments().find(name);
            TensorRecord m{t.shape(), std::vector<float>(t.numel(), 0.0f)}, v = m;
            if (it != adam_.moments().end()) {
                m.values = it->second.m;
                v.values = it->second.v;
            }
            c.adam_m.emplace(name, std::move(m));
            c.adam_v.emplace(name, std::move(v));
        }
        for (std::size_t i = 0; i < 4; ++i) c.logits[i] = weights_.logits().values()[i];
        c.epoch = epoch_;
        c.step = step_;
        c.rng_state = rng_.state();
        return c;
    }

    /// Restores parameters, optimizer moments, logits, counters and RNG state.
    void restore(const Checkpoint& c) {
        load_parameters(model_, c);
        for (const auto& [name, t] : trainables()) {
            auto m = c.adam_m.find(name), v = c.adam_v.find(name);
            if (m == c.adam_m.end() || v == c.adam_v.end()) throw IngestionError("checkpoint lacks Adam state for '" + name + "'");
            if (m->second.values.size() != t.numel() || v->second.values.size() != t.numel()) {
                throw IngestionError("checkpoint Adam state for '" + name + "' has the wrong size");
            }
            adam_.moments()[name] = {m->second.values, v->second.values};
        }
        weights_.set_logits(c.logits);
        epoch_ = c.epoch;
        step_ = c.step;
        adam_.set_step_count(c.step);
        rng_.restore(c.rng_state);
    }

    static void load_parameters(Phaseformer<float>& model, const Checkpoint& c) {
        if (c.params.size() != model.params().size()) {
            throw IngestionError("checkpoint holds " + std::to_string(c.params.size()) + " parameters, model expects " +
                                 std::to_string(model.params().size()));
        }
        for (auto& [name, t] : model.params()) {
            auto it = c.params.find(name);
            if (it == c.params.end()) throw IngestionError("checkpoint lacks parameter '" + name + "'");
            if (it->second.shape != t.shape()) {
                throw IngestionError("checkpoint parameter '" + name + "' has shape " + to_string(it->second.shape) +
                                     ", model expects " + to_string(t.shape()));
            }
            Tensor<float> p = t;
            auto d = p.mutable_data();
            std::copy(it->second.values.begin(), it->second.values.end(), d.begin());
        }
    }

    /// The next batch in the data stream: draws shuffles and augmentations.
    struct Batch {
        Tensor<float> degraded, clean, clean_double;
    };

    /// Loss of the current parameters on a batch (no update).
    TotalLoss<float> loss_on(const Batch& b) const {
        auto out = model_.forward(b.degraded);
        return total_loss(out, b.clean, b.clean_double, weights_, suite_);
    }

    /// Draws the batches of one epoch from the data stream.
    std::vector<Batch> draw_epoch() {
        std::vector<std::size_t> order(train_count());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng_.shuffle(order);
        const auto ranges = AugmentRanges::from_config(config_.train);
        std::vector<Batch> batches;
        for (std::size_t s = 0; s < order.size(); s += config_.train.batch_size) {
            std::vector<Tensor<float>> deg, cln;
            for (std::size_t k = s; k < std::min(order.size(), s + config_.train.batch_size); ++k) {
                auto pair = data_.pairs[order[k]];
                if (config_.train.augment) pair = augment(pair, rng_, ranges);
                deg.push_back(pair.degraded);
                cln.push_back(pair.clean);
            }
            auto clean = batch_of(cln);
            batches.push_back({batch_of(deg), clean, upsample2x(clean)});
        }
        return batches;
    }

    /// Mean PSNR of clamped full-resolution outputs on the held-out pairs (or
    /// the training pairs when nothing is held out).
    double evaluate_psnr() const {
        const std::size_t first = config_.train.holdout ? train_count() : 0;
        double s = 0.0;
        for (std::size_t i = first; i < data_.size(); ++i) {
            auto x = reshape(data_.pairs[i].degraded, Shape{1, 3, config_.model.input_height, config_.model.input_width});
            auto y = infer(model_, x).full_res;
            s += psnr(y, reshape(data_.pairs[i].clean, y.shape()));
        }
        return s / static_cast<double>(data_.size() - first);
    }

    TrainResult run(const TrainHooks& hooks = {}) {
        TrainResult result;
        const std::size_t total = total_steps();
        const std::size_t last_epoch = hooks.stop_after_epochs ? std::min(config_.train.epochs, hooks.stop_after_epochs)
                                                               : config_.train.epochs;
        while (epoch_ < last_epoch) {
            EpochSummary summary;
            double loss_sum = 0.0;
            const auto batches = draw_epoch();
            for (const auto& b : batches) {
                const double lr = cosine_lr(step_, total, config_.train.lr0, config_.train.lr_min);
                const auto omega = weights_.realized();
                check_simplex(omega);
                for (const auto& [_, t] : trainables()) {
                    Tensor<float> tt = t;
                    tt.zero_grad();
                }
                auto loss = loss_on(b);
                const double lv = loss.total.item();
                if (!std::isfinite(lv)) {
                    throw NumericalError("non-finite loss at step " + std::to_string(step_) +
                                         (hooks.checkpoint_path.empty() ? "" : "; last good checkpoint kept at '" +
                                                                                   hooks.checkpoint_path + "'"));
                }
                loss.total.backward();
                adam_.step(trainables(), lr);
                report_alpha_crossings(result, hooks);
                if (hooks.log) *hooks.log << format_step_line(step_, lr, lv, omega) << '\n';
                if (hooks.on_step) hooks.on_step(step_, lv, omega);
                loss_sum += lv;
                ++step_;
            }
            ++epoch_;
            summary.epoch = epoch_;
            summary.mean_loss = loss_sum / static_cast<double>(batches.size());
            summary.omega = weights_.realized();
            const bool eval_now = hooks.eval_every == 0 ? epoch_ == last_epoch
                                                        : (epoch_ % hooks.eval_every == 0 || epoch_ == last_epoch);
            if (eval_now) {
                summary.psnr = evaluate_psnr();
                result.final_psnr = summary.psnr;
            }
            if (hooks.log) {
                char buf[256];
                std::snprintf(buf, sizeof buf, "# epoch %zu mean_loss %.9g psnr %.6f omega %.6f %.6f %.6f %.6f", epoch_,
                              summary.mean_loss, summary.psnr, summary.omega[0], summary.omega[1], summary.omega[2],
                              summary.omega[3]);
                *hooks.log << buf << std::endl;
            }
            if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, snapshot());
            result.epochs.push_back(summary);
        }
        result.steps = step_;
        return result;
    }

private:
    /// Attention temperatures start positive; a sign change is reported, not clamped.
    void report_alpha_crossings(TrainResult& result, const TrainHooks& hooks) {
        for (const auto& [name, t] : model_.params()) {
            if (!name.ends_with(".alpha")) continue;
            for (std::size_t h = 0; h < t.numel(); ++h) {
                const std::string key = name + "[" + std::to_string(h) + "]";
                const bool nonpositive = !(t.values()[h] > 0.0f);
                if (nonpositive == nonpositive_alpha_.contains(key)) continue;
                if (nonpositive) {
                    nonpositive_alpha_.insert(key);
                    result.alpha_crossings.push_back(key + " step " + std::to_string(step_) + " value " +
                                                     std::to_string(t.values()[h]));
                    if (hooks.log) *hooks.log << "# alpha_nonpositive " << result.alpha_crossings.back() << '\n';
                } else {
                    nonpositive_alpha_.erase(key);
                }
            }
        }
    }

    void check_simplex(const std::array<double, 4>& omega) const {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            const double o = omega[i];
            if (weights_.enabled()[i] && !(o > 0.0 && o <= 1.0)) {
                throw NumericalError("loss weight " + std::to_string(i + 1) + " left (0, 1]: " + std::to_string(o));
            }
            s += o;
        }
        if (std::abs(s - 1.0) > 1e-6) throw NumericalError("loss weights sum to " + std::to_string(s));
    }

    RunConfig config_;
    PairedDataset data_;
    Phaseformer<float> model_;
    LossWeights<float> weights_;
    LossSuite<float> suite_;
    Adam<float> adam_;
    Rng rng_;
    std::size_t epoch_ = 0;
    std::size_t step_ = 0;
    std::set<std::string> nonpositive_alpha_;
};

/// Rebuilds a model from a checkpoint's embedded configuration and weights.
inline Phaseformer<float> model_from_checkpoint(const Checkpoint& c, RunConfig* config_out = nullptr) {
    const RunConfig rc = parse_config(c.config_text);
    Phaseformer<float> model(rc.model, 0);
    Trainer::load_parameters(model, c);
    if (config_out) *config_out = rc;
    return model;
}

}  // namespace phaseformer
