#ifndef ZSRL_TRAINER_HPP
#define ZSRL_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "zsrl/data.hpp"
#include "zsrl/distill.hpp"
#include "zsrl/encoder.hpp"
#include "zsrl/losses.hpp"

namespace zsrl {

enum class ValidationMode { Accuracy, RetrievalMap };

struct OptimizerConfig {
    double lr0 = 1e-4;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lr_decay_factor = 10.0;
    std::size_t lr_decay_every_epochs = 10;
    std::size_t max_epochs = 25;
    std::size_t early_stop_patience = 5;
    std::size_t batch_quads = 16;
    std::uint64_t seed = 0;
    double val_fraction = 0.1;
    ValidationMode validation_mode = ValidationMode::Accuracy;

    void validate() const;
};

/// Step schedule: lr0 divided by decay_factor once per completed decay
/// period. The divisor is accumulated by exact multiplication so the
/// default schedule hits 1e-4 / 1e-5 / 1e-6 exactly.
double learning_rate(const OptimizerConfig& cfg, std::size_t epoch);

struct EpochRecord {
    std::size_t epoch = 0;  // 0-based
    double lr = 0.0;
    double l_sim = 0.0;
    double l_cls = 0.0;
    double l_knowledge = 0.0;
    double total = 0.0;
    double val_metric = 0.0;
};

struct TrainState {
    std::size_t epoch = 0;
    std::size_t step = 0;
    std::vector<std::vector<double>> velocity;  // mirrors parameter blocks
    double best_val_metric = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_since_improvement = 0;
    std::vector<EpochRecord> history;
};

void init_velocity(TrainState& state, const EncoderNetwork& net);

/// One SGD update: v <- momentum*v + (grad + weight_decay*param);
/// param <- param - lr*v. Gradients are zeroed afterwards. Non-finite
/// gradients abort with NumericError naming the step.
void sgd_step(EncoderNetwork& net, TrainState& state, const OptimizerConfig& cfg, double lr);

/// Seen-class classification accuracy via the cls head; argmax ties break
/// toward the lowest class index.
double validation_accuracy(const EncoderNetwork& net, const std::vector<DatasetItem>& val_items,
                           const LabelMap& seen_labels);

struct TrainResult {
    EncoderNetwork net;  // best-validation checkpoint
    TrainState state;
    std::size_t epochs_run = 0;
};

/// Full training recipe: domain-balanced quadruplet batches, the enabled
/// losses backpropagated through the shared encoder, SGD with momentum and
/// weight decay, step LR schedule, early stop on the validation metric.
/// Returns the best-validation checkpoint. soft_labels may be null when the
/// knowledge loss is disabled; otherwise it must cover every seen class.
TrainResult train(const std::vector<DatasetItem>& items, const SplitSpec& split,
                  const EncoderConfig& encoder_cfg, const LossConfig& loss_cfg,
                  const OptimizerConfig& opt_cfg, const SoftLabelTable* soft_labels,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// JSONL serialization of the per-epoch history, one record per line.
std::string metrics_to_jsonl(const std::vector<EpochRecord>& history);

}  // namespace zsrl

#endif  // ZSRL_TRAINER_HPP
