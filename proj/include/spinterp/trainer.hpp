#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spinterp/corpus.hpp"
#include "spinterp/model.hpp"
#include "spinterp/nn/optim.hpp"

namespace spinterp {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double lr = 1e-3;
    /// Learning rate at the last step as a fraction of lr (cosine decay); 1 keeps it constant.
    double final_lr_fraction = 1.0;
    double warmup_fraction = 0.25;  // beta ramps linearly from 0 over this share of all steps
    /// Exponential moving average of the weights, updated every step; 0 disables it.
    /// When enabled, epoch losses and checkpoints use the averaged weights.
    double ema_decay = 0.0;
    std::uint64_t seed = 1;
    ModelConfig model{};

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double beta = 0;
    double lr = 0;
    LossValues train;          // end of epoch over the training split, z = mu, full beta
    LossValues val;            // same on the validation split; zeros when it is empty
    double train_running = 0;  // mean minibatch objective during the epoch (sampled z, current beta)
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;                  // 0 = initialization
    nn::Checkpoint checkpoint;           // best-validation weights + resumable state
};

/// beta at a given optimizer step (0-based) under the linear warm-up.
double beta_at(const TrainConfig& cfg, long long step, long long total_steps);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from scratch, or continues from `resume` (a checkpoint produced by
/// train). Throws NumericalError with the step index on a non-finite loss.
TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const nn::Checkpoint* resume = nullptr,
                  const EpochCallback& on_epoch = {});

/// Batch-mean loss over a split with z = mu (no sampling).
LossValues evaluate_loss(const SpinVae& model, const Corpus& corpus, Split split, double beta, int batch_size = 32);

struct ReconstructionMetrics {
    int items = 0;
    double categorical_accuracy = 0;    // over all categorical parameters of all items
    double numerical_within_one = 0;    // |decoded - true| <= one grid step
    double audio_mse = 0;               // per pixel
};

ReconstructionMetrics evaluate_reconstruction(const SpinVae& model, const Corpus& corpus, Split split, int batch_size = 32);
ReconstructionMetrics evaluate_reconstruction(const SpinVae& model, const Corpus& corpus, const std::vector<int>& items,
                                              int batch_size = 32);

/// epoch,beta,lr,train_total,train_kl,train_audio,train_preset,val_total,val_kl,val_audio,val_preset,train_running
std::string history_csv(const std::vector<EpochRecord>& history);

/// Training configuration and history stored inside checkpoints.
std::string train_state_json(const TrainConfig& cfg, const std::vector<EpochRecord>& history, int best_epoch, long long step);

}  // namespace spinterp
