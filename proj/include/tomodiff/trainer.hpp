#pragma once

// Autoencoder pretraining followed by joint autoencoder + diffusion training.
//
// Epochs are full passes over the training set in shuffled mini-batches. Each
// epoch draws from its own generator keyed by (seed, phase, epoch index), so a
// run resumed from a checkpoint replays exactly the updates an uninterrupted
// run would have made.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tomodiff/denoiser.hpp"
#include "tomodiff/diffusion.hpp"
#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"
#include "tomodiff/preprocess.hpp"

namespace tomodiff::trainer {

struct ModelConfig {
  Index flows = 0;             // n
  Index latent = 128;          // k
  Index encoder_hidden = 256;  // width of E's first layer
  Index denoiser_width = 128;
  Index step_embedding = 64;
  int diffusion_steps = 1000;  // T_s
  double beta_start = 1e-4;
  double beta_end = 0.02;

  // Reference sizes: 12- and 23-router networks.
  static ModelConfig Abilene() {
    ModelConfig m;
    m.flows = 144;
    m.latent = 128;
    m.encoder_hidden = 136;
    return m;
  }
  static ModelConfig Geant() {
    ModelConfig m;
    m.flows = 529;
    m.latent = 256;
    m.encoder_hidden = 384;
    m.denoiser_width = 256;
    return m;
  }

  preprocess::AutoencoderDims autoencoder_dims() const { return {flows, encoder_hidden, latent}; }
  denoiser::DenoiserDims denoiser_dims() const { return {latent, denoiser_width, step_embedding, diffusion_steps}; }
  diffusion::NoiseSchedule schedule() const {
    return diffusion::LinearSchedule(diffusion_steps, beta_start, beta_end);
  }
};

struct TrainConfig {
  int pretrain_epochs = 100;  // I_pre
  int joint_epochs = 100;     // I_max
  Index batch_size = 32;
  double learning_rate = 1e-4;
  // Optional exponential decay from lr_decay_start to lr_decay_end across all
  // planned epochs; replaces learning_rate when enabled.
  bool lr_decay = false;
  double lr_decay_start = 1e-3;
  double lr_decay_end = 1e-5;
  std::uint64_t seed = 0;

  void Validate() const {
    if (pretrain_epochs < 0) throw ValidationError("pretrain_epochs must be >= 0");
    if (joint_epochs < 1) throw ValidationError("joint_epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  }
};

struct TrainingMeta {
  std::uint64_t seed = 0;
  int pretrain_epochs_done = 0;
  int joint_epochs_done = 0;
  std::vector<double> pretrain_loss;         // epoch means
  std::vector<double> joint_recon_loss;      // epoch means
  std::vector<double> joint_diffusion_loss;  // epoch means
};

struct ModelCheckpoint {
  static constexpr int kFormatVersion = 1;

  ModelConfig model;
  TrainConfig train;
  preprocess::AutoencoderParams autoencoder;
  denoiser::DenoiserParams denoiser;
  nn::AdamState autoencoder_opt;
  nn::AdamState denoiser_opt;
  TrainingMeta meta;

  diffusion::NoiseSchedule schedule() const { return model.schedule(); }
};

// Generator for one epoch of one phase.
inline std::mt19937_64 EpochRng(std::uint64_t seed, int phase, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(phase), static_cast<std::uint32_t>(epoch)};
  return std::mt19937_64(seq);
}

inline double LearningRate(const TrainConfig& c, int global_epoch) {
  if (!c.lr_decay) return c.learning_rate;
  const int total = c.pretrain_epochs + c.joint_epochs;
  const double frac = total <= 1 ? 0.0 : static_cast<double>(global_epoch) / static_cast<double>(total - 1);
  return c.lr_decay_start * std::pow(c.lr_decay_end / c.lr_decay_start, std::min(frac, 1.0));
}

inline std::vector<std::vector<Index>> ShuffledBatches(Index rows, Index batch_size, std::mt19937_64& rng) {
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// Gathers rows of a T x n series into an n x B batch.
inline Matrix GatherColumns(const Matrix& series, const std::vector<Index>& rows) {
  Matrix out(series.cols(), static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out.col(static_cast<Index>(i)) = series.row(rows[i]).transpose();
  return out;
}

inline void CheckFinite(double loss, const char* phase, int epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw TrainingError(std::string(phase) + " loss diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                        std::to_string(batch) + " (value " + std::to_string(loss) + ")");
  }
}

// Fresh model for a T x n training matrix: scaling statistics from the data,
// Kaiming-uniform weights from the seed.
inline ModelCheckpoint NewCheckpoint(ModelConfig model, const TrainConfig& train, const Matrix& train_values) {
  train.Validate();
  if (train_values.rows() == 0) throw ValidationError("training series is empty");
  if (model.flows == 0) model.flows = train_values.cols();
  if (model.flows != train_values.cols()) {
    throw ShapeError("model expects " + std::to_string(model.flows) + " flows, data has " +
                     std::to_string(train_values.cols()));
  }
  model.schedule();  // validates the schedule parameters
  std::mt19937_64 rng = EpochRng(train.seed, 0, 0);
  ModelCheckpoint c;
  c.model = model;
  c.train = train;
  c.autoencoder = preprocess::MakeAutoencoder(model.autoencoder_dims(), rng);
  c.autoencoder.scaling = preprocess::FitScaling(train_values);
  c.denoiser = denoiser::MakeDenoiser(model.denoiser_dims(), rng);
  c.autoencoder_opt = nn::AdamState(c.autoencoder.theta.size());
  c.denoiser_opt = nn::AdamState(c.denoiser.theta.size());
  c.meta.seed = train.seed;
  return c;
}

// One pass of reconstruction-only updates.
inline double PretrainEpoch(ModelCheckpoint& c, const Matrix& train_values) {
  const int epoch = c.meta.pretrain_epochs_done;
  std::mt19937_64 rng = EpochRng(c.train.seed, 1, epoch);
  const double lr = LearningRate(c.train, epoch);
  const nn::AdamConfig adam;
  std::vector<double> grad;
  double total = 0.0;
  const auto batches = ShuffledBatches(train_values.rows(), c.train.batch_size, rng);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Matrix x = GatherColumns(train_values, batches[b]);
    const double loss = preprocess::ReconstructionLossAndGrad(c.autoencoder, x, grad);
    CheckFinite(loss, "reconstruction", epoch, b);
    nn::AdamStep(adam, lr, c.autoencoder_opt, c.autoencoder.theta, grad, true);
    total += loss;
  }
  const double mean = total / static_cast<double>(batches.size());
  c.meta.pretrain_loss.push_back(mean);
  ++c.meta.pretrain_epochs_done;
  return mean;
}

struct JointEpochLoss {
  double reconstruction = 0.0;
  double diffusion = 0.0;
};

// One pass of joint updates. Per mini-batch: a reconstruction step on E and R,
// then x0 = E(batch) with the updated E held constant, one uniform step and
// one Gaussian noise per sample, and a diffusion step on D only.
inline JointEpochLoss JointEpoch(ModelCheckpoint& c, const Matrix& train_values) {
  const int epoch = c.meta.joint_epochs_done;
  std::mt19937_64 rng = EpochRng(c.train.seed, 2, epoch);
  const double lr = LearningRate(c.train, c.train.pretrain_epochs + epoch);
  const diffusion::NoiseSchedule schedule = c.schedule();
  const nn::AdamConfig adam;
  std::uniform_int_distribution<int> pick_step(1, schedule.steps());
  std::vector<double> grad;
  JointEpochLoss total;
  const auto batches = ShuffledBatches(train_values.rows(), c.train.batch_size, rng);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const Matrix x = GatherColumns(train_values, batches[b]);
    const double recon = preprocess::ReconstructionLossAndGrad(c.autoencoder, x, grad);
    CheckFinite(recon, "reconstruction", epoch, b);
    nn::AdamStep(adam, lr, c.autoencoder_opt, c.autoencoder.theta, grad, true);

    const Matrix x0 = preprocess::Embed(c.autoencoder, x);
    std::vector<int> steps(static_cast<std::size_t>(x0.cols()));
    for (int& t : steps) t = pick_step(rng);
    const Matrix eps = nn::StandardNormal(x0.rows(), x0.cols(), rng);
    const double diff = diffusion::DiffusionLossAndGrad(schedule, c.denoiser, x0, steps, eps, grad);
    CheckFinite(diff, "diffusion", epoch, b);
    nn::AdamStep(adam, lr, c.denoiser_opt, c.denoiser.theta, grad, true);

    total.reconstruction += recon;
    total.diffusion += diff;
  }
  const double count = static_cast<double>(batches.size());
  total.reconstruction /= count;
  total.diffusion /= count;
  c.meta.joint_recon_loss.push_back(total.reconstruction);
  c.meta.joint_diffusion_loss.push_back(total.diffusion);
  ++c.meta.joint_epochs_done;
  return total;
}

// Pretrains `initial` for config.pretrain_epochs epochs. Scaling statistics
// are taken from `initial` as given.
inline preprocess::AutoencoderParams PretrainAutoencoder(const TrainConfig& config, const Matrix& train_values,
                                                         preprocess::AutoencoderParams initial) {
  config.Validate();
  if (train_values.rows() == 0) throw ValidationError("training series is empty");
  ModelCheckpoint c;
  c.train = config;
  c.autoencoder = std::move(initial);
  c.autoencoder_opt = nn::AdamState(c.autoencoder.theta.size());
  c.meta.seed = config.seed;
  for (int e = 0; e < config.pretrain_epochs; ++e) PretrainEpoch(c, train_values);
  return std::move(c.autoencoder);
}

// Runs config.joint_epochs joint epochs starting from the supplied networks.
inline ModelCheckpoint TrainJoint(const ModelConfig& model, const TrainConfig& config, const Matrix& train_values,
                                  preprocess::AutoencoderParams autoencoder, denoiser::DenoiserParams denoiser) {
  config.Validate();
  if (train_values.rows() == 0) throw ValidationError("training series is empty");
  if (autoencoder.dims.input != train_values.cols() || denoiser.dims.latent != autoencoder.dims.latent) {
    throw ShapeError("network dimensions do not match the data");
  }
  ModelCheckpoint c;
  c.model = model;
  c.train = config;
  c.autoencoder = std::move(autoencoder);
  c.denoiser = std::move(denoiser);
  c.autoencoder_opt = nn::AdamState(c.autoencoder.theta.size());
  c.denoiser_opt = nn::AdamState(c.denoiser.theta.size());
  c.meta.seed = config.seed;
  c.meta.pretrain_epochs_done = config.pretrain_epochs;
  for (int e = 0; e < config.joint_epochs; ++e) JointEpoch(c, train_values);
  return c;
}

// Continues a checkpoint until it has completed the epochs its TrainConfig
// asks for (pretraining first, then joint training).
inline void TrainToCompletion(ModelCheckpoint& c, const Matrix& train_values) {
  if (train_values.cols() != c.model.flows) {
    throw ShapeError("checkpoint expects " + std::to_string(c.model.flows) + " flows, data has " +
                     std::to_string(train_values.cols()));
  }
  while (c.meta.pretrain_epochs_done < c.train.pretrain_epochs) PretrainEpoch(c, train_values);
  while (c.meta.joint_epochs_done < c.train.joint_epochs) JointEpoch(c, train_values);
}

// Full training run on a T x n training matrix.
inline ModelCheckpoint Train(const ModelConfig& model, const TrainConfig& config, const Matrix& train_values) {
  ModelCheckpoint c = NewCheckpoint(model, config, train_values);
  TrainToCompletion(c, train_values);
  return c;
}

}  // namespace tomodiff::trainer
