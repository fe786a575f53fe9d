#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskcond/conditions.hpp"
#include "maskcond/data.hpp"
#include "maskcond/nn.hpp"
#include "maskcond/schedules.hpp"
#include "maskcond/training.hpp"

namespace maskcond {

struct DiffusionConfig {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t timesteps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::size_t unet_levels = 3;
  std::size_t base_channels = 16;
  // Per-level multipliers of base_channels; empty means 1 at the top level and 2 below.
  std::vector<std::size_t> channel_mult;
  std::size_t condition_channels = 8;  // d_c
  std::size_t attention_heads = 0;     // 0 disables self-attention
  double learning_rate = 1e-4;
  std::size_t batch_size = 8;
  std::size_t train_steps = 1000;
  bool zero_init_output = false;
  double bn_momentum = 0.1;

  std::vector<std::size_t> level_channels() const;
  bool operator==(const DiffusionConfig&) const = default;
};

void validate_config(const DiffusionConfig& cfg);
nlohmann::json to_json(const DiffusionConfig& cfg);
DiffusionConfig diffusion_config_from_json(const nlohmann::json& j);

/// Linear beta schedule. Index t runs 1..T; vectors are stored 0-based.
struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  std::size_t steps() const noexcept { return betas.size(); }
  double beta(std::size_t t) const { return betas.at(t - 1); }
  double alpha(std::size_t t) const { return alphas.at(t - 1); }
  double alpha_bar(std::size_t t) const { return alpha_bars.at(t - 1); }
};

NoiseSchedule init_noise_schedule(const DiffusionConfig& cfg);

/// sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps.
Tensor q_sample(const Tensor& x0, double alpha_bar, const Tensor& eps);
/// Throws TimestepOutOfRange unless 1 <= t <= T.
Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& ns);
/// Batched (B, ...) tensors with one timestep per element.
Tensor q_sample(const Tensor& x0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& ns);

/// Per-level condition reduction: linear d_y -> d_c, batch normalization,
/// spatial broadcast. Running statistics are updated only in training mode.
class ConditionInjector {
 public:
  ConditionInjector() = default;
  ConditionInjector(nn::ParameterSet& params, const std::string& name, std::size_t d_y, std::size_t d_c, double momentum,
                    Rng& rng);

  /// e_y is (B, d_y); result is (B, d_c, H, W).
  Var operator()(const Var& e_y, std::size_t height, std::size_t width, bool training) const;
  /// The normalized (B, d_c) vector before broadcasting.
  Var reduce(const Var& e_y, bool training) const;

  const nn::Linear& projection() const noexcept { return projection_; }
  std::size_t out_channels() const { return projection_.out_features(); }
  Tensor& running_mean() const noexcept { return *running_mean_; }
  Tensor& running_var() const noexcept { return *running_var_; }
  const Var& gamma() const noexcept { return gamma_; }
  const Var& beta() const noexcept { return beta_; }

 private:
  nn::Linear projection_;
  Var gamma_;
  Var beta_;
  double momentum_ = 0.1;
  std::shared_ptr<Tensor> running_mean_;
  std::shared_ptr<Tensor> running_var_;
};

/// Noise predictor signature shared by the U-Net and test stubs.
using Denoiser =
    std::function<Var(const Var& z_t, std::span<const std::size_t> t, std::span<const ConditionVector> conditions)>;

/// Mean squared error between eps and the denoiser's prediction on q_sample(x0, t, eps).
Var diffusion_loss(const Denoiser& denoiser, const NoiseSchedule& ns, const Tensor& x0,
                   std::span<const ConditionVector> conditions, std::span<const std::size_t> t, const Tensor& eps);

/// Sinusoidal embedding (B, dim) of integer timesteps.
Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim);

/// Masked-conditioning denoising U-Net on (C, H, W) images in [-1, 1].
class McDiffusion {
 public:
  McDiffusion(const DiffusionConfig& cfg, const ConditionSchema& schema, std::uint64_t init_seed);

  McDiffusion(const McDiffusion&) = delete;
  McDiffusion& operator=(const McDiffusion&) = delete;
  McDiffusion(McDiffusion&&) = default;
  McDiffusion& operator=(McDiffusion&&) = default;

  const DiffusionConfig& config() const noexcept { return cfg_; }
  const ConditionSchema& schema() const noexcept { return embedder_.schema(); }
  const ConditionEmbedder& embedder() const noexcept { return embedder_; }
  nn::ParameterSet& parameters() noexcept { return params_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }
  const NoiseSchedule& noise_schedule() const noexcept { return schedule_; }
  const std::vector<ConditionInjector>& injectors() const noexcept { return injectors_; }

  /// Channels arriving at each level before the condition tensor is appended.
  const std::vector<std::size_t>& level_input_channels() const noexcept { return level_in_; }
  /// Input channels of the first residual block at each level.
  std::vector<std::size_t> first_block_input_channels() const;

  /// Buffers that are state but not trainable (batchnorm running statistics).
  std::vector<std::pair<std::string, Tensor*>> buffers() const;

  /// eps_hat with the same shape as z_t.
  Var predict_noise(const Var& z_t, std::span<const std::size_t> t, std::span<const ConditionVector> conditions,
                    bool training) const;

  Var loss(const Tensor& x0, std::span<const ConditionVector> conditions, std::span<const std::size_t> t,
           const Tensor& eps, bool training = true) const;

  Denoiser denoiser(bool training) const;

 private:
  struct ResBlock {
    nn::GroupNorm norm1;
    nn::Conv2d conv1;
    nn::Linear time_proj;
    nn::GroupNorm norm2;
    nn::Conv2d conv2;
    bool has_skip = false;
    nn::Conv2d skip;

    /// `cond`, when given, is concatenated after x's normalization: the
    /// injected channels are already batch-normalized and spatially constant.
    Var operator()(const Var& x, const Var& time_act, const Var& cond = Var()) const;
    std::size_t in_channels() const { return conv1.in_channels(); }
  };
  struct AttentionBlock {
    nn::GroupNorm norm;
    nn::Linear query, key, value, out;
    std::size_t heads = 1;

    Var operator()(const Var& x) const;
  };

  ResBlock make_block(const std::string& name, std::size_t in, std::size_t out, std::size_t time_dim, Rng& rng,
                      std::size_t cond_channels = 0);

  DiffusionConfig cfg_;
  nn::ParameterSet params_;
  ConditionEmbedder embedder_;
  NoiseSchedule schedule_;
  std::vector<ConditionInjector> injectors_;
  std::vector<std::size_t> level_in_;
  nn::Linear time1_, time2_;
  nn::Conv2d in_conv_;
  std::vector<ResBlock> down_;
  ResBlock mid_;
  bool has_attention_ = false;
  AttentionBlock attention_;
  std::vector<ResBlock> up_;
  nn::Conv2d out_conv_;
};

/// Throws DivergenceDetected on a non-finite loss.
TrainingReport train_dm(McDiffusion& model, const ImageDataset& data, const SparsitySchedule& schedule, Rng& rng);

/// Ancestral sampling from t = T to 1, one image per condition vector,
/// injectors in inference mode. Each step takes the posterior mean given the
/// x0 estimate clipped to [-1, 1]. Output (B, C, H, W) in [-1, 1].
Tensor sample(const McDiffusion& model, std::span<const ConditionVector> conditions, Rng& rng);
/// Same loop for any denoiser; images are (C, H, W).
Tensor sample(const Denoiser& denoiser, const NoiseSchedule& ns, const Shape& image_shape,
              std::span<const ConditionVector> conditions, Rng& rng);

}  // namespace maskcond
