#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "maskcond/conditions.hpp"
#include "maskcond/data.hpp"
#include "maskcond/nn.hpp"
#include "maskcond/schedules.hpp"
#include "maskcond/training.hpp"

namespace maskcond {

struct VaeConfig {
  std::size_t num_keypoints = 6;
  std::size_t latent_dim = 2;
  std::vector<std::size_t> encoder_hidden{64};
  std::vector<std::size_t> decoder_hidden{64, 64};
  std::size_t keypoint_embedding_dim = 64;
  double beta = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;

  bool operator==(const VaeConfig&) const = default;
};

void validate_config(const VaeConfig& cfg);
nlohmann::json to_json(const VaeConfig& cfg);
VaeConfig vae_config_from_json(const nlohmann::json& j);

struct Gaussian {
  std::vector<double> mu;
  std::vector<double> logvar;
};

struct ElboTerms {
  double recon = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

/// z = mu + exp(logvar / 2) * eps.
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> eps);
std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar, Rng& rng);

/// recon is the mean squared error over coordinates; kl is taken against the
/// standard normal prior on the unconditioned latent only.
ElboTerms elbo_loss(std::span<const double> x, std::span<const double> x_hat, std::span<const double> mu,
                    std::span<const double> logvar, double beta);

/// Masked-conditioning VAE on flattened 2D keypoints. The encoder never sees
/// the conditions; the decoder consumes [z; e_y].
class McVae {
 public:
  McVae(const VaeConfig& cfg, const ConditionSchema& schema, std::uint64_t init_seed);

  McVae(const McVae&) = delete;
  McVae& operator=(const McVae&) = delete;
  McVae(McVae&&) = default;
  McVae& operator=(McVae&&) = default;

  const VaeConfig& config() const noexcept { return cfg_; }
  const ConditionSchema& schema() const noexcept { return embedder_.schema(); }
  const ConditionEmbedder& embedder() const noexcept { return embedder_; }
  nn::ParameterSet& parameters() noexcept { return params_; }
  const nn::ParameterSet& parameters() const noexcept { return params_; }
  const Standardization& standardization() const noexcept { return standardization_; }
  void set_standardization(Standardization s);

  std::size_t input_dim() const noexcept { return 2 * cfg_.num_keypoints; }
  std::size_t decoder_input_dim() const;

  /// Single-sample interface in standardized units.
  Gaussian encode(std::span<const double> x) const;
  std::vector<double> decode(std::span<const double> z, const ConditionVector& cv) const;

  struct Encoding {
    Var mu;
    Var logvar;
  };
  /// x is (B, 2K) standardized.
  Encoding encode_batch(const Var& x) const;
  /// z is (B, d_z); returns (B, 2K).
  Var decode_batch(const Var& z, std::span<const ConditionVector> conditions) const;

  struct Loss {
    Var recon;
    Var kl;
    Var total;
  };
  /// Batch objective with externally supplied reparameterization noise eps
  /// (B, d_z). Terms are averaged over the batch.
  Loss loss(const Tensor& x, std::span<const ConditionVector> conditions, const Tensor& eps) const;

 private:
  VaeConfig cfg_;
  nn::ParameterSet params_;
  ConditionEmbedder embedder_;
  std::vector<nn::Linear> encoder_;
  nn::Linear encoder_head_;
  std::vector<nn::Linear> decoder_;
  Standardization standardization_;
};

/// Uses the dataset's standardization when present, otherwise computes it
/// from the data. Throws DivergenceDetected on a non-finite loss.
TrainingReport train_vae(McVae& model, const PointCloudDataset& data, const SparsitySchedule& schedule, Rng& rng);

struct PriorMode {};
struct PosteriorMode {
  std::vector<double> reference;  // data units
};
using GenerationMode = std::variant<PriorMode, PosteriorMode>;

/// Keypoints in data units.
std::vector<double> generate(const McVae& model, const ConditionVector& cv, const GenerationMode& mode, Rng& rng);

}  // namespace maskcond
