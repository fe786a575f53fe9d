#include "maskcond/mcvae.hpp"

#include <cmath>
#include <numeric>

#include "maskcond/error.hpp"
#include "maskcond/ops.hpp"

namespace maskcond {

using nlohmann::json;

void validate_config(const VaeConfig& cfg) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw Error(Errc::InvalidConfig, std::string(name) + " must be positive");
  };
  positive(cfg.num_keypoints, "num_keypoints");
  positive(cfg.latent_dim, "d_z");
  positive(cfg.keypoint_embedding_dim, "keypoint_embedding_dim");
  positive(cfg.batch_size, "batch_size");
  for (auto h : cfg.encoder_hidden) positive(h, "encoder_hidden");
  for (auto h : cfg.decoder_hidden) positive(h, "decoder_hidden");
  if (!(cfg.beta >= 0.0)) throw Error(Errc::InvalidConfig, "beta must be nonnegative");
  if (!(cfg.learning_rate > 0.0)) throw Error(Errc::InvalidConfig, "learning_rate must be positive");
}

json to_json(const VaeConfig& cfg) {
  return {{"num_keypoints", cfg.num_keypoints},
          {"d_z", cfg.latent_dim},
          {"encoder_hidden", cfg.encoder_hidden},
          {"decoder_hidden", cfg.decoder_hidden},
          {"keypoint_embedding_dim", cfg.keypoint_embedding_dim},
          {"beta", cfg.beta},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"epochs", cfg.epochs}};
}

VaeConfig vae_config_from_json(const json& j) {
  VaeConfig cfg;
  try {
    cfg.num_keypoints = j.value("num_keypoints", cfg.num_keypoints);
    cfg.latent_dim = j.value("d_z", cfg.latent_dim);
    cfg.encoder_hidden = j.value("encoder_hidden", cfg.encoder_hidden);
    cfg.decoder_hidden = j.value("decoder_hidden", cfg.decoder_hidden);
    cfg.keypoint_embedding_dim = j.value("keypoint_embedding_dim", cfg.keypoint_embedding_dim);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.epochs = j.value("epochs", cfg.epochs);
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidConfig, std::string("vae config: ") + ex.what());
  }
  validate_config(cfg);
  return cfg;
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar,
                                   std::span<const double> eps) {
  if (mu.size() != logvar.size() || mu.size() != eps.size()) {
    throw Error(Errc::ShapeMismatch, "reparameterize: mu, logvar and eps lengths differ");
  }
  std::vector<double> z(mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * logvar[i]) * eps[i];
  return z;
}

std::vector<double> reparameterize(std::span<const double> mu, std::span<const double> logvar, Rng& rng) {
  std::vector<double> eps(mu.size());
  for (auto& e : eps) e = rng.normal();
  return reparameterize(mu, logvar, eps);
}

ElboTerms elbo_loss(std::span<const double> x, std::span<const double> x_hat, std::span<const double> mu,
                    std::span<const double> logvar, double beta) {
  if (x.size() != x_hat.size() || x.empty()) throw Error(Errc::ShapeMismatch, "elbo_loss: x and x_hat differ");
  if (mu.size() != logvar.size()) throw Error(Errc::ShapeMismatch, "elbo_loss: mu and logvar differ");
  ElboTerms t;
  for (std::size_t i = 0; i < x.size(); ++i) t.recon += (x[i] - x_hat[i]) * (x[i] - x_hat[i]);
  t.recon /= static_cast<double>(x.size());
  for (std::size_t d = 0; d < mu.size(); ++d) t.kl += mu[d] * mu[d] + std::exp(logvar[d]) - 1.0 - logvar[d];
  t.kl *= 0.5;
  t.total = t.recon + beta * t.kl;
  return t;
}

McVae::McVae(const VaeConfig& cfg, const ConditionSchema& schema, std::uint64_t init_seed) : cfg_(cfg) {
  validate_config(cfg_);
  Rng rng(init_seed);
  embedder_ = ConditionEmbedder(schema, params_, rng);

  std::size_t width = input_dim();
  encoder_.emplace_back(params_, "encoder.keypoints", width, cfg_.keypoint_embedding_dim, rng);
  width = cfg_.keypoint_embedding_dim;
  for (std::size_t i = 0; i < cfg_.encoder_hidden.size(); ++i) {
    encoder_.emplace_back(params_, "encoder.hidden" + std::to_string(i), width, cfg_.encoder_hidden[i], rng);
    width = cfg_.encoder_hidden[i];
  }
  encoder_head_ = nn::Linear(params_, "encoder.head", width, 2 * cfg_.latent_dim, rng);

  width = cfg_.latent_dim + embedder_.output_dim();
  for (std::size_t i = 0; i < cfg_.decoder_hidden.size(); ++i) {
    decoder_.emplace_back(params_, "decoder.hidden" + std::to_string(i), width, cfg_.decoder_hidden[i], rng);
    width = cfg_.decoder_hidden[i];
  }
  decoder_.emplace_back(params_, "decoder.out", width, input_dim(), rng);

  if (decoder_.front().in_features() != cfg_.latent_dim + embedder_.output_dim()) {
    throw Error(Errc::ShapeMismatch, "decoder input width must equal d_z + d_y");
  }
}

void McVae::set_standardization(Standardization s) {
  if (s.mean.size() != input_dim() || s.stddev.size() != input_dim()) {
    throw Error(Errc::ShapeMismatch, "standardization has " + std::to_string(s.mean.size()) + " coordinates, model expects " +
                                         std::to_string(input_dim()));
  }
  standardization_ = std::move(s);
}

std::size_t McVae::decoder_input_dim() const { return decoder_.front().in_features(); }

McVae::Encoding McVae::encode_batch(const Var& x) const {
  if (x.shape().size() != 2 || x.shape()[1] != input_dim()) {
    throw Error(Errc::ShapeMismatch, "encoder expects (B, " + std::to_string(input_dim()) + "), got " + shape_str(x.shape()));
  }
  Var h = x;
  for (const auto& layer : encoder_) h = ops::relu(layer(h));
  Var head = encoder_head_(h);
  return {ops::slice_cols(head, 0, cfg_.latent_dim), ops::slice_cols(head, cfg_.latent_dim, cfg_.latent_dim)};
}

Var McVae::decode_batch(const Var& z, std::span<const ConditionVector> conditions) const {
  if (z.shape().size() != 2 || z.shape()[1] != cfg_.latent_dim || z.shape()[0] != conditions.size()) {
    throw Error(Errc::ShapeMismatch, "decoder latent " + shape_str(z.shape()) + " vs " +
                                         std::to_string(conditions.size()) + " condition vectors");
  }
  Var h = ops::concat_cols({z, embedder_.embed_batch(conditions)});
  for (std::size_t i = 0; i + 1 < decoder_.size(); ++i) h = ops::relu(decoder_[i](h));
  return decoder_.back()(h);
}

Gaussian McVae::encode(std::span<const double> x) const {
  if (x.size() != input_dim()) throw Error(Errc::ShapeMismatch, "encode: expected " + std::to_string(input_dim()) + " values");
  for (double v : x) {
    if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "encode: non-finite keypoint coordinate");
  }
  NoGradGuard guard;
  auto enc = encode_batch(Var::constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end()))));
  return {enc.mu.value().vec(), enc.logvar.value().vec()};
}

std::vector<double> McVae::decode(std::span<const double> z, const ConditionVector& cv) const {
  NoGradGuard guard;
  Var zv = Var::constant(Tensor({1, z.size()}, std::vector<double>(z.begin(), z.end())));
  return decode_batch(zv, std::span(&cv, 1)).value().vec();
}

McVae::Loss McVae::loss(const Tensor& x, std::span<const ConditionVector> conditions, const Tensor& eps) const {
  const std::size_t batch = conditions.size();
  if (x.shape() != Shape{batch, input_dim()} || eps.shape() != Shape{batch, cfg_.latent_dim}) {
    throw Error(Errc::ShapeMismatch, "loss: x " + shape_str(x.shape()) + ", eps " + shape_str(eps.shape()));
  }
  auto enc = encode_batch(Var::constant(x));
  Var sigma = ops::exp(ops::scale(enc.logvar, 0.5));
  Var z = ops::add(enc.mu, ops::mul(sigma, Var::constant(eps)));
  Var x_hat = decode_batch(z, conditions);
  Var recon = ops::mse(x_hat, Var::constant(x));
  // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar), averaged over the batch.
  Var kl_terms = ops::sub(ops::add(ops::square(enc.mu), ops::exp(enc.logvar)), ops::add_scalar(enc.logvar, 1.0));
  Var kl = ops::scale(ops::sum(kl_terms), 0.5 / static_cast<double>(batch));
  Var total = ops::add(recon, ops::scale(kl, cfg_.beta));
  return {recon, kl, total};
}

TrainingReport train_vae(McVae& model, const PointCloudDataset& data, const SparsitySchedule& schedule, Rng& rng) {
  const VaeConfig& cfg = model.config();
  if (!(data.schema == model.schema())) throw Error(Errc::SchemaMismatch, "dataset schema differs from the model's");
  if (data.size() == 0) throw Error(Errc::EmptySplit, "training set is empty");
  if (data.keypoints.dim(1) != model.input_dim()) {
    throw Error(Errc::ShapeMismatch, "dataset has " + std::to_string(data.keypoints.dim(1)) + " coordinates, model expects " +
                                         std::to_string(model.input_dim()));
  }
  if (!data.standardization.empty()) {
    model.set_standardization(data.standardization);
  } else {
    model.set_standardization(compute_standardization(data.keypoints));
  }
  const Tensor xs = model.standardization().apply(data.keypoints);
  const std::size_t n = data.size(), dim = model.input_dim();
  const std::size_t batch_size = std::min(cfg.batch_size, n);
  const std::size_t per_epoch = (n + batch_size - 1) / batch_size;
  const SparsitySchedule sched = schedule.with_total_steps(schedule_horizon(per_epoch * cfg.epochs));
  validate_schedule(sched);

  nn::Adam optimizer(model.parameters(), cfg.learning_rate);
  TrainingReport report;
  std::vector<std::size_t> order(n);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t b = std::min(batch_size, n - start);
      const double p_t = sparsity_at(sched, step);
      Tensor x({b, dim});
      std::vector<ConditionVector> conds;
      conds.reserve(b);
      for (std::size_t r = 0; r < b; ++r) {
        const std::size_t row = order[start + r];
        std::copy_n(xs.ptr() + row * dim, dim, x.ptr() + r * dim);
        conds.push_back(mask_conditions(data.conditions[row], p_t, rng));
      }
      Tensor eps({b, cfg.latent_dim});
      for (auto& e : eps.data()) e = rng.normal();

      model.parameters().zero_grad();
      auto terms = model.loss(x, conds, eps);
      if (!std::isfinite(terms.total.item())) {
        throw Error(Errc::DivergenceDetected, "non-finite loss at step " + std::to_string(step));
      }
      backward(terms.total);
      optimizer.step();
      if (!model.parameters().all_finite()) {
        throw Error(Errc::DivergenceDetected, "non-finite parameters after step " + std::to_string(step));
      }
      report.steps.push_back({epoch, step, p_t, terms.recon.item(), terms.kl.item(), terms.total.item()});
      ++step;
    }
  }
  return report;
}

std::vector<double> generate(const McVae& model, const ConditionVector& cv, const GenerationMode& mode, Rng& rng) {
  validate_conditions(model.schema(), cv);
  if (model.standardization().empty()) throw Error(Errc::InvalidConfig, "model has no standardization statistics");
  const std::size_t dz = model.config().latent_dim;
  std::vector<double> z(dz);
  if (const auto* post = std::get_if<PosteriorMode>(&mode)) {
    if (post->reference.size() != model.input_dim()) {
      throw Error(Errc::ShapeMismatch, "posterior reference has " + std::to_string(post->reference.size()) + " values");
    }
    Tensor ref({1, model.input_dim()}, post->reference);
    Tensor std_ref = model.standardization().apply(ref);
    auto q = model.encode(std_ref.data());
    z = reparameterize(q.mu, q.logvar, rng);
  } else {
    for (auto& v : z) v = rng.normal();
  }
  auto out = model.decode(z, cv);
  const std::size_t dim = out.size();
  return model.standardization().invert(Tensor({1, dim}, std::move(out))).vec();
}

}  // namespace maskcond
