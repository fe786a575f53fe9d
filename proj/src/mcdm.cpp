#include "maskcond/mcdm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maskcond/error.hpp"
#include "maskcond/ops.hpp"

namespace maskcond {

using nlohmann::json;

std::vector<std::size_t> DiffusionConfig::level_channels() const {
  std::vector<std::size_t> out(unet_levels);
  for (std::size_t l = 0; l < unet_levels; ++l) {
    const std::size_t mult = channel_mult.empty() ? (l == 0 ? 1 : 2) : channel_mult.at(l);
    out[l] = base_channels * mult;
  }
  return out;
}

void validate_config(const DiffusionConfig& cfg) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw Error(Errc::InvalidConfig, std::string(name) + " must be positive");
  };
  positive(cfg.channels, "channels");
  positive(cfg.timesteps, "T_steps");
  positive(cfg.unet_levels, "unet_levels");
  positive(cfg.base_channels, "base_channels");
  positive(cfg.condition_channels, "d_c");
  positive(cfg.batch_size, "batch_size");
  if (cfg.base_channels % 2 != 0) throw Error(Errc::InvalidConfig, "base_channels must be even");
  if (!cfg.channel_mult.empty() && cfg.channel_mult.size() != cfg.unet_levels) {
    throw Error(Errc::InvalidConfig, "channel_mult needs one entry per level");
  }
  for (auto m : cfg.channel_mult) positive(m, "channel_mult");
  const std::size_t factor = std::size_t{1} << (cfg.unet_levels - 1);
  if (cfg.height == 0 || cfg.width == 0 || cfg.height % factor != 0 || cfg.width % factor != 0) {
    throw Error(Errc::InvalidConfig, "image size must be divisible by 2^(unet_levels-1)");
  }
  if (!(0.0 < cfg.beta_min && cfg.beta_min < cfg.beta_max && cfg.beta_max < 1.0)) {
    throw Error(Errc::InvalidScheduleBounds, "need 0 < beta_min < beta_max < 1");
  }
  if (cfg.attention_heads > 0 && cfg.level_channels().back() % cfg.attention_heads != 0) {
    throw Error(Errc::InvalidConfig, "lowest-level channels not divisible by attention_heads");
  }
  if (!(cfg.learning_rate > 0.0)) throw Error(Errc::InvalidConfig, "learning_rate must be positive");
}

json to_json(const DiffusionConfig& cfg) {
  return {{"image_shape", {cfg.channels, cfg.height, cfg.width}},
          {"T_steps", cfg.timesteps},
          {"beta_min", cfg.beta_min},
          {"beta_max", cfg.beta_max},
          {"unet_levels", cfg.unet_levels},
          {"base_channels", cfg.base_channels},
          {"channel_mult", cfg.channel_mult},
          {"d_c", cfg.condition_channels},
          {"attention_heads", cfg.attention_heads},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"train_steps", cfg.train_steps},
          {"zero_init_output", cfg.zero_init_output},
          {"bn_momentum", cfg.bn_momentum}};
}

DiffusionConfig diffusion_config_from_json(const json& j) {
  DiffusionConfig cfg;
  try {
    if (j.contains("image_shape")) {
      auto shape = j.at("image_shape").get<std::vector<std::size_t>>();
      if (shape.size() != 3) throw Error(Errc::InvalidConfig, "image_shape must be [C, H, W]");
      cfg.channels = shape[0];
      cfg.height = shape[1];
      cfg.width = shape[2];
    }
    cfg.timesteps = j.value("T_steps", cfg.timesteps);
    cfg.beta_min = j.value("beta_min", cfg.beta_min);
    cfg.beta_max = j.value("beta_max", cfg.beta_max);
    cfg.unet_levels = j.value("unet_levels", cfg.unet_levels);
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.channel_mult = j.value("channel_mult", cfg.channel_mult);
    cfg.condition_channels = j.value("d_c", cfg.condition_channels);
    cfg.attention_heads = j.value("attention_heads", cfg.attention_heads);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.train_steps = j.value("train_steps", cfg.train_steps);
    cfg.zero_init_output = j.value("zero_init_output", cfg.zero_init_output);
    cfg.bn_momentum = j.value("bn_momentum", cfg.bn_momentum);
  } catch (const json::exception& ex) {
    throw Error(Errc::InvalidConfig, std::string("diffusion config: ") + ex.what());
  }
  validate_config(cfg);
  return cfg;
}

NoiseSchedule init_noise_schedule(const DiffusionConfig& cfg) {
  if (!(0.0 < cfg.beta_min && cfg.beta_min < cfg.beta_max && cfg.beta_max < 1.0)) {
    throw Error(Errc::InvalidScheduleBounds, "need 0 < beta_min < beta_max < 1");
  }
  if (cfg.timesteps == 0) throw Error(Errc::InvalidScheduleBounds, "T_steps must be positive");
  NoiseSchedule ns;
  const std::size_t n = cfg.timesteps;
  ns.betas.resize(n);
  ns.alphas.resize(n);
  ns.alpha_bars.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double frac = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    ns.betas[i] = cfg.beta_min + frac * (cfg.beta_max - cfg.beta_min);
    ns.alphas[i] = 1.0 - ns.betas[i];
    running *= ns.alphas[i];
    ns.alpha_bars[i] = running;
  }
  return ns;
}

Tensor q_sample(const Tensor& x0, double alpha_bar, const Tensor& eps) {
  if (x0.shape() != eps.shape()) throw Error(Errc::ShapeMismatch, "q_sample: x0 and eps shapes differ");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor q_sample(const Tensor& x0, std::size_t t, const Tensor& eps, const NoiseSchedule& ns) {
  if (t < 1 || t > ns.steps()) {
    throw Error(Errc::TimestepOutOfRange, "t = " + std::to_string(t) + " outside [1, " + std::to_string(ns.steps()) + "]");
  }
  return q_sample(x0, ns.alpha_bar(t), eps);
}

Tensor q_sample(const Tensor& x0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& ns) {
  if (x0.shape() != eps.shape() || x0.rank() == 0 || x0.dim(0) != t.size()) {
    throw Error(Errc::ShapeMismatch, "q_sample: batch shapes disagree");
  }
  const std::size_t per = x0.size() / t.size();
  Tensor out(x0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    if (t[b] < 1 || t[b] > ns.steps()) {
      throw Error(Errc::TimestepOutOfRange, "t = " + std::to_string(t[b]) + " outside [1, " + std::to_string(ns.steps()) + "]");
    }
    const double a = std::sqrt(ns.alpha_bar(t[b])), s = std::sqrt(1.0 - ns.alpha_bar(t[b]));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) out[i] = a * x0[i] + s * eps[i];
  }
  return out;
}

ConditionInjector::ConditionInjector(nn::ParameterSet& params, const std::string& name, std::size_t d_y,
                                     std::size_t d_c, double momentum, Rng& rng)
    : projection_(params, name + ".reduce", d_y, d_c, rng),
      momentum_(momentum),
      running_mean_(std::make_shared<Tensor>(Tensor::zeros({d_c}))),
      running_var_(std::make_shared<Tensor>(Tensor::ones({d_c}))) {
  gamma_ = params.add(name + ".bn.gamma", Tensor::ones({d_c}));
  beta_ = params.add(name + ".bn.beta", Tensor::zeros({d_c}));
}

Var ConditionInjector::reduce(const Var& e_y, bool training) const {
  if (e_y.shape().size() != 2 || e_y.shape()[1] != projection_.in_features()) {
    throw Error(Errc::ShapeMismatch, "injector expects (B, " + std::to_string(projection_.in_features()) + "), got " +
                                         shape_str(e_y.shape()));
  }
  return ops::batch_norm(projection_(e_y), gamma_, beta_, *running_mean_, *running_var_, training, momentum_);
}

Var ConditionInjector::operator()(const Var& e_y, std::size_t height, std::size_t width, bool training) const {
  return ops::broadcast_spatial(reduce(e_y, training), height, width);
}

Var diffusion_loss(const Denoiser& denoiser, const NoiseSchedule& ns, const Tensor& x0,
                   std::span<const ConditionVector> conditions, std::span<const std::size_t> t, const Tensor& eps) {
  Tensor z_t = q_sample(x0, t, eps, ns);
  Var eps_hat = denoiser(Var::constant(std::move(z_t)), t, conditions);
  return ops::mse(eps_hat, Var::constant(eps));
}

Tensor timestep_embedding(std::span<const std::size_t> t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor out({t.size(), dim});
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = static_cast<double>(t[b]) * freq;
      out[b * dim + i] = std::sin(arg);
      out[b * dim + half + i] = std::cos(arg);
    }
  }
  return out;
}

Var McDiffusion::ResBlock::operator()(const Var& x, const Var& time_act, const Var& cond) const {
  Var normed = norm1(x);
  Var input = x;
  if (cond) {
    normed = ops::concat_channels({normed, cond});
    input = ops::concat_channels({x, cond});
  }
  Var h = conv1(ops::silu(normed));
  h = ops::add_channelwise(h, time_proj(time_act));
  h = conv2(ops::silu(norm2(h)));
  return ops::add(h, has_skip ? skip(input) : input);
}

Var McDiffusion::AttentionBlock::operator()(const Var& x) const {
  const auto& s = x.shape();
  Var tokens = ops::to_tokens(norm(x));
  Var attended = ops::attention(query(tokens), key(tokens), value(tokens), s[0], heads);
  return ops::add(x, ops::from_tokens(out(attended), s[0], s[2], s[3]));
}

McDiffusion::ResBlock McDiffusion::make_block(const std::string& name, std::size_t in, std::size_t out,
                                              std::size_t time_dim, Rng& rng, std::size_t cond_channels) {
  ResBlock b;
  b.norm1 = nn::GroupNorm(params_, name + ".norm1", in - cond_channels);
  b.conv1 = nn::Conv2d(params_, name + ".conv1", in, out, 3, rng);
  b.time_proj = nn::Linear(params_, name + ".time", time_dim, out, rng);
  b.norm2 = nn::GroupNorm(params_, name + ".norm2", out);
  b.conv2 = nn::Conv2d(params_, name + ".conv2", out, out, 3, rng);
  b.has_skip = in != out;
  if (b.has_skip) b.skip = nn::Conv2d(params_, name + ".skip", in, out, 1, rng);
  return b;
}

McDiffusion::McDiffusion(const DiffusionConfig& cfg, const ConditionSchema& schema, std::uint64_t init_seed)
    : cfg_(cfg) {
  validate_config(cfg_);
  Rng rng(init_seed);
  embedder_ = ConditionEmbedder(schema, params_, rng);
  schedule_ = init_noise_schedule(cfg_);

  const std::size_t base = cfg_.base_channels, time_dim = 4 * base, d_c = cfg_.condition_channels;
  const auto chans = cfg_.level_channels();
  time1_ = nn::Linear(params_, "time.fc1", base, time_dim, rng);
  time2_ = nn::Linear(params_, "time.fc2", time_dim, time_dim, rng);
  in_conv_ = nn::Conv2d(params_, "in_conv", cfg_.channels, base, 3, rng);

  std::size_t incoming = base;
  for (std::size_t l = 0; l < cfg_.unet_levels; ++l) {
    const std::string lvl = std::to_string(l);
    injectors_.emplace_back(params_, "inject" + lvl, embedder_.output_dim(), d_c, cfg_.bn_momentum, rng);
    level_in_.push_back(incoming);
    down_.push_back(make_block("down" + lvl, incoming + d_c, chans[l], time_dim, rng, d_c));
    if (down_.back().in_channels() != level_in_.back() + d_c) {
      throw Error(Errc::ShapeMismatch, "first block at level " + lvl + " must take incoming + d_c channels");
    }
    incoming = chans[l];
  }
  mid_ = make_block("mid", incoming, incoming, time_dim, rng);
  if (cfg_.attention_heads > 0) {
    has_attention_ = true;
    attention_.norm = nn::GroupNorm(params_, "attn.norm", incoming);
    attention_.query = nn::Linear(params_, "attn.query", incoming, incoming, rng);
    attention_.key = nn::Linear(params_, "attn.key", incoming, incoming, rng);
    attention_.value = nn::Linear(params_, "attn.value", incoming, incoming, rng);
    attention_.out = nn::Linear(params_, "attn.out", incoming, incoming, rng);
    attention_.heads = cfg_.attention_heads;
  }
  up_.resize(cfg_.unet_levels);
  for (std::size_t l = cfg_.unet_levels; l-- > 0;) {
    up_[l] = make_block("up" + std::to_string(l), incoming + chans[l], chans[l], time_dim, rng);
    incoming = chans[l];
  }
  out_conv_ = nn::Conv2d(params_, "out_conv", incoming, cfg_.channels, 3, rng);
  if (cfg_.zero_init_output) {
    out_conv_.weight.mutable_value().fill(0.0);
    out_conv_.bias.mutable_value().fill(0.0);
  }
}

std::vector<std::size_t> McDiffusion::first_block_input_channels() const {
  std::vector<std::size_t> out;
  for (const auto& b : down_) out.push_back(b.in_channels());
  return out;
}

std::vector<std::pair<std::string, Tensor*>> McDiffusion::buffers() const {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t l = 0; l < injectors_.size(); ++l) {
    out.emplace_back("inject" + std::to_string(l) + ".bn.running_mean", &injectors_[l].running_mean());
    out.emplace_back("inject" + std::to_string(l) + ".bn.running_var", &injectors_[l].running_var());
  }
  return out;
}

Var McDiffusion::predict_noise(const Var& z_t, std::span<const std::size_t> t,
                               std::span<const ConditionVector> conditions, bool training) const {
  const Shape expected{conditions.size(), cfg_.channels, cfg_.height, cfg_.width};
  if (z_t.shape() != expected || t.size() != conditions.size()) {
    throw Error(Errc::ShapeMismatch, "predict_noise: z_t " + shape_str(z_t.shape()) + ", expected " + shape_str(expected) +
                                         " with one timestep per element");
  }
  for (auto step : t) {
    if (step < 1 || step > cfg_.timesteps) throw Error(Errc::TimestepOutOfRange, "t = " + std::to_string(step));
  }
  const Var e_y = embedder_.embed_batch(conditions);
  const Var time_act =
      ops::silu(time2_(ops::silu(time1_(Var::constant(timestep_embedding(t, cfg_.base_channels))))));

  Var h = in_conv_(z_t);
  std::vector<Var> skips;
  std::size_t height = cfg_.height, width = cfg_.width;
  for (std::size_t l = 0; l < cfg_.unet_levels; ++l) {
    h = down_[l](h, time_act, injectors_[l](e_y, height, width, training));
    skips.push_back(h);
    if (l + 1 < cfg_.unet_levels) {
      h = ops::avg_pool2(h);
      height /= 2;
      width /= 2;
    }
  }
  h = mid_(h, time_act);
  if (has_attention_) h = attention_(h);
  for (std::size_t l = cfg_.unet_levels; l-- > 0;) {
    h = up_[l](ops::concat_channels({h, skips[l]}), time_act);
    if (l > 0) h = ops::upsample2(h);
  }
  return out_conv_(ops::silu(h));
}

Var McDiffusion::loss(const Tensor& x0, std::span<const ConditionVector> conditions, std::span<const std::size_t> t,
                      const Tensor& eps, bool training) const {
  return diffusion_loss(denoiser(training), schedule_, x0, conditions, t, eps);
}

Denoiser McDiffusion::denoiser(bool training) const {
  return [this, training](const Var& z_t, std::span<const std::size_t> t, std::span<const ConditionVector> c) {
    return predict_noise(z_t, t, c, training);
  };
}

TrainingReport train_dm(McDiffusion& model, const ImageDataset& data, const SparsitySchedule& schedule, Rng& rng) {
  const DiffusionConfig& cfg = model.config();
  if (!(data.schema == model.schema())) throw Error(Errc::SchemaMismatch, "dataset schema differs from the model's");
  if (data.size() == 0) throw Error(Errc::EmptySplit, "training set is empty");
  if (data.image_shape() != Shape{cfg.channels, cfg.height, cfg.width}) {
    throw Error(Errc::ShapeMismatch, "dataset images " + shape_str(data.image_shape()) + " do not match the model");
  }
  const SparsitySchedule sched = schedule.with_total_steps(schedule_horizon(cfg.train_steps));
  validate_schedule(sched);
  const std::size_t n = data.size(), per = data.images.size() / n;
  const std::size_t batch = std::min(cfg.batch_size, n);
  const std::size_t per_epoch = (n + batch - 1) / batch;

  nn::Adam optimizer(model.parameters(), cfg.learning_rate);
  TrainingReport report;
  std::vector<std::size_t> order(n);
  std::size_t cursor = n;
  for (std::size_t step = 0; step < cfg.train_steps; ++step) {
    if (cursor + batch > n) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng.engine());
      cursor = 0;
    }
    const double p_t = sparsity_at(sched, step);
    Tensor x0({batch, cfg.channels, cfg.height, cfg.width});
    std::vector<ConditionVector> conds;
    std::vector<std::size_t> ts(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t row = order[cursor + b];
      std::copy_n(data.images.ptr() + row * per, per, x0.ptr() + b * per);
      conds.push_back(mask_conditions(data.conditions[row], p_t, rng));
      ts[b] = 1 + rng.index(cfg.timesteps);
    }
    cursor += batch;
    Tensor eps(x0.shape());
    for (auto& e : eps.data()) e = rng.normal();

    model.parameters().zero_grad();
    Var loss = model.loss(x0, conds, ts, eps, true);
    if (!std::isfinite(loss.item())) {
      throw Error(Errc::DivergenceDetected, "non-finite loss at step " + std::to_string(step));
    }
    backward(loss);
    optimizer.step();
    report.steps.push_back({step / per_epoch, step, p_t, loss.item(), 0.0, loss.item()});
  }
  return report;
}

Tensor sample(const McDiffusion& model, std::span<const ConditionVector> conditions, Rng& rng) {
  const DiffusionConfig& cfg = model.config();
  for (const auto& cv : conditions) validate_conditions(model.schema(), cv);
  return sample(model.denoiser(false), model.noise_schedule(), {cfg.channels, cfg.height, cfg.width}, conditions, rng);
}

Tensor sample(const Denoiser& denoiser, const NoiseSchedule& ns, const Shape& image_shape,
              std::span<const ConditionVector> conditions, Rng& rng) {
  const std::size_t batch = conditions.size();
  Shape shape{batch};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  Tensor x(shape);
  for (auto& v : x.data()) v = rng.normal();

  NoGradGuard guard;
  std::vector<std::size_t> ts(batch);
  for (std::size_t t = ns.steps(); t >= 1; --t) {
    std::fill(ts.begin(), ts.end(), t);
    const Tensor eps_hat = denoiser(Var::constant(x), ts, conditions).value();
    const double bar = ns.alpha_bar(t);
    const double bar_prev = t > 1 ? ns.alpha_bar(t - 1) : 1.0;
    const double c0 = std::sqrt(bar_prev) * ns.beta(t) / (1.0 - bar);
    const double ct = std::sqrt(ns.alpha(t)) * (1.0 - bar_prev) / (1.0 - bar);
    const double sigma = std::sqrt(ns.beta(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0 = std::clamp((x[i] - std::sqrt(1.0 - bar) * eps_hat[i]) / std::sqrt(bar), -1.0, 1.0);
      x[i] = c0 * x0 + ct * x[i];
      if (t > 1) x[i] += sigma * rng.normal();
    }
  }
  for (auto& v : x.data()) v = std::clamp(v, -1.0, 1.0);
  return x;
}

}  // namespace maskcond
