#include "trajprint/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "trajprint/adam.hpp"
#include "trajprint/error.hpp"

namespace trajprint {

using ad::Tape;
using ad::Var;

NoiseSchedule build_schedule(int steps) {
  require(steps >= 2, ErrorCode::InvalidArgument,
          "schedule needs T >= 2, got " + std::to_string(steps));
  auto f = [&](int t) {
    const double phase =
        ((static_cast<double>(t) / steps + kCosineOffset) / (1.0 + kCosineOffset)) *
        std::numbers::pi / 2.0;
    const double c = std::cos(phase);
    return c * c;
  };
  NoiseSchedule s;
  s.steps = steps;
  s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
  const double f0 = f(0);
  for (int t = 0; t <= steps; ++t) s.alpha_bar[t] = std::max(f(t) / f0, kMinAlphaBar);
  s.alpha_bar[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    require(s.alpha_bar[t] < s.alpha_bar[t - 1], ErrorCode::InvalidArgument,
            "T = " + std::to_string(steps) + " is too fine for the alpha_bar floor");
  }
  return s;
}

std::vector<int> uniform_grid(int schedule_steps, int count) {
  require(count >= 1 && count <= schedule_steps && schedule_steps % count == 0,
          ErrorCode::InvalidArgument,
          "grid of " + std::to_string(count) + " steps does not divide T = " +
              std::to_string(schedule_steps));
  const int stride = schedule_steps / count;
  std::vector<int> grid;
  grid.reserve(static_cast<std::size_t>(count) + 1);
  for (int t = schedule_steps; t >= 0; t -= stride) grid.push_back(t);
  return grid;
}

void validate_sampling_grid(std::span<const int> grid, int schedule_steps) {
  require(grid.size() >= 2, ErrorCode::InvalidArgument, "sampling grid needs at least 2 points");
  require(grid.front() <= schedule_steps, ErrorCode::InvalidArgument,
          "sampling grid starts beyond T");
  require(grid.back() == 0, ErrorCode::InvalidArgument, "sampling grid must end at 0");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    require(grid[i] < grid[i - 1], ErrorCode::InvalidArgument,
            "sampling grid must be strictly decreasing");
  }
}

void validate_inversion_grid(std::span<const int> grid, int schedule_steps) {
  require(grid.size() >= 2, ErrorCode::InvalidArgument, "inversion grid needs at least 2 points");
  require(grid.front() == 0, ErrorCode::InvalidArgument, "inversion grid must start at 0");
  require(grid.back() <= schedule_steps, ErrorCode::InvalidArgument,
          "inversion grid ends beyond T");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    require(grid[i] > grid[i - 1], ErrorCode::InvalidArgument,
            "inversion grid must be strictly increasing");
  }
}

std::vector<int> reversed(std::span<const int> grid) { return {grid.rbegin(), grid.rend()}; }

std::string model_kind_name(ModelKind kind) {
  return kind == ModelKind::AnalyticGmm ? "analytic_gmm" : "mlp";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "analytic_gmm") return ModelKind::AnalyticGmm;
  if (name == "mlp") return ModelKind::Mlp;
  fail(ErrorCode::Parse, "unknown model kind '" + name + "'");
}

void validate_gmm(const GmmParams& p) {
  require(!p.weights.empty(), ErrorCode::InvalidArgument, "mixture needs at least one component");
  require(p.means.size() % p.weights.size() == 0 && !p.means.empty(),
          ErrorCode::ShapeMismatch, "mixture means are not K x D");
  double total = 0.0;
  for (double w : p.weights) {
    require(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidArgument,
            "mixture weights must be nonnegative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-12, ErrorCode::InvalidArgument,
          "mixture weights must sum to 1");
  require(p.variance >= 0.0 && std::isfinite(p.variance), ErrorCode::InvalidArgument,
          "mixture variance must be nonnegative");
  for (double m : p.means) {
    require(std::isfinite(m), ErrorCode::NonFinite, "non-finite mixture mean");
  }
}

GmmParams random_gmm(std::uint64_t seed, std::size_t dim, std::size_t components, double spread,
                     double variance) {
  require(dim >= 1 && components >= 1, ErrorCode::InvalidArgument, "empty mixture");
  Rng rng(seed);
  GmmParams p;
  p.weights.assign(components, 1.0 / static_cast<double>(components));
  p.means.resize(components * dim);
  for (auto& m : p.means) m = spread * rng.normal();
  p.variance = variance;
  return p;
}

std::vector<double> sample_gmm(const GmmParams& p, Rng& rng) {
  const std::size_t d = p.dim();
  const double u = rng.uniform();
  std::size_t k = 0;
  double acc = 0.0;
  for (; k + 1 < p.components(); ++k) {
    acc += p.weights[k];
    if (u < acc) break;
  }
  const double sd = std::sqrt(p.variance);
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = p.means[k * d + i] + sd * rng.normal();
  return x;
}

std::vector<double> time_embedding(double tau) {
  const double w = 2.0 * std::numbers::pi * tau;
  return {tau, std::sin(w), std::cos(w)};
}

namespace {

std::string hash_material(ModelKind kind, std::size_t dim, int steps,
                          std::span<const double> params, const MlpParams* mlp) {
  std::string buf = "trajprint-model|" + model_kind_name(kind) + "|" + std::to_string(dim) + "|" +
                    std::to_string(steps) + "|";
  if (mlp) {
    for (const auto& l : mlp->layers) buf += std::to_string(l.in) + "x" + std::to_string(l.out) + ";";
    const double scale[1] = {mlp->data_scale};
    append_doubles(buf, scale);
  }
  append_doubles(buf, params);
  return buf;
}

std::vector<double> flatten(const GmmParams& p) {
  std::vector<double> v = p.weights;
  v.insert(v.end(), p.means.begin(), p.means.end());
  v.push_back(p.variance);
  return v;
}

std::vector<double> flatten(const MlpParams& p) {
  std::vector<double> v;
  for (const auto& l : p.layers) {
    v.insert(v.end(), l.weight.begin(), l.weight.end());
    v.insert(v.end(), l.bias.begin(), l.bias.end());
  }
  return v;
}

}  // namespace

DenoiserModel DenoiserModel::analytic_gmm(GmmParams params, int schedule_steps,
                                          nlohmann::json provenance) {
  validate_gmm(params);
  auto s = std::make_shared<State>();
  s->kind = ModelKind::AnalyticGmm;
  s->dim = params.dim();
  s->schedule = build_schedule(schedule_steps);
  s->gmm = std::move(params);
  s->provenance = std::move(provenance);
  s->model_id = sha256_hex(hash_material(s->kind, s->dim, schedule_steps, flatten(s->gmm), nullptr));
  return DenoiserModel(std::move(s));
}

DenoiserModel DenoiserModel::mlp(MlpParams params, std::size_t dim, int schedule_steps,
                                 nlohmann::json provenance) {
  require(!params.layers.empty(), ErrorCode::InvalidArgument, "MLP needs at least one layer");
  require(std::isfinite(params.data_scale) && params.data_scale > 0.0, ErrorCode::InvalidArgument,
          "MLP data scale must be positive");
  require(params.layers.front().in == dim + kTimeEmbeddingSize, ErrorCode::ShapeMismatch,
          "MLP input width must be D + 3");
  require(params.layers.back().out == dim, ErrorCode::ShapeMismatch, "MLP output width must be D");
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    require(l.weight.size() == l.in * l.out && l.bias.size() == l.out, ErrorCode::ShapeMismatch,
            "MLP layer " + std::to_string(i) + " has inconsistent parameter sizes");
    if (i > 0) {
      require(l.in == params.layers[i - 1].out, ErrorCode::ShapeMismatch,
              "MLP layer widths do not chain");
    }
    for (double w : l.weight) require(std::isfinite(w), ErrorCode::NonFinite, "non-finite weight");
    for (double b : l.bias) require(std::isfinite(b), ErrorCode::NonFinite, "non-finite bias");
  }
  auto s = std::make_shared<State>();
  s->kind = ModelKind::Mlp;
  s->dim = dim;
  s->schedule = build_schedule(schedule_steps);
  s->mlp = std::move(params);
  s->provenance = std::move(provenance);
  s->model_id =
      sha256_hex(hash_material(s->kind, s->dim, schedule_steps, flatten(s->mlp), &s->mlp));
  return DenoiserModel(std::move(s));
}

const GmmParams& DenoiserModel::gmm() const {
  require(kind() == ModelKind::AnalyticGmm, ErrorCode::UnsupportedKind, "model is not a mixture");
  return state_->gmm;
}

const MlpParams& DenoiserModel::mlp() const {
  require(kind() == ModelKind::Mlp, ErrorCode::UnsupportedKind, "model is not an MLP");
  return state_->mlp;
}

DenoiserModel DenoiserModel::with_schedule(int schedule_steps) const {
  if (kind() == ModelKind::AnalyticGmm) return analytic_gmm(gmm(), schedule_steps, provenance());
  return mlp(mlp(), dim(), schedule_steps, provenance());
}

bool DenoiserModel::invertible() const {
  return kind() == ModelKind::Mlp || state_->gmm.variance >= 1e-4;
}

std::vector<double> DenoiserModel::parameter_vector() const {
  return kind() == ModelKind::AnalyticGmm ? flatten(state_->gmm) : flatten(state_->mlp);
}

void DenoiserModel::check_input(std::size_t size, int t) const {
  require(t >= 1 && t <= schedule().steps, ErrorCode::InvalidArgument,
          "timestep " + std::to_string(t) + " outside [1, " + std::to_string(schedule().steps) +
              "]");
  require(size == dim(), ErrorCode::DimensionMismatch,
          "latent of size " + std::to_string(size) + " for model of dimension " +
              std::to_string(dim()));
}

Var gmm_predict_noise(Tape& tape, const GmmParams& p, const Var& x, double alpha_bar) {
  const std::size_t d = p.dim();
  const double root_a = std::sqrt(alpha_bar);
  const double v = alpha_bar * p.variance + 1.0 - alpha_bar;

  // Responsibilities of the marginal N(sqrt(a) mu_k, v I) over live components.
  std::vector<Var> logits;
  std::vector<double> log_weights;
  std::vector<double> centers_t;  // D x K_live, column k is sqrt(a) mu_k
  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < p.components(); ++k) {
    if (p.weights[k] > 0.0) live.push_back(k);
  }
  centers_t.resize(d * live.size());
  for (std::size_t j = 0; j < live.size(); ++j) {
    const std::size_t k = live[j];
    std::vector<double> c(d);
    for (std::size_t i = 0; i < d; ++i) {
      c[i] = root_a * p.means[k * d + i];
      centers_t[i * live.size() + j] = c[i];
    }
    logits.push_back(squared_norm(x - tape.constant(std::move(c))));
    log_weights.push_back(std::log(p.weights[k]));
  }
  const std::size_t n = live.size();
  Var scores = scale(-0.5 / v, ad::concat(logits)) + tape.constant(log_weights);
  Var normalizer = log_sum_exp(scores);
  Var resp = exp(scores - scale(normalizer, tape.constant(std::vector<double>(n, 1.0))));
  Var posterior_mean = matvec(tape.constant(std::move(centers_t), ad::Shape{d, n}), resp);
  return scale(std::sqrt(1.0 - alpha_bar) / v, x - posterior_mean);
}

Var mlp_forward(Tape& tape, std::span<const Var> params, const Var& x, double tau,
                double alpha_bar, double data_scale) {
  const double v = alpha_bar * data_scale * data_scale + 1.0 - alpha_bar;
  const Var parts[2] = {scale(1.0 / std::sqrt(v), x), tape.constant(time_embedding(tau))};
  Var h = ad::concat(parts);
  const std::size_t layers = params.size() / 2;
  for (std::size_t i = 0; i < layers; ++i) {
    h = matvec(params[2 * i], h) + params[2 * i + 1];
    if (i + 1 < layers) h = tanh(h);
  }
  // Gaussian-optimal noise estimate plus a learned residual whose weight
  // shrinks with alpha_bar, so the network never dominates near t = T.
  return scale(std::sqrt(1.0 - alpha_bar) / v, x) -
         scale(data_scale * std::sqrt(alpha_bar / v), h);
}

Var DenoiserModel::predict_noise(Tape& tape, const Var& x, int t) const {
  check_input(x.size(), t);
  if (kind() == ModelKind::AnalyticGmm) {
    return gmm_predict_noise(tape, state_->gmm, x, schedule().at(t));
  }
  std::vector<Var> params;
  params.reserve(2 * state_->mlp.layers.size());
  for (const auto& l : state_->mlp.layers) {
    params.push_back(tape.constant(l.weight, ad::Shape{l.out, l.in}));
    params.push_back(tape.constant(l.bias));
  }
  return mlp_forward(tape, params, x, schedule().tau(t), schedule().at(t),
                     state_->mlp.data_scale);
}

std::vector<double> DenoiserModel::predict_noise(std::span<const double> x, int t) const {
  Tape tape;
  Var in = tape.constant({x.begin(), x.end()});
  return predict_noise(tape, in, t).value();
}

Var ddim_step(const DenoiserModel& model, Tape& tape, const Var& x, int t, int t_prev) {
  require(t > t_prev && t_prev >= 0, ErrorCode::InvalidArgument,
          "ddim_step needs t > t_prev >= 0, got " + std::to_string(t) + " -> " +
              std::to_string(t_prev));
  const auto& s = model.schedule();
  const double a_t = s.at(t), a_prev = s.at(t_prev);
  Var eps = model.predict_noise(tape, x, t);
  Var x0 = scale(1.0 / std::sqrt(a_t), x - scale(std::sqrt(1.0 - a_t), eps));
  return scale(std::sqrt(a_prev), x0) + scale(std::sqrt(1.0 - a_prev), eps);
}

std::vector<double> ddim_update(std::span<const double> x, std::span<const double> eps,
                                double alpha_bar_t, double alpha_bar_prev) {
  require(x.size() == eps.size(), ErrorCode::ShapeMismatch, "ddim_update: x and eps differ in size");
  // Same operation order as the tape version, so both agree bitwise.
  const double inv = 1.0 / std::sqrt(alpha_bar_t), c = std::sqrt(1.0 - alpha_bar_t);
  const double a = std::sqrt(alpha_bar_prev), b = std::sqrt(1.0 - alpha_bar_prev);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = inv * (x[i] - c * eps[i]);
    out[i] = a * x0 + b * eps[i];
  }
  return out;
}

std::vector<double> ddim_step(const DenoiserModel& model, std::span<const double> x, int t,
                              int t_prev) {
  require(t > t_prev && t_prev >= 0, ErrorCode::InvalidArgument,
          "ddim_step needs t > t_prev >= 0, got " + std::to_string(t) + " -> " +
              std::to_string(t_prev));
  const auto& s = model.schedule();
  return ddim_update(x, model.predict_noise(x, t), s.at(t), s.at(t_prev));
}

std::vector<double> sample(const DenoiserModel& model, std::span<const double> z,
                           std::span<const int> grid) {
  validate_sampling_grid(grid, model.schedule().steps);
  require(z.size() == model.dim(), ErrorCode::DimensionMismatch,
          "noise of size " + std::to_string(z.size()) + " for model of dimension " +
              std::to_string(model.dim()));
  std::vector<double> x(z.begin(), z.end());
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) x = ddim_step(model, x, grid[i], grid[i + 1]);
  return x;
}

std::vector<double> sample(const DenoiserModel& model, std::span<const double> z) {
  const auto grid = uniform_grid(model.schedule().steps, model.schedule().steps);
  return sample(model, z, grid);
}

Var sample(const DenoiserModel& model, Tape& tape, const Var& z, std::span<const int> grid,
           std::size_t segment_length, ad::CheckpointStats* stats) {
  validate_sampling_grid(grid, model.schedule().steps);
  require(z.size() == model.dim(), ErrorCode::DimensionMismatch,
          "noise of size " + std::to_string(z.size()) + " for model of dimension " +
              std::to_string(model.dim()));
  std::vector<ad::StepFn> steps;
  steps.reserve(grid.size() - 1);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const int t = grid[i], t_prev = grid[i + 1];
    steps.emplace_back(
        [model, t, t_prev](Tape& tp, const Var& x) { return ddim_step(model, tp, x, t, t_prev); });
  }
  if (segment_length == 0) return ad::chain(tape, z, steps);
  return ad::with_checkpointing(tape, z, std::move(steps), segment_length, stats);
}

std::vector<double> invert(const DenoiserModel& model, std::span<const double> x0,
                           std::span<const int> grid, InversionOptions options) {
  require(model.invertible(), ErrorCode::NonInvertible,
          "model " + model.model_id().substr(0, 12) + " has a degenerate data manifold");
  validate_inversion_grid(grid, model.schedule().steps);
  require(x0.size() == model.dim(), ErrorCode::DimensionMismatch,
          "latent of size " + std::to_string(x0.size()) + " for model of dimension " +
              std::to_string(model.dim()));
  require(options.refine_iterations >= 0 && options.refine_iterations <= 5,
          ErrorCode::InvalidArgument, "refine_iterations must be in [0, 5]");
  const auto& s = model.schedule();
  std::vector<double> x(x0.begin(), x0.end());
  std::vector<double> next(x.size());
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const int t = grid[i], t_next = grid[i + 1];
    const double a_t = s.at(t), a_next = s.at(t_next);
    const double k0 = std::sqrt(a_next / a_t);
    const double k1 = std::sqrt(1.0 - a_next) - k0 * std::sqrt(1.0 - a_t);
    auto advance = [&](const std::vector<double>& eps) {
      for (std::size_t j = 0; j < x.size(); ++j) next[j] = k0 * x[j] + k1 * eps[j];
    };
    advance(model.predict_noise(x, std::max(t, 1)));
    for (int r = 0; r < options.refine_iterations; ++r) advance(model.predict_noise(next, t_next));
    x.swap(next);
  }
  return x;
}

std::vector<double> invert(const DenoiserModel& model, std::span<const double> x0,
                           InversionOptions options) {
  const auto grid = reversed(uniform_grid(model.schedule().steps, model.schedule().steps));
  return invert(model, x0, grid, options);
}

std::vector<double> sample_stochastic(const DenoiserModel& model, std::span<const double> z,
                                      std::span<const int> grid, double eta, std::uint64_t seed) {
  validate_sampling_grid(grid, model.schedule().steps);
  require(eta >= 0.0, ErrorCode::InvalidArgument, "eta must be nonnegative");
  require(z.size() == model.dim(), ErrorCode::DimensionMismatch, "noise dimension mismatch");
  const auto& s = model.schedule();
  Rng rng(seed);
  std::vector<double> x(z.begin(), z.end());
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const int t = grid[i], t_prev = grid[i + 1];
    const double a_t = s.at(t), a_prev = s.at(t_prev);
    const double sigma =
        eta * std::sqrt((1.0 - a_prev) / (1.0 - a_t)) * std::sqrt(1.0 - a_t / a_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - a_prev - sigma * sigma));
    const auto eps = model.predict_noise(x, t);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double x0 = (x[j] - std::sqrt(1.0 - a_t) * eps[j]) / std::sqrt(a_t);
      x[j] = std::sqrt(a_prev) * x0 + dir * eps[j] + sigma * rng.normal();
    }
  }
  return x;
}

LatentCodec LatentCodec::identity(std::size_t dim) {
  LatentCodec c;
  c.dim_ = dim;
  return c;
}

LatentCodec LatentCodec::orthogonal(std::uint64_t seed, std::size_t dim) {
  LatentCodec c;
  c.dim_ = dim;
  c.matrix_ = orthonormal_rows(seed, dim, dim);
  return c;
}

std::vector<double> LatentCodec::encode(std::span<const double> image) const {
  require(image.size() == dim_, ErrorCode::DimensionMismatch, "codec dimension mismatch");
  if (is_identity()) return {image.begin(), image.end()};
  std::vector<double> out(dim_, 0.0);
  for (std::size_t r = 0; r < dim_; ++r) {
    for (std::size_t c = 0; c < dim_; ++c) out[c] += matrix_[r * dim_ + c] * image[r];
  }
  return out;
}

std::vector<double> LatentCodec::decode(std::span<const double> latent) const {
  require(latent.size() == dim_, ErrorCode::DimensionMismatch, "codec dimension mismatch");
  if (is_identity()) return {latent.begin(), latent.end()};
  std::vector<double> out(dim_, 0.0);
  for (std::size_t r = 0; r < dim_; ++r) {
    for (std::size_t c = 0; c < dim_; ++c) out[r] += matrix_[r * dim_ + c] * latent[c];
  }
  return out;
}

Var LatentCodec::decode(Tape& tape, const Var& latent) const {
  require(latent.size() == dim_, ErrorCode::DimensionMismatch, "codec dimension mismatch");
  if (is_identity()) return latent;
  return matvec(tape.constant(matrix_, ad::Shape{dim_, dim_}), latent);
}

namespace {

MlpParams init_mlp(std::size_t dim, std::span<const std::size_t> hidden, std::uint64_t seed) {
  Rng rng(seed);
  MlpParams p;
  std::size_t in = dim + kTimeEmbeddingSize;
  std::vector<std::size_t> widths(hidden.begin(), hidden.end());
  widths.push_back(dim);
  for (std::size_t out : widths) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    l.weight.resize(in * out);
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& w : l.weight) w = sd * rng.normal();
    l.bias.assign(out, 0.0);
    p.layers.push_back(std::move(l));
    in = out;
  }
  return p;
}

// sqrt(E|x|^2 / D) under the mixture.
double mixture_rms(const GmmParams& g) {
  const std::size_t d = g.dim();
  double second = g.variance;
  for (std::size_t k = 0; k < g.components(); ++k) {
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += g.means[k * d + i] * g.means[k * d + i];
    second += g.weights[k] * norm / static_cast<double>(d);
  }
  return std::sqrt(second);
}

nlohmann::json gmm_json(const GmmParams& g) {
  return {{"weights", g.weights}, {"means", g.means}, {"variance", g.variance}};
}

// Denoising-objective Adam loop; mutates `params` in place.
void train_in_place(MlpParams& params, std::size_t dim, const GmmParams& data, int schedule_steps,
                    int steps, int batch, double learning_rate, std::uint64_t seed) {
  require(learning_rate > 0.0, ErrorCode::InvalidArgument, "learning rate must be positive");
  require(steps >= 0 && batch >= 1, ErrorCode::InvalidArgument, "invalid training length");
  require(data.dim() == dim, ErrorCode::DimensionMismatch, "training data dimension mismatch");
  const NoiseSchedule sched = build_schedule(schedule_steps);

  std::size_t total = 0;
  for (const auto& l : params.layers) total += l.weight.size() + l.bias.size();
  Adam adam(total, AdamSettings{learning_rate, 0.9, 0.999, 1e-8});
  Rng rng(seed);
  std::vector<double> flat(total), grad(total);

  for (int step = 0; step < steps; ++step) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& l : params.layers) {
      leaves.push_back(tape.leaf(l.weight, ad::Shape{l.out, l.in}));
      leaves.push_back(tape.leaf(l.bias));
    }
    std::vector<Var> losses;
    losses.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      const auto x0 = sample_gmm(data, rng);
      const int t = rng.uniform_int(1, schedule_steps);
      const double a = sched.at(t);
      std::vector<double> eps = rng.normal_vector(dim);
      std::vector<double> xt(dim);
      for (std::size_t i = 0; i < dim; ++i) xt[i] = std::sqrt(a) * x0[i] + std::sqrt(1.0 - a) * eps[i];
      Var pred = mlp_forward(tape, leaves, tape.constant(std::move(xt)), sched.tau(t), a,
                             params.data_scale);
      losses.push_back(squared_norm(pred - tape.constant(std::move(eps))));
    }
    const double norm = 1.0 / (static_cast<double>(batch) * static_cast<double>(dim));
    Var loss = inner(ad::concat(losses),
                     tape.constant(std::vector<double>(losses.size(), norm)));
    const auto grads = tape.backward(loss, leaves);

    std::size_t off = 0;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      const auto& src = leaves[i].value();
      std::copy(src.begin(), src.end(), flat.begin() + off);
      std::copy(grads[i].begin(), grads[i].end(), grad.begin() + off);
      off += src.size();
    }
    adam.step(flat, grad);
    off = 0;
    for (auto& l : params.layers) {
      std::copy_n(flat.begin() + off, l.weight.size(), l.weight.begin());
      off += l.weight.size();
      std::copy_n(flat.begin() + off, l.bias.size(), l.bias.begin());
      off += l.bias.size();
    }
  }
}

}  // namespace

DenoiserModel train_mlp_denoiser(const MlpTrainSpec& spec) {
  validate_gmm(spec.data);
  require(spec.learning_rate > 0.0, ErrorCode::InvalidArgument, "learning rate must be positive");
  require(spec.steps >= 0, ErrorCode::InvalidArgument, "training steps must be >= 0");
  const std::size_t dim = spec.data.dim();
  MlpParams params = init_mlp(dim, spec.hidden, derive_seed(spec.seed, "mlp-init"));
  params.data_scale = mixture_rms(spec.data);
  train_in_place(params, dim, spec.data, spec.schedule_steps, spec.steps, spec.batch,
                 spec.learning_rate, derive_seed(spec.seed, "mlp-train"));
  nlohmann::json prov = {{"source", "train_mlp_denoiser"},
                         {"seed", spec.seed},
                         {"steps", spec.steps},
                         {"batch", spec.batch},
                         {"learning_rate", spec.learning_rate},
                         {"hidden", spec.hidden},
                         {"train_data", gmm_json(spec.data)}};
  return DenoiserModel::mlp(std::move(params), dim, spec.schedule_steps, std::move(prov));
}

DenoiserModel continue_mlp_training(const DenoiserModel& model, const GmmParams& data, int steps,
                                    int batch, double learning_rate, std::uint64_t seed,
                                    nlohmann::json provenance) {
  MlpParams params = model.mlp();
  train_in_place(params, model.dim(), data, model.schedule().steps, steps, batch, learning_rate,
                 seed);
  return DenoiserModel::mlp(std::move(params), model.dim(), model.schedule().steps,
                            std::move(provenance));
}

}  // namespace trajprint
