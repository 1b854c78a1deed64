#include "trajprint/fingerprint.hpp"

#include <cmath>

#include "trajprint/adam.hpp"
#include "trajprint/error.hpp"
#include "trajprint/random.hpp"

namespace trajprint {

using ad::Tape;
using ad::Var;

void OptimConfig::validate() const {
  require(iterations >= 1, ErrorCode::InvalidArgument, "iterations must be >= 1");
  require(learning_rate >= 0.0, ErrorCode::InvalidArgument, "learning rate must be >= 0");
  require(lambda_rec >= 0.0 && lambda_reg >= 0.0 && gamma >= 0.0, ErrorCode::InvalidArgument,
          "loss weights must be nonnegative");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_epsilon > 0.0,
          ErrorCode::InvalidArgument, "invalid Adam moments");
  require(segment_length >= 1, ErrorCode::InvalidArgument, "segment_length must be >= 1");
}

nlohmann::json OptimConfig::to_json() const {
  return {{"iterations", iterations},
          {"learning_rate", learning_rate},
          {"lambda_rec", lambda_rec},
          {"lambda_reg", lambda_reg},
          {"gamma", gamma},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_epsilon", adam_epsilon},
          {"segment_length", segment_length},
          {"early_stop", early_stop},
          {"seed", seed},
          {"perceptual_seed", perceptual_seed}};
}

OptimConfig OptimConfig::from_json(const nlohmann::json& j) {
  OptimConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lambda_rec = j.value("lambda_rec", c.lambda_rec);
  c.lambda_reg = j.value("lambda_reg", c.lambda_reg);
  c.gamma = j.value("gamma", c.gamma);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.segment_length = j.value("segment_length", c.segment_length);
  c.early_stop = j.value("early_stop", c.early_stop);
  c.seed = j.value("seed", c.seed);
  c.perceptual_seed = j.value("perceptual_seed", c.perceptual_seed);
  c.validate();
  return c;
}

std::string OptimConfig::hash() const { return sha256_hex(to_json().dump()); }

PerceptualProxy::PerceptualProxy(std::uint64_t seed, std::size_t dim) : dim_(dim) {
  require(dim >= 2, ErrorCode::InvalidArgument, "perceptual proxy needs D >= 2");
  const auto rotation = orthonormal_rows(derive_seed(seed, "perceptual-rotation"), dim, dim);
  operator_.resize((dim - 1) * dim);
  for (std::size_t r = 0; r + 1 < dim; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      operator_[r * dim + c] = rotation[(r + 1) * dim + c] - rotation[r * dim + c];
    }
  }
}

double PerceptualProxy::operator()(std::span<const double> a, std::span<const double> b) const {
  require(a.size() == dim_ && b.size() == dim_, ErrorCode::DimensionMismatch,
          "perceptual proxy dimension mismatch");
  double acc = 0.0;
  for (std::size_t r = 0; r + 1 < dim_; ++r) {
    double d = 0.0;
    for (std::size_t c = 0; c < dim_; ++c) d += operator_[r * dim_ + c] * (a[c] - b[c]);
    acc += d * d;
  }
  return acc;
}

Var PerceptualProxy::operator()(Tape& tape, const Var& a, const Var& b) const {
  require(a.size() == dim_ && b.size() == dim_, ErrorCode::DimensionMismatch,
          "perceptual proxy dimension mismatch");
  return squared_norm(matvec(tape.constant(operator_, ad::Shape{dim_ - 1, dim_}), a - b));
}

Var rec_loss(Tape& tape, const Var& generated, const Var& target, double gamma,
             const PerceptualProxy& proxy) {
  Var pixel = squared_norm(generated - target);
  if (gamma == 0.0) return pixel;
  const Var terms[2] = {pixel, proxy(tape, generated, target)};
  return inner(ad::concat(terms), tape.constant({1.0, gamma}));
}

Var reg_loss(Tape&, const Var& z, const Var& origin) { return squared_norm(z - origin); }

FingerprintProblem::FingerprintProblem(DenoiserModel m, WatermarkKey k, Anchor a)
    : FingerprintProblem(m, std::move(k), std::move(a), LatentCodec::identity(m.dim()),
                         uniform_grid(m.schedule().steps, m.schedule().steps)) {}

FingerprintProblem::FingerprintProblem(DenoiserModel m, WatermarkKey k, Anchor a, LatentCodec c,
                                       std::vector<int> g)
    : model(std::move(m)), key(std::move(k)), anchor(std::move(a)), codec(std::move(c)),
      grid(std::move(g)) {
  require(anchor.watermarked.size() == model.dim(), ErrorCode::DimensionMismatch,
          "anchor of dimension " + std::to_string(anchor.watermarked.size()) +
              " for model of dimension " + std::to_string(model.dim()));
  require(key.dim == model.dim() && codec.dim() == model.dim(), ErrorCode::DimensionMismatch,
          "watermark key or codec dimension differs from the model");
  validate_sampling_grid(grid, model.schedule().steps);
}

LossParts TotalLoss::values() const {
  return {watermark.scalar(), reconstruction.scalar(), regularization.scalar(), total.scalar()};
}

TotalLoss total_loss(Tape& tape, const FingerprintProblem& problem, const Var& z,
                     const Var& origin, const OptimConfig& config, const PerceptualProxy& proxy) {
  Var latent = sample(problem.model, tape, z, problem.grid, config.segment_length);
  Var image = problem.codec.decode(tape, latent);
  TotalLoss out;
  out.watermark =
      bce_loss(tape, decode_soft(tape, image, problem.key), problem.anchor.message);
  out.reconstruction =
      rec_loss(tape, image, tape.constant(problem.anchor.watermarked), config.gamma, proxy);
  out.regularization = reg_loss(tape, z, origin);
  const Var parts[3] = {out.watermark, out.reconstruction, out.regularization};
  out.total = inner(ad::concat(parts), tape.constant({1.0, config.lambda_rec, config.lambda_reg}));
  return out;
}

LossParts evaluate_loss(const FingerprintProblem& problem, std::span<const double> z,
                        std::span<const double> origin, const OptimConfig& config) {
  const PerceptualProxy proxy(config.perceptual_seed, problem.model.dim());
  Tape tape;
  Var zv = tape.leaf({z.begin(), z.end()});
  Var ov = tape.constant({origin.begin(), origin.end()});
  return total_loss(tape, problem, zv, ov, config, proxy).values();
}

namespace {

double bit_accuracy_of(const FingerprintProblem& problem, std::span<const double> z) {
  const auto image = problem.codec.decode(sample(problem.model, z, problem.grid));
  const auto decoded = decode_hard(image, problem.key);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < decoded.size(); ++j) {
    correct += decoded.bits[j] == problem.anchor.message.bits[j] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(decoded.size());
}

}  // namespace

FingerprintRecord optimize_noise(const FingerprintProblem& problem, const OptimConfig& config,
                                 std::vector<double> start, std::vector<double> origin,
                                 bool baseline) {
  config.validate();
  const std::size_t dim = problem.model.dim();
  require(start.size() == dim && origin.size() == dim, ErrorCode::DimensionMismatch,
          "initial noise dimension differs from the model");
  const PerceptualProxy proxy(config.perceptual_seed, dim);

  FingerprintRecord rec;
  rec.model_id = problem.model.model_id();
  rec.anchor = problem.anchor;
  rec.origin = origin;
  rec.baseline = baseline;
  rec.config = config;
  rec.config_hash = config.hash();
  rec.record_seed = config.seed;

  Adam adam(dim, AdamSettings{config.learning_rate, config.beta1, config.beta2,
                              config.adam_epsilon});
  std::vector<double> z = std::move(start);
  std::vector<double> best = z;
  double best_total = INFINITY;

  for (int it = 0; it <= config.iterations; ++it) {
    Tape tape;
    Var zv = tape.leaf(z);
    Var ov = tape.constant(origin);
    LossParts parts;
    std::vector<std::vector<double>> grad;
    try {
      TotalLoss loss = total_loss(tape, problem, zv, ov, config, proxy);
      parts = loss.values();
      if (it < config.iterations && parts.total >= config.early_stop) {
        const Var wrt[1] = {zv};
        grad = tape.backward(loss.total, wrt);
      }
    } catch (const Error& e) {
      fail(e.code(), "fingerprint optimization failed at iteration " + std::to_string(it) + ": " +
                         e.what());
    }
    require(std::isfinite(parts.total), ErrorCode::NonFinite,
            "non-finite loss at iteration " + std::to_string(it));
    rec.trace.push_back(parts);
    if (parts.total < best_total) {
      best_total = parts.total;
      best = z;
      rec.best_iteration = it;
    }
    if (grad.empty()) break;  // iteration budget spent or early stop
    adam.step(z, grad[0]);
    rec.iterations_run = it + 1;
  }

  rec.noise = std::move(best);
  rec.target_bit_accuracy = bit_accuracy_of(problem, rec.noise);
  return rec;
}

FingerprintRecord synthesize(const FingerprintProblem& problem, const OptimConfig& config) {
  const auto x0 = problem.codec.encode(problem.anchor.watermarked);
  auto origin = invert(problem.model, x0, reversed(problem.grid));
  auto start = origin;
  return optimize_noise(problem, config, std::move(start), std::move(origin), false);
}

FingerprintRecord synthesize_random_baseline(const FingerprintProblem& problem,
                                             const OptimConfig& config) {
  Rng rng(derive_seed(config.seed, "baseline-init"));
  auto origin = rng.normal_vector(problem.model.dim());
  auto start = origin;
  return optimize_noise(problem, config, std::move(start), std::move(origin), true);
}

}  // namespace trajprint
