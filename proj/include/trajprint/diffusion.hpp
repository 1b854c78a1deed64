#pragma once

// Deterministic diffusion: cosine noise schedule, denoisers, the DDIM sampler
// and its inversion.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajprint/autodiff.hpp"
#include "trajprint/random.hpp"

namespace trajprint {

/// Cumulative signal retention alpha_bar[0..T].
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> alpha_bar;

  double at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
  /// Continuous time t / T used by time embeddings.
  double tau(int t) const { return static_cast<double>(t) / steps; }
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMinAlphaBar = 1e-5;

/// alpha_bar_t = cos^2(((t/T + s)/(1 + s)) * pi/2) / (value at t = 0),
/// clipped below at 1e-5. Requires T >= 2.
NoiseSchedule build_schedule(int steps);

/// Descending sampling grid T, ..., 0 visiting `count` equal strides.
std::vector<int> uniform_grid(int schedule_steps, int count);
/// Throws unless `grid` is strictly decreasing, starts at <= T and ends at 0.
void validate_sampling_grid(std::span<const int> grid, int schedule_steps);
/// Throws unless `grid` is strictly increasing, starts at 0 and ends at <= T.
void validate_inversion_grid(std::span<const int> grid, int schedule_steps);
std::vector<int> reversed(std::span<const int> grid);

enum class ModelKind { AnalyticGmm, Mlp };

std::string model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Isotropic Gaussian mixture: weights[K], means[K x D] row-major, variance.
struct GmmParams {
  std::vector<double> weights;
  std::vector<double> means;
  double variance = 0.25;

  std::size_t components() const { return weights.size(); }
  std::size_t dim() const { return weights.empty() ? 0 : means.size() / weights.size(); }
};

void validate_gmm(const GmmParams& params);

/// Seeded mixture: equal weights, means drawn N(0, spread^2 I).
GmmParams random_gmm(std::uint64_t seed, std::size_t dim, std::size_t components, double spread,
                     double variance);

/// Draws x ~ mixture.
std::vector<double> sample_gmm(const GmmParams& params, Rng& rng);

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out
};

/// tanh between layers, linear output F. With v = a_t s^2 + 1 - a_t
/// (s = data_scale), the network sees x / sqrt(v) concatenated with the time
/// embedding (t/T, sin(2 pi t/T), cos(2 pi t/T)) and predicts
/// eps = sqrt(1 - a_t) / v * x - s * sqrt(a_t / v) * F.
struct MlpParams {
  std::vector<DenseLayer> layers;
  double data_scale = 1.0;  // fixed input preconditioning, not trained
};

inline constexpr std::size_t kTimeEmbeddingSize = 3;
std::vector<double> time_embedding(double tau);

/// Noise-prediction network eps(x, t). Immutable; copies share parameters.
class DenoiserModel {
 public:
  static DenoiserModel analytic_gmm(GmmParams params, int schedule_steps,
                                    nlohmann::json provenance = nlohmann::json::object());
  static DenoiserModel mlp(MlpParams params, std::size_t dim, int schedule_steps,
                           nlohmann::json provenance = nlohmann::json::object());

  ModelKind kind() const { return state_->kind; }
  std::size_t dim() const { return state_->dim; }
  const NoiseSchedule& schedule() const { return state_->schedule; }
  /// SHA-256 over kind, dimension, schedule length and every parameter's bits.
  const std::string& model_id() const { return state_->model_id; }
  const nlohmann::json& provenance() const { return state_->provenance; }

  const GmmParams& gmm() const;
  const MlpParams& mlp() const;

  /// Same parameters on a schedule with a different step count. The cosine
  /// schedule and the time embedding depend on t/T only, so this is the same
  /// continuous-time model discretized differently.
  DenoiserModel with_schedule(int schedule_steps) const;

  /// Invertible iff the data manifold is non-degenerate (GMM variance >= 1e-4).
  bool invertible() const;

  /// Flat copy of every parameter in canonical order (used for hashing and
  /// losslessness checks).
  std::vector<double> parameter_vector() const;

  ad::Var predict_noise(ad::Tape& tape, const ad::Var& x, int t) const;
  std::vector<double> predict_noise(std::span<const double> x, int t) const;

 private:
  struct State {
    ModelKind kind = ModelKind::AnalyticGmm;
    std::size_t dim = 0;
    NoiseSchedule schedule;
    GmmParams gmm;
    MlpParams mlp;
    std::string model_id;
    nlohmann::json provenance;
  };

  explicit DenoiserModel(std::shared_ptr<const State> state) : state_(std::move(state)) {}
  void check_input(std::size_t size, int t) const;

  std::shared_ptr<const State> state_;
};

/// MLP forward pass with parameters supplied as tape variables, ordered
/// (weight, bias) per layer. Used by training and by predict_noise.
ad::Var mlp_forward(ad::Tape& tape, std::span<const ad::Var> params, const ad::Var& x, double tau,
                    double alpha_bar, double data_scale);

/// Exact posterior noise expectation E[eps | x_t] of a mixture, on the tape.
ad::Var gmm_predict_noise(ad::Tape& tape, const GmmParams& params, const ad::Var& x,
                          double alpha_bar);

/// The DDIM update for a given noise estimate:
/// sqrt(a_prev) * (x - sqrt(1 - a_t) eps) / sqrt(a_t) + sqrt(1 - a_prev) eps.
std::vector<double> ddim_update(std::span<const double> x, std::span<const double> eps,
                                double alpha_bar_t, double alpha_bar_prev);

/// One deterministic DDIM update from t to t_prev (t > t_prev >= 0).
ad::Var ddim_step(const DenoiserModel& model, ad::Tape& tape, const ad::Var& x, int t, int t_prev);
std::vector<double> ddim_step(const DenoiserModel& model, std::span<const double> x, int t,
                              int t_prev);

/// x_0 = Psi(z) over a descending grid.
std::vector<double> sample(const DenoiserModel& model, std::span<const double> z,
                           std::span<const int> grid);
std::vector<double> sample(const DenoiserModel& model, std::span<const double> z);

/// Records Psi(z) on `tape`. segment_length == 0 records every step directly;
/// otherwise the trajectory is checkpointed in segments of that many steps.
ad::Var sample(const DenoiserModel& model, ad::Tape& tape, const ad::Var& z,
               std::span<const int> grid, std::size_t segment_length,
               ad::CheckpointStats* stats = nullptr);

struct InversionOptions {
  /// Fixed-point refinements of each inverted step; 0 is the plain
  /// previous-eps approximation. Capped at 5.
  int refine_iterations = 0;
};

/// x_T = Psi^{-1}(x_0) over an ascending grid. The noise estimate of each step
/// is taken at the current (earlier) state and time. Not differentiable.
std::vector<double> invert(const DenoiserModel& model, std::span<const double> x0,
                           std::span<const int> ascending_grid, InversionOptions options = {});
std::vector<double> invert(const DenoiserModel& model, std::span<const double> x0,
                           InversionOptions options = {});

/// DDIM with stochasticity eta > 0 and seeded per-step noise (control only).
std::vector<double> sample_stochastic(const DenoiserModel& model, std::span<const double> z,
                                      std::span<const int> grid, double eta, std::uint64_t seed);

/// Fixed orthogonal map standing in for an autoencoder: image = Q latent.
class LatentCodec {
 public:
  static LatentCodec identity(std::size_t dim);
  static LatentCodec orthogonal(std::uint64_t seed, std::size_t dim);

  bool is_identity() const { return matrix_.empty(); }
  std::size_t dim() const { return dim_; }
  std::vector<double> encode(std::span<const double> image) const;
  std::vector<double> decode(std::span<const double> latent) const;
  ad::Var decode(ad::Tape& tape, const ad::Var& latent) const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> matrix_;  // empty for identity
};

struct MlpTrainSpec {
  GmmParams data;
  std::vector<std::size_t> hidden{48, 48};
  int schedule_steps = 25;
  int steps = 2000;
  int batch = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 0;
};

/// Trains eps(x_t, t) with E||eps - eps_theta(x_t, t)||^2 and Adam. Fully
/// determined by the spec; steps == 0 returns the seeded initialization.
DenoiserModel train_mlp_denoiser(const MlpTrainSpec& spec);

/// Continues denoising training of an existing MLP on `data`.
DenoiserModel continue_mlp_training(const DenoiserModel& model, const GmmParams& data, int steps,
                                    int batch, double learning_rate, std::uint64_t seed,
                                    nlohmann::json provenance);

}  // namespace trajprint
