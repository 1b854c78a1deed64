#pragma once

// Experiment orchestration shared by the CLI and the acceptance suite: the
// model zoo, anchors, record sets, cross-model matrices, ablations, attack
// tables, sweeps and the markdown summary.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajprint/attacks.hpp"
#include "trajprint/diffusion.hpp"
#include "trajprint/fingerprint.hpp"
#include "trajprint/verify.hpp"
#include "trajprint/watermark.hpp"

namespace trajprint {

struct ZooMember {
  std::string name;
  ModelKind kind = ModelKind::AnalyticGmm;
  std::size_t components = 4;
  double spread = 5.0;
  double variance = 25.0;
  // MLP training
  int train_steps = 2000;
  std::vector<std::size_t> hidden{48, 48};
  double train_learning_rate = 2e-3;
  int batch = 32;

  nlohmann::json to_json() const;
  static ZooMember from_json(const nlohmann::json& j);
};

struct KeySpec {
  std::size_t bits = 16;
  double strength = 0.5;
  double temperature = 8.0;
};

struct ExperimentConfig {
  std::uint64_t master_seed = 20240611;
  int schedule_steps = 25;
  std::size_t dim = 16;
  std::vector<ZooMember> zoo;
  KeySpec key;
  OptimConfig optim;
  std::vector<AttackSpec> attacks;
  double alpha = 1e-3;
  Tail tail = Tail::Upper;
  std::size_t records = 10;
  std::vector<int> sweep_steps{10, 25, 50};
  std::vector<std::size_t> sweep_payload{8, 12, 16};
  double stochastic_eta = 0.5;
  std::string output_dir = "run";

  /// 3 mixture models and 2 MLPs, the robustness attack list, 10 records.
  static ExperimentConfig defaults();
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing fields take their defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical JSON; independent of field order in the file.
  std::string hash() const;
};

/// Per-purpose seeds derived from the master seed.
std::uint64_t model_seed(const ExperimentConfig& config, std::size_t member);
std::uint64_t key_seed(const ExperimentConfig& config);
std::uint64_t anchor_seed(const ExperimentConfig& config, std::size_t record);
std::uint64_t synthesis_seed(const ExperimentConfig& config, std::size_t member,
                             std::size_t record);

/// Worker count from TRAJPRINT_WORKERS (default 1).
std::size_t worker_count();

DenoiserModel build_member(const ExperimentConfig& config, std::size_t member);
std::vector<DenoiserModel> build_zoo(const ExperimentConfig& config, std::size_t workers);
WatermarkKey build_key(const ExperimentConfig& config);
WatermarkKey build_key(const ExperimentConfig& config, std::size_t bits);
/// Anchor r uses carrier and message drawn from anchor_seed(config, r); the
/// same anchors serve every model, like a shared verification image set.
Anchor build_anchor(const ExperimentConfig& config, const WatermarkKey& key, std::size_t record);
std::vector<Anchor> build_anchors(const ExperimentConfig& config, const WatermarkKey& key,
                                  std::size_t count);

enum class Variant { TrajPrint, RandomBaseline, NoReconstruction, NoRegularization, NoAnchoring };
std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);
OptimConfig variant_config(const OptimConfig& base, Variant v);

std::vector<FingerprintRecord> synthesize_set(const ExperimentConfig& config,
                                              const DenoiserModel& model, std::size_t member,
                                              const WatermarkKey& key,
                                              std::span<const Anchor> anchors, Variant variant,
                                              std::size_t workers);

struct MatrixSummary {
  std::size_t models = 0;
  double diagonal_mean = 0.0;
  double diagonal_min = 0.0;
  double off_diagonal_mean = 0.0;
  double off_diagonal_max = 0.0;
  std::size_t diagonal_infringing = 0;
  std::size_t off_diagonal_cells = 0;
  std::size_t off_diagonal_not_proven = 0;
  /// Off-diagonal cells with mean BA in [0.40, 0.65] and p > alpha.
  std::size_t off_diagonal_in_band = 0;

  nlohmann::json to_json() const;
};
MatrixSummary summarize(const CrossMatrix& matrix);

struct MatrixRun {
  std::vector<DenoiserModel> models;
  std::vector<std::vector<FingerprintRecord>> records;  // per model, column order
  CrossMatrix matrix;
  MatrixSummary summary;
};

MatrixRun run_matrix(const ExperimentConfig& config, const std::vector<DenoiserModel>& zoo,
                     const WatermarkKey& key, Variant variant, std::size_t workers);

/// Table-4 analog: one matrix per variant, summarized.
nlohmann::json run_ablation(const ExperimentConfig& config, const std::vector<DenoiserModel>& zoo,
                            const WatermarkKey& key, std::size_t workers);

/// Table-2 analog: every configured attack on every model, verified with that
/// model's own records. Unsupported combinations are listed, not fatal.
nlohmann::json run_attacks(const ExperimentConfig& config, const std::vector<DenoiserModel>& zoo,
                           const std::vector<std::vector<FingerprintRecord>>& records,
                           const WatermarkKey& key, std::size_t workers);

/// Verification with samplers of other step counts (fingerprints unchanged).
nlohmann::json sweep_steps(const ExperimentConfig& config, const std::vector<DenoiserModel>& zoo,
                           const std::vector<std::vector<FingerprintRecord>>& records,
                           const WatermarkKey& key, std::size_t workers);
/// Codec exactness and diagonal BA for each payload length.
nlohmann::json sweep_payload(const ExperimentConfig& config,
                             const std::vector<DenoiserModel>& zoo, std::size_t workers);
/// Coarser deterministic grid and a stochastic (eta > 0) sampler control.
nlohmann::json sweep_sampler(const ExperimentConfig& config,
                             const std::vector<DenoiserModel>& zoo,
                             const std::vector<std::vector<FingerprintRecord>>& records,
                             const WatermarkKey& key, std::size_t workers);

/// Writes config.json, models/, records/, matrix.json and matrix.csv under
/// `dir`. Output bytes depend only on the config and the build.
void write_matrix_run(const std::filesystem::path& dir, const ExperimentConfig& config,
                      const MatrixRun& run);

/// Markdown summary of every report found under `dir`. Unreadable files are
/// listed in `problems` and skipped.
std::string render_summary(const std::filesystem::path& dir, std::vector<std::string>& problems);

}  // namespace trajprint
