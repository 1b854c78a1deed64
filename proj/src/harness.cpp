#include "trajprint/harness.hpp"

#include <algorithm>
#include <cstdlib>
#include <memory>
#include <optional>
#include <sstream>

#include "trajprint/error.hpp"
#include "trajprint/io.hpp"
#include "trajprint/parallel.hpp"
#include "trajprint/random.hpp"

namespace trajprint {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

json ZooMember::to_json() const {
  json j = {{"name", name},
            {"kind", model_kind_name(kind)},
            {"components", components},
            {"spread", spread},
            {"variance", variance}};
  if (kind == ModelKind::Mlp) {
    j["train_steps"] = train_steps;
    j["hidden"] = hidden;
    j["train_learning_rate"] = train_learning_rate;
    j["batch"] = batch;
  }
  return j;
}

ZooMember ZooMember::from_json(const json& j) {
  ZooMember m;
  m.name = j.at("name").get<std::string>();
  m.kind = parse_model_kind(j.at("kind").get<std::string>());
  m.components = j.value("components", m.components);
  m.spread = j.value("spread", m.spread);
  m.variance = j.value("variance", m.variance);
  m.train_steps = j.value("train_steps", m.train_steps);
  m.hidden = j.value("hidden", m.hidden);
  m.train_learning_rate = j.value("train_learning_rate", m.train_learning_rate);
  m.batch = j.value("batch", m.batch);
  return m;
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  for (const char* name : {"gmm-a", "gmm-b", "gmm-c"}) {
    ZooMember m;
    m.name = name;
    c.zoo.push_back(m);
  }
  for (const char* name : {"mlp-a", "mlp-b"}) {
    ZooMember m;
    m.name = name;
    m.kind = ModelKind::Mlp;
    c.zoo.push_back(m);
  }
  AttackSpec fp16;
  fp16.kind = AttackKind::Quantize;
  fp16.mantissa_bits = 10;
  AttackSpec bf16 = fp16;
  bf16.mantissa_bits = 7;
  AttackSpec prune10;
  prune10.kind = AttackKind::Prune;
  prune10.ratio = 0.1;
  AttackSpec prune20 = prune10;
  prune20.ratio = 0.2;
  AttackSpec finetune;
  finetune.kind = AttackKind::FinetuneProxy;
  finetune.steps = 500;
  finetune.learning_rate = 1e-4;
  finetune.shift_norm = 0.1;
  finetune.seed = 1;
  c.attacks = {fp16, bf16, prune10, prune20, finetune};
  return c;
}

void ExperimentConfig::validate() const {
  require(schedule_steps >= 2, ErrorCode::InvalidArgument, "schedule_steps must be >= 2");
  require(dim >= 2, ErrorCode::InvalidArgument, "dim must be >= 2");
  require(!zoo.empty(), ErrorCode::InvalidArgument, "the model zoo is empty");
  std::vector<std::string> names;
  for (const auto& m : zoo) {
    require(!m.name.empty(), ErrorCode::InvalidArgument, "zoo members need names");
    require(m.components >= 1 && m.variance > 0.0 && m.spread >= 0.0,
            ErrorCode::InvalidArgument, "invalid mixture for zoo member '" + m.name + "'");
    require(m.train_steps >= 0 && m.batch >= 1 && m.train_learning_rate > 0.0,
            ErrorCode::InvalidArgument, "invalid training spec for zoo member '" + m.name + "'");
    names.push_back(m.name);
  }
  std::sort(names.begin(), names.end());
  require(std::adjacent_find(names.begin(), names.end()) == names.end(),
          ErrorCode::InvalidArgument, "zoo member names must be unique");
  require(key.bits >= 1 && key.bits <= dim, ErrorCode::InvalidArgument,
          "key bits must lie in [1, dim]");
  require(key.strength > 0.0 && key.temperature > 0.0, ErrorCode::InvalidArgument,
          "key strength and temperature must be positive");
  optim.validate();
  for (const auto& a : attacks) a.validate();
  require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  require(records >= 2, ErrorCode::InvalidArgument, "at least 2 records per model are needed");
  for (int s : sweep_steps) {
    require(s >= 2, ErrorCode::InvalidArgument, "sweep step counts must be >= 2");
  }
  for (std::size_t b : sweep_payload) {
    require(b >= 1 && b <= dim, ErrorCode::InvalidArgument, "payload sweep bits must lie in [1, dim]");
  }
  require(stochastic_eta >= 0.0, ErrorCode::InvalidArgument, "stochastic eta must be >= 0");
}

json ExperimentConfig::to_json() const {
  json z = json::array();
  for (const auto& m : zoo) z.push_back(m.to_json());
  json a = json::array();
  for (const auto& s : attacks) a.push_back(s.to_json());
  return {{"master_seed", master_seed},
          {"schedule_steps", schedule_steps},
          {"dim", dim},
          {"zoo", z},
          {"key", {{"bits", key.bits}, {"strength", key.strength}, {"temperature", key.temperature}}},
          {"optim", optim.to_json()},
          {"attacks", a},
          {"alpha", alpha},
          {"tail", tail == Tail::Upper ? "upper" : "two-sided"},
          {"records", records},
          {"sweep_steps", sweep_steps},
          {"sweep_payload", sweep_payload},
          {"stochastic_eta", stochastic_eta},
          {"output_dir", output_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    require(j.is_object(), ErrorCode::Parse, "config must be a JSON object");
    ExperimentConfig c = defaults();
    c.master_seed = j.value("master_seed", c.master_seed);
    c.schedule_steps = j.value("schedule_steps", c.schedule_steps);
    c.dim = j.value("dim", c.dim);
    if (j.contains("zoo")) {
      c.zoo.clear();
      for (const auto& m : j.at("zoo")) c.zoo.push_back(ZooMember::from_json(m));
    }
    if (j.contains("key")) {
      const auto& k = j.at("key");
      c.key.bits = k.value("bits", c.key.bits);
      c.key.strength = k.value("strength", c.key.strength);
      c.key.temperature = k.value("temperature", c.key.temperature);
    }
    if (j.contains("optim")) c.optim = OptimConfig::from_json(j.at("optim"));
    if (j.contains("attacks")) {
      c.attacks.clear();
      for (const auto& a : j.at("attacks")) c.attacks.push_back(AttackSpec::from_json(a));
    }
    c.alpha = j.value("alpha", c.alpha);
    const std::string tail = j.value("tail", std::string("upper"));
    require(tail == "upper" || tail == "two-sided", ErrorCode::Parse,
            "tail must be 'upper' or 'two-sided'");
    c.tail = tail == "upper" ? Tail::Upper : Tail::TwoSided;
    c.records = j.value("records", c.records);
    c.sweep_steps = j.value("sweep_steps", c.sweep_steps);
    c.sweep_payload = j.value("sweep_payload", c.sweep_payload);
    c.stochastic_eta = j.value("stochastic_eta", c.stochastic_eta);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed config: ") + e.what());
  }
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_json().dump()); }

std::uint64_t model_seed(const ExperimentConfig& c, std::size_t member) {
  return derive_seed(c.master_seed, "model", member);
}
std::uint64_t key_seed(const ExperimentConfig& c) { return derive_seed(c.master_seed, "key"); }
std::uint64_t anchor_seed(const ExperimentConfig& c, std::size_t record) {
  return derive_seed(c.master_seed, "anchor", record);
}
std::uint64_t synthesis_seed(const ExperimentConfig& c, std::size_t member, std::size_t record) {
  return derive_seed(model_seed(c, member), "synthesis", record);
}

std::size_t worker_count() {
  const char* env = std::getenv("TRAJPRINT_WORKERS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  require(end != env && *end == '\0' && v >= 1, ErrorCode::InvalidArgument,
          std::string("TRAJPRINT_WORKERS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

// ---------------------------------------------------------------- zoo

DenoiserModel build_member(const ExperimentConfig& c, std::size_t member) {
  require(member < c.zoo.size(), ErrorCode::InvalidArgument,
          "zoo index " + std::to_string(member) + " out of range");
  const ZooMember& m = c.zoo[member];
  const std::uint64_t seed = model_seed(c, member);
  if (m.kind == ModelKind::AnalyticGmm) {
    json prov = {{"source", "zoo"}, {"name", m.name}, {"seed", seed},
                 {"spread", m.spread}, {"master_seed", c.master_seed}};
    return DenoiserModel::analytic_gmm(
        random_gmm(derive_seed(seed, "gmm-means"), c.dim, m.components, m.spread, m.variance),
        c.schedule_steps, std::move(prov));
  }
  MlpTrainSpec spec;
  spec.data = random_gmm(derive_seed(seed, "mlp-data"), c.dim, m.components, m.spread, m.variance);
  spec.hidden = m.hidden;
  spec.schedule_steps = c.schedule_steps;
  spec.steps = m.train_steps;
  spec.batch = m.batch;
  spec.learning_rate = m.train_learning_rate;
  spec.seed = seed;
  const DenoiserModel trained = train_mlp_denoiser(spec);
  json prov = trained.provenance();
  prov["name"] = m.name;
  prov["master_seed"] = c.master_seed;
  return DenoiserModel::mlp(trained.mlp(), c.dim, c.schedule_steps, std::move(prov));
}

std::vector<DenoiserModel> build_zoo(const ExperimentConfig& c, std::size_t workers) {
  std::vector<std::optional<DenoiserModel>> slots(c.zoo.size());
  parallel_for(c.zoo.size(), workers, [&](std::size_t i) { slots[i] = build_member(c, i); });
  std::vector<DenoiserModel> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

WatermarkKey build_key(const ExperimentConfig& c) { return build_key(c, c.key.bits); }

WatermarkKey build_key(const ExperimentConfig& c, std::size_t bits) {
  return make_key(key_seed(c), bits, c.dim, c.key.strength, c.key.temperature);
}

Anchor build_anchor(const ExperimentConfig& c, const WatermarkKey& key, std::size_t record) {
  const std::uint64_t seed = anchor_seed(c, record);
  Rng rng(derive_seed(seed, "carrier"));
  const auto carrier = rng.normal_vector(key.dim);
  return make_anchor(carrier, random_message(derive_seed(seed, "message"), key.bits), key);
}

std::vector<Anchor> build_anchors(const ExperimentConfig& c, const WatermarkKey& key,
                                  std::size_t count) {
  std::vector<Anchor> out;
  for (std::size_t r = 0; r < count; ++r) out.push_back(build_anchor(c, key, r));
  return out;
}

// ---------------------------------------------------------------- synthesis

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::TrajPrint: return "trajprint";
    case Variant::RandomBaseline: return "random-baseline";
    case Variant::NoReconstruction: return "no-reconstruction";
    case Variant::NoRegularization: return "no-regularization";
    case Variant::NoAnchoring: return "no-anchoring";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  for (Variant v : {Variant::TrajPrint, Variant::RandomBaseline, Variant::NoReconstruction,
                    Variant::NoRegularization, Variant::NoAnchoring}) {
    if (variant_name(v) == name) return v;
  }
  fail(ErrorCode::InvalidArgument, "unknown variant '" + name + "'");
}

OptimConfig variant_config(const OptimConfig& base, Variant v) {
  OptimConfig c = base;
  if (v == Variant::NoReconstruction || v == Variant::NoAnchoring) c.lambda_rec = 0.0;
  if (v == Variant::NoRegularization || v == Variant::NoAnchoring) c.lambda_reg = 0.0;
  return c;
}

namespace {

FingerprintRecord synthesize_one(const ExperimentConfig& c, const DenoiserModel& model,
                                 std::size_t member, const WatermarkKey& key,
                                 const Anchor& anchor, std::size_t record, Variant variant) {
  const FingerprintProblem problem(model, key, anchor);
  OptimConfig cfg = variant_config(c.optim, variant);
  cfg.seed = synthesis_seed(c, member, record);
  return variant == Variant::RandomBaseline ? synthesize_random_baseline(problem, cfg)
                                            : synthesize(problem, cfg);
}

}  // namespace

std::vector<FingerprintRecord> synthesize_set(const ExperimentConfig& c,
                                              const DenoiserModel& model, std::size_t member,
                                              const WatermarkKey& key,
                                              std::span<const Anchor> anchors, Variant variant,
                                              std::size_t workers) {
  std::vector<FingerprintRecord> out(anchors.size());
  parallel_for(anchors.size(), workers, [&](std::size_t r) {
    out[r] = synthesize_one(c, model, member, key, anchors[r], r, variant);
  });
  return out;
}

// ---------------------------------------------------------------- matrix

json MatrixSummary::to_json() const {
  return {{"models", models},
          {"diagonal_mean", diagonal_mean},
          {"diagonal_min", diagonal_min},
          {"off_diagonal_mean", off_diagonal_mean},
          {"off_diagonal_max", off_diagonal_max},
          {"diagonal_infringing", diagonal_infringing},
          {"off_diagonal_cells", off_diagonal_cells},
          {"off_diagonal_not_proven", off_diagonal_not_proven},
          {"off_diagonal_in_band", off_diagonal_in_band}};
}

MatrixSummary summarize(const CrossMatrix& m) {
  MatrixSummary s;
  s.models = m.model_ids.size();
  s.diagonal_min = 1.0;
  for (std::size_t r = 0; r < s.models; ++r) {
    for (std::size_t c = 0; c < s.models; ++c) {
      const auto& cell = m.cells[r][c];
      if (r == c) {
        s.diagonal_mean += cell.mean;
        s.diagonal_min = std::min(s.diagonal_min, cell.mean);
        if (cell.verdict == Verdict::Infringing) ++s.diagonal_infringing;
      } else {
        ++s.off_diagonal_cells;
        s.off_diagonal_mean += cell.mean;
        s.off_diagonal_max = std::max(s.off_diagonal_max, cell.mean);
        if (cell.verdict == Verdict::NotProven) ++s.off_diagonal_not_proven;
        if (cell.mean >= 0.40 && cell.mean <= 0.65 && cell.p > cell.alpha) ++s.off_diagonal_in_band;
      }
    }
  }
  if (s.models > 0) s.diagonal_mean /= static_cast<double>(s.models);
  if (s.off_diagonal_cells > 0) s.off_diagonal_mean /= static_cast<double>(s.off_diagonal_cells);
  return s;
}

MatrixRun run_matrix(const ExperimentConfig& c, const std::vector<DenoiserModel>& zoo,
                     const WatermarkKey& key, Variant variant, std::size_t workers) {
  require(zoo.size() == c.zoo.size(), ErrorCode::InvalidArgument,
          "zoo does not match the config");
  MatrixRun run;
  run.models = zoo;
  const auto anchors = build_anchors(c, key, c.records);
  // Parallelize over (model, record) pairs so small zoos still fill the pool.
  const std::size_t m = zoo.size();
  const std::size_t n = anchors.size();
  run.records.assign(m, std::vector<FingerprintRecord>(n));
  parallel_for(m * n, workers, [&](std::size_t i) {
    const std::size_t member = i / n;
    const std::size_t r = i % n;
    run.records[member][r] = synthesize_one(c, zoo[member], member, key, anchors[r], r, variant);
  });
  run.matrix = cross_matrix(zoo, run.records, key, c.alpha, c.tail, workers);
  run.summary = summarize(run.matrix);
  return run;
}

json run_ablation(const ExperimentConfig& c, const std::vector<DenoiserModel>& zoo,
                  const WatermarkKey& key, std::size_t workers) {
  json rows = json::array();
  for (Variant v : {Variant::TrajPrint, Variant::NoReconstruction, Variant::NoRegularization,
                    Variant::NoAnchoring, Variant::RandomBaseline}) {
    const MatrixRun run = run_matrix(c, zoo, key, v, workers);
    const OptimConfig cfg = variant_config(c.optim, v);
    rows.push_back({{"variant", variant_name(v)},
                    {"lambda_rec", cfg.lambda_rec},
                    {"lambda_reg", cfg.lambda_reg},
                    {"random_init", v == Variant::RandomBaseline},
                    {"summary", run.summary.to_json()},
                    {"matrix", run.matrix.to_json()}});
  }
  return {{"format", "trajprint-ablation"},
          {"config_hash", c.hash()},
          {"master_seed", c.master_seed},
          {"rows", rows}};
}

namespace {

std::vector<std::string> zoo_names(const ExperimentConfig& c) {
  std::vector<std::string> names;
  for (const auto& m : c.zoo) names.push_back(m.name);
  return names;
}

}  // namespace

json run_attacks(const ExperimentConfig& c, const std::vector<DenoiserModel>& zoo,
                 const std::vector<std::vector<FingerprintRecord>>& records,
                 const WatermarkKey& key, std::size_t workers) {
  require(records.size() == zoo.size(), ErrorCode::InvalidArgument,
          "one record set per model is needed");
  const std::size_t m = zoo.size();
  const std::size_t total = c.attacks.size() * m;
  std::vector<json> rows(total);
  parallel_for(total, workers, [&](std::size_t i) {
    const AttackSpec& spec = c.attacks[i / m];
    const std::size_t member = i % m;
    json row = {{"attack", spec.label()},
                {"spec", spec.to_json()},
                {"model", c.zoo[member].name},
                {"source_model_id", zoo[member].model_id()}};
    if (spec.kind == AttackKind::Prune && zoo[member].kind() != ModelKind::Mlp) {
      row["status"] = "unsupported";
      rows[i] = std::move(row);
      return;
    }
    const DenoiserModel attacked = apply_attack(zoo[member], spec);
    const auto rep = verify(black_box(attacked), attacked.model_id(), records[member], key,
                            c.alpha, c.tail);
    row["status"] = "ok";
    row["attacked_model_id"] = attacked.model_id();
    row["report"] = rep.to_json();
    rows[i] = std::move(row);
  });
  json clean = json::array();
  for (std::size_t member = 0; member < m; ++member) {
    const auto rep = verify(black_box(zoo[member]), zoo[member].model_id(), records[member], key,
                            c.alpha, c.tail);
    clean.push_back({{"model", c.zoo[member].name}, {"report", rep.to_json()}});
  }
  return {{"format", "trajprint-attacks"},
          {"config_hash", c.hash()},
          {"master_seed", c.master_seed},
          {"models", zoo_names(c)},
          {"clean", clean},
          {"rows", rows}};
}

json sweep_steps(const ExperimentConfig& c, const std::vector<DenoiserModel>& zoo,
                 const std::vector<std::vector<FingerprintRecord>>& records,
                 const WatermarkKey& key, std::size_t workers) {
  const std::size_t m = zoo.size();
  const std::size_t total = c.sweep_steps.size() * m;
  std::vector<json> cells(total);
  parallel_for(total, workers, [&](std::size_t i) {
    const int steps = c.sweep_steps[i / m];
    const std::size_t member = i % m;
    const DenoiserModel suspect = zoo[member].with_schedule(steps);
    const auto rep = verify(black_box(suspect), suspect.model_id(), records[member], key,
                            c.alpha, c.tail);
    cells[i] = {{"steps", steps}, {"model", c.zoo[member].name}, {"report", rep.to_json()}};
  });
  json rows = json::array();
  for (std::size_t s = 0; s < c.sweep_steps.size(); ++s) {
    double mean = 0.0;
    json per_model = json::array();
    for (std::size_t member = 0; member < m; ++member) {
      const json& cell = cells[s * m + member];
      mean += cell.at("report").at("mean").get<double>() / static_cast<double>(m);
      per_model.push_back(cell);
    }
    rows.push_back({{"steps", c.sweep_steps[s]}, {"mean_bit_accuracy", mean}, {"cells", per_model}});
  }
  return {{"format", "trajprint-sweep"},
          {"sweep", "steps"},
          {"fingerprint_steps", c.schedule_steps},
          {"config_hash", c.hash()},
          {"master_seed", c.master_seed},
          {"rows", rows}};
}

json sweep_payload(const ExperimentConfig& c, const std::vector<DenoiserModel>& zoo,
                   std::size_t workers) {
  json rows = json::array();
  for (std::size_t bits : c.sweep_payload) {
    const WatermarkKey key = build_key(c, bits);
    // Codec exactness on fresh random pairs.
    Rng rng(derive_seed(c.master_seed, "payload-codec", bits));
    std::size_t exact = 0;
    const std::size_t trials = 200;
    for (std::size_t t = 0; t < trials; ++t) {
      const auto carrier = rng.normal_vector(c.dim);
      const Message msg{rng.bits(bits)};
      if (decode_hard(embed(carrier, msg, key), key) == msg) ++exact;
    }
    const auto anchors = build_anchors(c, key, c.records);
    double diag = 0.0;
    json per_model = json::array();
    for (std::size_t member = 0; member < zoo.size(); ++member) {
      const auto recs =
          synthesize_set(c, zoo[member], member, key, anchors, Variant::TrajPrint, workers);
      const auto rep = verify(black_box(zoo[member]), zoo[member].model_id(), recs, key, c.alpha,
                              c.tail);
      diag += rep.mean / static_cast<double>(zoo.size());
      per_model.push_back({{"model", c.zoo[member].name}, {"report", rep.to_json()}});
    }
    rows.push_back({{"bits", bits},
                    {"codec_trials", trials},
                    {"codec_exact", exact},
                    {"diagonal_mean", diag},
                    {"cells", per_model}});
  }
  return {{"format", "trajprint-sweep"},
          {"sweep", "payload"},
          {"config_hash", c.hash()},
          {"master_seed", c.master_seed},
          {"rows", rows}};
}

json sweep_sampler(const ExperimentConfig& c, const std::vector<DenoiserModel>& zoo,
                   const std::vector<std::vector<FingerprintRecord>>& records,
                   const WatermarkKey& key, std::size_t workers) {
  // Largest proper divisor of T gives the coarsest nontrivial uniform grid.
  int coarse = 1;
  for (int d = c.schedule_steps / 2; d >= 2; --d) {
    if (c.schedule_steps % d == 0) {
      coarse = d;
      break;
    }
  }
  if (coarse == 1) coarse = c.schedule_steps;
  const auto coarse_grid = uniform_grid(c.schedule_steps, coarse);
  const auto full_grid = uniform_grid(c.schedule_steps, c.schedule_steps);

  const std::size_t m = zoo.size();
  struct Setting {
    std::string name;
    int kind;  // 0 deterministic full, 1 deterministic coarse, 2 stochastic
  };
  const std::vector<Setting> settings = {
      {"ddim-" + std::to_string(c.schedule_steps), 0},
      {"ddim-" + std::to_string(coarse), 1},
      {"stochastic-eta-" + json(c.stochastic_eta).dump(), 2}};
  std::vector<json> cells(settings.size() * m);
  parallel_for(cells.size(), workers, [&](std::size_t i) {
    const Setting& s = settings[i / m];
    const std::size_t member = i % m;
    const DenoiserModel& model = zoo[member];
    SamplingClosure closure;
    if (s.kind == 0) {
      closure = [&](std::span<const double> z) { return sample(model, z, full_grid); };
    } else if (s.kind == 1) {
      closure = [&](std::span<const double> z) { return sample(model, z, coarse_grid); };
    } else {
      auto calls = std::make_shared<std::uint64_t>(0);
      const std::uint64_t seed = derive_seed(model_seed(c, member), "stochastic-sampler");
      closure = [&, calls, seed](std::span<const double> z) {
        return sample_stochastic(model, z, full_grid, c.stochastic_eta,
                                 derive_seed(seed, "call", (*calls)++));
      };
    }
    const auto rep = verify(closure, model.model_id(), records[member], key, c.alpha, c.tail);
    cells[i] = {{"sampler", s.name}, {"model", c.zoo[member].name}, {"report", rep.to_json()}};
  });
  json rows = json::array();
  for (std::size_t s = 0; s < settings.size(); ++s) {
    double mean = 0.0;
    json per_model = json::array();
    for (std::size_t member = 0; member < m; ++member) {
      mean += cells[s * m + member].at("report").at("mean").get<double>() / static_cast<double>(m);
      per_model.push_back(cells[s * m + member]);
    }
    rows.push_back(
        {{"sampler", settings[s].name}, {"mean_bit_accuracy", mean}, {"cells", per_model}});
  }
  return {{"format", "trajprint-sweep"},
          {"sweep", "sampler"},
          {"config_hash", c.hash()},
          {"master_seed", c.master_seed},
          {"rows", rows}};
}

void write_matrix_run(const fs::path& dir, const ExperimentConfig& c, const MatrixRun& run) {
  json cfg = c.to_json();
  cfg["config_hash"] = c.hash();
  write_json_file(dir / "config.json", cfg);
  const auto names = zoo_names(c);
  for (std::size_t i = 0; i < run.models.size(); ++i) {
    write_json_file(dir / "models" / (names[i] + ".json"), model_to_json(run.models[i]));
    json recs = records_to_json(run.records[i]);
    recs["model"] = names[i];
    recs["config_hash"] = c.hash();
    write_json_file(dir / "records" / (names[i] + ".json"), recs);
  }
  json m = run.matrix.to_json();
  m["format"] = "trajprint-matrix";
  m["model_names"] = names;
  m["config_hash"] = c.hash();
  m["master_seed"] = c.master_seed;
  m["summary"] = run.summary.to_json();
  write_json_file(dir / "matrix.json", m);

  // CSV keyed by model names; the JSON keeps the full ids.
  CrossMatrix named = run.matrix;
  named.model_ids = names;
  write_text_file(dir / "matrix.csv", named.to_csv());
}

// ---------------------------------------------------------------- summary

namespace {

std::string num(double v) { return json(v).dump(); }

std::string rel(const fs::path& file, const fs::path& root) {
  return fs::relative(file, root).generic_string();
}

void render_matrix(std::ostringstream& out, const json& j, const std::string& ref) {
  const auto names = j.value("model_names", j.at("model_ids").get<std::vector<std::string>>());
  out << "### Cross-model verification (" << ref << ")\n\n"
      << "Rows are verifying models, columns are fingerprint sources. Cells show mean bit "
         "accuracy, p-value and verdict.\n\n| verifier \\ source |";
  for (const auto& n : names) out << ' ' << n << " |";
  out << "\n|---|";
  for (std::size_t i = 0; i < names.size(); ++i) out << "---|";
  out << '\n';
  const auto& cells = j.at("cells");
  for (std::size_t r = 0; r < names.size(); ++r) {
    out << "| " << names[r] << " |";
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto& cell = cells.at(r).at(c);
      out << ' ' << num(cell.at("mean").get<double>()) << " (p=" << num(cell.at("p").get<double>())
          << ", " << cell.at("verdict").get<std::string>() << ") |";
    }
    out << '\n';
  }
  if (j.contains("summary")) {
    const auto& s = j.at("summary");
    out << "\nDiagonal mean BA " << num(s.at("diagonal_mean").get<double>()) << ", "
        << s.at("diagonal_infringing").get<std::size_t>() << "/" << names.size()
        << " diagonal cells infringing; off-diagonal mean BA "
        << num(s.at("off_diagonal_mean").get<double>()) << ", "
        << s.at("off_diagonal_not_proven").get<std::size_t>() << "/"
        << s.at("off_diagonal_cells").get<std::size_t>() << " off-diagonal cells not proven ("
        << ref << "#summary).\n";
  }
  out << '\n';
}

void render_attacks(std::ostringstream& out, const json& j, const std::string& ref) {
  out << "### Robustness (" << ref << ")\n\n| attack | model | mean BA | p | verdict | cell |\n"
      << "|---|---|---|---|---|---|\n";
  const auto& clean = j.at("clean");
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& r = clean[i].at("report");
    out << "| none | " << clean[i].at("model").get<std::string>() << " | "
        << num(r.at("mean").get<double>()) << " | " << num(r.at("p").get<double>()) << " | "
        << r.at("verdict").get<std::string>() << " | clean[" << i << "] |\n";
  }
  const auto& rows = j.at("rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    out << "| " << row.at("attack").get<std::string>() << " | "
        << row.at("model").get<std::string>() << " | ";
    if (row.at("status").get<std::string>() != "ok") {
      out << "n/a | n/a | " << row.at("status").get<std::string>() << " | rows[" << i << "] |\n";
      continue;
    }
    const auto& r = row.at("report");
    out << num(r.at("mean").get<double>()) << " | " << num(r.at("p").get<double>()) << " | "
        << r.at("verdict").get<std::string>() << " | rows[" << i << "] |\n";
  }
  out << '\n';
}

void render_ablation(std::ostringstream& out, const json& j, const std::string& ref) {
  out << "### Ablation (" << ref << ")\n\n"
      << "| variant | lambda_rec | lambda_reg | diagonal mean BA | off-diagonal mean BA | "
         "off-diagonal not proven | cell |\n|---|---|---|---|---|---|---|\n";
  const auto& rows = j.at("rows");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const auto& s = row.at("summary");
    out << "| " << row.at("variant").get<std::string>() << " | "
        << num(row.at("lambda_rec").get<double>()) << " | "
        << num(row.at("lambda_reg").get<double>()) << " | "
        << num(s.at("diagonal_mean").get<double>()) << " | "
        << num(s.at("off_diagonal_mean").get<double>()) << " | "
        << s.at("off_diagonal_not_proven").get<std::size_t>() << "/"
        << s.at("off_diagonal_cells").get<std::size_t>() << " | rows[" << i << "].summary |\n";
  }
  out << '\n';
}

void render_sweep(std::ostringstream& out, const json& j, const std::string& ref) {
  const std::string kind = j.at("sweep").get<std::string>();
  const auto& rows = j.at("rows");
  if (kind == "payload") {
    out << "### Payload sweep (" << ref << ")\n\n| bits | codec exact | diagonal mean BA | cell |\n"
        << "|---|---|---|---|\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      out << "| " << r.at("bits").get<std::size_t>() << " | "
          << r.at("codec_exact").get<std::size_t>() << "/"
          << r.at("codec_trials").get<std::size_t>() << " | "
          << num(r.at("diagonal_mean").get<double>()) << " | rows[" << i << "] |\n";
    }
  } else {
    const std::string key = kind == "steps" ? "steps" : "sampler";
    out << "### " << (kind == "steps" ? "Sampling-steps" : "Sampler") << " sweep (" << ref
        << ")\n\n| " << key << " | diagonal mean BA | cell |\n|---|---|---|\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      const auto& label = r.at(key);
      out << "| " << (label.is_string() ? label.get<std::string>() : label.dump()) << " | "
          << num(r.at("mean_bit_accuracy").get<double>()) << " | rows[" << i << "] |\n";
    }
  }
  out << '\n';
}

}  // namespace

std::string render_summary(const fs::path& dir, std::vector<std::string>& problems) {
  std::vector<fs::path> files;
  std::error_code ec;
  if (fs::is_directory(dir, ec)) {
    for (auto it = fs::recursive_directory_iterator(dir, ec);
         !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
      if (it->is_regular_file() && it->path().extension() == ".json") files.push_back(it->path());
    }
  } else {
    problems.push_back(dir.string() + ": not a directory");
  }
  std::sort(files.begin(), files.end());

  std::ostringstream matrices, attacks, ablations, sweeps, verifications;
  std::size_t experiments = 0;
  std::size_t verify_rows = 0;
  for (const auto& file : files) {
    const std::string ref = rel(file, dir);
    json j;
    try {
      j = read_json_file(file);
    } catch (const Error& e) {
      problems.push_back(ref + ": " + e.what());
      continue;
    }
    const std::string format = j.is_object() ? j.value("format", std::string()) : std::string();
    try {
      if (format == "trajprint-matrix") {
        render_matrix(matrices, j, ref);
      } else if (format == "trajprint-attacks") {
        render_attacks(attacks, j, ref);
      } else if (format == "trajprint-ablation") {
        render_ablation(ablations, j, ref);
      } else if (format == "trajprint-sweep") {
        render_sweep(sweeps, j, ref);
      } else if (format == "trajprint-verification") {
        if (verify_rows++ == 0) {
          verifications << "| report | suspect | N | mean BA | std | t | p | alpha | verdict |\n"
                        << "|---|---|---|---|---|---|---|---|---|\n";
        }
        verifications << "| " << ref << " | " << j.value("suspect_name", j.at("suspect_id").get<std::string>())
                      << " | " << j.at("n").get<std::size_t>() << " | "
                      << num(j.at("mean").get<double>()) << " | "
                      << num(j.at("stddev").get<double>()) << " | " << j.at("t").dump() << " | "
                      << num(j.at("p").get<double>()) << " | " << num(j.at("alpha").get<double>())
                      << " | " << j.at("verdict").get<std::string>() << " |\n";
      } else {
        continue;
      }
      ++experiments;
    } catch (const std::exception& e) {
      problems.push_back(ref + ": " + e.what());
    }
  }

  std::ostringstream out;
  out << "# Run summary\n\nDirectory: " << dir.generic_string() << "\n\nExperiments: "
      << experiments << "\n\n";
  if (!matrices.str().empty()) out << "## Fingerprint matrices\n\n" << matrices.str();
  if (!attacks.str().empty()) out << "## Robustness\n\n" << attacks.str();
  if (!ablations.str().empty()) out << "## Ablations\n\n" << ablations.str();
  if (!sweeps.str().empty()) out << "## Sweeps\n\n" << sweeps.str();
  if (verify_rows > 0) out << "## Verifications\n\n" << verifications.str() << '\n';
  if (!problems.empty()) {
    out << "## Problems\n\n";
    for (const auto& p : problems) out << "- " << p << '\n';
    out << '\n';
  }
  return out.str();
}

}  // namespace trajprint
