// trajprint command-line driver. Every subcommand reads and writes the JSON
// formats in trajprint/io.hpp; errors go to stderr as one JSON object and the
// exit status is the error code (64 for usage errors).

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "trajprint/attacks.hpp"
#include "trajprint/diffusion.hpp"
#include "trajprint/error.hpp"
#include "trajprint/fingerprint.hpp"
#include "trajprint/harness.hpp"
#include "trajprint/io.hpp"
#include "trajprint/verify.hpp"
#include "trajprint/watermark.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace trajprint;

namespace {

constexpr int kUsageExit = 64;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string log_path;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "experiment config (JSON); defaults if omitted");
  cmd->add_option("--seed", c.seed, "override the config master seed");
  cmd->add_option("--log", c.log_path, "append timestamped progress lines to this file");
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig config = c.config_path.empty()
                                ? ExperimentConfig::defaults()
                                : ExperimentConfig::from_json(read_json_file(c.config_path));
  if (c.seed) config.master_seed = *c.seed;
  config.validate();
  return config;
}

// Sidecar log: the only place wall-clock time appears.
class Log {
 public:
  explicit Log(const std::string& path) {
    if (path.empty()) return;
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    out_.open(p, std::ios::app);
  }
  void operator()(const std::string& line) {
    if (!out_) return;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << line << std::endl;
  }

 private:
  std::ofstream out_;
};

json stamp(json doc, const ExperimentConfig& config) {
  doc["config_hash"] = config.hash();
  doc["master_seed"] = config.master_seed;
  return doc;
}

std::vector<double> read_vector(const std::string& path) {
  const json j = read_json_file(path);
  try {
    if (j.is_array()) return j.get<std::vector<double>>();
    if (j.value("format", std::string()) == "trajprint-anchor") {
      return j.at("watermarked").get<std::vector<double>>();
    }
    if (j.contains("x0")) return j.at("x0").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "'" + path + "': " + e.what());
  }
  fail(ErrorCode::Parse, "'" + path + "': expected an array, an anchor or {\"x0\": [...]}");
}

// Zoo position of a model built from this config, matched by provenance name.
std::size_t member_index(const ExperimentConfig& config, const DenoiserModel& model) {
  const std::string name = model.provenance().value("name", std::string());
  for (std::size_t i = 0; i < config.zoo.size(); ++i) {
    if (config.zoo[i].name == name) return i;
  }
  return 0;
}

std::string member_name(const DenoiserModel& model) {
  return model.provenance().value("name", model.model_id().substr(0, 12));
}

// Uses <dir>/records/<name>.json when a matrix run left matching records
// there, otherwise synthesizes them.
std::vector<std::vector<FingerprintRecord>> zoo_records(const ExperimentConfig& config,
                                                        const std::vector<DenoiserModel>& zoo,
                                                        const WatermarkKey& key,
                                                        const fs::path& dir, std::size_t workers,
                                                        Log& log) {
  const auto anchors = build_anchors(config, key, config.records);
  std::vector<std::vector<FingerprintRecord>> out;
  for (std::size_t i = 0; i < zoo.size(); ++i) {
    const fs::path cached = dir / "records" / (config.zoo[i].name + ".json");
    if (fs::exists(cached)) {
      auto recs = records_from_json(read_json_file(cached));
      const bool usable = recs.size() == config.records &&
                          std::all_of(recs.begin(), recs.end(), [&](const auto& r) {
                            return r.model_id == zoo[i].model_id() &&
                                   r.anchor.key_seed == key.seed && r.anchor.message.size() == key.bits;
                          });
      if (usable) {
        log("reusing records for " + config.zoo[i].name);
        out.push_back(std::move(recs));
        continue;
      }
    }
    log("synthesizing records for " + config.zoo[i].name);
    out.push_back(synthesize_set(config, zoo[i], i, key, anchors, Variant::TrajPrint, workers));
  }
  return out;
}

void emit(const std::string& out_path, const json& doc) {
  if (out_path.empty() || out_path == "-") {
    std::cout << doc.dump(2) << '\n';
  } else {
    write_json_file(out_path, doc);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory-anchored fingerprinting of toy diffusion models"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // make-model
  Common mm_common;
  std::string mm_member, mm_kind, mm_out;
  std::optional<std::size_t> mm_components;
  std::optional<double> mm_spread, mm_variance;
  std::optional<int> mm_train_steps;
  auto* mm = app.add_subcommand("make-model", "build one zoo model (mixture or trained MLP)");
  add_common(mm, mm_common);
  mm->add_option("--member", mm_member, "zoo member name from the config");
  mm->add_option("--kind", mm_kind, "ad-hoc model kind (gmm or mlp) instead of --member");
  mm->add_option("--components", mm_components, "mixture components");
  mm->add_option("--spread", mm_spread, "std of the mixture means");
  mm->add_option("--variance", mm_variance, "isotropic component variance");
  mm->add_option("--train-steps", mm_train_steps, "MLP training steps");
  mm->add_option("-o,--out", mm_out, "output model file")->required();

  // make-anchor
  Common ma_common;
  std::size_t ma_index = 0;
  std::optional<std::size_t> ma_bits;
  std::string ma_message, ma_out;
  auto* ma = app.add_subcommand("make-anchor", "watermark a seeded carrier with a message");
  add_common(ma, ma_common);
  ma->add_option("--index", ma_index, "record index selecting the anchor seed");
  ma->add_option("--bits", ma_bits, "payload length k (default from config)");
  ma->add_option("--message", ma_message, "explicit message as a 0/1 string");
  ma->add_option("-o,--out", ma_out, "output anchor file")->required();

  // invert
  Common iv_common;
  std::string iv_model, iv_input, iv_out;
  int iv_refine = 0;
  auto* iv = app.add_subcommand("invert", "DDIM inversion x0 -> xT with roundtrip diagnostic");
  add_common(iv, iv_common);
  iv->add_option("-m,--model", iv_model, "model file")->required();
  iv->add_option("-i,--input", iv_input, "x0 as an array, an anchor file or {\"x0\": [...]}")
      ->required();
  iv->add_option("--refine", iv_refine, "fixed-point refinements per step (0-5)");
  iv->add_option("-o,--out", iv_out, "output file (stdout if omitted)");

  // synthesize
  Common sy_common;
  std::string sy_model, sy_anchor, sy_out, sy_variant = "trajprint", sy_traces;
  std::optional<std::size_t> sy_records;
  auto* sy = app.add_subcommand("synthesize", "optimize fingerprint noises for a model");
  add_common(sy, sy_common);
  sy->add_option("-m,--model", sy_model, "model file")->required();
  sy->add_option("--anchor", sy_anchor, "single anchor file (default: config anchors)");
  sy->add_option("--records", sy_records, "number of records (default from config)");
  sy->add_option("--variant", sy_variant,
                 "trajprint, random-baseline, no-reconstruction, no-regularization, no-anchoring");
  sy->add_option("--trace-dir", sy_traces, "write one loss-trace CSV per record here");
  sy->add_option("-o,--out", sy_out, "output record-set file")->required();

  // verify
  Common ve_common;
  std::string ve_model, ve_records, ve_out, ve_name;
  std::optional<double> ve_alpha;
  bool ve_two_sided = false;
  auto* ve = app.add_subcommand("verify", "black-box verification of a suspect model");
  add_common(ve, ve_common);
  ve->add_option("-m,--model", ve_model, "suspect model file")->required();
  ve->add_option("-r,--records", ve_records, "fingerprint record set")->required();
  ve->add_option("--alpha", ve_alpha, "significance level (default from config)");
  ve->add_flag("--two-sided", ve_two_sided, "two-sided t-test instead of upper tail");
  ve->add_option("--name", ve_name, "suspect label for the report");
  ve->add_option("-o,--out", ve_out, "output report file (stdout if omitted)");

  // attack
  Common at_common;
  std::string at_model, at_kind = "quantize", at_out;
  int at_bits = 10, at_steps = 500;
  double at_ratio = 0.1, at_shift = 0.1, at_lr = 1e-4;
  std::uint64_t at_seed = 0;
  bool at_table = false;
  auto* at = app.add_subcommand("attack", "modify a model, or run the robustness table");
  add_common(at, at_common);
  at->add_option("-m,--model", at_model, "model file (single-attack mode)");
  at->add_option("--kind", at_kind, "quantize, prune or finetune");
  at->add_option("--bits", at_bits, "quantize: mantissa bits");
  at->add_option("--ratio", at_ratio, "prune: fraction of weights zeroed");
  at->add_option("--steps", at_steps, "finetune: training steps");
  at->add_option("--shift", at_shift, "finetune: norm of the data shift");
  at->add_option("--lr", at_lr, "finetune: learning rate");
  at->add_option("--attack-seed", at_seed, "finetune: seed");
  at->add_flag("--table", at_table, "run every configured attack on the zoo");
  at->add_option("-o,--out", at_out, "output model file, or run directory with --table")
      ->required();

  // matrix
  Common mx_common;
  std::string mx_out, mx_variant = "trajprint";
  bool mx_full = false;
  auto* mx = app.add_subcommand("matrix", "cross-model verification matrix over the zoo");
  add_common(mx, mx_common);
  mx->add_option("-o,--out", mx_out, "run directory (default: config output_dir)");
  mx->add_option("--variant", mx_variant, "synthesis variant");
  mx->add_flag("--full", mx_full, "20 records per model instead of the config count");

  // ablate
  Common ab_common;
  std::string ab_out;
  auto* ab = app.add_subcommand("ablate", "one matrix per anchoring variant");
  add_common(ab, ab_common);
  ab->add_option("-o,--out", ab_out, "run directory (default: config output_dir)");

  // sweep
  Common sw_common;
  std::string sw_kind, sw_out;
  auto* sw = app.add_subcommand("sweep", "sampling-steps, payload or sampler sweep");
  add_common(sw, sw_common);
  sw->add_option("kind", sw_kind, "steps, payload or sampler")
      ->required()
      ->check(CLI::IsMember({"steps", "payload", "sampler"}));
  sw->add_option("-o,--out", sw_out, "run directory (default: config output_dir)");

  // report
  std::string rp_dir, rp_out;
  auto* rp = app.add_subcommand("report", "markdown summary of a run directory");
  rp->add_option("dir", rp_dir, "run directory")->required();
  rp->add_option("-o,--out", rp_out, "output file (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageExit;
  }

  try {
    const std::size_t workers = worker_count();

    if (*mm) {
      ExperimentConfig config = load_config(mm_common);
      Log log(mm_common.log_path);
      std::size_t index = 0;
      if (!mm_member.empty()) {
        const auto it = std::find_if(config.zoo.begin(), config.zoo.end(),
                                     [&](const ZooMember& m) { return m.name == mm_member; });
        require(it != config.zoo.end(), ErrorCode::InvalidArgument,
                "no zoo member named '" + mm_member + "'");
        index = static_cast<std::size_t>(it - config.zoo.begin());
      } else {
        require(!mm_kind.empty(), ErrorCode::InvalidArgument, "give --member or --kind");
        ZooMember m;
        m.name = "custom";
        m.kind = parse_model_kind(mm_kind == "gmm" ? "analytic_gmm" : mm_kind);
        config.zoo = {m};
      }
      ZooMember& m = config.zoo[index];
      if (mm_components) m.components = *mm_components;
      if (mm_spread) m.spread = *mm_spread;
      if (mm_variance) m.variance = *mm_variance;
      if (mm_train_steps) m.train_steps = *mm_train_steps;
      config.validate();
      log("building " + m.name);
      const DenoiserModel model = build_member(config, index);
      json doc = stamp(model_to_json(model), config);
      doc["model_seed"] = model_seed(config, index);
      write_json_file(mm_out, doc);
      std::cout << model.model_id() << '\n';
    } else if (*ma) {
      const ExperimentConfig config = load_config(ma_common);
      const WatermarkKey key = build_key(config, ma_bits.value_or(config.key.bits));
      Anchor anchor = build_anchor(config, key, ma_index);
      if (!ma_message.empty()) {
        const Message msg = Message::parse(ma_message);
        require(msg.size() == key.bits, ErrorCode::DimensionMismatch,
                "message has " + std::to_string(msg.size()) + " bits, key expects " +
                    std::to_string(key.bits));
        anchor = make_anchor(anchor.carrier, msg, key);
      }
      json doc = stamp(anchor_to_json(anchor), config);
      doc["key"] = key_to_json(key);
      doc["anchor_seed"] = anchor_seed(config, ma_index);
      write_json_file(ma_out, doc);
    } else if (*iv) {
      const ExperimentConfig config = load_config(iv_common);
      const DenoiserModel model = model_from_json(read_json_file(iv_model));
      const auto x0 = read_vector(iv_input);
      require(x0.size() == model.dim(), ErrorCode::DimensionMismatch,
              "input has dimension " + std::to_string(x0.size()) + ", model expects " +
                  std::to_string(model.dim()));
      require(iv_refine >= 0 && iv_refine <= 5, ErrorCode::InvalidArgument,
              "--refine must lie in [0, 5]");
      InversionOptions opts;
      opts.refine_iterations = iv_refine;
      const auto xt = invert(model, x0, opts);
      const auto back = sample(model, xt);
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < x0.size(); ++i) {
        num += (back[i] - x0[i]) * (back[i] - x0[i]);
        den += x0[i] * x0[i];
      }
      emit(iv_out, stamp({{"format", "trajprint-inversion"},
                          {"model_id", model.model_id()},
                          {"x0", x0},
                          {"x_T", xt},
                          {"refine_iterations", iv_refine},
                          {"roundtrip_relative_error", std::sqrt(num / den)}},
                         config));
    } else if (*sy) {
      ExperimentConfig config = load_config(sy_common);
      Log log(sy_common.log_path);
      if (sy_records) config.records = *sy_records;
      const DenoiserModel model = model_from_json(read_json_file(sy_model));
      require(model.dim() == config.dim, ErrorCode::DimensionMismatch,
              "model dimension " + std::to_string(model.dim()) + " differs from config dim " +
                  std::to_string(config.dim));
      const Variant variant = parse_variant(sy_variant);
      const std::size_t member = member_index(config, model);
      std::vector<Anchor> anchors;
      WatermarkKey key = build_key(config);
      if (!sy_anchor.empty()) {
        const json aj = read_json_file(sy_anchor);
        anchors.push_back(anchor_from_json(aj));
        if (aj.contains("key")) key = key_from_json(aj.at("key"));
        require(anchors[0].carrier.size() == model.dim(), ErrorCode::DimensionMismatch,
                "anchor dimension differs from the model");
      } else {
        anchors = build_anchors(config, key, config.records);
      }
      log("synthesizing " + std::to_string(anchors.size()) + " records");
      const auto recs = synthesize_set(config, model, member, key, anchors, variant, workers);
      json doc = stamp(records_to_json(recs), config);
      doc["model"] = member_name(model);
      doc["variant"] = variant_name(variant);
      write_json_file(sy_out, doc);
      if (!sy_traces.empty()) {
        for (std::size_t r = 0; r < recs.size(); ++r) {
          write_text_file(fs::path(sy_traces) / ("trace-" + std::to_string(r) + ".csv"),
                          trace_csv(recs[r]));
        }
      }
      std::size_t hits = 0;
      for (const auto& r : recs) hits += r.target_bit_accuracy == 1.0;
      std::cout << recs.size() << " records, " << hits << " with target bit accuracy 1\n";
    } else if (*ve) {
      const ExperimentConfig config = load_config(ve_common);
      const DenoiserModel model = model_from_json(read_json_file(ve_model));
      const auto recs = records_from_json(read_json_file(ve_records));
      require(!recs.empty(), ErrorCode::InvalidArgument, "record set is empty");
      for (const auto& r : recs) {
        require(r.noise.size() == model.dim(), ErrorCode::DimensionMismatch,
                "record noise has dimension " + std::to_string(r.noise.size()) +
                    ", suspect expects " + std::to_string(model.dim()));
      }
      // The key is regenerated from the seed stored with the anchors.
      const WatermarkKey key = make_key(recs[0].anchor.key_seed, recs[0].anchor.message.size(),
                                        model.dim(), config.key.strength, config.key.temperature);
      const double alpha = ve_alpha.value_or(config.alpha);
      const Tail tail = ve_two_sided ? Tail::TwoSided : config.tail;
      const auto rep = verify(black_box(model), model.model_id(), recs, key, alpha, tail);
      json doc = stamp(rep.to_json(), config);
      doc["suspect_name"] = ve_name.empty() ? member_name(model) : ve_name;
      doc["record_file"] = fs::path(ve_records).filename().string();
      emit(ve_out, doc);
      if (!ve_out.empty() && ve_out != "-") {
        std::cout << verdict_name(rep.verdict) << " mean=" << json(rep.mean).dump()
                  << " p=" << json(rep.p).dump() << '\n';
      }
    } else if (*at) {
      const ExperimentConfig config = load_config(at_common);
      if (at_table) {
        const fs::path dir(at_out);
        Log log(at_common.log_path.empty() ? (dir / "run.log").string() : at_common.log_path);
        log("attack table: building zoo");
        const auto zoo = build_zoo(config, workers);
        const WatermarkKey key = build_key(config);
        const auto recs = zoo_records(config, zoo, key, dir, workers, log);
        log("attack table: running attacks");
        write_json_file(dir / "attacks.json", run_attacks(config, zoo, recs, key, workers));
        log("attack table: done");
      } else {
        require(!at_model.empty(), ErrorCode::InvalidArgument, "give --model or --table");
        const DenoiserModel model = model_from_json(read_json_file(at_model));
        AttackSpec spec;
        spec.kind = parse_attack_kind(at_kind);
        spec.mantissa_bits = at_bits;
        spec.ratio = at_ratio;
        spec.steps = at_steps;
        spec.shift_norm = at_shift;
        spec.learning_rate = at_lr;
        spec.seed = at_seed;
        spec.validate();
        const DenoiserModel attacked = apply_attack(model, spec);
        json doc = stamp(model_to_json(attacked), config);
        doc["attack"] = spec.to_json();
        write_json_file(at_out, doc);
        std::cout << attacked.model_id() << '\n';
      }
    } else if (*mx) {
      ExperimentConfig config = load_config(mx_common);
      if (mx_full) config.records = 20;
      const fs::path dir(mx_out.empty() ? config.output_dir : mx_out);
      Log log(mx_common.log_path.empty() ? (dir / "run.log").string() : mx_common.log_path);
      log("matrix: building zoo");
      const auto zoo = build_zoo(config, workers);
      const WatermarkKey key = build_key(config);
      log("matrix: synthesizing and verifying");
      const MatrixRun run = run_matrix(config, zoo, key, parse_variant(mx_variant), workers);
      write_matrix_run(dir, config, run);
      log("matrix: done");
      std::cout << read_text_file(dir / "matrix.csv");
      const auto& s = run.summary;
      std::cout << "diagonal: " << s.diagonal_infringing << "/" << s.models
                << " infringing, mean BA " << json(s.diagonal_mean).dump() << '\n'
                << "off-diagonal: " << s.off_diagonal_not_proven << "/" << s.off_diagonal_cells
                << " not proven, mean BA " << json(s.off_diagonal_mean).dump() << '\n';
    } else if (*ab) {
      const ExperimentConfig config = load_config(ab_common);
      const fs::path dir(ab_out.empty() ? config.output_dir : ab_out);
      Log log(ab_common.log_path.empty() ? (dir / "run.log").string() : ab_common.log_path);
      log("ablate: building zoo");
      const auto zoo = build_zoo(config, workers);
      const json doc = run_ablation(config, zoo, build_key(config), workers);
      write_json_file(dir / "ablation.json", doc);
      log("ablate: done");
      for (const auto& row : doc.at("rows")) {
        std::cout << row.at("variant").get<std::string>() << ": diagonal "
                  << row.at("summary").at("diagonal_mean").dump() << ", off-diagonal "
                  << row.at("summary").at("off_diagonal_mean").dump() << '\n';
      }
    } else if (*sw) {
      const ExperimentConfig config = load_config(sw_common);
      const fs::path dir(sw_out.empty() ? config.output_dir : sw_out);
      Log log(sw_common.log_path.empty() ? (dir / "run.log").string() : sw_common.log_path);
      log("sweep " + sw_kind + ": building zoo");
      const auto zoo = build_zoo(config, workers);
      json doc;
      if (sw_kind == "payload") {
        doc = sweep_payload(config, zoo, workers);
      } else {
        const WatermarkKey key = build_key(config);
        const auto recs = zoo_records(config, zoo, key, dir, workers, log);
        doc = sw_kind == "steps" ? sweep_steps(config, zoo, recs, key, workers)
                                 : sweep_sampler(config, zoo, recs, key, workers);
      }
      write_json_file(dir / ("sweep-" + sw_kind + ".json"), doc);
      log("sweep " + sw_kind + ": done");
    } else if (*rp) {
      std::vector<std::string> problems;
      const std::string text = render_summary(rp_dir, problems);
      if (rp_out.empty() || rp_out == "-") {
        std::cout << text;
      } else {
        write_text_file(rp_out, text);
      }
      for (const auto& p : problems) std::cerr << "warning: " << p << '\n';
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << json{{"error",
                       {{"code", static_cast<int>(e.code())},
                        {"kind", std::string(error_code_name(e.code()))},
                        {"message", e.what()}}}}
                     .dump()
              << '\n';
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << json{{"error",
                       {{"code", static_cast<int>(ErrorCode::Io)},
                        {"kind", std::string(error_code_name(ErrorCode::Io))},
                        {"message", e.what()}}}}
                     .dump()
              << '\n';
    return static_cast<int>(ErrorCode::Io);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"code", 1}, {"kind", "internal"}, {"message", e.what()}}}}.dump()
              << '\n';
    return 1;
  }
}
