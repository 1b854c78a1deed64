#include <algorithm>
#include <filesystem>
#include <optional>

#include "doctest.h"
#include "trajprint/error.hpp"
#include "trajprint/io.hpp"

using namespace trajprint;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("trajprint-io-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::optional<ErrorCode> code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

FingerprintRecord quick_record(const DenoiserModel& model) {
  const auto key = make_key(3, 8, model.dim(), 0.5, 8.0);
  Rng rng(4);
  const FingerprintProblem problem(model, key,
                                   make_anchor(rng.normal_vector(model.dim()), random_message(4, 8), key));
  OptimConfig config;
  config.iterations = 5;
  config.seed = 12;
  return synthesize(problem, config);
}

}  // namespace

TEST_CASE("models round-trip byte for byte") {
  MlpTrainSpec spec;
  spec.data = random_gmm(1, 8, 2, 2.0, 0.5);
  spec.steps = 5;
  const DenoiserModel models[2] = {
      DenoiserModel::analytic_gmm(random_gmm(2, 8, 3, 2.0, 0.5), 25, {{"name", "g"}}),
      train_mlp_denoiser(spec)};
  const auto dir = scratch_dir("models");
  for (const auto& m : models) {
    const auto path = dir / (m.model_id() + ".json");
    write_json_file(path, model_to_json(m));
    const auto text = read_text_file(path);
    const auto back = model_from_json(read_json_file(path));
    CHECK(back.model_id() == m.model_id());
    CHECK(back.parameter_vector() == m.parameter_vector());
    CHECK(back.provenance() == m.provenance());
    write_json_file(path, model_to_json(back));
    CHECK(read_text_file(path) == text);
  }
}

TEST_CASE("a tampered parameter fails the id check") {
  const auto m = DenoiserModel::analytic_gmm(random_gmm(2, 8, 3, 2.0, 0.5), 25);
  auto j = model_to_json(m);
  j["params"]["variance"] = 0.75;
  CHECK(code_of([&] { model_from_json(j); }) == ErrorCode::Parse);
  auto wrong = model_to_json(m);
  wrong["format"] = "something-else";
  CHECK(code_of([&] { model_from_json(wrong); }) == ErrorCode::Parse);
}

TEST_CASE("records, keys and anchors round-trip") {
  const auto m = DenoiserModel::analytic_gmm(random_gmm(2, 8, 3, 2.0, 0.5), 25);
  const auto rec = quick_record(m);
  const auto back = record_from_json(record_to_json(rec));
  CHECK(back.noise == rec.noise);
  CHECK(back.origin == rec.origin);
  CHECK(back.anchor.message == rec.anchor.message);
  CHECK(back.config_hash == rec.config_hash);
  CHECK(back.trace.size() == rec.trace.size());
  CHECK(record_to_json(back) == record_to_json(rec));
  const std::vector<FingerprintRecord> both{rec, rec};
  CHECK(records_from_json(records_to_json(both)).size() == 2);

  const auto key = make_key(7, 8, 8, 0.5, 8.0);
  CHECK(key_from_json(key_to_json(key)).patterns == key.patterns);
  CHECK(anchor_to_json(anchor_from_json(anchor_to_json(rec.anchor))) == anchor_to_json(rec.anchor));

  const auto csv = trace_csv(rec);
  CHECK(csv.rfind("iteration,watermark,reconstruction,regularization,total\n", 0) == 0);
  CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == rec.trace.size() + 1);
}

TEST_CASE("file errors") {
  const auto dir = scratch_dir("errors");
  CHECK(code_of([&] { read_json_file(dir / "missing.json"); }) == ErrorCode::Io);
  write_text_file(dir / "bad.json", "{ not json");
  CHECK(code_of([&] { read_json_file(dir / "bad.json"); }) == ErrorCode::Parse);
  CHECK(code_of([&] { write_text_file(dir / "bad.json" / "x", "x"); }) == ErrorCode::Io);
}
