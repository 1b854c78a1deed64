#include <filesystem>

#include "doctest.h"
#include "trajprint/error.hpp"
#include "trajprint/harness.hpp"
#include "trajprint/io.hpp"

using namespace trajprint;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config() {
  auto c = ExperimentConfig::defaults();
  c.zoo.resize(2);  // two mixture models
  c.records = 3;
  c.optim.iterations = 40;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("trajprint-harness-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("default config") {
  const auto c = ExperimentConfig::defaults();
  CHECK_NOTHROW(c.validate());
  CHECK(c.zoo.size() == 5);
  std::size_t mlps = 0;
  for (const auto& m : c.zoo) mlps += m.kind == ModelKind::Mlp;
  CHECK(mlps == 2);
  CHECK(c.optim.iterations == 200);
  CHECK(c.optim.learning_rate == 0.1);
  CHECK(c.optim.lambda_rec == 0.6);
  CHECK(c.optim.lambda_reg == 0.05);
  CHECK(c.optim.gamma == 0.2);
  CHECK(c.alpha == 1e-3);
  CHECK(c.dim == 16);
  CHECK(c.schedule_steps == 25);
  CHECK(c.key.bits == 16);
}

TEST_CASE("config hash ignores field order and fills defaults") {
  const auto c = ExperimentConfig::defaults();
  const auto j = c.to_json();
  // rebuild the document with keys inserted in reverse order
  nlohmann::ordered_json reversed;
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  for (auto k = keys.rbegin(); k != keys.rend(); ++k) reversed[*k] = j.at(*k);
  const auto parsed = ExperimentConfig::from_json(nlohmann::json::parse(reversed.dump()));
  CHECK(parsed.hash() == c.hash());

  CHECK(ExperimentConfig::from_json(nlohmann::json::object()).hash() == c.hash());
  auto changed = ExperimentConfig::from_json({{"master_seed", 7}});
  CHECK(changed.master_seed == 7);
  CHECK(changed.hash() != c.hash());
  CHECK(ExperimentConfig::from_json({{"tail", "two-sided"}}).tail == Tail::TwoSided);

  try {
    ExperimentConfig::from_json({{"records", "ten"}});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Parse);
  }
  auto bad = c;
  bad.records = 1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("seeds are distinct per purpose") {
  const auto c = ExperimentConfig::defaults();
  CHECK(model_seed(c, 0) != model_seed(c, 1));
  CHECK(anchor_seed(c, 0) != anchor_seed(c, 1));
  CHECK(synthesis_seed(c, 0, 0) != synthesis_seed(c, 1, 0));
  CHECK(synthesis_seed(c, 0, 0) != synthesis_seed(c, 0, 1));
  CHECK(key_seed(c) != model_seed(c, 0));
  auto other = c;
  other.master_seed += 1;
  CHECK(model_seed(other, 0) != model_seed(c, 0));
}

TEST_CASE("variants") {
  const OptimConfig base;
  CHECK(variant_config(base, Variant::NoAnchoring).lambda_rec == 0.0);
  CHECK(variant_config(base, Variant::NoAnchoring).lambda_reg == 0.0);
  CHECK(variant_config(base, Variant::NoReconstruction).lambda_reg == base.lambda_reg);
  CHECK(variant_config(base, Variant::NoRegularization).lambda_rec == base.lambda_rec);
  for (auto v : {Variant::TrajPrint, Variant::RandomBaseline, Variant::NoReconstruction,
                 Variant::NoRegularization, Variant::NoAnchoring}) {
    CHECK(parse_variant(variant_name(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("bogus"), Error);
}

TEST_CASE("parallel matrix equals sequential and writes stable files") {
  const auto c = small_config();
  const auto key = build_key(c);
  const auto zoo = build_zoo(c, 1);
  const auto seq = run_matrix(c, zoo, key, Variant::TrajPrint, 1);
  const auto par = run_matrix(c, zoo, key, Variant::TrajPrint, 4);
  CHECK(seq.matrix.to_json() == par.matrix.to_json());
  CHECK(seq.summary.models == 2);
  CHECK(seq.summary.off_diagonal_cells == 2);

  const auto a = scratch_dir("a"), b = scratch_dir("b");
  write_matrix_run(a, c, seq);
  write_matrix_run(b, c, par);
  for (const auto* name : {"config.json", "matrix.json", "matrix.csv"}) {
    CHECK(read_text_file(a / name) == read_text_file(b / name));
  }
  const auto m = read_json_file(a / "matrix.json");
  CHECK(m.at("config_hash") == c.hash());

  std::vector<std::string> problems;
  const auto md = render_summary(a, problems);
  CHECK(problems.empty());
  CHECK(md.find("Experiments: 1") != std::string::npos);
}

TEST_CASE("summary of empty, corrupt and single-report directories") {
  std::vector<std::string> problems;
  const auto empty = scratch_dir("empty");
  const auto md = render_summary(empty, problems);
  CHECK(problems.empty());
  CHECK(md.find("Experiments: 0") != std::string::npos);

  const auto corrupt = scratch_dir("corrupt");
  write_text_file(corrupt / "broken.json", "{\"format\": ");
  problems.clear();
  render_summary(corrupt, problems);
  CHECK(problems.size() == 1);

  const auto single = scratch_dir("single");
  VerificationReport r;
  r.suspect_id = "abc";
  r.bit_accuracies = {0.9, 1.0};
  r.mean = 0.95;
  r.n = 2;
  auto j = r.to_json();
  write_json_file(single / "v.json", j);
  problems.clear();
  const auto one = render_summary(single, problems);
  CHECK(problems.empty());
  CHECK(one.find("Experiments: 1") != std::string::npos);
  CHECK(one.find("abc") != std::string::npos);
}
