#include "trajprint/io.hpp"

#include <fstream>
#include <sstream>

#include "trajprint/error.hpp"

namespace trajprint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// nlohmann::json throws its own exception types; re-raise them as Parse.
template <class F>
auto parsing(const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error&) {
    throw;
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, std::string("malformed ") + what + ": " + e.what());
  }
}

void expect_format(const json& j, const char* format) {
  require(j.is_object() && j.value("format", std::string()) == format, ErrorCode::Parse,
          std::string("expected a '") + format + "' document");
}

}  // namespace

json model_to_json(const DenoiserModel& model) {
  json params;
  if (model.kind() == ModelKind::AnalyticGmm) {
    const auto& g = model.gmm();
    params = {{"weights", g.weights},
              {"means", g.means},
              {"components", g.components()},
              {"variance", g.variance}};
  } else {
    const auto& p = model.mlp();
    json layers = json::array();
    for (const auto& l : p.layers) {
      layers.push_back({{"in", l.in}, {"out", l.out}, {"weight", l.weight}, {"bias", l.bias}});
    }
    params = {{"layers", layers}, {"data_scale", p.data_scale}, {"activation", "tanh"},
              {"time_embedding", "t/T,sin(2pi t/T),cos(2pi t/T)"}};
  }
  return {{"format", "trajprint-model"},
          {"version", 1},
          {"kind", model_kind_name(model.kind())},
          {"dim", model.dim()},
          {"schedule",
           {{"steps", model.schedule().steps},
            {"type", "cosine"},
            {"offset", kCosineOffset},
            {"min_alpha_bar", kMinAlphaBar}}},
          {"params", params},
          {"provenance", model.provenance()},
          {"model_id", model.model_id()}};
}

DenoiserModel model_from_json(const json& j) {
  return parsing("model file", [&] {
    expect_format(j, "trajprint-model");
    const ModelKind kind = parse_model_kind(j.at("kind").get<std::string>());
    const auto dim = j.at("dim").get<std::size_t>();
    const int steps = j.at("schedule").at("steps").get<int>();
    const json& p = j.at("params");
    const json provenance = j.value("provenance", json::object());
    auto model = [&] {
      if (kind == ModelKind::AnalyticGmm) {
        GmmParams g;
        g.weights = p.at("weights").get<std::vector<double>>();
        g.means = p.at("means").get<std::vector<double>>();
        g.variance = p.at("variance").get<double>();
        require(g.dim() == dim, ErrorCode::DimensionMismatch,
                "model file: means do not match dim " + std::to_string(dim));
        return DenoiserModel::analytic_gmm(std::move(g), steps, provenance);
      }
      MlpParams m;
      m.data_scale = p.value("data_scale", 1.0);
      for (const auto& l : p.at("layers")) {
        DenseLayer layer;
        layer.in = l.at("in").get<std::size_t>();
        layer.out = l.at("out").get<std::size_t>();
        layer.weight = l.at("weight").get<std::vector<double>>();
        layer.bias = l.at("bias").get<std::vector<double>>();
        m.layers.push_back(std::move(layer));
      }
      return DenoiserModel::mlp(std::move(m), dim, steps, provenance);
    }();
    if (j.contains("model_id")) {
      require(j.at("model_id").get<std::string>() == model.model_id(), ErrorCode::Parse,
              "model file: stored model_id does not match its parameters");
    }
    return model;
  });
}

json key_to_json(const WatermarkKey& key) {
  return {{"format", "trajprint-key"},
          {"seed", key.seed},
          {"bits", key.bits},
          {"dim", key.dim},
          {"strength", key.strength},
          {"temperature", key.temperature}};
}

WatermarkKey key_from_json(const json& j) {
  return parsing("key", [&] {
    return make_key(j.at("seed").get<std::uint64_t>(), j.at("bits").get<std::size_t>(),
                    j.at("dim").get<std::size_t>(), j.at("strength").get<double>(),
                    j.at("temperature").get<double>());
  });
}

json anchor_to_json(const Anchor& anchor) {
  return {{"format", "trajprint-anchor"},
          {"carrier", anchor.carrier},
          {"watermarked", anchor.watermarked},
          {"message", anchor.message.str()},
          {"key_seed", anchor.key_seed}};
}

Anchor anchor_from_json(const json& j) {
  return parsing("anchor", [&] {
    Anchor a;
    a.carrier = j.at("carrier").get<std::vector<double>>();
    a.watermarked = j.at("watermarked").get<std::vector<double>>();
    a.message = Message::parse(j.at("message").get<std::string>());
    a.key_seed = j.at("key_seed").get<std::uint64_t>();
    require(a.carrier.size() == a.watermarked.size(), ErrorCode::DimensionMismatch,
            "anchor: carrier and watermarked latent differ in dimension");
    return a;
  });
}

json record_to_json(const FingerprintRecord& r) {
  json trace = json::array();
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& p = r.trace[i];
    trace.push_back({i, p.watermark, p.reconstruction, p.regularization, p.total});
  }
  return {{"format", "trajprint-record"},
          {"model_id", r.model_id},
          {"anchor", anchor_to_json(r.anchor)},
          {"origin", r.origin},
          {"noise", r.noise},
          {"trace_columns", {"iteration", "watermark", "reconstruction", "regularization", "total"}},
          {"trace", trace},
          {"iterations_run", r.iterations_run},
          {"best_iteration", r.best_iteration},
          {"target_bit_accuracy", r.target_bit_accuracy},
          {"baseline", r.baseline},
          {"config", r.config.to_json()},
          {"config_hash", r.config_hash},
          {"record_seed", r.record_seed}};
}

FingerprintRecord record_from_json(const json& j) {
  return parsing("record", [&] {
    expect_format(j, "trajprint-record");
    FingerprintRecord r;
    r.model_id = j.at("model_id").get<std::string>();
    r.anchor = anchor_from_json(j.at("anchor"));
    r.origin = j.at("origin").get<std::vector<double>>();
    r.noise = j.at("noise").get<std::vector<double>>();
    for (const auto& row : j.at("trace")) {
      r.trace.push_back({row.at(1).get<double>(), row.at(2).get<double>(),
                         row.at(3).get<double>(), row.at(4).get<double>()});
    }
    r.iterations_run = j.at("iterations_run").get<int>();
    r.best_iteration = j.at("best_iteration").get<int>();
    r.target_bit_accuracy = j.at("target_bit_accuracy").get<double>();
    r.baseline = j.at("baseline").get<bool>();
    r.config = OptimConfig::from_json(j.at("config"));
    r.config_hash = j.at("config_hash").get<std::string>();
    r.record_seed = j.at("record_seed").get<std::uint64_t>();
    require(r.noise.size() == r.origin.size(), ErrorCode::DimensionMismatch,
            "record: noise and origin differ in dimension");
    return r;
  });
}

json records_to_json(const std::vector<FingerprintRecord>& records) {
  json list = json::array();
  for (const auto& r : records) list.push_back(record_to_json(r));
  return {{"format", "trajprint-record-set"}, {"records", list}};
}

std::vector<FingerprintRecord> records_from_json(const json& j) {
  return parsing("record set", [&] {
    if (j.value("format", std::string()) == "trajprint-record") return std::vector{record_from_json(j)};
    expect_format(j, "trajprint-record-set");
    std::vector<FingerprintRecord> out;
    for (const auto& r : j.at("records")) out.push_back(record_from_json(r));
    return out;
  });
}

std::string trace_csv(const FingerprintRecord& record) {
  std::ostringstream out;
  out.precision(17);
  out << "iteration,watermark,reconstruction,regularization,total\n";
  for (std::size_t i = 0; i < record.trace.size(); ++i) {
    const auto& p = record.trace[i];
    out << i << ',' << p.watermark << ',' << p.reconstruction << ',' << p.regularization << ','
        << p.total << '\n';
  }
  return out.str();
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json read_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << text;
  require(static_cast<bool>(out), ErrorCode::Io, "write to '" + path.string() + "' failed");
}

void write_json_file(const fs::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace trajprint
