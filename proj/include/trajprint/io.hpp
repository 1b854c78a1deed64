#pragma once

// File formats: JSON documents for models, keys, anchors, records and
// reports; CSV for loss traces. Doubles are written with round-trip
// precision, so reading then writing a file reproduces it exactly.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "trajprint/diffusion.hpp"
#include "trajprint/fingerprint.hpp"
#include "trajprint/watermark.hpp"

namespace trajprint {

nlohmann::json model_to_json(const DenoiserModel& model);
/// Rebuilds the model and checks the stored model_id against the parameters.
DenoiserModel model_from_json(const nlohmann::json& j);

/// Keys are stored by their generating parameters, not their patterns.
nlohmann::json key_to_json(const WatermarkKey& key);
WatermarkKey key_from_json(const nlohmann::json& j);

nlohmann::json anchor_to_json(const Anchor& anchor);
Anchor anchor_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const FingerprintRecord& record);
FingerprintRecord record_from_json(const nlohmann::json& j);

nlohmann::json records_to_json(const std::vector<FingerprintRecord>& records);
std::vector<FingerprintRecord> records_from_json(const nlohmann::json& j);

/// iteration,watermark,reconstruction,regularization,total
std::string trace_csv(const FingerprintRecord& record);

nlohmann::json read_json_file(const std::filesystem::path& path);
/// Two-space indented, keys sorted, trailing newline.
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace trajprint
