#pragma once

#include <filesystem>
#include <json.hpp>
#include <stdexcept>
#include <string>

#include "mxfer/attacks.hpp"
#include "mxfer/data.hpp"
#include "mxfer/evaluation.hpp"
#include "mxfer/merging.hpp"

namespace mxfer::io {

using nlohmann::json;
namespace fs = std::filesystem;

/// Binary checkpoint: "MXB1", u32 entry count, per entry (u32 name length, name,
/// u32 rank, u64 dims), u64 value count, little-endian f64 values.
void write_parameters(const fs::path& path, const ParameterVector& params);
ParameterVector read_parameters(const fs::path& path);

json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const json& j);
json to_json(const attacks::AttackSpec& spec);
attacks::AttackSpec attack_spec_from_json(const json& j);

/// Checkpoint plus "<path>.json" sidecar holding `meta` and the payload hash.
void save_checkpoint(const fs::path& path, const ParameterVector& params, const json& meta);
ParameterVector load_checkpoint(const fs::path& path);

/// Merged models are stored as one checkpoint; adapters become extra layout entries
/// "rs.adapter.<t>.down" / "rs.adapter.<t>.up", and the method tag goes in the sidecar.
void save_merged(const fs::path& path, const merging::MergedModel& model, json meta);
merging::MergedModel load_merged(const fs::path& path);

/// Cache key of an adversarial batch.
std::string adv_cache_key(const attacks::AttackSpec& spec, const std::string& surrogate_hash,
                          const std::string& data_hash);

/// "MXA1", u64 header length, header JSON (spec, surrogate, labels, cache key, shape),
/// then clean and adversarial f64 payloads.
void save_adv_batch(const fs::path& path, const attacks::AdvBatch& batch, const std::string& cache_key);
attacks::AdvBatch load_adv_batch(const fs::path& path, std::string* cache_key = nullptr);
/// Cache key stored in the file header, without reading the payload.
std::string read_adv_cache_key(const fs::path& path);

json to_json(const evaluation::AsrMatrix& m);
evaluation::AsrMatrix asr_matrix_from_json(const json& j);

/// Hash of a split's inputs and labels.
std::string split_hash(const Split& split);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace mxfer::io
