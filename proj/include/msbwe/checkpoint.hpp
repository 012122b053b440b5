#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "msbwe/model.hpp"

namespace msbwe {

inline constexpr int kCheckpointVersion = 1;

struct TensorRecord {
    std::string name;
    ad::Shape shape;
    std::vector<float> data;
};

// On disk:
//   MSBWECKPT\n<version>\n<header bytes>\n<JSON header>\n<float32 LE payloads>
// The header holds "config" (with a "model" section), "step", "state" and a
// "tensors" manifest of {name, shape, offset, count}; offsets count floats from
// the start of the payload.
struct Checkpoint {
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t step = 0;
    nlohmann::json state = nlohmann::json::object();
    std::vector<TensorRecord> tensors;

    const TensorRecord* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
// CorruptCheckpoint on a bad magic, unknown version, broken manifest or
// truncated payload.
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
void export_params(const model::ParamList<T>& params, Checkpoint& ckpt);

// Copies named tensors into params. Missing names or shape differences raise
// ConfigMismatch.
template <typename T>
void import_params(const Checkpoint& ckpt, const model::ParamList<T>& params);

// ConfigMismatch unless the checkpoint's model section equals cfg.
void require_model_config(const Checkpoint& ckpt, const model::CascadeConfig& cfg);

Checkpoint model_checkpoint(const model::MsBwe<float>& m, std::uint64_t step = 0);
std::unique_ptr<model::MsBwe<float>> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace msbwe
