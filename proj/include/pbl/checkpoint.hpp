#pragma once

// Versioned binary container for model weights:
//
//   "PBLCKPT\0"  magic
//   u32          format version
//   u32 + bytes  model kind ("listener" or "baseline")
//   u64 + bytes  JSON metadata (model config, tokenizer, ...)
//   u32          tensor count, then per tensor:
//                u32 + bytes name, i64 rows, i64 cols, rows*cols f64 (column-major)
//
// Numbers are little-endian. Writing the same model twice gives identical bytes.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>

#include "json.hpp"
#include "pbl/baseline.hpp"
#include "pbl/listener.hpp"
#include "pbl/nn.hpp"

namespace pbl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  std::string kind;
  nlohmann::json metadata;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
};

void write_checkpoint(std::ostream& out, const std::string& kind, const nlohmann::json& metadata,
                      const nn::ParameterSet& params);
CheckpointData read_checkpoint(std::istream& in);

void save_listener(const std::filesystem::path& path, const ListenerModel& model,
                   const nlohmann::json& extra = nlohmann::json::object());
void save_baseline(const std::filesystem::path& path, const BaselineModel& model,
                   const nlohmann::json& extra = nlohmann::json::object());

CheckpointData load_checkpoint(const std::filesystem::path& path);
ListenerModel listener_from_checkpoint(const CheckpointData& data);
BaselineModel baseline_from_checkpoint(const CheckpointData& data);

}  // namespace pbl
