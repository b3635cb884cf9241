#pragma once

// Versioned binary container for a model and its optimizer state.
//
//   "TFIR" | u32 version | u32 length | hyperparameter text
//   | u32 tensor count | records... | u64 FNV-1a of everything before it
//
// A record is u32 name length, name, u32 rank, u64 dims, row-major doubles.
// Integers and doubles are little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "transfir/model.hpp"
#include "transfir/trainer.hpp"

namespace transfir::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

struct OptimizerState {
    std::uint64_t steps = 0;
    std::vector<numerics::Tensor> first_moments;
    std::vector<numerics::Tensor> second_moments;
};

struct Checkpoint {
    model::Model model;
    std::optional<OptimizerState> optimizer;
};

// Serialized bytes; exposed so callers can hash or compare checkpoints.
std::string serialize(const model::Model& model, const trainer::Adam* optimizer = nullptr);
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const model::Model& model,
                     const trainer::Adam* optimizer = nullptr);
// Truncated or corrupted files raise IntegrityError, other format versions
// IncompatibleError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Optimizer over the checkpoint's model with its saved moments, if any.
trainer::Adam restore_optimizer(Checkpoint& ckpt);

}  // namespace transfir::checkpoint
