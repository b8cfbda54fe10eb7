#pragma once

#include <memory>

#include "mdtrack/model.hpp"
#include "mdtrack/optim.hpp"

namespace mdtrack {

// Binary checkpoint: magic "MDCK", version u16, entry count u32, entries
// (name u16+bytes, dtype u8 [2 = raw bytes], rank u8, dims u32[], payload),
// trailing CRC32 over everything before it. Contains the model config
// snapshot, every named param, optionally the AdamW moments, and the step
// counter. Round-trips are byte-identical.
void save_checkpoint(const std::string& path, const Model& model, const AdamW* opt,
                     std::int64_t step);

struct LoadedCheckpoint {
    std::unique_ptr<Model> model;
    std::int64_t step = 0;
    bool has_optimizer = false;
    std::vector<std::pair<std::string, std::pair<Tensor, Tensor>>> moments;  // name -> (m, v)
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies saved moments (and the step counter) into an optimizer built over
// the loaded model's params. Throws FormatError when a moment is missing.
void restore_optimizer(AdamW& opt, const LoadedCheckpoint& ck);

std::uint32_t crc32(const std::uint8_t* data, std::size_t n);

}  // namespace mdtrack
