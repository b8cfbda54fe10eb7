#pragma once

#include <ostream>

#include "mdtrack/checkpoint.hpp"
#include "mdtrack/config.hpp"

namespace mdtrack {

struct TrainResult {
    std::vector<double> total_history;  // per-step mean total loss
    std::string final_checkpoint;
};

// Per-modality training pools. When cfg.data_root is empty the pools are
// synthesized in memory (deterministic under cfg.synth.seed); every other
// occlusion-enabled sequence gets a deterministic occlusion window so the
// model sees RGB corruption during training.
std::vector<SequenceRecord> make_training_pool(const TrainConfig& cfg, Modality modality);

// The two training regimes over (template pair, search pair) samples drawn
// from one sequence with frame gap <= cfg.max_gap. Writes one checkpoint
// per epoch plus a final one (with optimizer state) under cfg.out_dir, and
// logs per-component losses each step. `modality_trace`, when given,
// records the X modality of every sample drawn. Resuming from a checkpoint
// passes the saved step as start_step (with the optimizer restored into
// `resume_opt`); sample seeds key off the absolute step, so a resumed run
// replays the uninterrupted one exactly.
TrainResult train_model(Model& model, const TrainConfig& cfg, std::ostream& log,
                        std::vector<Modality>* modality_trace = nullptr, int start_step = 0,
                        AdamW* resume_opt = nullptr);

}  // namespace mdtrack
