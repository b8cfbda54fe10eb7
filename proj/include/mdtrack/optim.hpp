#pragma once

#include "mdtrack/graph.hpp"

namespace mdtrack {

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay and bias-corrected moments. Moments are
// stored in the params' dtype so checkpoints round-trip bit-exactly.
class AdamW {
public:
    AdamW(ParamStore& store, AdamWConfig cfg);

    // Applies one update from the accumulated Param gradients; throws
    // TrainError naming the offending param on non-finite gradients.
    void step();

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    const AdamWConfig& cfg() const { return cfg_; }

    struct Slot {
        Param* param;
        Tensor m, v;
    };
    std::vector<Slot>& slots() { return slots_; }

private:
    AdamWConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

}  // namespace mdtrack
