#pragma once

#include "mdtrack/track.hpp"

namespace mdtrack {

struct EvalMetrics {
    double precision5 = 0;   // center error <= 5 px
    double precision20 = 0;  // center error <= 20 px
    double success_auc = 0;  // mean success rate over IoU thresholds 0:0.05:1
    double mean_iou = 0;
    std::int64_t frames = 0;  // evaluated frames (first frame of each sequence excluded)
};

// success(t) counts frames with IoU strictly above t
double success_auc_from_ious(const std::vector<double>& ious);

// Runs the tracker over every sequence (init on frame 0, evaluate the
// rest). With reset_states_each_frame the temporal states are cleared
// before every update, isolating the contribution of the carried memory.
EvalMetrics evaluate(const Model& model, const std::vector<SequenceRecord>& dataset,
                     bool reset_states_each_frame = false);

}  // namespace mdtrack
