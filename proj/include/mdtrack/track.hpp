#pragma once

#include "mdtrack/checkpoint.hpp"
#include "mdtrack/data.hpp"

namespace mdtrack {

// Live inference state for one sequence: fixed first-frame templates, the
// temporal states, and the previous box driving the search crop.
class TrackSession {
public:
    TrackSession(const Model& model, const Image& rgb0, const Image& x0, Modality x_modality,
                 const BBox& gt_px);

    // Crops the search region around the previous box, runs the model in
    // eval mode, decodes, and maps the box back to image coordinates
    // (clamped to the frame). States advance by exactly one frame.
    BBox update(const Image& rgb, const Image& x, double* score_out = nullptr);

    const TemporalStates& states() const { return states_; }
    void set_states(TemporalStates s) { states_ = std::move(s); }
    const BBox& prev_box() const { return prev_; }
    void set_prev_box(const BBox& b) { prev_ = b; }
    std::int64_t frames_processed() const { return frames_; }
    Modality x_modality() const { return x_mod_; }

private:
    const Model* model_;
    Modality x_mod_;
    Tensor tmpl_rgb_, tmpl_x_;  // [3,Hz,Hz] pixel crops, fixed from frame 0
    TemporalStates states_;
    BBox prev_;
    std::int64_t frames_ = 0;
    int frame_w_ = 0, frame_h_ = 0;
    Tensor context_;  // token-mode carry (previous fused search tokens)
};

}  // namespace mdtrack
