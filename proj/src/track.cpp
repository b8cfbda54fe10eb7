#include "mdtrack/track.hpp"

#include <algorithm>

namespace mdtrack {

TrackSession::TrackSession(const Model& model, const Image& rgb0, const Image& x0,
                           Modality x_modality, const BBox& gt_px)
    : model_(&model), x_mod_(x_modality) {
    if (gt_px.degenerate()) throw DomainError("track_init: degenerate ground-truth box");
    if (x_modality == Modality::RGB) throw DomainError("track_init: X modality cannot be RGB");
    if (rgb0.h != x0.h || rgb0.w != x0.w)
        throw ContractError("track_init: modality frames differ in resolution");
    frame_w_ = rgb0.w;
    frame_h_ = rgb0.h;

    // one window, applied to both modality frames
    const CropWindow win = crop_window(gt_px, 2.0);
    tmpl_rgb_ = crop_resize(rgb0, win, model.cfg().template_side, model.cfg().dtype);
    tmpl_x_ = crop_resize(x0, win, model.cfg().template_side, model.cfg().dtype);
    states_ = model.make_states(x_modality);
    prev_ = gt_px;
}

BBox TrackSession::update(const Image& rgb, const Image& x, double* score_out) {
    const CropWindow win = crop_window(prev_, 4.0);
    Frame fz_rgb{Modality::RGB, tmpl_rgb_};
    Frame fz_x{x_mod_, tmpl_x_};
    Frame fs_rgb{Modality::RGB, crop_resize(rgb, win, model_->cfg().search_side, model_->cfg().dtype)};
    Frame fs_x{x_mod_, crop_resize(x, win, model_->cfg().search_side, model_->cfg().dtype)};

    Graph g(/*grad_enabled=*/false);
    auto state_vals = states_to_values(g, states_);
    Model::Forward fwd = model_->forward(g, fz_rgb, fz_x, fs_rgb, fs_x, state_vals,
                                         /*train_mode=*/false, /*seed=*/0,
                                         context_.defined() ? &context_ : nullptr);
    auto [crop_box, score] = decode_box(fwd.maps);
    if (score_out) *score_out = score;

    BBox img_box = box_from_crop(crop_box, win);
    // clamp into the frame, keeping at least one pixel of extent
    double x0 = std::clamp(img_box.x0(), 0.0, static_cast<double>(frame_w_ - 1));
    double x1 = std::clamp(img_box.x1(), x0 + 1.0, static_cast<double>(frame_w_));
    double y0 = std::clamp(img_box.y0(), 0.0, static_cast<double>(frame_h_ - 1));
    double y1 = std::clamp(img_box.y1(), y0 + 1.0, static_cast<double>(frame_h_));
    img_box = BBox::from_corners(x0, y0, x1, y1);

    states_ = states_from_values(fwd.states);
    if (model_->cfg().temporal.mode == TemporalMode::Token)
        context_ = fwd.fused_search.tensor().clone();
    prev_ = img_box;
    ++frames_;
    return img_box;
}

}  // namespace mdtrack
