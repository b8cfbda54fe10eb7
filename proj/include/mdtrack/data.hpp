#pragma once

#include <string>
#include <vector>

#include "mdtrack/bbox.hpp"
#include "mdtrack/rng.hpp"
#include "mdtrack/tensor.hpp"
#include "mdtrack/tokenizer.hpp"

namespace mdtrack {

// 8-bit image, channel-major [3,h,w]; the storage unit for frames on both
// the generator and loader paths (PPM is 8-bit anyway).
struct Image {
    int h = 0, w = 0;
    std::vector<std::uint8_t> pix;

    static Image filled(int h, int w, double r, double g, double b);
    double at(int c, int y, int x) const {
        return pix[(static_cast<std::size_t>(c) * h + y) * w + x] / 255.0;
    }
    void set(int c, int y, int x, double v);
    // [3,h,w] tensor in [0,1]
    Tensor to_tensor(Dtype dt) const;
};

void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);

// Deterministic parametric motion: per-axis linear drift plus a sinusoid,
// with a matching sinusoidal size modulation.
struct Trajectory {
    double x0 = 0, y0 = 0;
    double vx = 0, vy = 0;        // px per frame
    double amp = 0;               // sinusoid amplitude, px
    double freq = 0;              // cycles per frame
    double phase_x = 0, phase_y = 0;
    double size = 20, aspect = 1; // base box, px
    double size_drift = 0;        // relative size modulation
    double size_phase = 0;

    BBox box_at(int t) const;     // center/size in pixels
};

struct SequenceRecord {
    std::string id;
    Modality x_modality = Modality::T;
    int frames = 0;
    std::vector<Image> rgb;
    std::vector<Image> x;
    std::vector<BBox> gt;  // pixel-space center/size
    Trajectory target;     // populated by the generator
};

struct SynthConfig {
    int canvas = 128;
    int frames = 40;
    Modality x_modality = Modality::T;
    std::uint64_t seed = 1;
    int distractors = 2;
    double noise = 0.02;
    double target_size = 22.0;
    double speed = 1.6;       // linear drift px/frame
    double sin_amp = 5.0;
    double sin_freq = 0.09;
    double size_drift = 0.12;
    // RGB-corrupting occluder: drawn over the target in RGB with the
    // target's own color, cold in T / absent in depth, active in
    // [occlusion_start, occlusion_start + occlusion_len)
    int occluders = 0;
    int occlusion_start = -1;
    int occlusion_len = 0;
};

// Deterministic under cfg.seed. Throws DomainError when the requested
// motion cannot stay one target-width inside the canvas.
SequenceRecord generate_sequence(const SynthConfig& cfg);

// <root>/<seq>/{rgb,x}/%06d.ppm + groundtruth.txt ("x,y,w,h" per frame,
// top-left origin) + meta.txt (modality=T|E|D, optional fps)
void write_sequence(const SequenceRecord& rec, const std::string& dir);
SequenceRecord load_sequence(const std::string& dir);
std::vector<SequenceRecord> load_dataset(const std::string& root);

// ---- crop geometry shared by training and inference ----

struct CropWindow {
    double cx = 0, cy = 0;  // crop center, image px
    double side = 0;        // square side, image px
};

// side = context_factor * sqrt(w*h) around the box center; jitter (training
// only) shifts the center up to +-8% of the side and scales by [0.9, 1.1].
CropWindow crop_window(const BBox& target, double context_factor, Rng* jitter = nullptr);

// Bilinear resample of the window to out_side x out_side; out-of-frame
// reads use the per-channel frame mean.
Tensor crop_resize(const Image& img, const CropWindow& win, int out_side, Dtype dt);

// Box mapping between image pixels and crop-normalized [0,1] coordinates.
BBox box_to_crop(const BBox& image_box, const CropWindow& win);
BBox box_from_crop(const BBox& crop_box, const CropWindow& win);

}  // namespace mdtrack
