#include "mdtrack/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace mdtrack {

Image Image::filled(int h, int w, double r, double g, double b) {
    Image img;
    img.h = h;
    img.w = w;
    img.pix.resize(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.set(0, y, x, r);
            img.set(1, y, x, g);
            img.set(2, y, x, b);
        }
    return img;
}

void Image::set(int c, int y, int x, double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    pix[(static_cast<std::size_t>(c) * h + y) * w + x] =
        static_cast<std::uint8_t>(std::lround(v * 255.0));
}

Tensor Image::to_tensor(Dtype dt) const {
    Tensor t = Tensor::zeros({3, h, w}, dt);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                t.set((static_cast<std::int64_t>(c) * h + y) * w + x, at(c, y, x));
    return t;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path + " for writing");
    f << "P6\n" << img.w << " " << img.h << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(img.w) * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(x) * 3 + c] =
                    img.pix[(static_cast<std::size_t>(c) * img.h + y) * img.w + x];
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw FormatError("short write to " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw FormatError(path + ": not a binary PPM (P6)", 0);
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (!f || w <= 0 || h <= 0) throw FormatError(path + ": bad PPM dimensions");
    if (maxval != 255) throw FormatError(path + ": unsupported maxval " + std::to_string(maxval));
    f.get();  // single whitespace after the header
    Image img;
    img.h = h;
    img.w = w;
    img.pix.resize(static_cast<std::size_t>(3) * h * w);
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (!f)
            throw FormatError(path + ": truncated pixel data",
                              static_cast<long long>(f.tellg()));
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.pix[(static_cast<std::size_t>(c) * h + y) * w + x] =
                    row[static_cast<std::size_t>(x) * 3 + c];
    }
    return img;
}

BBox Trajectory::box_at(int t) const {
    constexpr double two_pi = 6.283185307179586476925286766559;
    BBox b;
    b.cx = x0 + vx * t + amp * std::sin(two_pi * freq * t + phase_x);
    b.cy = y0 + vy * t + amp * std::sin(two_pi * freq * t + phase_y);
    const double s = 1.0 + size_drift * std::sin(two_pi * freq * t + size_phase);
    b.w = size * s;
    b.h = size * aspect * s;
    return b;
}

namespace {

void draw_rect(Image& img, const BBox& box, double r, double g, double b, double alpha = 1.0) {
    const int x0 = std::max(0, static_cast<int>(std::floor(box.x0())));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(box.x1())));
    const int y0 = std::max(0, static_cast<int>(std::floor(box.y0())));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(box.y1())));
    const double rgb[3] = {r, g, b};
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (x + 0.5 < box.x0() || x + 0.5 > box.x1() || y + 0.5 < box.y0() ||
                y + 0.5 > box.y1())
                continue;
            for (int c = 0; c < 3; ++c) {
                const double old = img.at(c, y, x);
                img.set(c, y, x, (1.0 - alpha) * old + alpha * rgb[c]);
            }
        }
}

void draw_gray(Image& img, const BBox& box, double v, double alpha = 1.0) {
    draw_rect(img, box, v, v, v, alpha);
}

double luminance(const Image& img, int y, int x) {
    return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

Trajectory sample_trajectory(Rng& rng, const SynthConfig& cfg, double size, bool is_target) {
    Trajectory tr;
    tr.size = size;
    tr.aspect = rng.uniform(0.8, 1.25);
    tr.size_drift = cfg.size_drift;
    tr.size_phase = rng.uniform(0.0, 6.28318);
    tr.amp = cfg.sin_amp;
    tr.freq = cfg.sin_freq;
    tr.phase_x = rng.uniform(0.0, 6.28318);
    tr.phase_y = rng.uniform(0.0, 6.28318);

    const double margin = size * (1.0 + cfg.size_drift) * (is_target ? 1.0 : 0.6);
    const double drift = cfg.speed * (cfg.frames - 1);
    const double lo = margin + tr.amp;
    const double hi = cfg.canvas - margin - tr.amp;
    if (hi - lo < drift)
        throw DomainError("infeasible motion config: drift " + std::to_string(drift) +
                          " exceeds usable span " + std::to_string(hi - lo));
    const double sx = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const double sy = rng.uniform() < 0.5 ? -1.0 : 1.0;
    tr.vx = sx * cfg.speed * rng.uniform(0.5, 1.0);
    tr.vy = sy * cfg.speed * rng.uniform(0.2, 1.0);
    // diagonal drift components are each at most `drift`; place the start
    // so the whole path stays inside [lo, hi]
    tr.x0 = tr.vx >= 0 ? rng.uniform(lo, hi - tr.vx * (cfg.frames - 1))
                       : rng.uniform(lo - tr.vx * (cfg.frames - 1), hi);
    tr.y0 = tr.vy >= 0 ? rng.uniform(lo, hi - tr.vy * (cfg.frames - 1))
                       : rng.uniform(lo - tr.vy * (cfg.frames - 1), hi);
    return tr;
}

}  // namespace

SequenceRecord generate_sequence(const SynthConfig& cfg) {
    if (cfg.canvas < 32 || cfg.frames < 1) throw DomainError("invalid synth config");
    if (cfg.x_modality == Modality::RGB)
        throw DomainError("x_modality must be one of T, E, D");
    Rng rng(cfg.seed);

    SequenceRecord rec;
    rec.x_modality = cfg.x_modality;
    rec.frames = cfg.frames;
    {
        std::ostringstream os;
        os << "synth-" << modality_name(cfg.x_modality) << "-" << cfg.seed;
        rec.id = os.str();
    }

    rec.target = sample_trajectory(rng, cfg, cfg.target_size, true);
    // target color: saturated, away from the gray background
    const double tr_col[3] = {rng.uniform(0.55, 0.95), rng.uniform(0.1, 0.5),
                              rng.uniform(0.1, 0.9)};
    std::vector<Trajectory> dis;
    std::vector<std::array<double, 3>> dis_col;
    for (int i = 0; i < cfg.distractors; ++i) {
        dis.push_back(sample_trajectory(rng, cfg, cfg.target_size * rng.uniform(0.7, 1.1), false));
        // distractors resemble the target in RGB
        dis_col.push_back({tr_col[0] + rng.uniform(-0.15, 0.15),
                           tr_col[1] + rng.uniform(-0.15, 0.15),
                           tr_col[2] + rng.uniform(-0.15, 0.15)});
    }

    Trajectory occ;
    const bool has_occ = cfg.occluders > 0 && cfg.occlusion_start >= 0 && cfg.occlusion_len > 0;
    if (has_occ) {
        // the occluder sweeps through the target's position mid-window,
        // perpendicular to the target's drift
        const int mid = cfg.occlusion_start + cfg.occlusion_len / 2;
        const BBox at_mid = rec.target.box_at(std::min(mid, cfg.frames - 1));
        occ.size = cfg.target_size * 1.3;
        occ.aspect = 1.0;
        occ.x0 = at_mid.cx + rec.target.vy * 2.0 * mid;
        occ.y0 = at_mid.cy - rec.target.vx * 2.0 * mid;
        occ.vx = -rec.target.vy * 2.0;
        occ.vy = rec.target.vx * 2.0;
    }

    const double bg = rng.uniform(0.15, 0.35);
    Rng noise_rng = rng.fork(99);
    Image prev_lum_src;

    for (int t = 0; t < cfg.frames; ++t) {
        const BBox gt = rec.target.box_at(t);
        rec.gt.push_back(gt);
        const bool occluded =
            has_occ && t >= cfg.occlusion_start && t < cfg.occlusion_start + cfg.occlusion_len;

        // ---- RGB ----
        Image rgb = Image::filled(cfg.canvas, cfg.canvas, bg, bg, bg * 1.1);
        for (std::size_t i = 0; i < dis.size(); ++i)
            draw_rect(rgb, dis[i].box_at(t), dis_col[i][0], dis_col[i][1], dis_col[i][2]);
        draw_rect(rgb, gt, tr_col[0], tr_col[1], tr_col[2]);
        if (occluded) draw_rect(rgb, occ.box_at(t), tr_col[0], tr_col[1], tr_col[2]);
        for (int y = 0; y < cfg.canvas; ++y)
            for (int x = 0; x < cfg.canvas; ++x)
                for (int c = 0; c < 3; ++c)
                    rgb.set(c, y, x, rgb.at(c, y, x) + cfg.noise * noise_rng.normal());

        // ---- X stream ----
        Image x;
        switch (cfg.x_modality) {
            case Modality::T: {
                x = Image::filled(cfg.canvas, cfg.canvas, 0.15, 0.15, 0.15);
                for (const Trajectory& d : dis) draw_gray(x, d.box_at(t), 0.45);
                if (occluded) draw_gray(x, occ.box_at(t), 0.22);  // cold occluder
                draw_gray(x, gt, 0.95);                           // target hottest
                break;
            }
            case Modality::E: {
                x = Image::filled(cfg.canvas, cfg.canvas, 0.5, 0.5, 0.5);
                if (t > 0)
                    for (int y = 0; y < cfg.canvas; ++y)
                        for (int xx = 0; xx < cfg.canvas; ++xx) {
                            const double diff =
                                luminance(rgb, y, xx) - luminance(prev_lum_src, y, xx);
                            draw_gray(x, BBox{xx + 0.5, y + 0.5, 1.0, 1.0}, 0.5 + 4.0 * diff);
                        }
                break;
            }
            case Modality::D: {
                x = Image::filled(cfg.canvas, cfg.canvas, 0, 0, 0);
                for (int y = 0; y < cfg.canvas; ++y)
                    for (int xx = 0; xx < cfg.canvas; ++xx)
                        draw_gray(x, BBox{xx + 0.5, y + 0.5, 1.0, 1.0},
                                  0.2 + 0.3 * y / cfg.canvas);
                for (const Trajectory& d : dis) draw_gray(x, d.box_at(t), 0.55);
                draw_gray(x, gt, 0.9);  // target nearest
                break;
            }
            default:
                throw DomainError("bad x modality");
        }
        for (int y = 0; y < cfg.canvas; ++y)
            for (int xx = 0; xx < cfg.canvas; ++xx)
                for (int c = 0; c < 3; ++c)
                    x.set(c, y, xx, x.at(c, y, xx) + cfg.noise * 0.5 * noise_rng.normal());

        prev_lum_src = rgb;
        rec.rgb.push_back(std::move(rgb));
        rec.x.push_back(std::move(x));
    }
    return rec;
}

void write_sequence(const SequenceRecord& rec, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "rgb");
    fs::create_directories(fs::path(dir) / "x");
    char name[32];
    for (int t = 0; t < rec.frames; ++t) {
        std::snprintf(name, sizeof(name), "%06d.ppm", t);
        write_ppm(rec.rgb[static_cast<std::size_t>(t)], (fs::path(dir) / "rgb" / name).string());
        write_ppm(rec.x[static_cast<std::size_t>(t)], (fs::path(dir) / "x" / name).string());
    }
    std::ofstream gt((fs::path(dir) / "groundtruth.txt").string());
    for (const BBox& b : rec.gt) {
        char line[128];
        std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%.17g\n", b.x0(), b.y0(), b.w, b.h);
        gt << line;
    }
    std::ofstream meta((fs::path(dir) / "meta.txt").string());
    meta << "modality=" << modality_name(rec.x_modality) << "\n";
}

namespace {

int count_frames(const fs::path& dir) {
    int n = 0;
    char name[32];
    for (;; ++n) {
        std::snprintf(name, sizeof(name), "%06d.ppm", n);
        if (!fs::exists(dir / name)) break;
    }
    return n;
}

}  // namespace

SequenceRecord load_sequence(const std::string& dir) {
    const fs::path root(dir);
    if (!fs::exists(root / "rgb"))
        throw FormatError(dir + ": missing rgb stream directory");
    if (!fs::exists(root / "x")) throw FormatError(dir + ": missing x stream directory");

    SequenceRecord rec;
    rec.id = root.filename().string();

    const std::string meta_path = (root / "meta.txt").string();
    std::ifstream meta(meta_path);
    if (!meta) throw FormatError(meta_path + ": missing");
    std::string line;
    bool have_modality = false;
    int line_no = 0;
    while (std::getline(meta, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw FormatError(meta_path + ":" + std::to_string(line_no) + ": expected key=value");
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "modality") {
            rec.x_modality = modality_from_string(val);
            if (rec.x_modality == Modality::RGB)
                throw FormatError(meta_path + ": modality must be T, E, or D");
            have_modality = true;
        } else if (key != "fps") {
            throw FormatError(meta_path + ":" + std::to_string(line_no) + ": unknown key '" +
                              key + "'");
        }
    }
    if (!have_modality) throw FormatError(meta_path + ": missing modality key");

    const int n_rgb = count_frames(root / "rgb");
    const int n_x = count_frames(root / "x");
    if (n_rgb == 0) throw FormatError(dir + "/rgb: no frames found");
    if (n_rgb != n_x)
        throw FormatError(dir + "/x: frame count " + std::to_string(n_x) +
                          " does not match rgb count " + std::to_string(n_rgb));
    rec.frames = n_rgb;

    char name[32];
    for (int t = 0; t < rec.frames; ++t) {
        std::snprintf(name, sizeof(name), "%06d.ppm", t);
        rec.rgb.push_back(read_ppm((root / "rgb" / name).string()));
        rec.x.push_back(read_ppm((root / "x" / name).string()));
        if (rec.rgb.back().h != rec.x.back().h || rec.rgb.back().w != rec.x.back().w)
            throw FormatError(dir + ": rgb/x resolution mismatch at frame " + std::to_string(t));
    }

    const std::string gt_path = (root / "groundtruth.txt").string();
    std::ifstream gt(gt_path);
    if (!gt) throw FormatError(gt_path + ": missing");
    line_no = 0;
    while (std::getline(gt, line)) {
        ++line_no;
        if (line.empty()) continue;
        double x = 0, y = 0, w = 0, h = 0;
        char extra = 0;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf %c", &x, &y, &w, &h, &extra) != 4)
            throw FormatError(gt_path + ":" + std::to_string(line_no) + ": expected x,y,w,h");
        BBox b = BBox::from_xywh(x, y, w, h);
        if (b.degenerate())
            throw FormatError(gt_path + ":" + std::to_string(line_no) + ": degenerate box");
        if (b.x1() <= 0 || b.y1() <= 0 || b.x0() >= rec.rgb[0].w || b.y0() >= rec.rgb[0].h)
            throw FormatError(gt_path + ":" + std::to_string(line_no) +
                              ": box does not intersect the frame");
        rec.gt.push_back(b);
    }
    if (static_cast<int>(rec.gt.size()) != rec.frames)
        throw FormatError(gt_path + ": " + std::to_string(rec.gt.size()) + " boxes for " +
                          std::to_string(rec.frames) + " frames");
    return rec;
}

std::vector<SequenceRecord> load_dataset(const std::string& root) {
    if (!fs::exists(root)) throw FormatError(root + ": dataset root does not exist");
    std::vector<std::string> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw FormatError(root + ": no sequence directories");
    std::vector<SequenceRecord> out;
    for (const std::string& d : dirs) out.push_back(load_sequence(d));
    return out;
}

CropWindow crop_window(const BBox& target, double context_factor, Rng* jitter) {
    if (target.degenerate()) throw DomainError("crop_window: degenerate box");
    if (context_factor <= 1.0) throw DomainError("crop_window: context factor must exceed 1");
    CropWindow w;
    w.side = context_factor * std::sqrt(target.w * target.h);
    w.cx = target.cx;
    w.cy = target.cy;
    if (jitter) {
        w.side *= jitter->uniform(0.9, 1.1);
        w.cx += jitter->uniform(-0.08, 0.08) * w.side;
        w.cy += jitter->uniform(-0.08, 0.08) * w.side;
    }
    return w;
}

Tensor crop_resize(const Image& img, const CropWindow& win, int out_side, Dtype dt) {
    Tensor out = Tensor::zeros({3, out_side, out_side}, dt);
    double mean[3] = {0, 0, 0};
    for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) acc += img.at(c, y, x);
        mean[c] = acc / (static_cast<double>(img.h) * img.w);
    }
    const double scale = win.side / out_side;
    const double ox = win.cx - win.side / 2.0;
    const double oy = win.cy - win.side / 2.0;
    auto sample = [&](int c, double ix, double iy) {
        // bilinear with mean padding
        const double fx = ix - 0.5, fy = iy - 0.5;
        const int x0 = static_cast<int>(std::floor(fx));
        const int y0 = static_cast<int>(std::floor(fy));
        const double wx = fx - x0, wy = fy - y0;
        auto px = [&](int xx, int yy) {
            if (xx < 0 || yy < 0 || xx >= img.w || yy >= img.h) return mean[c];
            return img.at(c, yy, xx);
        };
        return (1 - wx) * (1 - wy) * px(x0, y0) + wx * (1 - wy) * px(x0 + 1, y0) +
               (1 - wx) * wy * px(x0, y0 + 1) + wx * wy * px(x0 + 1, y0 + 1);
    };
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < out_side; ++y)
            for (int x = 0; x < out_side; ++x) {
                const double ix = (x + 0.5) * scale + ox;
                const double iy = (y + 0.5) * scale + oy;
                out.set((static_cast<std::int64_t>(c) * out_side + y) * out_side + x,
                        sample(c, ix, iy));
            }
    return out;
}

BBox box_to_crop(const BBox& image_box, const CropWindow& win) {
    BBox b;
    b.cx = (image_box.cx - (win.cx - win.side / 2.0)) / win.side;
    b.cy = (image_box.cy - (win.cy - win.side / 2.0)) / win.side;
    b.w = image_box.w / win.side;
    b.h = image_box.h / win.side;
    return b;
}

BBox box_from_crop(const BBox& crop_box, const CropWindow& win) {
    BBox b;
    b.cx = crop_box.cx * win.side + (win.cx - win.side / 2.0);
    b.cy = crop_box.cy * win.side + (win.cy - win.side / 2.0);
    b.w = crop_box.w * win.side;
    b.h = crop_box.h * win.side;
    return b;
}

}  // namespace mdtrack
