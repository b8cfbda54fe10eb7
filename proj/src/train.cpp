#include "mdtrack/train.hpp"

#include <cmath>
#include <filesystem>
#include <map>

#include "mdtrack/eval.hpp"

namespace fs = std::filesystem;

namespace mdtrack {

std::vector<SequenceRecord> make_training_pool(const TrainConfig& cfg, Modality modality) {
    if (!cfg.data_root.empty()) {
        std::vector<SequenceRecord> pool;
        for (SequenceRecord& rec : load_dataset(cfg.data_root))
            if (rec.x_modality == modality) pool.push_back(std::move(rec));
        if (pool.empty())
            throw FormatError(cfg.data_root + ": no sequences of modality " +
                              modality_name(modality));
        return pool;
    }
    std::vector<SequenceRecord> pool;
    for (int i = 0; i < cfg.synth_sequences; ++i) {
        SynthConfig c = cfg.synth;
        c.x_modality = modality;
        c.seed = cfg.synth.seed ^ (static_cast<std::uint64_t>(modality) << 32) ^
                 (static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull);
        if (cfg.synth.occluders > 0 && i % 2 == 1) {
            Rng orng(c.seed ^ 0xFACEull);
            c.occlusion_start =
                c.frames / 4 + static_cast<int>(orng.uniform_int(std::max(1, c.frames / 4)));
            c.occlusion_len = std::max(4, c.frames / 6);
        } else {
            c.occluders = 0;
            c.occlusion_start = -1;
            c.occlusion_len = 0;
        }
        pool.push_back(generate_sequence(c));
    }
    return pool;
}

namespace {

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
    std::uint64_t z = a;
    for (std::uint64_t v : {b, c, d}) {
        z ^= v + 0x9E3779B97F4A7C15ull + (z << 6) + (z >> 2);
        z *= 0xBF58476D1CE4E5B9ull;
    }
    return z;
}

}  // namespace

TrainResult train_model(Model& model, const TrainConfig& cfg, std::ostream& log,
                        std::vector<Modality>* modality_trace, int start_step, AdamW* resume_opt) {
    cfg.validate();
    fs::create_directories(cfg.out_dir);

    std::map<Modality, std::vector<SequenceRecord>> pools;
    std::vector<Modality> mods;
    if (cfg.regime == TrainConfig::Regime::Specific) {
        mods = {cfg.modality};
    } else {
        mods = {Modality::T, Modality::E, Modality::D};
    }
    for (Modality m : mods) pools[m] = make_training_pool(cfg, m);

    AdamWConfig ocfg;
    ocfg.lr = cfg.lr;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW local_opt(model.params(), ocfg);
    AdamW& opt = resume_opt ? *resume_opt : local_opt;

    TrainResult result;
    const int total_steps = cfg.epochs * cfg.steps_per_epoch;
    const Dtype dt = model.cfg().dtype;
    const bool token_mode = model.cfg().temporal.mode == TemporalMode::Token;

    for (int step = start_step; step < total_steps; ++step) {
        model.params().zero_grad();
        double btotal = 0, bcls = 0, bl1 = 0, bgiou = 0, bbal = 0;
        try {
            for (int b = 0; b < cfg.batch; ++b) {
                Rng srng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step),
                                  static_cast<std::uint64_t>(b), 0));
                const Modality mod =
                    mods[static_cast<std::size_t>(srng.uniform_int(static_cast<std::int64_t>(mods.size())))];
                if (modality_trace) modality_trace->push_back(mod);
                const auto& pool = pools[mod];
                const SequenceRecord& seq =
                    pool[static_cast<std::size_t>(srng.uniform_int(static_cast<std::int64_t>(pool.size())))];

                const int ft = static_cast<int>(srng.uniform_int(seq.frames));
                const int lo = std::max(0, ft - cfg.max_gap);
                const int hi = std::min(seq.frames - 1, ft + cfg.max_gap);
                const int clip = std::min(cfg.clip_len, hi - lo + 1);
                const int fs0 = lo + static_cast<int>(srng.uniform_int(hi - lo + 2 - clip));

                const CropWindow zwin = crop_window(seq.gt[static_cast<std::size_t>(ft)], 2.0);
                Frame z_rgb{Modality::RGB,
                            crop_resize(seq.rgb[static_cast<std::size_t>(ft)], zwin,
                                        model.cfg().template_side, dt)};
                Frame z_x{mod, crop_resize(seq.x[static_cast<std::size_t>(ft)], zwin,
                                           model.cfg().template_side, dt)};

                Graph g;
                auto states = states_to_values(g, model.make_states(mod));
                Value sample_loss;
                Tensor context;
                for (int j = 0; j < clip; ++j) {
                    const int fs = fs0 + j;
                    Rng jrng = srng.fork(static_cast<std::uint64_t>(100 + j));
                    const CropWindow swin =
                        crop_window(seq.gt[static_cast<std::size_t>(fs)], 4.0, &jrng);
                    Frame s_rgb{Modality::RGB,
                                crop_resize(seq.rgb[static_cast<std::size_t>(fs)], swin,
                                            model.cfg().search_side, dt)};
                    Frame s_x{mod, crop_resize(seq.x[static_cast<std::size_t>(fs)], swin,
                                               model.cfg().search_side, dt)};
                    const BBox gt_crop = box_to_crop(seq.gt[static_cast<std::size_t>(fs)], swin);

                    auto fwd = model.forward(
                        g, z_rgb, z_x, s_rgb, s_x, states, /*train_mode=*/true,
                        mix_seed(cfg.seed, static_cast<std::uint64_t>(step),
                                 static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(j + 1)),
                        context.defined() ? &context : nullptr);
                    states = fwd.states;
                    if (token_mode) context = fwd.fused_search.tensor().clone();

                    LossBreakdown lb = total_loss(fwd.maps, gt_crop, fwd.balance, model.cfg().loss);
                    sample_loss = j == 0 ? lb.total : add(sample_loss, lb.total);
                    bcls += lb.cls / clip;
                    bl1 += lb.l1 / clip;
                    bgiou += lb.giou / clip;
                    bbal += lb.balance / clip;
                }
                sample_loss = scale(sample_loss, 1.0 / (static_cast<double>(cfg.batch) * clip));
                btotal += sample_loss.tensor().at(0) * cfg.batch;
                g.backward(sample_loss);
            }
            opt.step();
        } catch (const DomainError& e) {
            throw TrainError("step " + std::to_string(step) + ": " + e.what());
        } catch (const TrainError& e) {
            throw TrainError("step " + std::to_string(step) + ": " + e.what());
        }

        btotal /= cfg.batch;
        bcls /= cfg.batch;
        bl1 /= cfg.batch;
        bgiou /= cfg.batch;
        bbal /= cfg.batch;
        result.total_history.push_back(btotal);
        log << "step " << step << " total " << btotal << " cls " << bcls << " l1 " << bl1
            << " giou " << bgiou << " balance " << bbal << "\n";

        if ((step + 1) % cfg.steps_per_epoch == 0) {
            const int epoch = (step + 1) / cfg.steps_per_epoch;
            const std::string path =
                (fs::path(cfg.out_dir) / ("checkpoint_epoch" + std::to_string(epoch) + ".ckpt"))
                    .string();
            save_checkpoint(path, model, nullptr, step + 1);
            log << "epoch " << epoch << " checkpoint " << path << "\n";
        }
    }

    result.final_checkpoint = (fs::path(cfg.out_dir) / "checkpoint_final.ckpt").string();
    save_checkpoint(result.final_checkpoint, model, &opt, total_steps);
    return result;
}

}  // namespace mdtrack
