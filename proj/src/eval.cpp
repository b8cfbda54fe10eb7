#include "mdtrack/eval.hpp"

namespace mdtrack {

double success_auc_from_ious(const std::vector<double>& ious) {
    if (ious.empty()) return 0.0;
    double acc = 0.0;
    int thresholds = 0;
    for (int k = 0; k <= 20; ++k) {
        const double t = 0.05 * k;
        std::int64_t hit = 0;
        // strict at zero so total misses score 0, inclusive elsewhere so a
        // perfect tracker scores 1
        for (double v : ious)
            if (k == 0 ? v > 0.0 : v >= t) ++hit;
        acc += static_cast<double>(hit) / static_cast<double>(ious.size());
        ++thresholds;
    }
    return acc / thresholds;
}

EvalMetrics evaluate(const Model& model, const std::vector<SequenceRecord>& dataset,
                     bool reset_states_each_frame) {
    std::vector<double> ious;
    std::int64_t within5 = 0, within20 = 0;
    for (const SequenceRecord& seq : dataset) {
        if (seq.frames < 2) continue;
        TrackSession session(model, seq.rgb[0], seq.x[0], seq.x_modality, seq.gt[0]);
        for (int t = 1; t < seq.frames; ++t) {
            if (reset_states_each_frame) session.set_states(model.make_states(seq.x_modality));
            const BBox pred = session.update(seq.rgb[static_cast<std::size_t>(t)],
                                             seq.x[static_cast<std::size_t>(t)]);
            const BBox& gt = seq.gt[static_cast<std::size_t>(t)];
            ious.push_back(iou(pred, gt));
            const double err = center_distance(pred, gt);
            if (err <= 5.0) ++within5;
            if (err <= 20.0) ++within20;
        }
    }
    EvalMetrics m;
    m.frames = static_cast<std::int64_t>(ious.size());
    if (m.frames == 0) return m;
    double iou_acc = 0;
    for (double v : ious) iou_acc += v;
    m.mean_iou = iou_acc / static_cast<double>(m.frames);
    m.precision5 = static_cast<double>(within5) / static_cast<double>(m.frames);
    m.precision20 = static_cast<double>(within20) / static_cast<double>(m.frames);
    m.success_auc = success_auc_from_ious(ious);
    return m;
}

}  // namespace mdtrack
