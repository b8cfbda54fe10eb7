#include "mdtrack/optim.hpp"

#include <cmath>

namespace mdtrack {

AdamW::AdamW(ParamStore& store, AdamWConfig cfg) : cfg_(cfg) {
    for (Param* p : store.all())
        slots_.push_back({p, Tensor::zeros(p->value.shape(), p->value.dtype()),
                          Tensor::zeros(p->value.shape(), p->value.dtype())});
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        for (std::int64_t i = 0; i < s.param->value.numel(); ++i) {
            const double g = s.param->grad.at(i);
            if (!std::isfinite(g))
                throw TrainError("non-finite gradient in param " + s.param->name);
            const double m = cfg_.beta1 * s.m.at(i) + (1.0 - cfg_.beta1) * g;
            const double v = cfg_.beta2 * s.v.at(i) + (1.0 - cfg_.beta2) * g * g;
            s.m.set(i, m);
            s.v.set(i, v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            const double p = s.param->value.at(i);
            s.param->value.set(
                i, p - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps) - cfg_.lr * cfg_.weight_decay * p);
        }
    }
}

}  // namespace mdtrack
