#include "mdtrack/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mdtrack/rng.hpp"

namespace mdtrack {

namespace {

double eval_loss(const std::function<Value(Graph&)>& build_loss) {
    Graph g(/*grad_enabled=*/false);
    Value loss = build_loss(g);
    if (loss.numel() != 1) throw ShapeError("grad_check loss must be scalar");
    const double v = loss.tensor().at(0);
    if (!std::isfinite(v)) throw DomainError("grad_check: non-finite loss");
    return v;
}

std::uint64_t name_seed(const std::string& name) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

GradCheckResult grad_check(const std::function<Value(Graph&)>& build_loss,
                           const std::vector<Param*>& params, double step,
                           std::int64_t max_elements_per_param) {
    if (step <= 0.0) throw DomainError("grad_check step must be positive");

    for (Param* p : params) p->zero_grad();
    {
        Graph g(/*grad_enabled=*/true);
        Value loss = build_loss(g);
        g.backward(loss);
    }

    GradCheckResult result;
    for (Param* p : params) {
        std::vector<std::int64_t> indices;
        const std::int64_t n = p->value.numel();
        if (max_elements_per_param <= 0 || n <= max_elements_per_param) {
            indices.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
        } else {
            Rng rng(name_seed(p->name));
            while (static_cast<std::int64_t>(indices.size()) < max_elements_per_param) {
                const std::int64_t idx = rng.uniform_int(n);
                if (std::find(indices.begin(), indices.end(), idx) == indices.end())
                    indices.push_back(idx);
            }
        }

        for (std::int64_t idx : indices) {
            const double saved = p->value.at(idx);
            p->value.set(idx, saved + step);
            const double f_plus = eval_loss(build_loss);
            p->value.set(idx, saved - step);
            const double f_minus = eval_loss(build_loss);
            p->value.set(idx, saved);

            const double fd = (f_plus - f_minus) / (2.0 * step);
            const double ag = p->grad.at(idx);
            const double denom = std::max({std::fabs(fd), std::fabs(ag), 1e-5});
            const double rel = std::fabs(fd - ag) / denom;
            ++result.elements_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_param = p->name;
                result.worst_index = idx;
            }
        }
    }
    return result;
}

}  // namespace mdtrack
