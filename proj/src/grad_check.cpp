#include "savehr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace savehr {

GradCheckReport grad_check(const LossFn& loss, const std::vector<ParamSlot*>& params,
                           int entries_per_param, double tolerance, std::uint64_t seed,
                           double h) {
    const double l1 = loss(false);
    const double l2 = loss(false);
    if (l1 != l2)
        throw std::runtime_error("grad_check: loss is not deterministic (" +
                                 std::to_string(l1) + " vs " + std::to_string(l2) + ")");

    for (ParamSlot* p : params) p->zero_grad();
    loss(true);

    std::mt19937_64 rng(seed);
    GradCheckReport report;
    report.tolerance = tolerance;
    report.pass = true;

    for (ParamSlot* p : params) {
        GradCheckReport::PerParam pp;
        pp.name = p->name;
        const int n = static_cast<int>(p->value.size());
        const int samples = std::min(entries_per_param, n);
        // Sample without replacement when the parameter is small.
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int s = 0; s < samples; ++s) {
            const int i = idx[s];
            const double saved = p->value.data[i];
            p->value.data[i] = saved + h;
            const double lp = loss(false);
            p->value.data[i] = saved - h;
            const double lm = loss(false);
            p->value.data[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = p->grad.data[i];
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            const double rel = std::abs(analytic - numeric) / denom;
            pp.max_rel_err = std::max(pp.max_rel_err, rel);
            ++pp.tested;
        }
        if (pp.max_rel_err > tolerance) report.pass = false;
        report.per_param.push_back(std::move(pp));
    }
    return report;
}

}  // namespace savehr
