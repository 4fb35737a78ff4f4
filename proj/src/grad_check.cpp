#include "vat/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "vat/rng.hpp"

namespace vat {

namespace {

bool bit_equal(double a, double b) {
    return std::memcmp(&a, &b, sizeof(double)) == 0;
}

std::vector<int64_t> pick_entries(int64_t n, int64_t budget, Rng& rng) {
    std::vector<int64_t> idx;
    if (budget >= n) {
        idx.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        return idx;
    }
    std::unordered_set<int64_t> seen;
    idx.reserve(static_cast<size_t>(budget));
    while (static_cast<int64_t>(idx.size()) < budget) {
        int64_t i = static_cast<int64_t>(rng.uniform_index(static_cast<uint64_t>(n)));
        if (seen.insert(i).second) idx.push_back(i);
    }
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(Tape*)>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           const GradCheckOptions& opt) {
    if (opt.eps < 1e-7 || opt.eps > 1e-3)
        throw ContractError("grad_check eps must lie in [1e-7, 1e-3]");

    const double base0 = f(nullptr).item();
    const double base1 = f(nullptr).item();
    if (!bit_equal(base0, base1))
        throw ContractError("grad_check requires a deterministic function; two baseline "
                            "evaluations differ");

    // Analytic pass.
    for (auto& [name, p] : params) const_cast<Tensor&>(p).zero_grad();
    Tape tape;
    Tensor loss = f(&tape);
    backward(loss, tape);
    tape.reset();

    int64_t total = 0;
    for (const auto& [name, p] : params) total += p.numel();

    Rng rng(opt.sample_seed);
    GradCheckReport report;
    const bool sample_all = total <= opt.max_entries;
    for (const auto& [name, p] : params) {
        Tensor param = p;
        int64_t budget = param.numel();
        if (!sample_all) {
            budget = std::max<int64_t>(std::min<int64_t>(param.numel(), 4),
                                       param.numel() * opt.max_entries / total);
        }
        const std::vector<int64_t> entries = pick_entries(param.numel(), budget, rng);
        const std::vector<double> analytic =
            param.has_grad() ? param.grad() : std::vector<double>(static_cast<size_t>(param.numel()), 0.0);
        for (int64_t i : entries) {
            double& slot = param.values()[static_cast<size_t>(i)];
            const double saved = slot;
            slot = saved + opt.eps;
            const double fp = f(nullptr).item();
            slot = saved - opt.eps;
            const double fm = f(nullptr).item();
            slot = saved;
            const double numeric = (fp - fm) / (2.0 * opt.eps);
            const double a = analytic[static_cast<size_t>(i)];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++report.entries_checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace vat
