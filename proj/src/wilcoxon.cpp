#include "spinterp/wilcoxon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "spinterp/common.hpp"

namespace spinterp {

namespace {

struct Ranked {
    std::vector<double> ranks;  // |d| ranks with ties averaged
    std::vector<bool> positive;
    double tie_term = 0;        // sum of t^3 - t over tie groups
};

Ranked rank_abs(std::span<const double> d) {
    std::vector<double> a;
    std::vector<bool> pos;
    for (double v : d) {
        if (!std::isfinite(v)) throw ValidationError("wilcoxon: non-finite difference");
        if (v != 0.0) {
            a.push_back(std::fabs(v));
            pos.push_back(v > 0);
        }
    }
    const int n = static_cast<int>(a.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return a[i] < a[j]; });
    Ranked r;
    r.ranks.resize(n);
    r.positive = pos;
    for (int i = 0; i < n;) {
        int j = i;
        while (j + 1 < n && a[order[j + 1]] == a[order[i]]) ++j;
        const double avg = 0.5 * (i + 1 + j + 1);
        for (int k = i; k <= j; ++k) r.ranks[order[k]] = avg;
        const double t = j - i + 1;
        r.tie_term += t * t * t - t;
        i = j + 1;
    }
    return r;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

WilcoxonResult wilcoxon_one_sided(std::span<const double> differences, WilcoxonMode mode) {
    const Ranked r = rank_abs(differences);
    WilcoxonResult res;
    res.n = static_cast<int>(r.ranks.size());
    if (res.n == 0) throw ValidationError("wilcoxon: no non-zero differences");
    for (int i = 0; i < res.n; ++i)
        if (r.positive[i]) res.w_plus += r.ranks[i];
    res.exact = mode == WilcoxonMode::Exact || (mode == WilcoxonMode::Auto && res.n <= kWilcoxonExactMax);
    if (res.exact) {
        // Ranks are multiples of 1/2; count sign assignments by doubled rank sum.
        std::vector<int> doubled(res.n);
        int total = 0;
        for (int i = 0; i < res.n; ++i) {
            doubled[i] = static_cast<int>(std::lround(2 * r.ranks[i]));
            total += doubled[i];
        }
        std::vector<double> count(total + 1, 0.0);
        count[0] = 1;
        int reach = 0;
        for (int d : doubled) {
            for (int s = reach; s >= 0; --s)
                if (count[s] != 0) count[s + d] += count[s];
            reach += d;
        }
        const int obs = static_cast<int>(std::lround(2 * res.w_plus));
        double le = 0;
        for (int s = 0; s <= obs; ++s) le += count[s];
        res.p = std::ldexp(le, -res.n);
    } else {
        const double n = res.n;
        const double mean = n * (n + 1) / 4;
        const double var = n * (n + 1) * (2 * n + 1) / 24 - r.tie_term / 48;
        if (!(var > 0)) {
            res.p = 1.0;
        } else {
            res.p = normal_cdf((res.w_plus - mean + 0.5) / std::sqrt(var));
        }
    }
    return res;
}

}  // namespace spinterp
