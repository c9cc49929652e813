#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "spinterp/dlm.hpp"

using namespace spinterp;
using Catch::Approx;

namespace {

dlm::DlmParams random_params(Rng& rng, int K) {
    dlm::DlmParams p;
    for (int k = 0; k < K; ++k) {
        p.logits.push_back(rng.normal());
        p.means.push_back(rng.uniform(-0.2, 1.2));
        p.log_scales.push_back(rng.uniform(std::log(dlm::kMinScale), 0.5));
    }
    return p;
}

// Direct logistic CDF differences, independent of the library's bin code.
double oracle_bin(const dlm::DlmParams& p, const QuantGrid& g, int bin) {
    const auto w = p.weights();
    const double h = 0.5 * g.bin_width();
    double total = 0;
    for (int k = 0; k < p.components(); ++k) {
        const double s = std::exp(p.log_scales[k]);
        auto cdf = [&](double x) { return 1.0 / (1.0 + std::exp(-(x - p.means[k]) / s)); };
        const double hi = bin == g.steps() - 1 ? 1.0 : cdf(g.value(bin) + h);
        const double lo = bin == 0 ? 0.0 : cdf(g.value(bin) - h);
        total += w[k] * (hi - lo);
    }
    return total;
}

}  // namespace

TEST_CASE("pmf matches logistic CDF differences and sums to one") {
    Rng rng(1);
    for (int q : {2, 8, 15, 100}) {
        const QuantGrid g(q);
        for (int i = 0; i < 50; ++i) {
            const auto p = random_params(rng, 1 + i % 3);
            const auto pmf = dlm::pmf(p, g);
            REQUIRE(static_cast<int>(pmf.size()) == q);
            CHECK(std::accumulate(pmf.begin(), pmf.end(), 0.0) == Approx(1.0).margin(1e-12));
            for (int b = 0; b < q; ++b) CHECK(pmf[b] == Approx(oracle_bin(p, g, b)).margin(1e-12));
        }
    }
}

TEST_CASE("mass concentrates on the bin under a narrow component") {
    const QuantGrid g(15);
    dlm::DlmParams p{{0.0}, {g.value(6)}, {std::log(dlm::kMinScale)}};
    CHECK(dlm::bin_prob(p, g, 6) > 1 - 1e-9);
    CHECK(dlm::mode_index(p, g) == 6);
    CHECK(dlm::mode(p, g) == g.value(6));
    CHECK(dlm::log_prob(p, g, g.value(0)) == Approx(std::log(dlm::kProbFloor)));
}

TEST_CASE("tails absorb mass outside [0, 1]") {
    const QuantGrid g(8);
    dlm::DlmParams p{{0.0}, {-3.0}, {std::log(0.1)}};
    CHECK(dlm::bin_prob(p, g, 0) == Approx(1.0).margin(1e-9));
    p.means = {4.0};
    CHECK(dlm::bin_prob(p, g, 7) == Approx(1.0).margin(1e-9));
}

TEST_CASE("near-ties resolve to the lower bin") {
    const QuantGrid g(5);
    // Symmetric about the midpoint of bins 1 and 2.
    dlm::DlmParams p{{0.0}, {0.375}, {std::log(0.05)}};
    CHECK(dlm::mode_index(p, g) == 1);
}

TEST_CASE("head mapping floors the scale") {
    CHECK(dlm::floored_log_scale(-50.0) >= std::log(dlm::kMinScale));
    CHECK(dlm::floored_log_scale(-50.0) == Approx(std::log(dlm::kMinScale)));
    CHECK(dlm::floored_log_scale(3.0) == Approx(3.0).epsilon(1e-3));
    const std::vector<double> head{0.1, -0.2, 0.3, 0.7, -9.0, 1.0};
    const auto p = dlm::from_head(head, 2);
    CHECK(p.components() == 2);
    CHECK(p.means[1] == 0.7);
    CHECK(p.log_scales[1] == dlm::floored_log_scale(1.0));
}

TEST_CASE("head log-likelihood gradient matches central differences") {
    Rng rng(9);
    for (int q : {8, 15, 100}) {
        const QuantGrid g(q);
        for (int trial = 0; trial < 20; ++trial) {
            const int K = 3;
            std::vector<double> head(3 * K);
            for (int k = 0; k < K; ++k) {
                head[k] = rng.normal();
                head[K + k] = rng.uniform(0, 1);
                head[2 * K + k] = rng.uniform(-4, 0);
            }
            const int bin = static_cast<int>(rng.below(q));
            std::vector<double> grad(3 * K);
            dlm::head_log_prob(head, K, g, bin, grad);
            for (int i = 0; i < 3 * K; ++i) {
                auto hp = head, hm = head;
                hp[i] += 1e-6;
                hm[i] -= 1e-6;
                const double num = (dlm::head_log_prob(hp, K, g, bin) - dlm::head_log_prob(hm, K, g, bin)) / 2e-6;
                CHECK(grad[i] == Approx(num).margin(1e-5).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("sampling follows the pmf") {
    Rng rng(4);
    const QuantGrid g(8);
    const auto p = random_params(rng, 3);
    const auto pmf = dlm::pmf(p, g);
    std::vector<int> counts(8);
    const int N = 200000;
    for (int i = 0; i < N; ++i) {
        const double v = dlm::sample(p, g, rng);
        REQUIRE(g.on_grid(v));
        ++counts[g.nearest_index(v)];
    }
    for (int b = 0; b < 8; ++b) CHECK(counts[b] / double(N) == Approx(pmf[b]).margin(5 * std::sqrt(pmf[b] / N) + 1e-4));
}
