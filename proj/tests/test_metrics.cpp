#include "doctest.h"

#include "olab/metrics.hpp"
#include "olab/ops.hpp"
#include "olab/rng.hpp"

#include <cmath>
#include <vector>

using namespace olab;

namespace {
Tensor random_matrix(std::size_t n, std::size_t d, Rng &rng) {
    Tensor x(n, d);
    for (std::size_t i = 0; i < x.size(); ++i) x(i) = rng.normal();
    return x;
}
} // namespace

TEST_CASE("kurtosis examples") {
    // equal per-neuron rms -> 1
    Tensor eq = Tensor::matrix({{1, -1, 1, -1}, {-1, 1, 1, 1}});
    CHECK(kurtosis(eq) == doctest::Approx(1.0).epsilon(1e-12));

    // exactly one nonzero column, d=4 -> d
    Tensor one(3, 4);
    for (std::size_t i = 0; i < 3; ++i) one(i, 2) = 1.0 + static_cast<double>(i);
    CHECK(kurtosis(one) == doctest::Approx(4.0).epsilon(1e-12));

    // s = (2,1,1,1) -> 4.75 / 1.75^2
    Tensor s = Tensor::matrix({{2, 1, 1, 1}});
    CHECK(kurtosis(s) == doctest::Approx(4.75 / (1.75 * 1.75)).epsilon(1e-12));

    Tensor z(2, 2);
    CHECK_THROWS(kurtosis(z));
}

TEST_CASE("kurtosis bounds and scale invariance") {
    Rng rng(31);
    for (int trial = 0; trial < 10000; ++trial) {
        const std::size_t n = 1 + rng.uniform_int(8);
        const std::size_t d = 1 + rng.uniform_int(16);
        Tensor x = random_matrix(n, d, rng);
        const double k = kurtosis(x);
        CHECK(k >= 1.0 - 1e-12);
        CHECK(k <= static_cast<double>(d) + 1e-12);
        Tensor sx = x;
        sx *= 7.25;
        CHECK(kurtosis(sx) == doctest::Approx(k).epsilon(1e-12));
    }
}

TEST_CASE("mmr examples") {
    Tensor c = Tensor::matrix({{2, -2, 2}, {-2, 2, -2}});
    CHECK(mmr(c).value == doctest::Approx(1.0).epsilon(1e-12));

    Tensor single = Tensor::matrix({{1, -2, 3, -4, 10}});
    CHECK(mmr(single).value == doctest::Approx(10.0 / 3.0).epsilon(1e-12));

    // rows with max/median ratios 2 and 4, mean -> 3
    Tensor two = Tensor::matrix({{1, 1, 2}, {1, 1, 4}});
    CHECK(mmr(two).value == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(mmr(two, MmrAggregate::Max).value == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(mmr(two, MmrAggregate::Median).value == doctest::Approx(3.0).epsilon(1e-12));

    // zero-median row skipped and counted; all-skip errors
    Tensor mixed = Tensor::matrix({{0, 0, 1}, {1, 1, 2}});
    MmrResult r = mmr(mixed);
    CHECK(r.skipped_rows == 1);
    CHECK(r.value == doctest::Approx(2.0).epsilon(1e-12));
    Tensor dead = Tensor::matrix({{0, 0, 1}});
    CHECK_THROWS(mmr(dead));

    // scale invariance
    Tensor scaled = two;
    scaled *= 0.125;
    CHECK(mmr(scaled).value == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("sigprop examples") {
    // cyclic trace identity, orthogonal rows, rank collapse
    Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
    SigpropResult s = sigprop(x);
    CHECK(s.trace_residual <= 1e-12);

    Tensor orth = Tensor::matrix({{1, 0}, {0, 1}});
    CHECK(sigprop(orth).mean_offdiag == doctest::Approx(0.0).epsilon(1e-12));

    Tensor collapsed = Tensor::matrix({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
    CHECK(sigprop(collapsed).mean_offdiag == doctest::Approx(1.0).epsilon(1e-12));

    // scale invariance after the m2 normalization
    Rng rng(32);
    Tensor r = random_matrix(5, 7, rng);
    SigpropResult a = sigprop(r);
    Tensor rs = r;
    rs *= 3.0;
    SigpropResult b = sigprop(rs);
    CHECK(a.mean_offdiag == doctest::Approx(b.mean_offdiag).epsilon(1e-12));
    CHECK(a.rms_offdiag == doctest::Approx(b.rms_offdiag).epsilon(1e-12));
    CHECK(a.feature_corr_rms == doctest::Approx(b.feature_corr_rms).epsilon(1e-12));
}

TEST_CASE("fourth-moment ledger balances") {
    Rng rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(30);
        const std::size_t d = 2 + rng.uniform_int(30);
        Tensor x = random_matrix(n, d, rng);
        const double m2 = moment_m2(x);
        Tensor xn = x;
        xn *= 1.0 / std::sqrt(m2);
        SigpropResult s = sigprop(x);

        const double nn = static_cast<double>(n), dd = static_cast<double>(d);
        const double lhs = nn * nn * dd * kurtosis(xn) +
                           s.feature_corr_rms * s.feature_corr_rms * dd * (dd - 1) * nn * nn;
        Tensor gram = matmul_nt(xn, xn);
        double rhs = 0;
        for (std::size_t i = 0; i < gram.size(); ++i) rhs += gram(i) * gram(i);
        CHECK(std::fabs(lhs - rhs) <= 1e-9 * std::fabs(rhs));
    }
}

TEST_CASE("attention entropy examples") {
    Tensor hot = Tensor::matrix({{1, 0, 0}, {0, 0, 1}, {0, 1, 0}});
    CHECK(attention_entropy(hot) == doctest::Approx(0.0).epsilon(1e-12));

    Tensor uni(4, 4);
    uni.fill(0.25);
    CHECK(attention_entropy(uni) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor causal = Tensor::matrix({{1, 0}, {0.5, 0.5}});
    CHECK(attention_entropy(causal) == doctest::Approx(std::log(2.0) / 2).epsilon(1e-12));

    Tensor neg = Tensor::matrix({{1.5, -0.5}});
    CHECK_THROWS(attention_entropy(neg));
    Tensor bad = Tensor::matrix({{0.7, 0.2}});
    CHECK_THROWS(attention_entropy(bad));
}

TEST_CASE("moment update decomposition examples") {
    MomentDecomposition d = moment_update_decomposition(Tensor::matrix({{1}}),
                                                        Tensor::matrix({{0.5}}));
    CHECK(d.u21 == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(d.u22 == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(d.m2_delta == doctest::Approx(1.25).epsilon(1e-15));
    CHECK(d.m2_delta == doctest::Approx(1.5 * 1.5 - 1.0).epsilon(1e-15));

    Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
    Tensor zero(2, 2);
    MomentDecomposition z = moment_update_decomposition(x, zero);
    CHECK(z.u21 == 0.0);
    CHECK(z.u22 == 0.0);
    CHECK(z.u41 == 0.0);
    CHECK(z.u42 == 0.0);
    CHECK(z.u43 == 0.0);
    CHECK(z.u44 == 0.0);
    CHECK(z.m2_delta == 0.0);
    CHECK(z.m4_delta == 0.0);
}

TEST_CASE("decomposition reconstructs direct deltas") {
    Rng rng(34);
    for (int trial = 0; trial < 500; ++trial) {
        Tensor x = random_matrix(4, 3, rng);
        Tensor dx = random_matrix(4, 3, rng);
        dx *= 0.3;
        MomentDecomposition d = moment_update_decomposition(x, dx);
        Tensor xn = x + dx;
        const double direct2 = moment_m2(xn) - moment_m2(x);
        const double direct4 = moment_m4(xn) - moment_m4(x);
        CHECK(std::fabs(d.m2_delta - direct2) <= 1e-12 * (1 + std::fabs(direct2)));
        CHECK(std::fabs(d.m4_delta - direct4) <= 1e-12 * (1 + std::fabs(direct4)));
    }
}

TEST_CASE("gaussian feature oracle") {
    Rng rng(35);
    GaussianOracleResult rho0 = gaussian_feature_oracle(0.0, 64, 8, 50, rng);
    CHECK(rho0.exact_finite_n == doctest::Approx(1.0 + 2.0 / 64).epsilon(1e-15));

    GaussianOracleResult r = gaussian_feature_oracle(0.5, 64, 32, 200, rng);
    CHECK(r.exact_finite_n == doctest::Approx(1.5234375).epsilon(1e-15));
    CHECK(std::fabs(r.estimate - r.exact_finite_n) <= 4.0 * r.stderr_);

    // large-n limit approaches 1 + 2 rho^2
    GaussianOracleResult big = gaussian_feature_oracle(0.5, 100000, 2, 1, rng);
    CHECK(big.exact_finite_n == doctest::Approx(1.5).epsilon(1e-4));

    CHECK_THROWS(gaussian_feature_oracle(1.0, 8, 2, 1, rng));
    CHECK_THROWS(gaussian_feature_oracle(-0.1, 8, 2, 1, rng));
}

TEST_CASE("metric record round trip and bounds") {
    Rng rng(36);
    Tensor x = random_matrix(32, 8, rng);
    std::vector<Tensor> attn;
    Tensor a(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j <= i; ++j) a(i, j) = 1.0 / static_cast<double>(i + 1);
    attn.push_back(a);

    MetricRecord rec = compute_metrics(x, attn, 75, 2, "attn-input");
    CHECK(rec.step == 75);
    CHECK(rec.layer == 2);
    CHECK(rec.kurtosis >= 1.0);
    CHECK(rec.kurtosis <= 8.0);
    CHECK(rec.mmr >= 1.0);
    CHECK(rec.attention_entropy >= 0.0);
    CHECK(rec.attention_entropy <= std::log(4.0) + 1e-12);

    MetricRecord back = MetricRecord::from_json(rec.to_json());
    CHECK(back.step == rec.step);
    CHECK(back.site == rec.site);
    CHECK(back.kurtosis == rec.kurtosis);
    CHECK(back.attention_entropy == rec.attention_entropy);

    MetricRecord no_attn = compute_metrics(x, {}, 0, 0, "unembed-input");
    CHECK(no_attn.attention_entropy == -1.0);

    CHECK(MetricRecord::csv_header().size() > 0);
    CHECK(rec.csv_row().find(',') != std::string::npos);
}

TEST_CASE("neuron rms definition") {
    Tensor x = Tensor::matrix({{3, 0}, {4, 0}});
    Tensor s = neuron_rms(x);
    CHECK(s(0) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
    CHECK(s(1) == 0.0);
}
