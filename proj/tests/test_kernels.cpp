#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <omp.h>

#include "dygait/kernels.hpp"
#include "dygait/reference.hpp"
#include "dygait/rng.hpp"
#include "helpers.hpp"

using namespace dygait;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

TEST_CASE("tensor4 validates dims and layout") {
    CHECK_THROWS_AS(Tensor4<float>(0, 1, 1, 1), ShapeError);
    CHECK_THROWS_AS(Tensor4<float>(2, -1, 3, 3), ShapeError);
    Tensor4<float> x(2, 3, 4, 5);
    CHECK(x.size() == 2u * 3 * 4 * 5);
    x.at(1, 2, 3, 4) = 7.0f;
    CHECK(x.data[x.size() - 1] == 7.0f);  // W innermost, C outermost
}

TEST_CASE("conv spec validates kernels and computes output dims") {
    Conv3Spec bad{4, 2, 2, 3, 3, 1, 0, 1, 1};
    CHECK_THROWS_AS(bad.validate(), ShapeError);
    Conv3Spec s{4, 2, 3, 3, 3, 1, 1, 1, 1};
    s.validate();
    CHECK(s.out_t(10) == 10);
    Conv3Spec lta{4, 4, 3, 1, 1, 3, 0, 0, 0};
    CHECK(lta.out_t(30) == 10);
    CHECK(lta.out_t(9) == 3);
}

TEST_CASE("conv3d identity kernel returns input") {
    Rng rng(1);
    auto x = random_tensor<double>(1, 4, 5, 6, rng);
    Conv3Spec s{1, 1, 1, 1, 1, 1, 0, 0, 0};
    Tensor4<double> w = s.make_weights<double>();
    w.data[0] = 1.0;
    auto y = kernels::conv3d_forward(x, w, s);
    CHECK(bit_equal(x, y));
}

TEST_CASE("conv3d all-ones 3x3x3 on unit cube sums to 27") {
    Tensor4<double> x(1, 3, 3, 3);
    for (auto& v : x.data) v = 1.0;
    Conv3Spec s{1, 1, 3, 3, 3, 1, 0, 0, 0};
    Tensor4<double> w = s.make_weights<double>();
    for (auto& v : w.data) v = 1.0;
    auto y = kernels::conv3d_forward(x, w, s);
    CHECK(y.c == 1);
    CHECK(y.t == 1);
    CHECK(y.h == 1);
    CHECK(y.w == 1);
    CHECK(y.data[0] == 27.0);
}

TEST_CASE("conv3d matches naive reference on random padded case") {
    Rng rng(2);
    auto x = random_tensor<double>(2, 4, 6, 5, rng);
    Conv3Spec s{3, 2, 3, 3, 3, 1, 1, 1, 1};
    auto w = random_tensor<double>(3, 2 * 3, 3, 3, rng);
    auto fast = kernels::conv3d_forward(x, w, s);
    auto slow = ref::conv3d(x, w, s);
    CHECK(fast.same_shape(slow));
    CHECK(max_abs_diff(fast, slow) < 1e-12);
}

TEST_CASE("conv3d matches reference with temporal stride 3") {
    Rng rng(3);
    auto x = random_tensor<double>(2, 9, 8, 6, rng);
    Conv3Spec s{4, 2, 3, 1, 1, 3, 0, 0, 0};
    auto w = random_tensor<double>(4, 2 * 3, 1, 1, rng);
    auto fast = kernels::conv3d_forward(x, w, s);
    CHECK(fast.t == 3);
    CHECK(max_abs_diff(fast, ref::conv3d(x, w, s)) < 1e-12);
}

TEST_CASE("conv3d is linear") {
    Rng rng(4);
    auto x = random_tensor<double>(2, 3, 6, 6, rng);
    auto y = random_tensor<double>(2, 3, 6, 6, rng);
    Conv3Spec s{2, 2, 3, 3, 3, 1, 1, 1, 1};
    auto w = random_tensor<double>(2, 2 * 3, 3, 3, rng);
    const double a = 1.7, b = -0.3;
    Tensor4<double> mix = Tensor4<double>::zeros_like(x);
    for (size_t i = 0; i < x.size(); ++i) mix.data[i] = a * x.data[i] + b * y.data[i];
    auto left = kernels::conv3d_forward(mix, w, s);
    auto cx = kernels::conv3d_forward(x, w, s);
    auto cy = kernels::conv3d_forward(y, w, s);
    double worst = 0;
    for (size_t i = 0; i < left.size(); ++i)
        worst = std::max(worst, std::fabs(left.data[i] - (a * cx.data[i] + b * cy.data[i])));
    CHECK(worst < 1e-10);
}

TEST_CASE("conv3d rejects mismatched input naming both shapes") {
    Tensor4<double> x(3, 4, 5, 5);
    Conv3Spec s{2, 2, 3, 3, 3, 1, 1, 1, 1};
    auto w = s.make_weights<double>();
    try {
        kernels::conv3d_forward(x, w, s);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("(3,4,5,5)") != std::string::npos);
        CHECK(msg.find("c_in=2") != std::string::npos);
    }
}

TEST_CASE("conv3d forward and backward are bit-stable across thread counts") {
    Rng rng(5);
    auto x = random_tensor<double>(3, 6, 16, 16, rng);
    Conv3Spec s{4, 3, 3, 3, 3, 1, 1, 1, 1};
    auto w = random_tensor<double>(4, 3 * 3, 3, 3, rng);
    auto gy = random_tensor<double>(4, 6, 16, 16, rng);

    omp_set_num_threads(1);
    auto y1 = kernels::conv3d_forward(x, w, s);
    Tensor4<double> gx1 = Tensor4<double>::zeros_like(x), gw1 = Tensor4<double>::zeros_like(w);
    kernels::conv3d_backward_input(gy, w, s, gx1);
    kernels::conv3d_backward_weights(gy, x, s, gw1);

    omp_set_num_threads(4);
    auto y4 = kernels::conv3d_forward(x, w, s);
    Tensor4<double> gx4 = Tensor4<double>::zeros_like(x), gw4 = Tensor4<double>::zeros_like(w);
    kernels::conv3d_backward_input(gy, w, s, gx4);
    kernels::conv3d_backward_weights(gy, x, s, gw4);

    CHECK(bit_equal(y1, y4));
    CHECK(bit_equal(gx1, gx4));
    CHECK(bit_equal(gw1, gw4));
}

TEST_CASE("conv3d is pure") {
    Rng rng(6);
    auto x = random_tensor<double>(2, 4, 8, 8, rng);
    Conv3Spec s{2, 2, 3, 3, 3, 1, 1, 1, 1};
    auto w = random_tensor<double>(2, 2 * 3, 3, 3, rng);
    CHECK(bit_equal(kernels::conv3d_forward(x, w, s), kernels::conv3d_forward(x, w, s)));
}

TEST_CASE("leaky_relu definition and identity region") {
    Tensor4<double> x(2, 1, 1, 1);
    x.data = {2.0, -2.0};
    auto y = kernels::leaky_relu_forward(x, 0.01);
    CHECK(y.data[0] == 2.0);
    CHECK(y.data[1] == doctest::Approx(-0.02).epsilon(1e-15));
    Rng rng(7);
    auto pos = random_tensor<double>(2, 3, 4, 4, rng, 0.0, 1.0);
    CHECK(bit_equal(kernels::leaky_relu_forward(pos, 0.01), pos));
}

TEST_CASE("mean_over_time basics and reference match") {
    Rng rng(8);
    auto single = random_tensor<double>(2, 1, 3, 3, rng);
    CHECK(bit_equal(kernels::mean_over_time_forward(single), single));

    Tensor4<double> two(1, 2, 2, 2);
    for (int i = 0; i < 4; ++i) two.frame(0, 1)[i] = 2.0;
    auto m = kernels::mean_over_time_forward(two);
    for (size_t i = 0; i < m.size(); ++i) CHECK(m.data[i] == 1.0);

    auto x = random_tensor<double>(3, 7, 4, 4, rng);
    CHECK(max_abs_diff(kernels::mean_over_time_forward(x), ref::mean_over_time(x)) < 1e-12);
}

TEST_CASE("mean of a dyadic constant is exact and centering gives exact zeros") {
    Tensor4<double> x(2, 7, 3, 3);
    for (auto& v : x.data) v = 0.75;
    auto m = kernels::mean_over_time_forward(x);
    for (size_t i = 0; i < m.size(); ++i) CHECK(m.data[i] == 0.75);
    auto d = kernels::subtract_broadcast_forward(x, m);
    for (size_t i = 0; i < d.size(); ++i) CHECK(d.data[i] == 0.0);
}

TEST_CASE("subtract_broadcast with zero template is identity") {
    Rng rng(9);
    auto x = random_tensor<double>(2, 4, 3, 3, rng);
    Tensor4<double> zero(2, 1, 3, 3);
    CHECK(bit_equal(kernels::subtract_broadcast_forward(x, zero), x));
}

TEST_CASE("centering by the temporal mean sums to zero over time") {
    Rng rng(10);
    auto x32 = random_tensor<float>(3, 9, 6, 5, rng);
    auto m32 = kernels::mean_over_time_forward(x32);
    auto d32 = kernels::subtract_broadcast_forward(x32, m32);
    float xmax = 0;
    for (auto v : x32.data) xmax = std::max(xmax, std::fabs(v));
    for (int c = 0; c < d32.c; ++c)
        for (int h = 0; h < d32.h; ++h)
            for (int w = 0; w < d32.w; ++w) {
                float s = 0;
                for (int t = 0; t < d32.t; ++t) s += d32.at(c, t, h, w);
                CHECK(std::fabs(s) <= 1e-6f * std::max(1.0f, xmax) * d32.t);
            }
}

TEST_CASE("pad_time_edge repeats boundary frames") {
    Rng rng(11);
    auto x = random_tensor<double>(2, 4, 3, 3, rng);
    auto y = kernels::pad_time_edge_forward(x, 1);
    CHECK(y.t == 6);
    CHECK(bit_equal(y, ref::pad_time_edge(x, 1)));
    const size_t plane = 9;
    for (int c = 0; c < 2; ++c) {
        CHECK(std::memcmp(y.frame(c, 0), x.frame(c, 0), plane * sizeof(double)) == 0);
        CHECK(std::memcmp(y.frame(c, 1), x.frame(c, 0), plane * sizeof(double)) == 0);
        CHECK(std::memcmp(y.frame(c, 5), x.frame(c, 3), plane * sizeof(double)) == 0);
    }
    // single frame padded on both sides stays that frame
    auto one = random_tensor<double>(1, 1, 2, 2, rng);
    auto padded = kernels::pad_time_edge_forward(one, 2);
    CHECK(padded.t == 5);
    for (int t = 0; t < 5; ++t)
        CHECK(std::memcmp(padded.frame(0, t), one.frame(0, 0), 4 * sizeof(double)) == 0);
    // backward folds the replicated frames onto the edges
    Tensor4<double> gy(1, 5, 2, 2);
    for (size_t i = 0; i < gy.size(); ++i) gy.data[i] = static_cast<double>(i + 1);
    Tensor4<double> gx(1, 1, 2, 2);
    kernels::pad_time_edge_backward(gy, 2, gx);
    for (int i = 0; i < 4; ++i) {
        double want = 0;
        for (int t = 0; t < 5; ++t) want += gy.frame(0, t)[i];
        CHECK(gx.frame(0, 0)[i] == want);
    }
}

TEST_CASE("max_over_time picks maxima and ignores frame order") {
    Tensor4<double> x(1, 3, 2, 2);
    for (int i = 0; i < 4; ++i) {
        x.frame(0, 0)[i] = 1.0;
        x.frame(0, 1)[i] = 3.0;
        x.frame(0, 2)[i] = 2.0;
    }
    auto y = kernels::max_over_time_forward(x);
    for (size_t i = 0; i < y.size(); ++i) CHECK(y.data[i] == 3.0);

    Rng rng(11);
    auto r = random_tensor<double>(2, 5, 4, 4, rng);
    Tensor4<double> shuffled = Tensor4<double>::zeros_like(r);
    int perm[5] = {3, 0, 4, 1, 2};
    for (int c = 0; c < r.c; ++c)
        for (int t = 0; t < 5; ++t)
            for (int i = 0; i < 16; ++i) shuffled.frame(c, t)[i] = r.frame(c, perm[t])[i];
    CHECK(bit_equal(kernels::max_over_time_forward(r), kernels::max_over_time_forward(shuffled)));
}

TEST_CASE("max_over_time resolves ties to the earliest frame") {
    Tensor4<double> x(1, 3, 1, 1);
    x.data = {5.0, 5.0, 5.0};
    std::vector<int> am;
    kernels::max_over_time_forward(x, &am);
    CHECK(am[0] == 0);
}

TEST_CASE("maxpool_spatial examples and reference match") {
    Rng rng(12);
    auto x = random_tensor<double>(2, 3, 4, 4, rng);
    CHECK(bit_equal(kernels::maxpool_spatial_forward(x, 1, 1), x));

    Tensor4<double> q(1, 1, 2, 2);
    q.data = {1.0, 2.0, 3.0, 4.0};
    auto y = kernels::maxpool_spatial_forward(q, 2, 2);
    CHECK(y.size() == 1u);
    CHECK(y.data[0] == 4.0);

    auto big = random_tensor<double>(3, 4, 8, 6, rng);
    CHECK(max_abs_diff(kernels::maxpool_spatial_forward(big, 2, 2),
                       ref::maxpool_spatial(big, 2, 2)) == 0.0);

    CHECK_THROWS_AS(kernels::maxpool_spatial_forward(q, 3, 2), ShapeError);
}

TEST_CASE("strip_pool equals max+mean per band and matches reference") {
    Tensor4<double> c(3, 1, 8, 4);
    for (int ch = 0; ch < 3; ++ch)
        for (int i = 0; i < 32; ++i) c.frame(ch, 0)[i] = 0.5 * (ch + 1);
    auto y = kernels::strip_pool_forward(c, 4);
    CHECK(y.c == 4);
    CHECK(y.w == 3);
    for (int s = 0; s < 4; ++s)
        for (int ch = 0; ch < 3; ++ch)
            CHECK(y.at(s, 0, 0, ch) == doctest::Approx(2 * 0.5 * (ch + 1)).epsilon(1e-15));

    Rng rng(13);
    auto x = random_tensor<double>(5, 1, 16, 4, rng);
    CHECK(max_abs_diff(kernels::strip_pool_forward(x, 8), ref::strip_pool(x, 8)) < 1e-12);

    auto global = kernels::strip_pool_forward(x, 1);
    CHECK(global.c == 1);
    CHECK(max_abs_diff(global, ref::strip_pool(x, 1)) < 1e-12);

    CHECK_THROWS_AS(kernels::strip_pool_forward(x, 5), ShapeError);
}

TEST_CASE("matvec identity, zero, and reference match") {
    Rng rng(14);
    Tensor4<double> x(4, 1, 1, 1);
    for (auto& v : x.data) v = rng.next_symmetric(2.0);
    Tensor4<double> eye(4, 1, 1, 4);
    for (int i = 0; i < 4; ++i) eye.at(i, 0, 0, i) = 1.0;
    CHECK(bit_equal(kernels::matvec_forward(eye, x), x));

    Tensor4<double> zero(3, 1, 1, 4);
    auto z = kernels::matvec_forward(zero, x);
    for (auto v : z.data) CHECK(v == 0.0);

    auto w = random_tensor<double>(6, 1, 1, 4, rng);
    CHECK(max_abs_diff(kernels::matvec_forward(w, x), ref::matvec(w, x)) < 1e-12);
}
