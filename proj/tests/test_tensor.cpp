#include "lgcvs/conv.hpp"
#include "lgcvs/nn.hpp"
#include "lgcvs/tensor.hpp"

#include "gradcheck.hpp"

#include <gtest/gtest.h>

using namespace lgcvs;
using D = Tensor<double>;

namespace {
D randn(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng);
    return D::from_data(shape, std::move(v));
}
}  // namespace

TEST(Autograd, ElementwiseChain) {
    std::mt19937_64 rng(1);
    auto x = randn({3, 4}, rng);
    auto err = gradcheck::max_rel_err({x}, [&] {
        return mean_all(mul(sigmoid(x), tanh_t(add_scalar(square(x), 0.5))));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, SoftplusAbsSqrt) {
    std::mt19937_64 rng(2);
    auto x = randn({2, 5}, rng);
    auto err = gradcheck::max_rel_err({x}, [&] {
        return mean_all(add(softplus(x), sqrt_t(add_scalar(square(x), 1.0))));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, MatmulLinear) {
    std::mt19937_64 rng(3);
    auto x = randn({4, 3}, rng);
    auto w = randn({5, 3}, rng);
    auto b = randn({5}, rng);
    auto err = gradcheck::max_rel_err({x, w, b}, [&] { return mean_all(square(linear(x, w, b))); });
    EXPECT_LT(err, 1e-4);

    auto a = randn({3, 4}, rng);
    auto m = randn({4, 2}, rng);
    err = gradcheck::max_rel_err({a, m}, [&] { return sum_all(square(matmul(a, m))); });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, ReductionsAndBroadcast) {
    std::mt19937_64 rng(4);
    auto x = randn({4, 3}, rng);
    auto g = randn({1, 3}, rng);
    auto c = randn({4, 1}, rng);
    auto err = gradcheck::max_rel_err({x, g, c}, [&] {
        auto y = rowwise(x, g, BcastMode::Mul);
        y = colwise(y, c, BcastMode::Add);
        return add(mean_all(square(mean_dim0(y))), mean_all(square(mean_dim1(y))));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, SoftmaxCrossEntropy) {
    std::mt19937_64 rng(5);
    auto x = randn({4, 6}, rng);
    std::vector<int> targets = {0, 3, 5, 2};
    auto err = gradcheck::max_rel_err({x}, [&] { return cross_entropy_rows(x, targets); });
    EXPECT_LT(err, 1e-4);
    // uniform logits -> CE == ln(num_classes)
    auto u = D::zeros({3, 4});
    EXPECT_NEAR(cross_entropy_rows(u, {0, 1, 2}).item(), std::log(4.0), 1e-12);
}

TEST(Autograd, BceWithLogits) {
    std::mt19937_64 rng(6);
    auto x = randn({8, 1}, rng);
    auto y = D::from_data({8, 1}, {1, 0, 1, 1, 0, 0, 1, 0});
    auto err = gradcheck::max_rel_err({x}, [&] { return bce_with_logits(x, y); });
    EXPECT_LT(err, 1e-4);
    // perfect predictions drive the loss to zero
    auto big = D::from_data({2, 1}, {40.0, -40.0});
    auto t = D::from_data({2, 1}, {1.0, 0.0});
    EXPECT_NEAR(bce_with_logits(big, t).item(), 0.0, 1e-12);
}

TEST(Autograd, GatherScatter) {
    std::mt19937_64 rng(7);
    auto x = randn({5, 3}, rng);
    std::vector<int> idx = {0, 2, 2, 4, 1, 0};
    auto err = gradcheck::max_rel_err({x}, [&] {
        auto g = gather_rows(x, idx);
        auto s = scatter_mean_rows(square(g), idx, 5);
        return mean_all(square(s));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, ConcatSliceReshape) {
    std::mt19937_64 rng(8);
    auto a = randn({3, 2}, rng);
    auto b = randn({3, 4}, rng);
    auto err = gradcheck::max_rel_err({a, b}, [&] {
        auto c = concat_cols<double>({a, b});
        auto s = slice_cols(c, 1, 5);
        return mean_all(square(reshape(s, {12, 1})));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, Conv2d) {
    std::mt19937_64 rng(9);
    auto x = randn({2, 3, 6, 6}, rng);
    auto w = randn({4, 3, 3, 3}, rng, 0.5);
    auto b = randn({4}, rng);
    auto err = gradcheck::max_rel_err({x, w, b}, [&] {
        return mean_all(square(conv2d(x, w, b, 2, 1)));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, Conv2dGrouped) {
    std::mt19937_64 rng(10);
    auto x = randn({1, 4, 5, 5}, rng);
    auto w = randn({4, 1, 3, 3}, rng);
    auto b = randn({4}, rng);
    auto err = gradcheck::max_rel_err({x, w, b}, [&] {
        return mean_all(square(conv2d(x, w, b, 1, 1, 4)));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Conv2d, KnownValue) {
    // 1x1 input channel, identity-style kernel
    auto x = D::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    auto w = D::from_data({1, 1, 1, 1}, {2});
    auto b = D::from_data({1}, {1});
    auto y = conv2d(x, w, b);
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_DOUBLE_EQ(y.val()[0], 3);
    EXPECT_DOUBLE_EQ(y.val()[3], 9);
}

TEST(Autograd, PoolUpsample) {
    std::mt19937_64 rng(11);
    auto x = randn({1, 2, 4, 4}, rng);
    auto err = gradcheck::max_rel_err({x}, [&] {
        return mean_all(square(upsample_nearest2(avg_pool2(x))));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(Autograd, RoiAlignPool) {
    std::mt19937_64 rng(12);
    auto fm = randn({1, 3, 8, 8}, rng);
    Box box(3.2, 2.1, 13.7, 11.9);  // image coords, stride 2
    auto err = gradcheck::max_rel_err({fm}, [&] {
        return mean_all(square(roialign_pool(fm, box, 2.0, 4)));
    });
    EXPECT_LT(err, 1e-4);
}

TEST(RoiAlign, ConstantMapInvariance) {
    auto fm = D::from_data({1, 2, 6, 6}, std::vector<double>(72, 3.5));
    for (auto box : {Box(0, 0, 12, 12), Box(1.3, 2.7, 8.1, 9.9), Box(5, 5, 5, 5)}) {
        auto v = roialign_pool(fm, box, 2.0, 7);
        EXPECT_NEAR(v.val()[0], 3.5, 1e-12);
        EXPECT_NEAR(v.val()[1], 3.5, 1e-12);
    }
}

TEST(RoiAlign, Linearity) {
    std::mt19937_64 rng(13);
    auto a = randn({1, 2, 8, 8}, rng);
    auto b = randn({1, 2, 8, 8}, rng);
    Box box(2, 2, 11, 13);
    const double alpha = 0.7, beta = -1.3;
    std::vector<double> combo(a.size());
    for (size_t i = 0; i < combo.size(); ++i) combo[i] = alpha * a.val()[i] + beta * b.val()[i];
    auto pooled_combo = roialign_pool(D::from_data({1, 2, 8, 8}, combo), box, 2.0, 7);
    auto pa = roialign_pool(a, box, 2.0, 7);
    auto pb = roialign_pool(b, box, 2.0, 7);
    for (int c = 0; c < 2; ++c)
        EXPECT_NEAR(pooled_combo.val()[c], alpha * pa.val()[c] + beta * pb.val()[c], 1e-6);
}

TEST(Autograd, NormLayers) {
    std::mt19937_64 rng(14);
    auto x = randn({5, 4}, rng);
    GraphNorm<double> gn(4);
    auto err = gradcheck::max_rel_err({x, gn.gamma, gn.beta, gn.alpha},
                                      [&] { return mean_all(square(gn.forward(x))); });
    EXPECT_LT(err, 1e-3);

    auto img = randn({2, 3, 4, 4}, rng);
    InstanceNorm<double> inorm(3);
    auto err2 = gradcheck::max_rel_err({img, inorm.gamma, inorm.beta},
                                       [&] { return mean_all(square(inorm.forward(img))); });
    EXPECT_LT(err2, 1e-3);
}

TEST(GraphNorm, SingleRowDegenerateIsFinite) {
    GraphNorm<double> gn(3);
    auto x = D::from_data({1, 3}, {1.0, -2.0, 0.5});
    auto y = gn.forward(x);
    for (double v : y.val()) EXPECT_TRUE(std::isfinite(v));
}

TEST(AdamW, ConvergesOnQuadratic) {
    auto p = D::from_data({2}, {5.0, -3.0}, true);
    ParamList<double> plist{{"p", p}};
    AdamW<double> opt(plist, 0.1);
    for (int i = 0; i < 300; ++i) {
        opt.zero_grad();
        auto loss = sum_all(square(p));
        loss.backward();
        opt.step();
    }
    EXPECT_LT(std::abs(p.val()[0]), 1e-2);
    EXPECT_LT(std::abs(p.val()[1]), 1e-2);
}

TEST(Checkpoint, RoundTripIsExactInFloat) {
    std::mt19937_64 rng(15);
    Tensor<float> a = Tensor<float>::zeros({3, 4}, true);
    Tensor<float> b = Tensor<float>::zeros({7}, true);
    fill_uniform(a, rng, -2.0f, 2.0f);
    fill_uniform(b, rng, -2.0f, 2.0f);
    ParamList<float> plist{{"layer.w", a}, {"layer.b", b}};
    save_params("/tmp/lgcvs_test_ckpt.bin", plist, "{\"epoch\":3}");

    Tensor<float> a2 = Tensor<float>::zeros({3, 4}, true);
    Tensor<float> b2 = Tensor<float>::zeros({7}, true);
    ParamList<float> plist2{{"layer.w", a2}, {"layer.b", b2}};
    auto cfg = load_params("/tmp/lgcvs_test_ckpt.bin", plist2);
    EXPECT_EQ(a.val(), a2.val());
    EXPECT_EQ(b.val(), b2.val());
    EXPECT_EQ(cfg, "{\"epoch\":3}");
}
