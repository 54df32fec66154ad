#include <gtest/gtest.h>

#include <random>
#include <stdexcept>

#include "oracles.hpp"
#include "qseg/tensor.hpp"

using qseg::Tensor;

namespace {

struct ConvCase
{
		std::size_t n, c, h, w, o, k, stride, pad;
};

const ConvCase kCases[] = {
		{1, 1, 5, 5, 1, 3, 1, 0}, {2, 3, 8, 8, 4, 3, 1, 1}, {1, 2, 7, 6, 3, 3, 2, 1}, {2, 4, 8, 8, 2, 1, 1, 0},
		{1, 3, 9, 9, 2, 4, 2, 1}, {1, 2, 6, 6, 5, 5, 1, 2}, {3, 1, 10, 7, 2, 2, 2, 0}, {1, 2, 4, 4, 2, 4, 2, 1},
};

} // namespace

TEST(Tensor, ConvMatchesNaiveLoops)
{
	std::mt19937_64 gen(11);
	for (const ConvCase &cc : kCases)
	{
		const Tensor x = oracle::random_tensor(gen, {cc.n, cc.c, cc.h, cc.w});
		const Tensor k = oracle::random_tensor(gen, {cc.o, cc.c, cc.k, cc.k});
		const Tensor got = qseg::conv2d(x, k, cc.stride, cc.pad);
		const Tensor want = oracle::conv(x, k, long(cc.stride), long(cc.pad));
		ASSERT_EQ(got.shape(), want.shape());
		for (std::size_t i = 0; i < got.size(); ++i)
			EXPECT_NEAR(got[i], want[i], 1e-12);
	}
}

TEST(Tensor, DeconvMatchesScatterOracle)
{
	std::mt19937_64 gen(12);
	for (const ConvCase &cc : kCases)
	{
		// Treat (h, w) as the deconv output size; the input is the matching conv output.
		const std::size_t ih = qseg::conv_out_size(cc.h, cc.k, cc.stride, cc.pad);
		const std::size_t iw = qseg::conv_out_size(cc.w, cc.k, cc.stride, cc.pad);
		const Tensor x = oracle::random_tensor(gen, {cc.n, cc.o, ih, iw});
		const Tensor k = oracle::random_tensor(gen, {cc.o, cc.c, cc.k, cc.k});
		const Tensor got = qseg::deconv2d(x, k, cc.stride, cc.pad, cc.h, cc.w);
		const Tensor want = oracle::deconv(x, k, long(cc.stride), long(cc.pad), long(cc.h), long(cc.w));
		ASSERT_EQ(got.shape(), want.shape());
		for (std::size_t i = 0; i < got.size(); ++i)
			EXPECT_NEAR(got[i], want[i], 1e-12);
	}
}

TEST(Tensor, DeconvIsAdjointOfConv)
{
	std::mt19937_64 gen(13);
	for (const ConvCase &cc : kCases)
	{
		const Tensor x = oracle::random_tensor(gen, {cc.n, cc.c, cc.h, cc.w});
		const Tensor k = oracle::random_tensor(gen, {cc.o, cc.c, cc.k, cc.k});
		const Tensor y = qseg::conv2d(x, k, cc.stride, cc.pad);
		const Tensor g = oracle::random_tensor(gen, y.shape());
		const Tensor xt = qseg::deconv2d(g, k, cc.stride, cc.pad, cc.h, cc.w);
		EXPECT_NEAR(oracle::dot(y, g), oracle::dot(x, xt), 1e-10);
	}
}

TEST(Tensor, ConvBackwardMatchesFiniteDifferences)
{
	std::mt19937_64 gen(14);
	for (const ConvCase &cc : kCases)
	{
		const Tensor x = oracle::random_tensor(gen, {cc.n, cc.c, cc.h, cc.w});
		const Tensor k = oracle::random_tensor(gen, {cc.o, cc.c, cc.k, cc.k});
		const Tensor y = qseg::conv2d(x, k, cc.stride, cc.pad);
		const Tensor r = oracle::random_tensor(gen, y.shape());
		const qseg::ConvGrads g = qseg::conv2d_backward(r, {x, k, {cc.stride, cc.pad}});

		auto fx = [&](const Tensor &xx) { return oracle::dot(qseg::conv2d(xx, k, cc.stride, cc.pad), r); };
		auto fk = [&](const Tensor &kk) { return oracle::dot(qseg::conv2d(x, kk, cc.stride, cc.pad), r); };
		const auto cx = oracle::pick_coords(gen, x.size(), 30);
		const auto ck = oracle::pick_coords(gen, k.size(), 30);
		std::vector<double> ax, ak;
		for (std::size_t i : cx)
			ax.push_back(g.grad_input[i]);
		for (std::size_t i : ck)
			ak.push_back(g.grad_kernel[i]);
		EXPECT_LT(oracle::rel_err(ax, oracle::finite_diff(fx, x, cx)), 1e-7);
		EXPECT_LT(oracle::rel_err(ak, oracle::finite_diff(fk, k, ck)), 1e-7);
	}
}

TEST(Tensor, DeconvBackwardMatchesFiniteDifferences)
{
	std::mt19937_64 gen(15);
	for (const ConvCase &cc : kCases)
	{
		const std::size_t ih = qseg::conv_out_size(cc.h, cc.k, cc.stride, cc.pad);
		const std::size_t iw = qseg::conv_out_size(cc.w, cc.k, cc.stride, cc.pad);
		const Tensor x = oracle::random_tensor(gen, {cc.n, cc.o, ih, iw});
		const Tensor k = oracle::random_tensor(gen, {cc.o, cc.c, cc.k, cc.k});
		const Tensor y = qseg::deconv2d(x, k, cc.stride, cc.pad, cc.h, cc.w);
		const Tensor r = oracle::random_tensor(gen, y.shape());
		const qseg::ConvGrads g = qseg::deconv2d_backward(r, {x, k, {cc.stride, cc.pad}});

		auto fx = [&](const Tensor &xx) { return oracle::dot(qseg::deconv2d(xx, k, cc.stride, cc.pad, cc.h, cc.w), r); };
		auto fk = [&](const Tensor &kk) { return oracle::dot(qseg::deconv2d(x, kk, cc.stride, cc.pad, cc.h, cc.w), r); };
		const auto cx = oracle::pick_coords(gen, x.size(), 30);
		const auto ck = oracle::pick_coords(gen, k.size(), 30);
		std::vector<double> ax, ak;
		for (std::size_t i : cx)
			ax.push_back(g.grad_input[i]);
		for (std::size_t i : ck)
			ak.push_back(g.grad_kernel[i]);
		EXPECT_LT(oracle::rel_err(ax, oracle::finite_diff(fx, x, cx)), 1e-7);
		EXPECT_LT(oracle::rel_err(ak, oracle::finite_diff(fk, k, ck)), 1e-7);
	}
}

TEST(Tensor, Stride2Deconv4x4DoublesResolution)
{
	EXPECT_EQ(qseg::deconv_out_size(16, 4, 2, 1), 32u);
	Tensor x({1, 2, 16, 16}, 1.0);
	Tensor k({2, 3, 4, 4}, 0.5);
	EXPECT_EQ(qseg::deconv2d(x, k, 2, 1).shape(), (qseg::Shape{1, 3, 32, 32}));
}

TEST(Tensor, MaxPoolForwardBackward)
{
	Tensor x({1, 1, 4, 4}, std::vector<double>{1, 5, 2, 0, 3, 4, 8, 8, -1, -2, 0, 0, -3, -4, 0, 7});
	qseg::PoolCache cache;
	const Tensor y = qseg::maxpool2d(x, 2, &cache);
	EXPECT_EQ(y.vec(), (std::vector<double>{5, 8, -1, 7}));
	const Tensor g = qseg::maxpool2d_backward(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}), cache);
	// Tie between the two 8s goes to the first one.
	EXPECT_EQ(g.vec(), (std::vector<double>{0, 1, 0, 0, 0, 0, 2, 0, 3, 0, 0, 0, 0, 0, 0, 4}));
}

TEST(Tensor, MaxPoolBackwardMatchesFiniteDifferences)
{
	std::mt19937_64 gen(16);
	for (int rep = 0; rep < 20; ++rep)
	{
		const Tensor x = oracle::random_tensor(gen, {2, 3, 6, 8});
		qseg::PoolCache cache;
		const Tensor y = qseg::maxpool2d(x, 2, &cache);
		const Tensor r = oracle::random_tensor(gen, y.shape());
		const Tensor g = qseg::maxpool2d_backward(r, cache);
		auto f = [&](const Tensor &xx) { return oracle::dot(qseg::maxpool2d(xx, 2), r); };
		const auto c = oracle::pick_coords(gen, x.size(), 40);
		std::vector<double> a;
		for (std::size_t i : c)
			a.push_back(g[i]);
		EXPECT_LT(oracle::rel_err(a, oracle::finite_diff(f, x, c)), 1e-7);
	}
}

TEST(Tensor, ReluBackwardMasksNonPositiveInputs)
{
	const Tensor x({4}, std::vector<double>{-1.0, 0.0, 0.5, 2.0});
	EXPECT_EQ(qseg::relu(x).vec(), (std::vector<double>{0.0, 0.0, 0.5, 2.0}));
	EXPECT_EQ(qseg::relu_backward(Tensor({4}, 3.0), x).vec(), (std::vector<double>{0.0, 0.0, 3.0, 3.0}));
}

TEST(Tensor, ShapeErrors)
{
	EXPECT_THROW(qseg::conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 3, 3}), 1, 1), std::invalid_argument);
	EXPECT_THROW(qseg::conv2d(Tensor({2, 4, 4}), Tensor({1, 2, 3, 3}), 1, 1), std::invalid_argument);
	EXPECT_THROW(qseg::add(Tensor({2, 2}), Tensor({4})), std::invalid_argument);
	EXPECT_THROW(qseg::maxpool2d(Tensor({1, 1, 5, 4}), 2), std::invalid_argument);
	EXPECT_THROW(qseg::maxpool2d_backward(Tensor({1, 1, 2, 2}), qseg::PoolCache{}), std::logic_error);
	EXPECT_THROW(qseg::conv2d_backward(Tensor({1, 1, 2, 2}), qseg::ConvCache{}), std::logic_error);
}
