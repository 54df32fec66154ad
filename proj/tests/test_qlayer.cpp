#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "oracles.hpp"
#include "qseg/qlayer.hpp"

using qseg::Tensor;

namespace {

qseg::QLayer make_layer(qseg::LayerKind kind, qseg::LayerGeometry g, bool relu, bool bn, const qseg::BitConfig &cfg,
		std::mt19937_64 &gen)
{
	qseg::QLayer l;
	l.name = "test";
	l.kind = kind;
	l.geom = g;
	l.relu = relu;
	l.cfg = cfg;
	l.master = oracle::random_tensor(gen, qseg::kernel_shape(kind, g), -0.5, 0.5);
	if (cfg.U.enabled())
		l.master = qseg::uniform_quantize(l.master, cfg.U.bits).values;
	if (bn)
		l.bn = qseg::BNState::init(g.out_channels);
	return l;
}

bool on_grid(double v, double step)
{
	return v / step == std::round(v / step);
}

} // namespace

TEST(QLayer, BilinearKernelValues)
{
	const Tensor k2 = qseg::init_bilinear(2, 1, 0);
	EXPECT_EQ(k2.vec(), std::vector<double>(4, 0.25));
	const Tensor k4 = qseg::init_bilinear(4, 2, 0);
	// Separable taps 1/4, 3/4, 3/4, 1/4.
	EXPECT_EQ(k4.at(0, 0, 0, 0), 0.0625);
	EXPECT_EQ(k4.at(0, 0, 0, 1), 0.1875);
	EXPECT_EQ(k4.at(1, 1, 1, 2), 0.5625);
	EXPECT_EQ(k4.at(0, 1, 1, 1), 0.0);
	EXPECT_EQ(qseg::init_bilinear(4, 1, 3).at(0, 0, 0, 0), 0.0);
	EXPECT_THROW(qseg::init_bilinear(1, 1, 0), std::invalid_argument);
}

TEST(QLayer, BilinearDeconvUpsamplesConstantsExactly)
{
	// Interior of a stride-2 bilinear deconv of a constant map is that constant.
	const Tensor k = qseg::init_bilinear(4, 1, 0);
	const Tensor x({1, 1, 6, 6}, 0.7);
	const Tensor y = qseg::deconv2d(x, k, 2, 1);
	ASSERT_EQ(y.shape(), (qseg::Shape{1, 1, 12, 12}));
	for (std::size_t i = 1; i < 11; ++i)
		for (std::size_t j = 1; j < 11; ++j)
			EXPECT_NEAR(y.at(0, 0, i, j), 0.7, 1e-15);
}

TEST(QLayer, MsraStatistics)
{
	qseg::Rng rng(41);
	const std::size_t fan_in = 16 * 9;
	const Tensor w = qseg::init_msra({64, 16, 3, 3}, fan_in, rng, 0);
	double s = 0.0, s2 = 0.0;
	for (double v : w.data())
	{
		s += v;
		s2 += v * v;
	}
	const double n = double(w.size());
	const double sd = std::sqrt(2.0 / double(fan_in));
	EXPECT_NEAR(s / n, 0.0, 5.0 * sd / std::sqrt(n));
	EXPECT_NEAR(std::sqrt(s2 / n), sd, 0.05 * sd);
	const Tensor wq = qseg::init_msra({8, 8, 3, 3}, 72, rng, 12);
	for (double v : wq.data())
		EXPECT_TRUE(on_grid(v, qseg::quant_step(12)));
	EXPECT_THROW(qseg::init_msra({1}, 0, rng, 0), std::invalid_argument);
}

TEST(QLayer, FullPrecisionBackwardMatchesFiniteDifferences)
{
	std::mt19937_64 gen(42);
	const auto fp = qseg::BitConfig::full_precision();
	struct Case
	{
			qseg::LayerKind kind;
			qseg::LayerGeometry g;
			bool relu, bn;
	};
	const Case cases[] = {
			{qseg::LayerKind::Conv, {3, 4, 3, 1, 1}, true, false},
			{qseg::LayerKind::Conv, {3, 4, 3, 1, 1}, true, true},
			{qseg::LayerKind::Conv, {4, 2, 1, 1, 0}, false, false},
			{qseg::LayerKind::Deconv, {2, 2, 4, 2, 1}, false, false},
			{qseg::LayerKind::Deconv, {3, 2, 4, 2, 1}, true, false},
	};
	for (const Case &c : cases)
	{
		qseg::QLayer l = make_layer(c.kind, c.g, c.relu, c.bn, fp, gen);
		const Tensor x = oracle::random_tensor(gen, {2, c.g.in_channels, 6, 6});
		const Tensor y = qseg::qlayer_forward(l, x, true).values;
		const Tensor r = oracle::random_tensor(gen, y.shape());
		qseg::Rng rng(1);
		const qseg::LayerGrads g = qseg::qlayer_backward(l, r, rng);

		qseg::QLayer probe = l;
		auto fx = [&](const Tensor &xx) { return oracle::dot(qseg::qlayer_forward(probe, xx, true).values, r); };
		auto fw = [&](const Tensor &ww) {
			probe.master = ww;
			const double v = oracle::dot(qseg::qlayer_forward(probe, x, true).values, r);
			probe.master = l.master;
			return v;
		};
		const auto cx = oracle::pick_coords(gen, x.size(), 30);
		const auto cw = oracle::pick_coords(gen, l.master.size(), 30);
		std::vector<double> ax, aw;
		for (std::size_t i : cx)
			ax.push_back(g.error_out.values[i]);
		for (std::size_t i : cw)
			aw.push_back(g.weight_grad.values[i]);
		EXPECT_LT(oracle::rel_err(ax, oracle::finite_diff(fx, x, cx)), 1e-6);
		EXPECT_LT(oracle::rel_err(aw, oracle::finite_diff(fw, l.master, cw)), 1e-6);
	}
}

TEST(QLayer, QuantizedForwardOutputsOnScaledGrid)
{
	std::mt19937_64 gen(43);
	const qseg::BitConfig cfg;
	qseg::QLayer l = make_layer(qseg::LayerKind::Conv, {3, 4, 3, 1, 1}, true, true, cfg, gen);
	const Tensor x = oracle::random_tensor(gen, {2, 3, 8, 8});
	const qseg::QTensor y = qseg::qlayer_forward(l, x, true);
	EXPECT_EQ(y.bits, 8);
	EXPECT_GE(y.scale, qseg::max_abs(y.values));
	const double step = qseg::quant_step(8);
	for (double v : y.values.data())
		EXPECT_NEAR(v / y.scale / step, std::round(v / y.scale / step), 1e-9);
	for (double v : l.cache->w_q.data())
		EXPECT_TRUE(on_grid(v, qseg::quant_step(8)));
}

TEST(QLayer, HandComposedSingleTap)
{
	qseg::QLayer l;
	l.kind = qseg::LayerKind::Conv;
	l.geom = {1, 1, 1, 1, 0};
	l.relu = false;
	l.cfg = qseg::BitConfig{};
	l.master = Tensor({1, 1, 1, 1}, 0.5);
	const qseg::QTensor y = qseg::qlayer_forward(l, Tensor({1, 1, 1, 1}, 1.0), false);
	// Scale 0.5; UQ(1.0) is clipped to 1 - step.
	EXPECT_EQ(y.values[0], 0.5 * (1.0 - qseg::quant_step(8)));
}

TEST(QLayer, GradientModesOnHandValues)
{
	qseg::QLayer l;
	l.kind = qseg::LayerKind::Conv;
	l.geom = {1, 1, 1, 1, 0};
	l.relu = false;
	l.cfg = qseg::BitConfig{};
	l.grad_mode = qseg::GradMode::AbandonScale;
	l.master = Tensor({1, 1, 1, 1}, 0.5);
	qseg::qlayer_forward(l, Tensor({1, 1, 1, 2}, std::vector<double>{0.02, -0.01}), true);
	qseg::Rng rng(7);
	// G = sum(e * a) = 1 * 0.02 + 1 * (-0.01)
	const qseg::LayerGrads g = qseg::qlayer_backward(l, Tensor({1, 1, 1, 2}, 1.0), rng);
	EXPECT_NEAR(g.raw_weight_grad[0], 0.01, 1e-15);
	EXPECT_EQ(g.weight_grad.scale, 1.0);
	EXPECT_EQ(g.weight_grad.values[0], 1.0 - qseg::quant_step(8));
}

TEST(QLayer, UpdateKeepsMasterOnUpdateGrid)
{
	std::mt19937_64 gen(44);
	qseg::BitConfig cfg;
	cfg.U.bits = 12;
	qseg::QLayer l = make_layer(qseg::LayerKind::Conv, {2, 3, 3, 1, 1}, true, true, cfg, gen);
	qseg::Rng rng(3);
	for (int step = 0; step < 5; ++step)
	{
		const Tensor x = oracle::random_tensor(gen, {2, 2, 6, 6});
		const Tensor y = qseg::qlayer_forward(l, x, true).values;
		const qseg::LayerGrads g = qseg::qlayer_backward(l, oracle::random_tensor(gen, y.shape()), rng, 1e-3);
		qseg::qlayer_update(l, g, 0.0625);
	}
	for (double v : l.master.data())
	{
		EXPECT_TRUE(on_grid(v, qseg::quant_step(12)));
		EXPECT_LE(std::fabs(v), 1.0 - qseg::quant_step(12));
	}
	for (double v : l.bn->gamma)
		EXPECT_TRUE(on_grid(v, 2.0 * qseg::quant_step(12)));
}

TEST(QLayer, CaptureRecordsRawTensors)
{
	std::mt19937_64 gen(45);
	qseg::QLayer l = make_layer(qseg::LayerKind::Conv, {2, 3, 3, 1, 1}, true, true, qseg::BitConfig{}, gen);
	l.capture = true;
	const Tensor y = qseg::qlayer_forward(l, oracle::random_tensor(gen, {1, 2, 4, 4}), true).values;
	qseg::Rng rng(1);
	qseg::qlayer_backward(l, oracle::random_tensor(gen, y.shape()), rng);
	for (const char *k : {"A", "E1", "E2", "G"})
		EXPECT_TRUE(l.probe.count(k)) << k;
	EXPECT_EQ(l.probe["G"].shape(), l.master.shape());
}

TEST(QLayer, Errors)
{
	std::mt19937_64 gen(46);
	qseg::QLayer l = make_layer(qseg::LayerKind::Conv, {2, 3, 3, 1, 1}, true, false, qseg::BitConfig{}, gen);
	qseg::Rng rng(1);
	EXPECT_THROW(qseg::qlayer_forward(l, Tensor({1, 3, 4, 4}), true), std::invalid_argument);
	EXPECT_THROW(qseg::qlayer_backward(l, Tensor({1, 3, 4, 4}), rng), std::logic_error);
	l.master = Tensor({3, 3, 3, 3});
	EXPECT_THROW(qseg::qlayer_forward(l, Tensor({1, 2, 4, 4}), true), std::invalid_argument);
}
