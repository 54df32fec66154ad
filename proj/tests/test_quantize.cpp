#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "oracles.hpp"
#include "qseg/quantize.hpp"

using qseg::Tensor;

TEST(Quantize, StepSize)
{
	EXPECT_EQ(qseg::quant_step(8), 0.0078125);
	EXPECT_EQ(qseg::quant_step(2), 0.5);
	EXPECT_EQ(qseg::quant_step(24), std::ldexp(1.0, -23));
	EXPECT_THROW(qseg::quant_step(1), std::invalid_argument);
}

TEST(Quantize, UniformHandValues)
{
	EXPECT_EQ(qseg::uq_scalar(0.3, 2), 0.5);
	EXPECT_EQ(qseg::uq_scalar(1.5, 8), 0.9921875);
	EXPECT_EQ(qseg::uq_scalar(-1.5, 8), -0.9921875);
	EXPECT_EQ(qseg::uq_scalar(0.0, 8), 0.0);
	// Halves round up.
	EXPECT_EQ(qseg::uq_scalar(0.25, 2), 0.5);
	EXPECT_EQ(qseg::uq_scalar(-0.25, 2), 0.0);
	EXPECT_EQ(qseg::uq_scalar(0.00390625, 8), 0.0078125);
	// Just below a half must round down.
	EXPECT_EQ(qseg::uq_scalar(std::nextafter(0.5, 0.0) * 0.0078125, 8), 0.0);
	EXPECT_EQ(qseg::uq_scalar(-std::nextafter(0.5, 1.0) * 0.0078125, 8), -0.0078125);
	EXPECT_EQ(oracle::uq(std::nextafter(0.5, 0.0) * 0.0078125, 8), 0.0);
	EXPECT_EQ(qseg::uq_index(0.3, 2), 1);
	EXPECT_EQ(qseg::uq_index(-7.0, 8), -127);
}

TEST(Quantize, UniformAgreesWithOracleOnRandomInputs)
{
	std::mt19937_64 gen(1);
	std::uniform_real_distribution<double> d(-2.0, 2.0);
	for (int k : {2, 3, 4, 5, 8, 12, 16, 24})
	{
		Tensor x({5000});
		for (double &v : x.data())
			v = d(gen);
		const qseg::QTensor q = qseg::uniform_quantize(x, k);
		for (std::size_t i = 0; i < x.size(); ++i)
			ASSERT_EQ(q.values[i], oracle::uq(x[i], k)) << "k=" << k << " x=" << x[i];
	}
}

TEST(Quantize, UniformIsIdempotentAndOnGrid)
{
	std::mt19937_64 gen(2);
	for (int k : {2, 4, 8})
	{
		const Tensor x = oracle::random_tensor(gen, {2000}, -3.0, 3.0);
		const Tensor q = qseg::uniform_quantize(x, k).values;
		EXPECT_EQ(qseg::uniform_quantize(q, k).values, q);
		const double step = qseg::quant_step(k);
		for (double v : q.data())
		{
			EXPECT_EQ(v / step, std::round(v / step));
			EXPECT_LE(std::fabs(v), 1.0 - step);
		}
	}
}

TEST(Quantize, ScaleQuantizeHandValues)
{
	const Tensor x({3}, std::vector<double>{0.5, -2.0, 1.0});
	const qseg::QTensor q = qseg::scale_quantize(x, 8);
	EXPECT_EQ(q.scale, 2.0);
	EXPECT_EQ(q.values.vec(), (std::vector<double>{0.5, -1.984375, 1.0}));
	EXPECT_EQ(qseg::scale_factor(Tensor({4})), 1.0);
	EXPECT_EQ(qseg::scale_quantize(Tensor({4}), 8).values.vec(), std::vector<double>(4, 0.0));
}

TEST(Quantize, ScaleQuantizeRelativeErrorBound)
{
	std::mt19937_64 gen(3);
	for (double mag : {1e-6, 1e-2, 10.0, 1e4})
	{
		const Tensor x = oracle::random_tensor(gen, {1000}, -mag, mag);
		const qseg::QTensor q = qseg::scale_quantize(x, 8);
		const double s = qseg::scale_factor(x);
		for (std::size_t i = 0; i < x.size(); ++i)
			EXPECT_LE(std::fabs(q.values[i] - x[i]), s * qseg::quant_step(8) + 1e-15 * s);
	}
}

TEST(Quantize, Constant2HandValues)
{
	EXPECT_EQ(qseg::constant2_scalar(1.0, 8), 1.0);
	EXPECT_EQ(qseg::constant2_scalar(3.0, 8), 1.984375);
	EXPECT_EQ(qseg::constant2_scalar(0.3, 4), 0.25);
	const qseg::QTensor q = qseg::constant2_quantize(Tensor({2}, std::vector<double>{-5.0, 0.01}), 8);
	EXPECT_EQ(q.scale, 2.0);
	EXPECT_EQ(q.values.vec(), (std::vector<double>{-1.984375, 0.015625}));
}

TEST(Quantize, StochasticRoundingStaysOnNeighbours)
{
	qseg::Rng rng(5);
	std::mt19937_64 gen(5);
	const Tensor x = oracle::random_tensor(gen, {5000}, -0.9, 0.9);
	const Tensor q = qseg::stochastic_quantize(x, 8, rng).values;
	const double step = qseg::quant_step(8);
	for (std::size_t i = 0; i < x.size(); ++i)
	{
		const double lo = std::floor(x[i] / step) * step;
		EXPECT_TRUE(q[i] == lo || q[i] == lo + step) << x[i];
	}
	// Grid values are fixed points.
	const Tensor g = qseg::uniform_quantize(x, 8).values;
	EXPECT_EQ(qseg::stochastic_quantize(g, 8, rng).values, g);
}

TEST(Quantize, StochasticRoundingIsUnbiased)
{
	qseg::Rng rng(6);
	const double step = qseg::quant_step(4);
	for (double x : {0.3, -0.41, 0.05, 0.6})
	{
		const int n = 40000;
		const Tensor t({std::size_t(n)}, x);
		const double mean = qseg::sum(qseg::stochastic_quantize(t, 4, rng).values) / n;
		// Bernoulli between neighbours: sd = step * sqrt(p(1-p)) <= step / 2.
		EXPECT_NEAR(mean, x, 4.0 * 0.5 * step / std::sqrt(double(n)));
	}
}

TEST(Quantize, GradientModes)
{
	std::mt19937_64 gen(7);
	const Tensor g = oracle::random_tensor(gen, {500}, -0.003, 0.003);
	qseg::Rng r1(9), r2(9);
	const qseg::QTensor keep = qseg::quantize_gradient(g, 8, qseg::GradMode::PreserveScale, r1);
	const qseg::QTensor drop = qseg::quantize_gradient(g, 8, qseg::GradMode::AbandonScale, r2);
	EXPECT_EQ(keep.scale, qseg::scale_factor(g));
	EXPECT_EQ(drop.scale, 1.0);
	for (std::size_t i = 0; i < g.size(); ++i)
	{
		EXPECT_DOUBLE_EQ(keep.values[i], drop.values[i] * keep.scale);
		EXPECT_LE(std::fabs(drop.values[i]), 1.0 - qseg::quant_step(8));
	}
	// The largest element maps to the top of the grid in abandon mode.
	EXPECT_GE(qseg::max_abs(drop.values), 1.0 - 2.0 * qseg::quant_step(8));
}

TEST(Quantize, ApplyQuantDispatch)
{
	const Tensor x({3}, std::vector<double>{0.3, -0.7, 2.0});
	const qseg::QTensor off = qseg::apply_quant(qseg::QObject{8, qseg::QuantMode::Off}, x);
	EXPECT_EQ(off.values, x);
	EXPECT_EQ(off.bits, 0);
	EXPECT_EQ(qseg::apply_quant(qseg::QObject{4, qseg::QuantMode::Uniform}, x).values,
			qseg::uniform_quantize(x, 4).values);
	EXPECT_EQ(qseg::apply_quant(qseg::QObject{4, qseg::QuantMode::Scale}, x).values, qseg::scale_quantize(x, 4).values);
	EXPECT_EQ(qseg::apply_quant(qseg::QObject{4, qseg::QuantMode::Constant2}, x).values,
			qseg::constant2_quantize(x, 4).values);
	EXPECT_THROW(qseg::apply_quant(qseg::QObject{4, qseg::QuantMode::Stochastic}, x), std::logic_error);
	EXPECT_THROW(qseg::apply_quant(qseg::QObject{1, qseg::QuantMode::Uniform}, x), std::invalid_argument);
}

TEST(Quantize, FailureModes)
{
	const Tensor tiny({1000}, 1e-4);
	EXPECT_EQ(qseg::classify_distribution(tiny, 8).mode, qseg::FailureModeReport::Mode::Concentrated);
	const Tensor big({1000}, 5.0);
	EXPECT_EQ(qseg::classify_distribution(big, 8).mode, qseg::FailureModeReport::Mode::Clipped);
	std::mt19937_64 gen(8);
	const Tensor spread = oracle::random_tensor(gen, {1000}, -0.9, 0.9);
	const auto r = qseg::classify_distribution(spread, 8);
	EXPECT_EQ(r.mode, qseg::FailureModeReport::Mode::None);
	EXPECT_EQ(r.fraction_clipped, 0.0);

	Tensor mixed({10}, 1e-5);
	for (std::size_t i = 0; i < 4; ++i)
		mixed[i] = 3.0;
	const auto both = qseg::classify_distribution(mixed, 8, {0.5, 0.1});
	EXPECT_EQ(both.mode, qseg::FailureModeReport::Mode::Both);
	EXPECT_DOUBLE_EQ(both.fraction_below_step, 0.6);
	EXPECT_DOUBLE_EQ(both.fraction_clipped, 0.4);
	EXPECT_THROW(qseg::classify_distribution(Tensor(), 8), std::invalid_argument);
}

TEST(Quantize, BitConfigValidation)
{
	qseg::BitConfig cfg;
	EXPECT_NO_THROW(cfg.validate());
	cfg.U.bits = 8;
	EXPECT_THROW(cfg.validate(), std::invalid_argument);
	cfg.U.bits = 9;
	EXPECT_NO_THROW(cfg.validate());
	cfg.A.bits = 1;
	EXPECT_THROW(cfg.validate(), std::invalid_argument);
	EXPECT_NO_THROW(qseg::BitConfig::full_precision().validate());
	EXPECT_FALSE(qseg::BitConfig::full_precision().any_enabled());
}

TEST(Quantize, NameParsing)
{
	EXPECT_EQ(qseg::parse_quant_mode("stochastic"), qseg::QuantMode::Stochastic);
	EXPECT_EQ(qseg::parse_grad_mode("abandon_scale"), qseg::GradMode::AbandonScale);
	EXPECT_EQ(qseg::parse_qobject("sigma"), qseg::QObjectId::Sigma);
	for (std::size_t i = 0; i < qseg::kNumQObjects; ++i)
	{
		const auto id = static_cast<qseg::QObjectId>(i);
		EXPECT_EQ(qseg::parse_qobject(qseg::qobject_name(id)), id);
	}
	EXPECT_THROW(qseg::parse_quant_mode("fancy"), std::invalid_argument);
	EXPECT_THROW(qseg::parse_grad_mode("keep"), std::invalid_argument);
	EXPECT_THROW(qseg::parse_qobject("Z"), std::invalid_argument);
}
