#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "oracles.hpp"
#include "qseg/network.hpp"

using qseg::Tensor;

namespace {

qseg::NetworkOptions fp_options(qseg::NetworkKind kind, std::size_t classes = 4)
{
	qseg::NetworkOptions o;
	o.kind = kind;
	o.classes = classes;
	o.cfg = qseg::BitConfig::full_precision();
	return o;
}

std::vector<int> random_masks(std::mt19937_64 &gen, std::size_t n, int classes, int ignore_every = 0)
{
	std::uniform_int_distribution<int> d(0, classes - 1);
	std::vector<int> m(n);
	for (std::size_t i = 0; i < n; ++i)
		m[i] = ignore_every && i % ignore_every == 0 ? 255 : d(gen);
	return m;
}

} // namespace

TEST(Network, OutputShapeAndParameterCounts)
{
	qseg::Rng rng(1);
	qseg::Network fcn = qseg::build_network(fp_options(qseg::NetworkKind::ToyFcn), rng);
	qseg::Network bn = qseg::build_network(fp_options(qseg::NetworkKind::ToyBnNet), rng);
	// conv 216 + 1152 + 2304 + 4608, score 128, up 256 + 256, skip 32.
	EXPECT_EQ(fcn.parameter_count(), 8952u);
	// Plus gamma and beta for 8 + 16 + 16 + 32 channels.
	EXPECT_EQ(bn.parameter_count(), 9096u);
	EXPECT_EQ(fcn.layers.size(), std::size_t(qseg::Network::kNumLayers));
	EXPECT_EQ(bn.forward(Tensor({2, 3, 16, 12}), false).shape(), (qseg::Shape{2, 4, 16, 12}));
	EXPECT_THROW(bn.forward(Tensor({1, 3, 10, 12}), false), std::invalid_argument);
	EXPECT_FALSE(fcn.layers[qseg::Network::kConv1].bn.has_value());
	for (std::size_t i = 0; i < qseg::Network::kNumLayers; ++i)
		EXPECT_EQ(bn.layers[i].bn.has_value(), qseg::Network::is_encoder(i));
}

TEST(Network, FcnDecoderStartsBilinear)
{
	qseg::Rng rng(2);
	qseg::Network fcn = qseg::build_network(fp_options(qseg::NetworkKind::ToyFcn), rng);
	EXPECT_EQ(fcn.layers[qseg::Network::kUp1].master, qseg::init_bilinear(4, 4, 0));
	EXPECT_EQ(fcn.layers[qseg::Network::kUp2].master, qseg::init_bilinear(4, 4, 0));
}

TEST(Network, InitialCrossEntropyNearUniform)
{
	qseg::Rng rng(3);
	qseg::Network bn = qseg::build_network(fp_options(qseg::NetworkKind::ToyBnNet), rng);
	std::mt19937_64 gen(3);
	const Tensor x = oracle::random_tensor(gen, {4, 3, 16, 16});
	const Tensor logits = bn.forward(x, true);
	const auto l = qseg::softmax_ce_loss(logits, random_masks(gen, 4 * 256, 4), 255);
	// Random labels: no better than uniform, and MSRA keeps logits O(1).
	EXPECT_GT(l.loss, std::log(4.0) - 0.05);
	EXPECT_LT(l.loss, std::log(4.0) + 1.0);
}

TEST(Network, PartialQuantizationSelectsLayers)
{
	qseg::NetworkOptions o;
	o.quant_encoder = false;
	qseg::Rng rng(4);
	qseg::Network net = qseg::build_network(o, rng);
	for (std::size_t i = 0; i < qseg::Network::kNumLayers; ++i)
		EXPECT_EQ(net.layers[i].quantized(), !qseg::Network::is_encoder(i));
}

TEST(Network, EndToEndGradientsMatchFiniteDifferences)
{
	std::mt19937_64 gen(5);
	for (auto kind : {qseg::NetworkKind::ToyFcn, qseg::NetworkKind::ToyBnNet})
	{
		qseg::Rng rng(6);
		qseg::Network net = qseg::build_network(fp_options(kind, 3), rng);
		const Tensor x = oracle::random_tensor(gen, {2, 3, 8, 8});
		const auto masks = random_masks(gen, 2 * 64, 3, 7);
		const auto loss = qseg::network_loss(kind, net.forward(x, true), masks, 255);
		qseg::Rng brng(1);
		const auto grads = net.backward(loss.grad, brng, 0.0);

		for (std::size_t li = 0; li < qseg::Network::kNumLayers; ++li)
		{
			qseg::Network probe = net;
			auto f = [&](const Tensor &w) {
				probe.layers[li].master = w;
				return qseg::network_loss(kind, probe.forward(x, true), masks, 255).loss;
			};
			const auto c = oracle::pick_coords(gen, net.layers[li].master.size(), 15);
			std::vector<double> a;
			for (std::size_t i : c)
				a.push_back(grads[li].weight_grad.values[i]);
			EXPECT_LT(oracle::rel_err(a, oracle::finite_diff(f, net.layers[li].master, c)), 1e-5)
					<< qseg::to_string(kind) << " " << net.layers[li].name;
		}
		if (kind == qseg::NetworkKind::ToyBnNet)
		{
			qseg::Network probe = net;
			auto f = [&](const Tensor &g) {
				probe.layers[1].bn->gamma = g.vec();
				return qseg::network_loss(kind, probe.forward(x, true), masks, 255).loss;
			};
			const Tensor g0({net.layers[1].bn->gamma.size()}, net.layers[1].bn->gamma);
			const auto c = oracle::pick_coords(gen, g0.size(), 16);
			std::vector<double> a;
			for (std::size_t i : c)
				a.push_back(grads[1].grad_gamma[i]);
			EXPECT_LT(oracle::rel_err(a, oracle::finite_diff(f, g0, c)), 1e-5);
		}
	}
}

TEST(Network, LossGradientsMatchFiniteDifferences)
{
	std::mt19937_64 gen(7);
	const Tensor logits = oracle::random_tensor(gen, {2, 3, 4, 4}, -2.0, 2.0);
	const auto masks = random_masks(gen, 32, 3, 5);
	for (auto kind : {qseg::NetworkKind::ToyFcn, qseg::NetworkKind::ToyBnNet})
	{
		const auto l = qseg::network_loss(kind, logits, masks, 255);
		auto f = [&](const Tensor &z) { return qseg::network_loss(kind, z, masks, 255).loss; };
		const auto c = oracle::pick_coords(gen, logits.size(), 96);
		std::vector<double> a;
		for (std::size_t i : c)
			a.push_back(l.grad[i]);
		EXPECT_LT(oracle::rel_err(a, oracle::finite_diff(f, logits, c)), 1e-7);
	}
}

TEST(Network, LossHandValues)
{
	// One pixel, two classes, target 1.
	const Tensor z({1, 2, 1, 1}, std::vector<double>{0.0, std::log(3.0)});
	EXPECT_NEAR(qseg::softmax_ce_loss(z, {1}, 255).loss, std::log(4.0 / 3.0), 1e-15);
	EXPECT_NEAR(qseg::mse_onehot_loss(z, {1}, 255).loss, std::pow(std::log(3.0) - 1.0, 2), 1e-15);
	const auto ignored = qseg::softmax_ce_loss(z, {255}, 255);
	EXPECT_EQ(ignored.loss, 0.0);
	EXPECT_EQ(ignored.grad.vec(), std::vector<double>(2, 0.0));
	EXPECT_THROW(qseg::mse_onehot_loss(z, {1, 1}, 255), std::invalid_argument);
}

TEST(Network, ArgmaxFirstMaximumWins)
{
	const Tensor z({1, 3, 1, 2}, std::vector<double>{1.0, 0.0, 1.0, 2.0, 0.5, 2.0});
	EXPECT_EQ(qseg::argmax_classes(z), (std::vector<int>{0, 1}));
}

TEST(Network, QuantizedTrainingStepIsDeterministic)
{
	std::mt19937_64 gen(8);
	const Tensor x = oracle::random_tensor(gen, {2, 3, 8, 8});
	const auto masks = random_masks(gen, 128, 4);
	std::vector<Tensor> out;
	for (int rep = 0; rep < 2; ++rep)
	{
		qseg::Rng rng(9);
		qseg::Network net = qseg::build_network(qseg::NetworkOptions{}, rng);
		const auto loss = qseg::softmax_ce_loss(net.forward(x, true), masks, 255);
		qseg::Rng brng(10);
		const auto grads = net.backward(loss.grad, brng, 1e-4);
		for (std::size_t i = 0; i < net.layers.size(); ++i)
			qseg::qlayer_update(net.layers[i], grads[i], 0.125);
		out.push_back(net.layers[qseg::Network::kConv2].master);
	}
	EXPECT_EQ(out[0], out[1]);
	qseg::Rng rng(11);
	qseg::Network net = qseg::build_network(qseg::NetworkOptions{}, rng);
	EXPECT_THROW(net.backward(Tensor({1, 4, 8, 8}), rng, 0.0), std::logic_error);
}
