#include "qseg/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qseg {

std::string_view to_string(NetworkKind k) noexcept
{
	return k == NetworkKind::ToyFcn ? "toy_fcn" : "toy_bn_net";
}

NetworkKind parse_network_kind(std::string_view s)
{
	if (s == "toy_fcn")
		return NetworkKind::ToyFcn;
	if (s == "toy_bn_net")
		return NetworkKind::ToyBnNet;
	throw std::invalid_argument("unknown network '" + std::string(s) + "' (expected toy_fcn or toy_bn_net)");
}

namespace {

QLayer make_layer(const NetworkOptions &opt, std::size_t index, const char *name, LayerKind kind, LayerGeometry geom,
		bool relu, bool bn, Rng &init_rng)
{
	QLayer l;
	l.name = name;
	l.kind = kind;
	l.geom = geom;
	l.relu = relu;
	l.grad_mode = opt.grad_mode;
	const bool quantized = Network::is_encoder(index) ? opt.quant_encoder : opt.quant_decoder;
	l.cfg = quantized ? opt.cfg : BitConfig::full_precision();
	const int k_U = l.cfg.U.enabled() ? l.cfg.U.bits : 0;

	Rng rng = init_rng.split(index);
	const Shape ks = kernel_shape(kind, geom);
	const bool bilinear = opt.kind == NetworkKind::ToyFcn && kind == LayerKind::Deconv;
	if (bilinear)
	{
		if (geom.in_channels != geom.out_channels)
			throw std::invalid_argument("bilinear deconv needs equal channel counts");
		l.master = init_bilinear(geom.kernel, geom.in_channels, k_U);
	}
	else
	{
		l.master = init_msra(ks, geom.in_channels * geom.kernel * geom.kernel, rng, k_U);
	}
	if (bn)
	{
		l.bn = BNState::init(geom.out_channels);
		l.bn->momentum = opt.bn_momentum;
		l.bn->epsilon = opt.bn_epsilon;
		l.bn->stop_gradient = opt.bn_stop_gradient;
	}
	return l;
}

} // namespace

Network build_network(const NetworkOptions &opt, Rng &init_rng)
{
	opt.cfg.validate();
	if (opt.classes < 2)
		throw std::invalid_argument("network needs at least 2 classes");
	const bool bn = opt.kind == NetworkKind::ToyBnNet;
	const auto &w = opt.widths;
	const std::size_t C = opt.classes;

	Network net;
	net.options = opt;
	net.layers.push_back(make_layer(opt, Network::kConv1, "conv1", LayerKind::Conv, {opt.in_channels, w[0], 3, 1, 1}, true, bn, init_rng));
	net.layers.push_back(make_layer(opt, Network::kConv2, "conv2", LayerKind::Conv, {w[0], w[1], 3, 1, 1}, true, bn, init_rng));
	net.layers.push_back(make_layer(opt, Network::kConv3, "conv3", LayerKind::Conv, {w[1], w[2], 3, 1, 1}, true, bn, init_rng));
	net.layers.push_back(make_layer(opt, Network::kConv4, "conv4", LayerKind::Conv, {w[2], w[3], 3, 1, 1}, true, bn, init_rng));
	net.layers.push_back(make_layer(opt, Network::kScore, "score", LayerKind::Conv, {w[3], C, 1, 1, 0}, false, false, init_rng));
	net.layers.push_back(make_layer(opt, Network::kUp1, "up1", LayerKind::Deconv, {C, C, 4, 2, 1}, false, false, init_rng));
	net.layers.push_back(make_layer(opt, Network::kSkip, "skip", LayerKind::Conv, {w[0], C, 1, 1, 0}, false, false, init_rng));
	net.layers.push_back(make_layer(opt, Network::kUp2, "up2", LayerKind::Deconv, {C, C, 4, 2, 1}, false, false, init_rng));
	return net;
}

std::size_t Network::parameter_count() const noexcept
{
	std::size_t n = 0;
	for (const QLayer &l : layers)
		n += l.parameter_count();
	return n;
}

void Network::set_capture(bool on)
{
	for (QLayer &l : layers)
	{
		l.capture = on;
		l.probe.clear();
	}
}

Tensor Network::forward(const Tensor &images, bool training)
{
	require_rank(images, 4, "network forward");
	if (images.dim(2) % 4 != 0 || images.dim(3) % 4 != 0)
		throw std::invalid_argument("network input " + shape_str(images.shape()) + " must have H, W divisible by 4");

	Tensor a1 = qlayer_forward(layers[kConv1], images, training).values;
	Tensor p1 = maxpool2d(a1, 2, &m_pool1);
	Tensor a2 = qlayer_forward(layers[kConv2], p1, training).values;
	Tensor p2 = maxpool2d(a2, 2, &m_pool2);
	Tensor a3 = qlayer_forward(layers[kConv3], p2, training).values;
	Tensor a4 = qlayer_forward(layers[kConv4], a3, training).values;
	Tensor s = qlayer_forward(layers[kScore], a4, training).values;
	Tensor u1 = qlayer_forward(layers[kUp1], s, training).values;
	Tensor k = qlayer_forward(layers[kSkip], p1, training).values;
	Tensor fused = add(u1, k);
	const QObject &act = layers[kUp2].cfg.A;
	if (options.quant_after_add && act.enabled())
		fused = apply_quant(act, fused).values;
	Tensor logits = qlayer_forward(layers[kUp2], fused, training).values;
	m_cached = training;
	return logits;
}

std::vector<LayerGrads> Network::backward(const Tensor &grad_logits, Rng &rng, double lambda)
{
	if (!m_cached)
		throw std::logic_error("network backward without a training-mode forward");
	std::vector<LayerGrads> g(kNumLayers);
	auto run = [&](std::size_t i, const Tensor &e) {
		Rng layer_rng = rng.split(i);
		g[i] = qlayer_backward(layers[i], e, layer_rng, lambda);
		return g[i].error_out.values;
	};

	const Tensor e_out = apply_quant(layers[kUp2].cfg.E1, grad_logits).values;
	const Tensor e_fused = run(kUp2, e_out);
	const Tensor e_s = run(kUp1, e_fused);
	const Tensor e_skip = run(kSkip, e_fused);
	const Tensor e_a4 = run(kScore, e_s);
	const Tensor e_a3 = run(kConv4, e_a4);
	const Tensor e_p2 = run(kConv3, e_a3);
	const Tensor e_a2 = maxpool2d_backward(e_p2, m_pool2);
	Tensor e_p1 = add(run(kConv2, e_a2), e_skip);
	// The two branches carry different scales; put the sum back on one grid.
	const QObject &e1 = layers[kConv1].cfg.E1;
	if (options.quant_after_add && e1.enabled())
		e_p1 = apply_quant(e1, e_p1).values;
	const Tensor e_a1 = maxpool2d_backward(e_p1, m_pool1);
	run(kConv1, e_a1);
	return g;
}

LossResult mse_onehot_loss(const Tensor &logits, const std::vector<int> &masks, int ignore_label)
{
	require_rank(logits, 4, "mse_onehot_loss");
	const std::size_t N = logits.dim(0), C = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
	if (masks.size() != N * HW)
		throw std::invalid_argument("mse_onehot_loss: mask size does not match logits");
	std::size_t P = 0;
	for (int m : masks)
		P += m != ignore_label;
	LossResult r;
	r.grad = Tensor(logits.shape());
	if (P == 0)
		return r;
	const double inv = 1.0 / static_cast<double>(P);
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t i = 0; i < HW; ++i)
		{
			const int m = masks[n * HW + i];
			if (m == ignore_label)
				continue;
			for (std::size_t c = 0; c < C; ++c)
			{
				const std::size_t j = (n * C + c) * HW + i;
				const double d = logits[j] - (static_cast<int>(c) == m ? 1.0 : 0.0);
				r.loss += d * d;
				r.grad[j] = 2.0 * d * inv;
			}
		}
	r.loss *= inv;
	return r;
}

LossResult softmax_ce_loss(const Tensor &logits, const std::vector<int> &masks, int ignore_label)
{
	require_rank(logits, 4, "softmax_ce_loss");
	const std::size_t N = logits.dim(0), C = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
	if (masks.size() != N * HW)
		throw std::invalid_argument("softmax_ce_loss: mask size does not match logits");
	std::size_t P = 0;
	for (int m : masks)
		P += m != ignore_label;
	LossResult r;
	r.grad = Tensor(logits.shape());
	if (P == 0)
		return r;
	const double inv = 1.0 / static_cast<double>(P);
	std::vector<double> p(C);
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t i = 0; i < HW; ++i)
		{
			const int m = masks[n * HW + i];
			if (m == ignore_label)
				continue;
			double mx = logits[(n * C) * HW + i];
			for (std::size_t c = 1; c < C; ++c)
				mx = std::max(mx, logits[(n * C + c) * HW + i]);
			double z = 0.0;
			for (std::size_t c = 0; c < C; ++c)
			{
				p[c] = std::exp(logits[(n * C + c) * HW + i] - mx);
				z += p[c];
			}
			r.loss += std::log(z) + mx - logits[(n * C + static_cast<std::size_t>(m)) * HW + i];
			for (std::size_t c = 0; c < C; ++c)
				r.grad[(n * C + c) * HW + i] = (p[c] / z - (static_cast<int>(c) == m ? 1.0 : 0.0)) * inv;
		}
	r.loss *= inv;
	return r;
}

LossResult network_loss(NetworkKind kind, const Tensor &logits, const std::vector<int> &masks, int ignore_label)
{
	return kind == NetworkKind::ToyFcn ? mse_onehot_loss(logits, masks, ignore_label)
			: softmax_ce_loss(logits, masks, ignore_label);
}

std::vector<int> argmax_classes(const Tensor &logits)
{
	require_rank(logits, 4, "argmax_classes");
	const std::size_t N = logits.dim(0), C = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
	std::vector<int> out(N * HW);
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t i = 0; i < HW; ++i)
		{
			std::size_t best = 0;
			for (std::size_t c = 1; c < C; ++c)
				if (logits[(n * C + c) * HW + i] > logits[(n * C + best) * HW + i])
					best = c;
			out[n * HW + i] = static_cast<int>(best);
		}
	return out;
}

} // namespace qseg
