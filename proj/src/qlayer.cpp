#include "qseg/qlayer.hpp"

#include <cmath>
#include <stdexcept>

#include "qseg/optimizer.hpp"

namespace qseg {

Shape kernel_shape(LayerKind kind, const LayerGeometry &g)
{
	if (kind == LayerKind::Conv)
		return {g.out_channels, g.in_channels, g.kernel, g.kernel};
	return {g.in_channels, g.out_channels, g.kernel, g.kernel};
}

Tensor QLayer::forward_weights() const
{
	return apply_quant(cfg.W, master).values;
}

std::size_t QLayer::parameter_count() const noexcept
{
	return master.size() + (bn ? 2 * bn->channels() : 0);
}

Tensor init_msra(const Shape &shape, std::size_t fan_in, Rng &rng, int k_U)
{
	if (fan_in == 0)
		throw std::invalid_argument("init_msra: fan_in must be positive");
	Tensor w = normal_rand(rng, shape, 0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
	return k_U ? uniform_quantize(w, k_U).values : w;
}

Tensor init_bilinear(std::size_t kernel_size, std::size_t channels, int k_U)
{
	if (kernel_size < 2)
		throw std::invalid_argument("init_bilinear: kernel size must be >= 2");
	const std::size_t f = (kernel_size + 1) / 2;
	const double fd = static_cast<double>(f);
	const double center = kernel_size % 2 == 1 ? fd - 1.0 : fd - 0.5;
	std::vector<double> taps(kernel_size);
	for (std::size_t i = 0; i < kernel_size; ++i)
		taps[i] = 1.0 - std::fabs(static_cast<double>(i) - center) / fd;

	Tensor w({channels, channels, kernel_size, kernel_size});
	for (std::size_t c = 0; c < channels; ++c)
		for (std::size_t i = 0; i < kernel_size; ++i)
			for (std::size_t j = 0; j < kernel_size; ++j)
				w.at(c, c, i, j) = taps[i] * taps[j];
	return k_U ? uniform_quantize(w, k_U).values : w;
}

QTensor qlayer_forward(QLayer &layer, const Tensor &a_in, bool training)
{
	require_rank(a_in, 4, "qlayer_forward");
	if (a_in.dim(1) != layer.geom.in_channels)
		throw std::invalid_argument("layer " + layer.name + ": expected " + std::to_string(layer.geom.in_channels)
				+ " input channels, got " + shape_str(a_in.shape()));
	if (layer.master.shape() != kernel_shape(layer.kind, layer.geom))
		throw std::invalid_argument("layer " + layer.name + ": master weights " + shape_str(layer.master.shape())
				+ " do not match geometry");

	Tensor w_q = layer.forward_weights();
	Tensor z = layer.kind == LayerKind::Conv ? conv2d(a_in, w_q, layer.geom.stride, layer.geom.padding)
			: deconv2d(a_in, w_q, layer.geom.stride, layer.geom.padding);
	if (layer.bn)
		z = l1bn_forward(z, *layer.bn, layer.cfg, training);
	Tensor pre;
	if (layer.relu)
	{
		pre = std::move(z);
		z = relu(pre);
	}
	if (layer.capture)
		layer.probe["A"] = z;
	QTensor out = apply_quant(layer.cfg.A, z);
	if (out.bits == 0)
		out.scale = 1.0;
	if (training)
		layer.cache = LayerCache{a_in, std::move(w_q), std::move(pre)};
	return out;
}

LayerGrads qlayer_backward(QLayer &layer, const Tensor &e_in, Rng &rng, double lambda)
{
	if (!layer.cache)
		throw std::logic_error("layer " + layer.name + ": backward without forward cache");
	const LayerCache &cache = *layer.cache;

	// Activation quantizer is passed straight through.
	Tensor g = layer.relu ? relu_backward(e_in, cache.pre_relu) : e_in;

	LayerGrads out;
	if (layer.bn)
	{
		if (layer.capture)
			layer.probe["E2"] = g;
		BNGrads bg = l1bn_backward(g, *layer.bn, layer.cfg);
		g = std::move(bg.grad_x);
		out.grad_gamma = std::move(bg.grad_gamma);
		out.grad_beta = std::move(bg.grad_beta);
	}

	const ConvCache cc{cache.a_in, cache.w_q, {layer.geom.stride, layer.geom.padding}};
	ConvGrads cg = layer.kind == LayerKind::Conv ? conv2d_backward(g, cc) : deconv2d_backward(g, cc);

	if (layer.capture)
		layer.probe["E1"] = cg.grad_input;
	out.error_out = apply_quant(layer.cfg.E1, cg.grad_input);
	Tensor G = weight_decay(cg.grad_kernel, cache.w_q, lambda);
	out.raw_weight_grad = G;
	if (layer.capture)
		layer.probe["G"] = G;

	if (layer.cfg.G.enabled())
	{
		out.weight_grad = quantize_gradient(G, layer.cfg.G.bits, layer.grad_mode, rng);
		if (layer.bn)
		{
			out.grad_gamma = quantize_gradient(Tensor({out.grad_gamma.size()}, out.grad_gamma), layer.cfg.G.bits,
					layer.grad_mode, rng).values.vec();
			out.grad_beta = quantize_gradient(Tensor({out.grad_beta.size()}, out.grad_beta), layer.cfg.G.bits,
					layer.grad_mode, rng).values.vec();
		}
	}
	else
		out.weight_grad = QTensor{std::move(G), 0, 1.0};
	return out;
}

void qlayer_update(QLayer &layer, const LayerGrads &grads, double lr)
{
	const QObject &u = layer.cfg.U;
	if (u.enabled())
		layer.master = apply_update(layer.master, grads.weight_grad.values, lr, u.bits);
	else
		layer.master = apply_update_fp(layer.master, grads.weight_grad.values, lr);

	if (!layer.bn)
		return;
	BNState &bn = *layer.bn;
	if (u.enabled())
	{
		bn.gamma = apply_update_constant2(bn.gamma, grads.grad_gamma, lr, u.bits);
		bn.beta = apply_update_constant2(bn.beta, grads.grad_beta, lr, u.bits);
	}
	else
		for (std::size_t c = 0; c < bn.channels(); ++c)
		{
			bn.gamma[c] -= lr * grads.grad_gamma[c];
			bn.beta[c] -= lr * grads.grad_beta[c];
		}
}

} // namespace qseg
