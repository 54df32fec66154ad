#include "qseg/l1bn.hpp"

#include <cmath>
#include <stdexcept>

namespace qseg {

namespace {

std::vector<double> quantize_vec(const QObject &obj, const std::vector<double> &v)
{
	if (!obj.enabled())
		return v;
	Tensor t({v.size()}, v);
	return apply_quant(obj, t).values.vec();
}

void check_channels(const Tensor &x, const BNState &state)
{
	require_rank(x, 4, "l1bn");
	if (x.dim(1) != state.channels())
		throw std::invalid_argument("l1bn: input has " + std::to_string(x.dim(1)) + " channels, state has "
				+ std::to_string(state.channels()));
}

} // namespace

BNBatchStats l1_batch_stats(const Tensor &x)
{
	require_rank(x, 4, "l1_batch_stats");
	const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
	BNBatchStats s;
	s.m = N * HW;
	s.mu.assign(C, 0.0);
	s.sigma.assign(C, 0.0);
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t c = 0; c < C; ++c)
		{
			const double *p = x.data().data() + (n * C + c) * HW;
			for (std::size_t i = 0; i < HW; ++i)
				s.mu[c] += p[i];
		}
	for (double &v : s.mu)
		v /= static_cast<double>(s.m);
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t c = 0; c < C; ++c)
		{
			const double *p = x.data().data() + (n * C + c) * HW;
			for (std::size_t i = 0; i < HW; ++i)
				s.sigma[c] += std::fabs(p[i] - s.mu[c]);
		}
	for (double &v : s.sigma)
		v /= static_cast<double>(s.m);
	return s;
}

BNState BNState::init(std::size_t channels)
{
	BNState s;
	s.gamma.assign(channels, 1.0);
	s.beta.assign(channels, 0.0);
	s.running_mu.assign(channels, 0.0);
	s.running_sigma.assign(channels, 1.0);
	return s;
}

Tensor l1bn_forward(const Tensor &x, BNState &state, const BitConfig &cfg, bool training)
{
	check_channels(x, state);
	if (!(state.epsilon > 0.0))
		throw std::invalid_argument("l1bn: epsilon must be positive");
	const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);

	std::vector<double> mu, sigma;
	if (training)
	{
		BNBatchStats st = l1_batch_stats(x);
		for (std::size_t c = 0; c < C; ++c)
		{
			state.running_mu[c] = state.momentum * state.running_mu[c] + (1.0 - state.momentum) * st.mu[c];
			state.running_sigma[c] = state.momentum * state.running_sigma[c] + (1.0 - state.momentum) * st.sigma[c];
		}
		mu = std::move(st.mu);
		sigma = std::move(st.sigma);
	}
	else
	{
		mu = state.running_mu;
		sigma = state.running_sigma;
	}

	const std::vector<double> mu_q = quantize_vec(cfg.mu, mu);
	const std::vector<double> sigma_q = quantize_vec(cfg.sigma, sigma);
	const std::vector<double> gamma_q = quantize_vec(cfg.gamma, state.gamma);
	const std::vector<double> beta_q = quantize_vec(cfg.beta, state.beta);

	Tensor xhat(x.shape());
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t c = 0; c < C; ++c)
		{
			const std::size_t off = (n * C + c) * HW;
			const double inv = 1.0 / (sigma_q[c] + state.epsilon);
			for (std::size_t i = 0; i < HW; ++i)
				xhat[off + i] = (x[off + i] - mu_q[c]) * inv;
		}
	Tensor xhat_q = apply_quant(cfg.xhat, xhat).values;

	Tensor y(x.shape());
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t c = 0; c < C; ++c)
		{
			const std::size_t off = (n * C + c) * HW;
			for (std::size_t i = 0; i < HW; ++i)
				y[off + i] = gamma_q[c] * xhat_q[off + i] + beta_q[c];
		}

	if (training)
		state.cache = BNCache{x, mu_q, sigma_q, gamma_q, std::move(xhat), std::move(xhat_q)};
	return y;
}

BNGrads l1bn_backward(const Tensor &grad_y_raw, const BNState &state, const BitConfig &cfg)
{
	if (!state.cache)
		throw std::logic_error("l1bn_backward: no forward cache");
	const BNCache &cache = *state.cache;
	require_same_shape(grad_y_raw, cache.x, "l1bn_backward");
	const std::size_t N = cache.x.dim(0), C = cache.x.dim(1), HW = cache.x.dim(2) * cache.x.dim(3);
	const double m = static_cast<double>(N * HW);

	const Tensor grad_y = apply_quant(cfg.E2, grad_y_raw).values;

	BNGrads g;
	g.grad_gamma.assign(C, 0.0);
	g.grad_beta.assign(C, 0.0);
	// Per-channel reductions: sum(gxhat), sum(gxhat * xhat), sum(sign(d)).
	std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0), sum_sign(C, 0.0);
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t c = 0; c < C; ++c)
		{
			const std::size_t off = (n * C + c) * HW;
			for (std::size_t i = 0; i < HW; ++i)
			{
				const double gy = grad_y[off + i];
				g.grad_gamma[c] += gy * cache.xhat_q[off + i];
				g.grad_beta[c] += gy;
				const double gx = gy * cache.gamma_q[c];
				sum_g[c] += gx;
				sum_gx[c] += gx * cache.xhat[off + i];
				const double d = cache.x[off + i] - cache.mu_q[c];
				sum_sign[c] += (d > 0.0) - (d < 0.0);
			}
		}

	Tensor grad_x(cache.x.shape());
	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t c = 0; c < C; ++c)
		{
			const std::size_t off = (n * C + c) * HW;
			const double s = cache.sigma_q[c] + state.epsilon;
			const double mean_g = sum_g[c] / m;
			const double mean_sign = sum_sign[c] / m;
			// d(sigma)/dx_j = (sign(d_j) - mean(sign(d))) / m
			const double k_sigma = sum_gx[c] / (s * m);
			for (std::size_t i = 0; i < HW; ++i)
			{
				const double gx = grad_y[off + i] * cache.gamma_q[c];
				if (state.stop_gradient)
				{
					grad_x[off + i] = gx / s;
					continue;
				}
				const double d = cache.x[off + i] - cache.mu_q[c];
				const double sg = (d > 0.0) - (d < 0.0);
				grad_x[off + i] = (gx - mean_g) / s - k_sigma * (sg - mean_sign);
			}
		}
	g.grad_x = apply_quant(cfg.E1, grad_x).values;
	return g;
}

} // namespace qseg
