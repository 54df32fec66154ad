#include "qseg/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace qseg {

void Schedule::validate() const
{
	if (!(lr0 > 0.0))
		throw std::invalid_argument("learning rate must be positive");
	if (halving_period < 1)
		throw std::invalid_argument("halving period must be >= 1");
	if (quantize)
		quant_step(k_U);
}

double quantized_lr(const Schedule &schedule, std::size_t step)
{
	schedule.validate();
	const double base = schedule.quantize ? uq_scalar(schedule.lr0, schedule.k_U) : schedule.lr0;
	const auto halvings = static_cast<int>(std::min<std::size_t>(step / schedule.halving_period, 2000));
	return std::ldexp(base, -halvings);
}

Tensor apply_update(const Tensor &master, const Tensor &g_q, double lr, int k_U)
{
	require_same_shape(master, g_q, "apply_update");
	quant_step(k_U);
	Tensor out(master.shape());
	for (std::size_t i = 0; i < master.size(); ++i)
	{
		const double delta = uq_scalar(g_q[i] * lr, k_U);
		// Difference of two grid values is exact; uq_scalar re-clips into range.
		out[i] = uq_scalar(master[i] - delta, k_U);
	}
	return out;
}

std::vector<double> apply_update_constant2(const std::vector<double> &master, const std::vector<double> &g_q, double lr,
		int k_U)
{
	if (master.size() != g_q.size())
		throw std::invalid_argument("apply_update_constant2: size mismatch");
	quant_step(k_U);
	std::vector<double> out(master.size());
	for (std::size_t i = 0; i < master.size(); ++i)
	{
		const double delta = constant2_scalar(g_q[i] * lr, k_U);
		out[i] = constant2_scalar(master[i] - delta, k_U);
	}
	return out;
}

Tensor apply_update_fp(const Tensor &master, const Tensor &g, double lr)
{
	require_same_shape(master, g, "apply_update_fp");
	Tensor out(master.shape());
	for (std::size_t i = 0; i < master.size(); ++i)
		out[i] = master[i] - lr * g[i];
	return out;
}

Tensor weight_decay(const Tensor &g, const Tensor &w_q, double lambda)
{
	if (lambda < 0.0)
		throw std::invalid_argument("weight decay must be non-negative");
	if (lambda == 0.0)
		return g;
	require_same_shape(g, w_q, "weight_decay");
	Tensor out(g.shape());
	for (std::size_t i = 0; i < g.size(); ++i)
		out[i] = g[i] + lambda * w_q[i];
	return out;
}

} // namespace qseg
