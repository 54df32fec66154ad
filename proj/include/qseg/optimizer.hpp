#ifndef QSEG_OPTIMIZER_HPP_
#define QSEG_OPTIMIZER_HPP_

#include <cstddef>
#include <vector>

#include "qseg/quantize.hpp"
#include "qseg/tensor.hpp"

namespace qseg {

/// Step-halving learning-rate schedule. The initial rate is put on the k_U grid once;
/// halving by exact powers of two keeps every later rate representable.
struct Schedule
{
		double lr0 = 0.01;
		std::size_t halving_period = 2000;
		int k_U = 24;
		bool quantize = true;

		void validate() const;
};

double quantized_lr(const Schedule &schedule, std::size_t step);

/// master' = clip(master - UQ(g_q * lr, k_U)) on the k_U grid.
Tensor apply_update(const Tensor &master, const Tensor &g_q, double lr, int k_U);

/// Same update on the constant-2 grid used by gamma/beta: range [-2 + 2 step, 2 - 2 step].
std::vector<double> apply_update_constant2(const std::vector<double> &master, const std::vector<double> &g_q, double lr,
		int k_U);

/// Unquantized SGD step.
Tensor apply_update_fp(const Tensor &master, const Tensor &g, double lr);

/// g + lambda * w, applied before gradient quantization.
Tensor weight_decay(const Tensor &g, const Tensor &w_q, double lambda);

} // namespace qseg

#endif // QSEG_OPTIMIZER_HPP_
