#ifndef QSEG_L1BN_HPP_
#define QSEG_L1BN_HPP_

#include <optional>
#include <vector>

#include "qseg/quantize.hpp"
#include "qseg/tensor.hpp"

namespace qseg {

/// Per-channel mean and mean absolute deviation over N x H x W.
struct BNBatchStats
{
		std::vector<double> mu;
		std::vector<double> sigma;
		std::size_t m = 0;
};

BNBatchStats l1_batch_stats(const Tensor &x);

struct BNCache
{
		Tensor x;
		std::vector<double> mu_q;     // statistics actually used in the normalization
		std::vector<double> sigma_q;
		std::vector<double> gamma_q;
		Tensor xhat;                  // (x - mu_q) / (sigma_q + eps), before quantization
		Tensor xhat_q;
};

/// L1-norm batch normalization parameters and statistics.
///
/// gamma/beta are the master values updated by the optimizer. Running statistics are
/// kept at full precision and quantized when used.
struct BNState
{
		std::vector<double> gamma;
		std::vector<double> beta;
		double epsilon = 1e-5;
		std::vector<double> running_mu;
		std::vector<double> running_sigma;
		double momentum = 0.9;
		/// Treat mu/sigma as constants in the backward pass (ablation).
		bool stop_gradient = false;
		std::optional<BNCache> cache;

		static BNState init(std::size_t channels);
		std::size_t channels() const noexcept { return gamma.size(); }
};

struct BNGrads
{
		Tensor grad_x;
		std::vector<double> grad_gamma;
		std::vector<double> grad_beta;
};

/// Quantized L1BN forward. Training mode normalizes with batch statistics, updates the
/// running statistics and fills the cache; inference mode uses the running statistics
/// and leaves the state untouched.
Tensor l1bn_forward(const Tensor &x, BNState &state, const BitConfig &cfg, bool training);

/// grad_y is quantized with E2 on entry; grad_x is quantized with E1 on exit.
BNGrads l1bn_backward(const Tensor &grad_y, const BNState &state, const BitConfig &cfg);

} // namespace qseg

#endif // QSEG_L1BN_HPP_
