#ifndef QSEG_QLAYER_HPP_
#define QSEG_QLAYER_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qseg/l1bn.hpp"
#include "qseg/quantize.hpp"
#include "qseg/rng.hpp"
#include "qseg/tensor.hpp"

namespace qseg {

enum class LayerKind
{
	Conv,
	Deconv
};

struct LayerGeometry
{
		std::size_t in_channels = 1;
		std::size_t out_channels = 1;
		std::size_t kernel = 3;
		std::size_t stride = 1;
		std::size_t padding = 0;

		friend bool operator==(const LayerGeometry &, const LayerGeometry &) = default;
};

/// Kernel shape for a layer: conv is O x I x k x k, deconv is I x O x k x k
/// (the adjoint conv kernel).
Shape kernel_shape(LayerKind kind, const LayerGeometry &g);

struct LayerCache
{
		Tensor a_in;
		Tensor w_q;
		Tensor pre_relu;  // input of the nonlinearity (only when relu is on)
};

/// Convolution or transposed-convolution layer with quantized W/A/E/G dataflow.
struct QLayer
{
		std::string name;
		LayerKind kind = LayerKind::Conv;
		LayerGeometry geom;
		bool relu = true;
		GradMode grad_mode = GradMode::PreserveScale;
		BitConfig cfg = BitConfig::full_precision();
		/// Master weights; on the k_U grid whenever update quantization is on.
		Tensor master;
		std::optional<BNState> bn;
		std::optional<LayerCache> cache;
		/// When set, raw (pre-quantization) A, E1, E2 and G tensors of the last
		/// forward/backward are kept in probe under those names.
		bool capture = false;
		std::map<std::string, Tensor> probe;

		bool quantized() const noexcept { return cfg.any_enabled(); }
		/// Weights seen by the forward pass.
		Tensor forward_weights() const;
		std::size_t parameter_count() const noexcept;
};

struct LayerGrads
{
		QTensor error_out;   // E1: gradient w.r.t. the layer input
		QTensor weight_grad; // G after weight decay and gradient quantization
		std::vector<double> grad_gamma;
		std::vector<double> grad_beta;
		Tensor raw_weight_grad;  // G before quantization (profiling)
};

/// He-normal draw with std sqrt(2 / fan_in), then put on the k_U grid (k_U = 0: no grid).
Tensor init_msra(const Shape &shape, std::size_t fan_in, Rng &rng, int k_U);
/// Separable bilinear upsampling kernel, channel-diagonal, C x C x k x k, on the k_U grid
/// (k_U = 0: no grid).
Tensor init_bilinear(std::size_t kernel_size, std::size_t channels, int k_U);

/// W_q = Q_W(master); z = conv(a_in, W_q); [L1BN]; [relu]; A_out = Q_A(result).
QTensor qlayer_forward(QLayer &layer, const Tensor &a_in, bool training);

/// Backward from E_in (gradient w.r.t. A_out, already quantized by the consumer).
/// weight_decay adds lambda * W_q to G before quantization.
LayerGrads qlayer_backward(QLayer &layer, const Tensor &e_in, Rng &rng, double weight_decay = 0.0);

/// Apply one optimizer step to the layer's master weights and BN affine parameters.
void qlayer_update(QLayer &layer, const LayerGrads &grads, double lr);

} // namespace qseg

#endif // QSEG_QLAYER_HPP_
