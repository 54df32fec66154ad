#ifndef QSEG_NETWORK_HPP_
#define QSEG_NETWORK_HPP_

#include <array>
#include <string>
#include <vector>

#include "qseg/qlayer.hpp"

namespace qseg {

enum class NetworkKind
{
	ToyFcn,   // no BN, bilinear decoder, MSE loss
	ToyBnNet  // L1BN after every encoder conv, MSRA everywhere, softmax cross-entropy
};

std::string_view to_string(NetworkKind k) noexcept;
NetworkKind parse_network_kind(std::string_view s);

struct NetworkOptions
{
		NetworkKind kind = NetworkKind::ToyBnNet;
		std::size_t classes = 4;
		std::size_t in_channels = 3;
		std::array<std::size_t, 4> widths{8, 16, 16, 32};
		BitConfig cfg;
		GradMode grad_mode = GradMode::PreserveScale;
		bool quant_encoder = true;
		bool quant_decoder = true;
		/// Re-quantize the skip-connection sum with the activation quantizer.
		bool quant_after_add = true;
		bool bn_stop_gradient = false;
		double bn_momentum = 0.9;
		double bn_epsilon = 1e-5;
};

/// Encoder: four 3x3 conv/relu blocks, 2x2 max pooling after the first two (1/4 scale).
/// Decoder: 1x1 classifier, stride-2 deconv to 1/2 scale, fused by addition with a 1x1
/// score of the first pooled features, then a second stride-2 deconv to full scale.
class Network
{
	public:
		enum LayerIndex : std::size_t
		{
			kConv1, kConv2, kConv3, kConv4, kScore, kUp1, kSkip, kUp2, kNumLayers
		};

		NetworkOptions options;
		std::vector<QLayer> layers;

		static bool is_encoder(std::size_t layer) noexcept { return layer <= kConv4; }

		/// Logits N x classes x H x W; H and W must be divisible by 4.
		Tensor forward(const Tensor &images, bool training);
		/// grad_logits is the raw loss gradient; it is quantized with the output layer's E1.
		/// rng supplies the stochastic gradient quantizers (one child stream per layer).
		std::vector<LayerGrads> backward(const Tensor &grad_logits, Rng &rng, double weight_decay);

		std::size_t parameter_count() const noexcept;
		/// Enable capture of raw (pre-quantization) tensors into QLayer::probe.
		void set_capture(bool on);

	private:
		PoolCache m_pool1, m_pool2;
		bool m_cached = false;
};

Network build_network(const NetworkOptions &options, Rng &init_rng);

struct LossResult
{
		double loss = 0.0;
		Tensor grad;
};

/// Mean over non-ignored pixels of the squared error against one-hot targets, summed over classes.
LossResult mse_onehot_loss(const Tensor &logits, const std::vector<int> &masks, int ignore_label);
/// Mean over non-ignored pixels of softmax cross-entropy.
LossResult softmax_ce_loss(const Tensor &logits, const std::vector<int> &masks, int ignore_label);
LossResult network_loss(NetworkKind kind, const Tensor &logits, const std::vector<int> &masks, int ignore_label);

/// Per-pixel argmax over the class dimension (first maximum wins).
std::vector<int> argmax_classes(const Tensor &logits);

} // namespace qseg

#endif // QSEG_NETWORK_HPP_
