#ifndef QSEG_CONFIG_HPP_
#define QSEG_CONFIG_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "qseg/metrics.hpp"
#include "qseg/network.hpp"

namespace qseg {

enum class EvalMode
{
	Global,   // one confusion matrix over the whole dataset
	PerImage  // mIoU per image, averaged over images
};

/// Everything needed to reproduce one training run. Serialized as flat `key=value`
/// lines; every key has a default, see config_keys().
struct ExperimentConfig
{
		NetworkKind network = NetworkKind::ToyBnNet;
		std::string dataset;
		std::string val_dataset;
		std::size_t batch_size = 8;
		std::size_t crop = 32;
		std::size_t steps = 8000;
		std::uint64_t seed = 1;
		std::size_t eval_interval = 1000;
		/// Initial rate for quantized layers; put on the k_U grid.
		double lr = -1.0;
		/// Initial rate for full-precision layers.
		double lr_fp = -1.0;
		std::size_t halving_period = 2000;
		double weight_decay = -1.0;      // < 0: network default
		std::string grad_mode = "default";
		bool quant = true;
		bool quant_encoder = true;
		bool quant_decoder = true;
		bool quant_after_add = true;
		bool bn_stop_gradient = false;
		double bn_momentum = 0.9;
		double bn_epsilon = 1e-5;
		std::array<std::size_t, 4> widths{8, 16, 16, 32};
		BitConfig bits;
		EvalMode eval_mode = EvalMode::Global;
		int ignore_label = kDefaultIgnoreLabel;
		std::size_t seeds = 5;
		std::size_t threads = 0;  // 0: hardware concurrency
		double divergence_factor = 10.0;
		std::size_t divergence_patience = 200;

		/// Set one key from text. Throws std::invalid_argument on unknown keys or bad values.
		void set(const std::string &key, const std::string &value);
		std::string get(const std::string &key) const;
		/// `key=value` lines for every key, in config_keys() order.
		std::string to_text() const;
		/// Parse `key=value` lines; '#' starts a comment, blank lines are skipped.
		void apply_text(const std::string &text);
		void load_file(const std::string &path);

		// Resolved values (network-dependent defaults applied).
		GradMode resolved_grad_mode() const;
		double resolved_lr() const;
		double resolved_lr_fp() const;
		double resolved_weight_decay() const;
		/// The bit configuration in effect: all-off when quant is off.
		BitConfig effective_bits() const;
		NetworkOptions network_options(std::size_t classes) const;
		void validate() const;
};

const std::vector<std::string> &config_keys();

/// Defaults tied to the network kind.
double default_lr(NetworkKind kind) noexcept;
double default_lr_fp(NetworkKind kind) noexcept;
double default_weight_decay(NetworkKind kind) noexcept;
GradMode default_grad_mode(NetworkKind kind) noexcept;

} // namespace qseg

#endif // QSEG_CONFIG_HPP_
