#ifndef QSEG_QUANTIZE_HPP_
#define QSEG_QUANTIZE_HPP_

#include <array>
#include <string>
#include <string_view>

#include "qseg/rng.hpp"
#include "qseg/tensor.hpp"

namespace qseg {

enum class QuantMode
{
	Off,
	Uniform,     // UQ
	Scale,       // Scale(x) * UQ(x / Scale(x))
	Stochastic,  // stochastic rounding on the grid, dynamically scaled
	Constant2    // 2 * UQ(x / 2)
};

std::string_view to_string(QuantMode m) noexcept;
QuantMode parse_quant_mode(std::string_view s);

/// Whether the per-layer dynamic scale of a quantized gradient is kept (BN networks)
/// or discarded so every layer updates with a unit-range gradient (networks without BN).
enum class GradMode
{
	PreserveScale,
	AbandonScale
};

std::string_view to_string(GradMode m) noexcept;
GradMode parse_grad_mode(std::string_view s);

struct QObject
{
		int bits = 8;
		QuantMode mode = QuantMode::Off;

		bool enabled() const noexcept { return mode != QuantMode::Off; }
		friend bool operator==(const QObject &, const QObject &) = default;
};

/// Quantization objects of the training dataflow, in a fixed order.
enum class QObjectId
{
	W, A, E1, E2, G, U, Mu, Sigma, XHat, Gamma, Beta
};
inline constexpr std::size_t kNumQObjects = 11;
std::string_view qobject_name(QObjectId id) noexcept;  // "W", "A", ..., "mu", "sigma", "xhat", ...
QObjectId parse_qobject(std::string_view s);

/// Bit-widths and quantizer kinds for every quantization object.
struct BitConfig
{
		QObject W{8, QuantMode::Uniform};
		QObject A{8, QuantMode::Scale};
		QObject E1{8, QuantMode::Scale};
		QObject E2{16, QuantMode::Scale};
		QObject G{8, QuantMode::Stochastic};
		QObject U{24, QuantMode::Uniform};
		QObject mu{16, QuantMode::Constant2};
		QObject sigma{16, QuantMode::Constant2};
		QObject xhat{16, QuantMode::Scale};
		QObject gamma{8, QuantMode::Constant2};
		QObject beta{8, QuantMode::Constant2};

		/// Every object off: plain floating-point training.
		static BitConfig full_precision() noexcept;

		QObject &get(QObjectId id) noexcept;
		const QObject &get(QObjectId id) const noexcept;
		bool any_enabled() const noexcept;
		/// Throws std::invalid_argument on widths outside [2, 32] or k_U <= k_W.
		void validate() const;

		friend bool operator==(const BitConfig &, const BitConfig &) = default;
};

/// Grid-valued tensor. values / scale lies on {n * step(bits)} within [-1 + step, 1 - step].
struct QTensor
{
		Tensor values;
		int bits = 0;
		double scale = 1.0;
};

/// Smallest grid increment 2^(1-k).
double quant_step(int k);

// Scalar kernels (k is assumed validated).
double uq_scalar(double x, int k) noexcept;
double constant2_scalar(double x, int k) noexcept;
/// Grid index of uq_scalar(x, k): uq_scalar(x, k) == index * step.
long long uq_index(double x, int k) noexcept;

QTensor uniform_quantize(const Tensor &x, int k);
/// max |x|, or 1.0 for an all-zero tensor.
double scale_factor(const Tensor &x) noexcept;
QTensor scale_quantize(const Tensor &x, int k);
/// Each element goes to floor(x) or floor(x) + 1 with probability linear in the distance.
Tensor stochastic_round(const Tensor &x, Rng &rng);
/// Clip(step * Round(x / step)); x is expected pre-scaled into [-1, 1].
QTensor stochastic_quantize(const Tensor &x, int k, Rng &rng);
QTensor constant2_quantize(const Tensor &x, int k);

/// Stochastic gradient quantizer with the dynamic scale either restored or dropped.
QTensor quantize_gradient(const Tensor &g, int k, GradMode mode, Rng &rng);

/// Dispatch on the object's mode. Stochastic mode keeps the scale; rng is only
/// touched in that mode. Off returns x with bits = 0.
QTensor apply_quant(const QObject &obj, const Tensor &x, Rng &rng);
QTensor apply_quant(const QObject &obj, const Tensor &x);

struct FailureThresholds
{
		double concentrated = 0.99;
		double clipped = 0.01;
};

struct FailureModeReport
{
		enum class Mode
		{
			None,
			Concentrated,
			Clipped,
			Both
		};
		Mode mode = Mode::None;
		double fraction_below_step = 0.0;
		double fraction_clipped = 0.0;
};

std::string_view to_string(FailureModeReport::Mode m) noexcept;

/// Which uniform-quantization failure mode x falls into at width k.
FailureModeReport classify_distribution(const Tensor &x, int k, const FailureThresholds &thresholds = {});

} // namespace qseg

#endif // QSEG_QUANTIZE_HPP_
