#include "qseg/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qseg {

namespace {

constexpr std::array<std::string_view, kNumQObjects> kObjectNames{"W", "A", "E1", "E2", "G", "U", "mu", "sigma", "xhat",
		"gamma", "beta"};

void check_bits(int k)
{
	if (k < 2 || k > 32)
		throw std::invalid_argument("bit-width must be in [2, 32], got " + std::to_string(k));
}

// Largest grid index, i.e. (1 - step) / step.
double max_index(int k) noexcept
{
	return std::ldexp(1.0, k - 1) - 1.0;
}

// Nearest integer, halves up. floor(t + 0.5) would round t = 0.5 - ulp up as well.
double round_half_up(double t) noexcept
{
	const double f = std::floor(t);
	return t - f >= 0.5 ? f + 1.0 : f;
}

struct Grid
{
		double step, inv, lim;

		explicit Grid(int k) : step(std::ldexp(1.0, 1 - k)), inv(std::ldexp(1.0, k - 1)), lim(max_index(k)) {}
		// step is a power of two, so x * inv == x / step exactly.
		double operator()(double x) const noexcept { return std::clamp(round_half_up(x * inv), -lim, lim) * step; }
};

} // namespace

std::string_view to_string(QuantMode m) noexcept
{
	switch (m)
	{
		case QuantMode::Off:
			return "off";
		case QuantMode::Uniform:
			return "uniform";
		case QuantMode::Scale:
			return "scale";
		case QuantMode::Stochastic:
			return "stochastic";
		case QuantMode::Constant2:
			return "constant2";
	}
	return "?";
}

QuantMode parse_quant_mode(std::string_view s)
{
	for (QuantMode m : {QuantMode::Off, QuantMode::Uniform, QuantMode::Scale, QuantMode::Stochastic, QuantMode::Constant2})
		if (s == to_string(m))
			return m;
	throw std::invalid_argument("unknown quantizer mode '" + std::string(s) + "'");
}

std::string_view to_string(GradMode m) noexcept
{
	return m == GradMode::PreserveScale ? "preserve_scale" : "abandon_scale";
}

GradMode parse_grad_mode(std::string_view s)
{
	if (s == "preserve_scale")
		return GradMode::PreserveScale;
	if (s == "abandon_scale")
		return GradMode::AbandonScale;
	throw std::invalid_argument("unknown gradient mode '" + std::string(s) + "'");
}

std::string_view qobject_name(QObjectId id) noexcept
{
	return kObjectNames[static_cast<std::size_t>(id)];
}

QObjectId parse_qobject(std::string_view s)
{
	for (std::size_t i = 0; i < kObjectNames.size(); ++i)
		if (s == kObjectNames[i])
			return static_cast<QObjectId>(i);
	throw std::invalid_argument("unknown quantization object '" + std::string(s) + "'");
}

BitConfig BitConfig::full_precision() noexcept
{
	BitConfig c;
	for (std::size_t i = 0; i < kNumQObjects; ++i)
		c.get(static_cast<QObjectId>(i)).mode = QuantMode::Off;
	return c;
}

QObject &BitConfig::get(QObjectId id) noexcept
{
	switch (id)
	{
		case QObjectId::W:
			return W;
		case QObjectId::A:
			return A;
		case QObjectId::E1:
			return E1;
		case QObjectId::E2:
			return E2;
		case QObjectId::G:
			return G;
		case QObjectId::U:
			return U;
		case QObjectId::Mu:
			return mu;
		case QObjectId::Sigma:
			return sigma;
		case QObjectId::XHat:
			return xhat;
		case QObjectId::Gamma:
			return gamma;
		case QObjectId::Beta:
			return beta;
	}
	return W;
}

const QObject &BitConfig::get(QObjectId id) const noexcept
{
	return const_cast<BitConfig *>(this)->get(id);
}

bool BitConfig::any_enabled() const noexcept
{
	for (std::size_t i = 0; i < kNumQObjects; ++i)
		if (get(static_cast<QObjectId>(i)).enabled())
			return true;
	return false;
}

void BitConfig::validate() const
{
	for (std::size_t i = 0; i < kNumQObjects; ++i)
	{
		const QObject &o = get(static_cast<QObjectId>(i));
		if (o.bits < 2 || o.bits > 32)
			throw std::invalid_argument("k_" + std::string(kObjectNames[i]) + " must be in [2, 32], got "
					+ std::to_string(o.bits));
	}
	if (W.enabled() && U.enabled() && U.bits <= W.bits)
		throw std::invalid_argument("k_U (" + std::to_string(U.bits) + ") must exceed k_W (" + std::to_string(W.bits)
				+ ")");
}

double quant_step(int k)
{
	if (k < 2)
		throw std::invalid_argument("quantization bit-width must be >= 2, got " + std::to_string(k));
	return std::ldexp(1.0, 1 - k);
}

long long uq_index(double x, int k) noexcept
{
	const double step = std::ldexp(1.0, 1 - k);
	const double lim = max_index(k);
	const double n = std::clamp(round_half_up(x / step), -lim, lim);
	return static_cast<long long>(n);
}

double uq_scalar(double x, int k) noexcept
{
	return static_cast<double>(uq_index(x, k)) * std::ldexp(1.0, 1 - k);
}

double constant2_scalar(double x, int k) noexcept
{
	return 2.0 * uq_scalar(x * 0.5, k);
}

QTensor uniform_quantize(const Tensor &x, int k)
{
	check_bits(k);
	const Grid q(k);
	Tensor out(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i)
		out[i] = q(x[i]);
	return {std::move(out), k, 1.0};
}

double scale_factor(const Tensor &x) noexcept
{
	const double m = max_abs(x);
	return m > 0.0 ? m : 1.0;
}

QTensor scale_quantize(const Tensor &x, int k)
{
	check_bits(k);
	const double s = scale_factor(x);
	const Grid q(k);
	Tensor out(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i)
		out[i] = s * q(x[i] / s);
	return {std::move(out), k, s};
}

Tensor stochastic_round(const Tensor &x, Rng &rng)
{
	Tensor out(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i)
	{
		const double f = std::floor(x[i]);
		const double frac = x[i] - f;
		// One draw per element regardless of frac keeps streams aligned across inputs.
		const double u = rng.uniform();
		out[i] = u < frac ? f + 1.0 : f;
	}
	return out;
}

namespace {

double rq_scalar(double x, int k, Rng &rng) noexcept
{
	const double step = std::ldexp(1.0, 1 - k);
	const double lim = max_index(k);
	const double v = x / step;
	const double f = std::floor(v);
	const double u = rng.uniform();
	const double n = std::clamp(u < v - f ? f + 1.0 : f, -lim, lim);
	return n * step;
}

} // namespace

QTensor stochastic_quantize(const Tensor &x, int k, Rng &rng)
{
	check_bits(k);
	Tensor out(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i)
		out[i] = rq_scalar(x[i], k, rng);
	return {std::move(out), k, 1.0};
}

QTensor constant2_quantize(const Tensor &x, int k)
{
	check_bits(k);
	const Grid q(k);
	Tensor out(x.shape());
	for (std::size_t i = 0; i < x.size(); ++i)
		out[i] = 2.0 * q(x[i] * 0.5);
	return {std::move(out), k, 2.0};
}

QTensor quantize_gradient(const Tensor &g, int k, GradMode mode, Rng &rng)
{
	check_bits(k);
	const double s = scale_factor(g);
	Tensor out(g.shape());
	for (std::size_t i = 0; i < g.size(); ++i)
		out[i] = rq_scalar(g[i] / s, k, rng);
	if (mode == GradMode::AbandonScale)
		return {std::move(out), k, 1.0};
	for (double &v : out.data())
		v *= s;
	return {std::move(out), k, s};
}

QTensor apply_quant(const QObject &obj, const Tensor &x, Rng &rng)
{
	if (obj.mode == QuantMode::Stochastic)
		return quantize_gradient(x, obj.bits, GradMode::PreserveScale, rng);
	return apply_quant(obj, x);
}

QTensor apply_quant(const QObject &obj, const Tensor &x)
{
	switch (obj.mode)
	{
		case QuantMode::Off:
			return {x, 0, 1.0};
		case QuantMode::Uniform:
			return uniform_quantize(x, obj.bits);
		case QuantMode::Scale:
			return scale_quantize(x, obj.bits);
		case QuantMode::Constant2:
			return constant2_quantize(x, obj.bits);
		case QuantMode::Stochastic:
			break;
	}
	throw std::logic_error("stochastic quantization needs an rng");
}

std::string_view to_string(FailureModeReport::Mode m) noexcept
{
	switch (m)
	{
		case FailureModeReport::Mode::None:
			return "none";
		case FailureModeReport::Mode::Concentrated:
			return "concentrated";
		case FailureModeReport::Mode::Clipped:
			return "clipped";
		case FailureModeReport::Mode::Both:
			return "both";
	}
	return "?";
}

FailureModeReport classify_distribution(const Tensor &x, int k, const FailureThresholds &thresholds)
{
	if (x.empty())
		throw std::invalid_argument("classify_distribution: empty tensor");
	const double step = quant_step(k);
	std::size_t below = 0, clipped = 0;
	for (double v : x.data())
	{
		const double a = std::fabs(v);
		below += a < step;
		clipped += a > 1.0 - step;
	}
	FailureModeReport r;
	r.fraction_below_step = static_cast<double>(below) / static_cast<double>(x.size());
	r.fraction_clipped = static_cast<double>(clipped) / static_cast<double>(x.size());
	const bool c = r.fraction_below_step > thresholds.concentrated;
	const bool k2 = r.fraction_clipped > thresholds.clipped;
	r.mode = c && k2 ? FailureModeReport::Mode::Both
			: c      ? FailureModeReport::Mode::Concentrated
			: k2     ? FailureModeReport::Mode::Clipped
			         : FailureModeReport::Mode::None;
	return r;
}

} // namespace qseg
