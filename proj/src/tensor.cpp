#include "qseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>

namespace qseg {

std::size_t shape_numel(const Shape &shape)
{
	std::size_t n = 1;
	for (std::size_t d : shape)
		n *= d;
	return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape &shape)
{
	std::ostringstream os;
	os << '[';
	for (std::size_t i = 0; i < shape.size(); ++i)
		os << (i ? "x" : "") << shape[i];
	os << ']';
	return os.str();
}

Tensor::Tensor(Shape shape, double fill) :
		m_shape(std::move(shape))
{
	for (std::size_t d : m_shape)
		if (d == 0)
			throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(m_shape));
	m_data.assign(shape_numel(m_shape), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) :
		m_shape(std::move(shape)),
		m_data(std::move(data))
{
	for (std::size_t d : m_shape)
		if (d == 0)
			throw std::invalid_argument("tensor dimensions must be positive, got " + shape_str(m_shape));
	if (shape_numel(m_shape) != m_data.size())
		throw std::invalid_argument("tensor data length " + std::to_string(m_data.size()) + " does not match shape "
				+ shape_str(m_shape));
}

std::size_t Tensor::dim(std::size_t i) const
{
	if (i >= m_shape.size())
		throw std::out_of_range("tensor has rank " + std::to_string(m_shape.size()));
	return m_shape[i];
}

Tensor Tensor::reshaped(Shape shape) const
{
	return Tensor(std::move(shape), m_data);
}

bool Tensor::all_finite() const noexcept
{
	return std::all_of(m_data.begin(), m_data.end(), [](double v) { return std::isfinite(v); });
}

void require_same_shape(const Tensor &a, const Tensor &b, const char *what)
{
	if (a.shape() != b.shape())
		throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs "
				+ shape_str(b.shape()));
}

void require_rank(const Tensor &t, std::size_t rank, const char *what)
{
	if (t.rank() != rank)
		throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got "
				+ shape_str(t.shape()));
}

namespace {

template<typename F>
Tensor zip(const Tensor &a, const Tensor &b, const char *what, F f)
{
	require_same_shape(a, b, what);
	std::vector<double> out(a.size());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = f(a[i], b[i]);
	return Tensor(a.shape(), std::move(out));
}

// Output indices o with 0 <= o * s + k - p < in, clipped to [0, out).
void valid_range(std::size_t k, std::size_t s, std::size_t p, std::size_t in, std::size_t out, std::size_t &lo,
		std::size_t &hi)
{
	lo = k >= p ? 0 : (p - k + s - 1) / s;
	hi = (in + p <= k) ? 0 : std::min(out, (in - 1 + p - k) / s + 1);
	if (hi < lo)
		hi = lo;
}

} // namespace

Tensor add(const Tensor &a, const Tensor &b)
{
	return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor &a, const Tensor &b)
{
	return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor &a, const Tensor &b)
{
	return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor scalar_mul(const Tensor &a, double s)
{
	std::vector<double> out(a.size());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = a[i] * s;
	return Tensor(a.shape(), std::move(out));
}

Tensor relu(const Tensor &x)
{
	std::vector<double> out(x.size());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = x[i] > 0.0 ? x[i] : 0.0;
	return Tensor(x.shape(), std::move(out));
}

Tensor relu_backward(const Tensor &grad_out, const Tensor &x)
{
	return zip(grad_out, x, "relu_backward", [](double g, double v) { return v > 0.0 ? g : 0.0; });
}

double sum(const Tensor &a)
{
	double s = 0.0;
	for (double v : a.data())
		s += v;
	return s;
}

double dot(const Tensor &a, const Tensor &b)
{
	require_same_shape(a, b, "dot");
	double s = 0.0;
	for (std::size_t i = 0; i < a.size(); ++i)
		s += a[i] * b[i];
	return s;
}

double max_abs(const Tensor &a)
{
	double m = 0.0;
	for (double v : a.data())
		m = std::max(m, std::fabs(v));
	return m;
}

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad)
{
	if (stride == 0)
		throw std::invalid_argument("conv stride must be positive");
	if (in + 2 * pad < k)
		throw std::invalid_argument("conv kernel " + std::to_string(k) + " larger than padded input "
				+ std::to_string(in + 2 * pad));
	return (in + 2 * pad - k) / stride + 1;
}

std::size_t deconv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad)
{
	if (stride == 0)
		throw std::invalid_argument("deconv stride must be positive");
	const std::size_t full = (in - 1) * stride + k;
	if (full <= 2 * pad)
		throw std::invalid_argument("deconv padding consumes the whole output");
	return full - 2 * pad;
}

Tensor conv2d(const Tensor &input, const Tensor &kernel, std::size_t stride, std::size_t padding)
{
	require_rank(input, 4, "conv2d input");
	require_rank(kernel, 4, "conv2d kernel");
	const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
	const std::size_t O = kernel.dim(0), I = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
	if (C != I)
		throw std::invalid_argument("conv2d: input has " + std::to_string(C) + " channels but kernel expects "
				+ std::to_string(I));
	const std::size_t OH = conv_out_size(H, KH, stride, padding);
	const std::size_t OW = conv_out_size(W, KW, stride, padding);

	Tensor out({N, O, OH, OW});
	const double *in = input.data().data();
	const double *k = kernel.data().data();
	double *dst = out.data().data();
	const auto p = static_cast<std::ptrdiff_t>(padding);
	const auto s = static_cast<std::ptrdiff_t>(stride);

	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t o = 0; o < O; ++o)
		{
			double *oplane = dst + (n * O + o) * OH * OW;
			for (std::size_t c = 0; c < C; ++c)
			{
				const double *iplane = in + (n * C + c) * H * W;
				for (std::size_t kh = 0; kh < KH; ++kh)
				{
					std::size_t oh_lo, oh_hi;
					valid_range(kh, stride, padding, H, OH, oh_lo, oh_hi);
					for (std::size_t kw = 0; kw < KW; ++kw)
					{
						const double w = k[((o * I + c) * KH + kh) * KW + kw];
						std::size_t ow_lo, ow_hi;
						valid_range(kw, stride, padding, W, OW, ow_lo, ow_hi);
						for (std::size_t oh = oh_lo; oh < oh_hi; ++oh)
						{
							const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * s + static_cast<std::ptrdiff_t>(kh) - p;
							const double *irow = iplane + ih * static_cast<std::ptrdiff_t>(W) + static_cast<std::ptrdiff_t>(kw) - p;
							double *orow = oplane + oh * OW;
							if (stride == 1)
								for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
									orow[ow] += w * irow[ow];
							else
								for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
									orow[ow] += w * irow[static_cast<std::ptrdiff_t>(ow) * s];
						}
					}
				}
			}
		}
	return out;
}

Tensor deconv2d(const Tensor &input, const Tensor &kernel, std::size_t stride, std::size_t padding, std::size_t out_h,
		std::size_t out_w)
{
	require_rank(input, 4, "deconv2d input");
	require_rank(kernel, 4, "deconv2d kernel");
	const std::size_t N = input.dim(0), O = input.dim(1), h = input.dim(2), w = input.dim(3);
	const std::size_t KO = kernel.dim(0), I = kernel.dim(1), KH = kernel.dim(2), KW = kernel.dim(3);
	if (O != KO)
		throw std::invalid_argument("deconv2d: input has " + std::to_string(O) + " channels but kernel expects "
				+ std::to_string(KO));
	const std::size_t H = out_h ? out_h : deconv_out_size(h, KH, stride, padding);
	const std::size_t W = out_w ? out_w : deconv_out_size(w, KW, stride, padding);
	if (conv_out_size(H, KH, stride, padding) != h || conv_out_size(W, KW, stride, padding) != w)
		throw std::invalid_argument("deconv2d: output size " + std::to_string(H) + "x" + std::to_string(W)
				+ " is inconsistent with input " + shape_str(input.shape()));

	Tensor out({N, I, H, W});
	const double *x = input.data().data();
	const double *k = kernel.data().data();
	double *dst = out.data().data();
	const auto p = static_cast<std::ptrdiff_t>(padding);
	const auto s = static_cast<std::ptrdiff_t>(stride);

	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t o = 0; o < O; ++o)
		{
			const double *xplane = x + (n * O + o) * h * w;
			for (std::size_t i = 0; i < I; ++i)
			{
				double *oplane = dst + (n * I + i) * H * W;
				for (std::size_t kh = 0; kh < KH; ++kh)
				{
					std::size_t y_lo, y_hi;
					valid_range(kh, stride, padding, H, h, y_lo, y_hi);
					for (std::size_t kw = 0; kw < KW; ++kw)
					{
						const double wt = k[((o * I + i) * KH + kh) * KW + kw];
						std::size_t x_lo, x_hi;
						valid_range(kw, stride, padding, W, w, x_lo, x_hi);
						for (std::size_t y = y_lo; y < y_hi; ++y)
						{
							const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(y) * s + static_cast<std::ptrdiff_t>(kh) - p;
							double *orow = oplane + oy * static_cast<std::ptrdiff_t>(W) + static_cast<std::ptrdiff_t>(kw) - p;
							const double *xrow = xplane + y * w;
							if (stride == 1)
								for (std::size_t xx = x_lo; xx < x_hi; ++xx)
									orow[xx] += wt * xrow[xx];
							else
								for (std::size_t xx = x_lo; xx < x_hi; ++xx)
									orow[static_cast<std::ptrdiff_t>(xx) * s] += wt * xrow[xx];
						}
					}
				}
			}
		}
	return out;
}

Tensor conv2d_kernel_grad(const Tensor &input, const Tensor &grad_out, std::size_t KH, std::size_t KW, std::size_t stride,
		std::size_t padding)
{
	require_rank(input, 4, "conv2d_kernel_grad input");
	require_rank(grad_out, 4, "conv2d_kernel_grad grad_out");
	const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
	const std::size_t O = grad_out.dim(1), OH = grad_out.dim(2), OW = grad_out.dim(3);
	if (grad_out.dim(0) != N || conv_out_size(H, KH, stride, padding) != OH || conv_out_size(W, KW, stride, padding) != OW)
		throw std::invalid_argument("conv2d_kernel_grad: grad_out " + shape_str(grad_out.shape())
				+ " does not match forward output of input " + shape_str(input.shape()));

	Tensor gk({O, C, KH, KW});
	const double *in = input.data().data();
	const double *go = grad_out.data().data();
	double *dst = gk.data().data();
	const auto p = static_cast<std::ptrdiff_t>(padding);
	const auto s = static_cast<std::ptrdiff_t>(stride);

	for (std::size_t n = 0; n < N; ++n)
		for (std::size_t o = 0; o < O; ++o)
		{
			const double *gplane = go + (n * O + o) * OH * OW;
			for (std::size_t c = 0; c < C; ++c)
			{
				const double *iplane = in + (n * C + c) * H * W;
				for (std::size_t kh = 0; kh < KH; ++kh)
				{
					std::size_t oh_lo, oh_hi;
					valid_range(kh, stride, padding, H, OH, oh_lo, oh_hi);
					for (std::size_t kw = 0; kw < KW; ++kw)
					{
						std::size_t ow_lo, ow_hi;
						valid_range(kw, stride, padding, W, OW, ow_lo, ow_hi);
						double acc = 0.0;
						for (std::size_t oh = oh_lo; oh < oh_hi; ++oh)
						{
							const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh) * s + static_cast<std::ptrdiff_t>(kh) - p;
							const double *irow = iplane + ih * static_cast<std::ptrdiff_t>(W) + static_cast<std::ptrdiff_t>(kw) - p;
							const double *grow = gplane + oh * OW;
							if (stride == 1)
								for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
									acc += grow[ow] * irow[ow];
							else
								for (std::size_t ow = ow_lo; ow < ow_hi; ++ow)
									acc += grow[ow] * irow[static_cast<std::ptrdiff_t>(ow) * s];
						}
						dst[((o * C + c) * KH + kh) * KW + kw] += acc;
					}
				}
			}
		}
	return gk;
}

ConvGrads conv2d_backward(const Tensor &grad_out, const ConvCache &cache)
{
	if (!cache.valid())
		throw std::logic_error("conv2d_backward: no forward cache");
	const Tensor &x = cache.input;
	const Tensor &k = cache.kernel;
	const std::size_t OH = conv_out_size(x.dim(2), k.dim(2), cache.geom.stride, cache.geom.padding);
	const std::size_t OW = conv_out_size(x.dim(3), k.dim(3), cache.geom.stride, cache.geom.padding);
	const Shape expected{x.dim(0), k.dim(0), OH, OW};
	if (grad_out.shape() != expected)
		throw std::invalid_argument("conv2d_backward: grad_out " + shape_str(grad_out.shape()) + " != forward output "
				+ shape_str(expected));
	ConvGrads g;
	g.grad_input = deconv2d(grad_out, k, cache.geom.stride, cache.geom.padding, x.dim(2), x.dim(3));
	g.grad_kernel = conv2d_kernel_grad(x, grad_out, k.dim(2), k.dim(3), cache.geom.stride, cache.geom.padding);
	return g;
}

ConvGrads deconv2d_backward(const Tensor &grad_out, const ConvCache &cache)
{
	if (!cache.valid())
		throw std::logic_error("deconv2d_backward: no forward cache");
	const Tensor &x = cache.input;
	const Tensor &k = cache.kernel;
	require_rank(grad_out, 4, "deconv2d_backward grad_out");
	if (grad_out.dim(0) != x.dim(0) || grad_out.dim(1) != k.dim(1)
			|| conv_out_size(grad_out.dim(2), k.dim(2), cache.geom.stride, cache.geom.padding) != x.dim(2)
			|| conv_out_size(grad_out.dim(3), k.dim(3), cache.geom.stride, cache.geom.padding) != x.dim(3))
		throw std::invalid_argument("deconv2d_backward: grad_out " + shape_str(grad_out.shape())
				+ " does not match forward output");
	ConvGrads g;
	g.grad_input = conv2d(grad_out, k, cache.geom.stride, cache.geom.padding);
	// Kernel is O x I with x carrying the O channels; swap roles in the conv kernel gradient.
	g.grad_kernel = conv2d_kernel_grad(grad_out, x, k.dim(2), k.dim(3), cache.geom.stride, cache.geom.padding);
	return g;
}

Tensor maxpool2d(const Tensor &x, std::size_t size, PoolCache *cache)
{
	require_rank(x, 4, "maxpool2d");
	if (size == 0)
		throw std::invalid_argument("maxpool2d: window must be positive");
	const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
	if (H % size != 0 || W % size != 0)
		throw std::invalid_argument("maxpool2d: input " + shape_str(x.shape()) + " not divisible by window "
				+ std::to_string(size));
	const std::size_t OH = H / size, OW = W / size;
	Tensor out({N, C, OH, OW});
	std::vector<std::size_t> arg(out.size());
	std::size_t idx = 0;
	for (std::size_t nc = 0; nc < N * C; ++nc)
		for (std::size_t oh = 0; oh < OH; ++oh)
			for (std::size_t ow = 0; ow < OW; ++ow, ++idx)
			{
				std::size_t best = nc * H * W + oh * size * W + ow * size;
				for (std::size_t dy = 0; dy < size; ++dy)
					for (std::size_t dx = 0; dx < size; ++dx)
					{
						const std::size_t j = nc * H * W + (oh * size + dy) * W + ow * size + dx;
						if (x[j] > x[best])
							best = j;
					}
				out[idx] = x[best];
				arg[idx] = best;
			}
	if (cache)
	{
		cache->input_shape = x.shape();
		cache->argmax = std::move(arg);
	}
	return out;
}

Tensor maxpool2d_backward(const Tensor &grad_out, const PoolCache &cache)
{
	if (!cache.valid())
		throw std::logic_error("maxpool2d_backward: no forward cache");
	if (grad_out.size() != cache.argmax.size())
		throw std::invalid_argument("maxpool2d_backward: grad_out " + shape_str(grad_out.shape())
				+ " does not match pooled output");
	Tensor g(cache.input_shape);
	for (std::size_t i = 0; i < grad_out.size(); ++i)
		g[cache.argmax[i]] += grad_out[i];
	return g;
}

} // namespace qseg
