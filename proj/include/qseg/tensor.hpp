#ifndef QSEG_TENSOR_HPP_
#define QSEG_TENSOR_HPP_

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape &shape);
std::string shape_str(const Shape &shape);

/// Dense row-major tensor of doubles. Image-like data is NCHW, kernels OIHW.
class Tensor
{
	public:
		Tensor() = default;
		explicit Tensor(Shape shape, double fill = 0.0);
		Tensor(Shape shape, std::vector<double> data);

		static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

		const Shape &shape() const noexcept { return m_shape; }
		std::size_t dim(std::size_t i) const;
		std::size_t rank() const noexcept { return m_shape.size(); }
		std::size_t size() const noexcept { return m_data.size(); }
		bool empty() const noexcept { return m_data.empty(); }

		std::span<const double> data() const noexcept { return m_data; }
		std::span<double> data() noexcept { return m_data; }
		const std::vector<double> &vec() const noexcept { return m_data; }

		double operator[](std::size_t i) const noexcept { return m_data[i]; }
		double &operator[](std::size_t i) noexcept { return m_data[i]; }

		// 4-D accessors (NCHW / OIHW)
		double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept
		{
			return m_data[((n * m_shape[1] + c) * m_shape[2] + h) * m_shape[3] + w];
		}
		double &at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept
		{
			return m_data[((n * m_shape[1] + c) * m_shape[2] + h) * m_shape[3] + w];
		}

		Tensor reshaped(Shape shape) const;
		bool all_finite() const noexcept;

		friend bool operator==(const Tensor &a, const Tensor &b) = default;

	private:
		Shape m_shape;
		std::vector<double> m_data;
};

void require_same_shape(const Tensor &a, const Tensor &b, const char *what);
void require_rank(const Tensor &t, std::size_t rank, const char *what);

// Elementwise
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor scalar_mul(const Tensor &a, double s);
Tensor relu(const Tensor &x);
/// Gradient of relu given the forward input.
Tensor relu_backward(const Tensor &grad_out, const Tensor &x);

double sum(const Tensor &a);
double dot(const Tensor &a, const Tensor &b);
double max_abs(const Tensor &a);

struct ConvGeometry
{
		std::size_t stride = 1;
		std::size_t padding = 0;
};

/// Saved operands of a conv/deconv forward call.
struct ConvCache
{
		Tensor input;
		Tensor kernel;
		ConvGeometry geom;

		bool valid() const noexcept { return !input.empty() && !kernel.empty(); }
};

struct ConvGrads
{
		Tensor grad_input;
		Tensor grad_kernel;
};

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);
std::size_t deconv_out_size(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

/// Cross-correlation. input NCHW, kernel OIHW -> N x O x OH x OW.
Tensor conv2d(const Tensor &input, const Tensor &kernel, std::size_t stride, std::size_t padding);
ConvGrads conv2d_backward(const Tensor &grad_out, const ConvCache &cache);

/// Transposed convolution: the adjoint of conv2d with the same kernel and geometry.
/// input N x O x h x w, kernel OIHW -> N x I x H x W. out_h/out_w of 0 selects the
/// default size (h - 1) * stride - 2 * padding + k.
Tensor deconv2d(const Tensor &input, const Tensor &kernel, std::size_t stride, std::size_t padding,
		std::size_t out_h = 0, std::size_t out_w = 0);
ConvGrads deconv2d_backward(const Tensor &grad_out, const ConvCache &cache);

/// dL/dkernel for conv2d(input, kernel) given dL/doutput.
Tensor conv2d_kernel_grad(const Tensor &input, const Tensor &grad_out, std::size_t kh, std::size_t kw,
		std::size_t stride, std::size_t padding);

struct PoolCache
{
		Shape input_shape;
		std::vector<std::size_t> argmax;  // flat input index per output element

		bool valid() const noexcept { return !input_shape.empty(); }
};

/// Non-overlapping max pooling (window == stride == size). Ties go to the first maximum.
Tensor maxpool2d(const Tensor &x, std::size_t size, PoolCache *cache = nullptr);
Tensor maxpool2d_backward(const Tensor &grad_out, const PoolCache &cache);

} // namespace qseg

#endif // QSEG_TENSOR_HPP_
