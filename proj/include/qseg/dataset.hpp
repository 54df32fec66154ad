#ifndef QSEG_DATASET_HPP_
#define QSEG_DATASET_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "qseg/rng.hpp"
#include "qseg/tensor.hpp"

namespace qseg {

enum class ShapeKind
{
	Circle,
	Rectangle,
	Triangle
};

/// Analytic shape used to paint one class region.
struct ShapeSpec
{
		ShapeKind kind = ShapeKind::Circle;
		int cls = 1;
		// circle: cx, cy, r; rectangle: x0, y0, x1, y1; triangle: three vertices
		double p[6] = {};

		bool contains(double x, double y) const noexcept;
};

struct SegSample
{
		std::uint32_t id = 0;
		Tensor image;                      // C x H x W in [-1, 1]
		std::vector<std::uint8_t> mask;    // H x W class indices
		std::vector<ShapeSpec> shapes;     // painter order; not persisted

		std::size_t channels() const { return image.dim(0); }
		std::size_t height() const { return image.dim(1); }
		std::size_t width() const { return image.dim(2); }
};

struct Dataset
{
		std::uint64_t seed = 0;
		std::size_t classes = 0;
		std::vector<SegSample> samples;

		friend bool operator==(const Dataset &a, const Dataset &b);
};

/// Colored circles/rectangles/triangles on textured backgrounds. Class c >= 1 is drawn as
/// shape kind (c - 1) % 3; class 0 is background. Mask pixel = class of the last-painted
/// shape containing the pixel center.
Dataset generate_shapes(std::uint64_t seed, std::size_t n_samples, std::size_t size, std::size_t n_classes);
SegSample generate_sample(std::uint64_t seed, std::uint32_t id, std::size_t size, std::size_t n_classes);

void save_dataset(const std::string &path, const Dataset &ds);
Dataset load_dataset(const std::string &path);
/// Plain-text metadata next to a dataset file.
void write_manifest(const std::string &path, const Dataset &ds);

/// Header size of the binary format and the payload size it declares.
inline constexpr std::size_t kDatasetHeaderBytes = 8 + 4 + 4 + 8 + 4 + 8;
std::uint64_t dataset_payload_bytes(const Dataset &ds);

struct Batch
{
		Tensor images;              // N x C x H x W
		std::vector<int> masks;     // N x H x W
};

/// batch_size samples drawn with replacement, each randomly cropped to crop x crop
/// (crop 0 keeps the full image). Image and mask share the crop window.
Batch crop_batch(const Dataset &ds, std::size_t batch_size, std::size_t crop, Rng &rng);
/// Full images [first, first + count) stacked into one batch.
Batch stack_samples(const Dataset &ds, std::size_t first, std::size_t count);

} // namespace qseg

#endif // QSEG_DATASET_HPP_
