#ifndef QSEG_METRICS_HPP_
#define QSEG_METRICS_HPP_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace qseg {

inline constexpr int kDefaultIgnoreLabel = 255;

/// counts[g][p]: pixels with ground truth g predicted as p.
class ConfusionMatrix
{
	public:
		explicit ConfusionMatrix(std::size_t classes);

		std::size_t classes() const noexcept { return m_classes; }
		std::uint64_t at(std::size_t gt, std::size_t pred) const noexcept { return m_counts[gt * m_classes + pred]; }
		std::uint64_t total() const noexcept;
		std::uint64_t row_sum(std::size_t gt) const noexcept;
		std::uint64_t col_sum(std::size_t pred) const noexcept;

		/// Add one image. Pixels whose ground truth is ignore_label are skipped.
		void accumulate(std::span<const int> pred, std::span<const int> gt, int ignore_label = kDefaultIgnoreLabel);
		void merge(const ConfusionMatrix &other);

		friend bool operator==(const ConfusionMatrix &, const ConfusionMatrix &) = default;

	private:
		std::size_t m_classes;
		std::vector<std::uint64_t> m_counts;
};

/// TP / (TP + FP + FN) per class; nullopt when the class is absent from both
/// prediction and ground truth.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix &cm);
/// Mean over present classes. Throws if no class is present.
double mean_iou(const ConfusionMatrix &cm);
/// trace / total. Throws on an empty matrix.
double pixel_accuracy(const ConfusionMatrix &cm);

} // namespace qseg

#endif // QSEG_METRICS_HPP_
