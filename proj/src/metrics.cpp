#include "qseg/metrics.hpp"

#include <stdexcept>
#include <string>

namespace qseg {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) :
		m_classes(classes),
		m_counts(classes * classes, 0)
{
	if (classes == 0)
		throw std::invalid_argument("confusion matrix needs at least one class");
}

std::uint64_t ConfusionMatrix::total() const noexcept
{
	std::uint64_t t = 0;
	for (std::uint64_t v : m_counts)
		t += v;
	return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t gt) const noexcept
{
	std::uint64_t t = 0;
	for (std::size_t p = 0; p < m_classes; ++p)
		t += at(gt, p);
	return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t pred) const noexcept
{
	std::uint64_t t = 0;
	for (std::size_t g = 0; g < m_classes; ++g)
		t += at(g, pred);
	return t;
}

void ConfusionMatrix::accumulate(std::span<const int> pred, std::span<const int> gt, int ignore_label)
{
	if (pred.size() != gt.size())
		throw std::invalid_argument("accumulate: prediction and ground truth sizes differ ("
				+ std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + ")");
	const auto C = static_cast<int>(m_classes);
	// Validate first so a bad image leaves the matrix untouched.
	for (std::size_t i = 0; i < gt.size(); ++i)
	{
		if (gt[i] == ignore_label)
			continue;
		if (gt[i] < 0 || gt[i] >= C)
			throw std::out_of_range("accumulate: ground-truth class " + std::to_string(gt[i]) + " out of range");
		if (pred[i] < 0 || pred[i] >= C)
			throw std::out_of_range("accumulate: predicted class " + std::to_string(pred[i]) + " out of range");
	}
	for (std::size_t i = 0; i < gt.size(); ++i)
		if (gt[i] != ignore_label)
			++m_counts[static_cast<std::size_t>(gt[i]) * m_classes + static_cast<std::size_t>(pred[i])];
}

void ConfusionMatrix::merge(const ConfusionMatrix &other)
{
	if (other.m_classes != m_classes)
		throw std::invalid_argument("merge: class count mismatch");
	for (std::size_t i = 0; i < m_counts.size(); ++i)
		m_counts[i] += other.m_counts[i];
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix &cm)
{
	std::vector<std::optional<double>> out(cm.classes());
	for (std::size_t c = 0; c < cm.classes(); ++c)
	{
		const std::uint64_t tp = cm.at(c, c);
		const std::uint64_t denom = cm.row_sum(c) + cm.col_sum(c) - tp;
		if (denom > 0)
			out[c] = static_cast<double>(tp) / static_cast<double>(denom);
	}
	return out;
}

double mean_iou(const ConfusionMatrix &cm)
{
	double s = 0.0;
	std::size_t n = 0;
	for (const auto &v : iou_per_class(cm))
		if (v)
		{
			s += *v;
			++n;
		}
	if (n == 0)
		throw std::invalid_argument("mean_iou: no class present");
	return s / static_cast<double>(n);
}

double pixel_accuracy(const ConfusionMatrix &cm)
{
	const std::uint64_t t = cm.total();
	if (t == 0)
		throw std::invalid_argument("pixel_accuracy: empty confusion matrix");
	std::uint64_t tr = 0;
	for (std::size_t c = 0; c < cm.classes(); ++c)
		tr += cm.at(c, c);
	return static_cast<double>(tr) / static_cast<double>(t);
}

} // namespace qseg
