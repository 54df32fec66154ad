#ifndef QSEG_PROFILE_HPP_
#define QSEG_PROFILE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "qseg/config.hpp"
#include "qseg/dataset.hpp"
#include "qseg/network.hpp"

namespace qseg {

/// Magnitude histogram: one bin for exact zeros, then log-spaced bins
/// [2^e, 2^(e+1)) for e in [min_exp, max_exp), with everything below 2^min_exp in the
/// underflow bin and everything at or above 2^max_exp in the overflow bin.
struct MagnitudeHistogram
{
		int min_exp = -32;
		int max_exp = 4;
		std::uint64_t zeros = 0;
		std::uint64_t underflow = 0;
		std::uint64_t overflow = 0;
		std::vector<std::uint64_t> counts;

		std::uint64_t total() const noexcept;
};

MagnitudeHistogram magnitude_histogram(const std::vector<double> &v, int min_exp = -32, int max_exp = 4);

struct BoxStats
{
		double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Quartiles by linear interpolation between order statistics. Throws on empty input.
BoxStats box_stats(std::vector<double> v);

struct LayerProfile
{
		std::string layer;
		std::size_t size = 0;
		MagnitudeHistogram histogram;
		BoxStats box;
		double scale = 0.0;  // max |x|
		int bits = 0;        // width used for the failure-mode check
		FailureModeReport failure;
};

struct ProfileReport
{
		std::string object;
		std::vector<LayerProfile> layers;
		double scale_max = 0.0;  // over layers
		double scale_min = 0.0;
};

/// Objects accepted by profile(): W A E1 E2 G mu sigma gamma beta xhat.
bool is_profile_object(const std::string &name);

/// Replays one training step (forward and backward, no update) on a copy of net with a
/// batch drawn from ds, and reports the unquantized tensors of the given object for every
/// layer that has it. Throws std::invalid_argument for unknown objects.
ProfileReport profile(const Network &net, const ExperimentConfig &cfg, const Dataset &ds, const std::string &object);

/// JSON document for one layer of a report (with the report-wide scale range).
std::string layer_profile_json(const ProfileReport &report, std::size_t layer_index);
/// Writes hist_<object>_<layer>.json into dir for every layer; returns the paths.
std::vector<std::string> write_profile(const std::string &dir, const ProfileReport &report);

} // namespace qseg

#endif // QSEG_PROFILE_HPP_
