#ifndef QSEG_RNG_HPP_
#define QSEG_RNG_HPP_

#include <cstdint>

#include "qseg/tensor.hpp"

namespace qseg {

/// Counter-based generator: the n-th draw is a pure function of (key, n), so any
/// stream can be replayed or split into independent child streams.
class Rng
{
	public:
		explicit Rng(std::uint64_t seed = 0) noexcept;

		std::uint64_t next_u64() noexcept;
		/// Uniform in [0, 1) with 53 random bits.
		double uniform() noexcept;
		/// Standard normal (Box-Muller, cosine branch only).
		double normal() noexcept;
		/// Uniform integer in [0, n). n must be positive.
		std::uint64_t below(std::uint64_t n) noexcept;

		/// Independent child stream; does not advance this stream.
		Rng split(std::uint64_t stream_id) const noexcept;

		std::uint64_t key() const noexcept { return m_key; }
		std::uint64_t counter() const noexcept { return m_counter; }

	private:
		std::uint64_t m_key;
		std::uint64_t m_counter = 0;
};

Tensor uniform_rand(Rng &rng, const Shape &shape, double lo, double hi);
Tensor normal_rand(Rng &rng, const Shape &shape, double mean, double stddev);

} // namespace qseg

#endif // QSEG_RNG_HPP_
