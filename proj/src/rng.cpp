#include "qseg/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace qseg {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) noexcept
{
	z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
	z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
	return z ^ (z >> 31);
}

} // namespace

Rng::Rng(std::uint64_t seed) noexcept :
		m_key(mix64(seed + 0x632BE59BD9B4E019ULL))
{
}

std::uint64_t Rng::next_u64() noexcept
{
	++m_counter;
	return mix64(m_key + m_counter * kGolden);
}

double Rng::uniform() noexcept
{
	return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() noexcept
{
	const double u1 = 1.0 - uniform();  // (0, 1]
	const double u2 = uniform();
	return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept
{
	// Lemire's multiply-shift; bias is < n / 2^64 and irrelevant here.
	return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

Rng Rng::split(std::uint64_t stream_id) const noexcept
{
	Rng child;
	child.m_key = mix64(m_key ^ mix64(stream_id * kGolden + 0x1D8E4E27C47D124FULL));
	child.m_counter = 0;
	return child;
}

Tensor uniform_rand(Rng &rng, const Shape &shape, double lo, double hi)
{
	if (!(lo < hi))
		throw std::invalid_argument("uniform_rand: requires lo < hi");
	Tensor t(shape);
	for (double &v : t.data())
		v = lo + (hi - lo) * rng.uniform();
	return t;
}

Tensor normal_rand(Rng &rng, const Shape &shape, double mean, double stddev)
{
	if (!(stddev > 0.0))
		throw std::invalid_argument("normal_rand: requires std > 0");
	Tensor t(shape);
	for (double &v : t.data())
		v = mean + stddev * rng.normal();
	return t;
}

} // namespace qseg
