#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include "qseg/rng.hpp"

using qseg::Rng;

TEST(Rng, SameSeedSameStream)
{
	Rng a(42), b(42), c(43);
	bool differs = false;
	for (int i = 0; i < 100; ++i)
	{
		const auto x = a.next_u64();
		EXPECT_EQ(x, b.next_u64());
		differs |= x != c.next_u64();
	}
	EXPECT_TRUE(differs);
}

TEST(Rng, SplitDoesNotAdvanceParentAndIsReplayable)
{
	Rng a(7);
	a.next_u64();
	const auto counter = a.counter();
	Rng s1 = a.split(3), s2 = a.split(3), s3 = a.split(4);
	EXPECT_EQ(a.counter(), counter);
	std::set<std::uint64_t> seen;
	for (int i = 0; i < 50; ++i)
	{
		const auto v = s1.next_u64();
		EXPECT_EQ(v, s2.next_u64());
		seen.insert(v);
		seen.insert(s3.next_u64());
	}
	EXPECT_EQ(seen.size(), 100u);
}

TEST(Rng, UniformMomentsAndRange)
{
	Rng r(1);
	const int n = 200000;
	double s = 0.0, s2 = 0.0;
	for (int i = 0; i < n; ++i)
	{
		const double u = r.uniform();
		ASSERT_GE(u, 0.0);
		ASSERT_LT(u, 1.0);
		s += u;
		s2 += u * u;
	}
	const double mean = s / n, var = s2 / n - mean * mean;
	// 5 standard errors.
	EXPECT_NEAR(mean, 0.5, 5.0 * std::sqrt(1.0 / 12.0 / n));
	EXPECT_NEAR(var, 1.0 / 12.0, 0.002);
}

TEST(Rng, NormalMoments)
{
	Rng r(2);
	const int n = 200000;
	double s = 0.0, s2 = 0.0;
	for (int i = 0; i < n; ++i)
	{
		const double z = r.normal();
		s += z;
		s2 += z * z;
	}
	EXPECT_NEAR(s / n, 0.0, 5.0 / std::sqrt(double(n)));
	EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, BelowCoversRangeUniformly)
{
	Rng r(3);
	std::vector<int> counts(7, 0);
	for (int i = 0; i < 70000; ++i)
		++counts[r.below(7)];
	for (int c : counts)
		EXPECT_NEAR(c, 10000, 500);
}

TEST(Rng, TensorHelpersValidateArguments)
{
	Rng r(4);
	EXPECT_THROW(qseg::uniform_rand(r, {3}, 1.0, 1.0), std::invalid_argument);
	EXPECT_THROW(qseg::normal_rand(r, {3}, 0.0, 0.0), std::invalid_argument);
	const auto t = qseg::uniform_rand(r, {1000}, -2.0, 3.0);
	for (double v : t.data())
	{
		EXPECT_GE(v, -2.0);
		EXPECT_LT(v, 3.0);
	}
}
