#include "qseg/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace qseg {

namespace {

constexpr char kMagic[8] = {'Q', 'S', 'E', 'G', 'D', 'S', 'E', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kImageChannels = 3;

// Base colors per shape class, cycled for classes beyond the table.
constexpr std::array<std::array<double, 3>, 6> kPalette{{
		{0.55, -0.25, -0.30},
		{-0.25, 0.50, -0.20},
		{-0.30, -0.15, 0.55},
		{0.45, 0.45, -0.35},
		{-0.35, 0.45, 0.45},
		{0.45, -0.35, 0.45},
}};

double cross(double ax, double ay, double bx, double by, double px, double py) noexcept
{
	return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

ShapeSpec random_shape(Rng &rng, int cls, double size)
{
	ShapeSpec s;
	s.cls = cls;
	s.kind = static_cast<ShapeKind>((cls - 1) % 3);
	const double lo = size * 0.08, hi = size * 0.2;
	const double cx = size * (0.15 + 0.7 * rng.uniform());
	const double cy = size * (0.15 + 0.7 * rng.uniform());
	switch (s.kind)
	{
		case ShapeKind::Circle:
		{
			const double r = lo + (hi - lo) * rng.uniform();
			s.p[0] = cx;
			s.p[1] = cy;
			s.p[2] = r;
			break;
		}
		case ShapeKind::Rectangle:
		{
			const double hw = lo + (hi - lo) * rng.uniform();
			const double hh = lo + (hi - lo) * rng.uniform();
			s.p[0] = cx - hw;
			s.p[1] = cy - hh;
			s.p[2] = cx + hw;
			s.p[3] = cy + hh;
			break;
		}
		case ShapeKind::Triangle:
		{
			const double r = 1.2 * (lo + (hi - lo) * rng.uniform());
			const double rot = 2.0 * std::numbers::pi * rng.uniform();
			for (int v = 0; v < 3; ++v)
			{
				const double jitter = 0.35 * (rng.uniform() - 0.5);
				const double a = rot + v * 2.0 * std::numbers::pi / 3.0 + jitter;
				s.p[2 * v] = cx + r * std::cos(a);
				s.p[2 * v + 1] = cy + r * std::sin(a);
			}
			break;
		}
	}
	return s;
}

void put_u32(std::string &buf, std::uint32_t v)
{
	for (int i = 0; i < 4; ++i)
		buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string &buf, std::uint64_t v)
{
	for (int i = 0; i < 8; ++i)
		buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader
{
	public:
		Reader(const std::string &data, std::string path) :
				m_data(data),
				m_path(std::move(path))
		{
		}
		void need(std::size_t n) const
		{
			if (m_pos + n > m_data.size())
				throw std::runtime_error(m_path + ": truncated dataset file at byte " + std::to_string(m_pos));
		}
		std::uint32_t u32()
		{
			need(4);
			std::uint32_t v = 0;
			for (int i = 0; i < 4; ++i)
				v |= static_cast<std::uint32_t>(static_cast<unsigned char>(m_data[m_pos++])) << (8 * i);
			return v;
		}
		std::uint64_t u64()
		{
			need(8);
			std::uint64_t v = 0;
			for (int i = 0; i < 8; ++i)
				v |= static_cast<std::uint64_t>(static_cast<unsigned char>(m_data[m_pos++])) << (8 * i);
			return v;
		}
		unsigned char byte()
		{
			need(1);
			return static_cast<unsigned char>(m_data[m_pos++]);
		}
		std::size_t pos() const noexcept { return m_pos; }

	private:
		const std::string &m_data;
		std::string m_path;
		std::size_t m_pos = 0;
};

} // namespace

bool ShapeSpec::contains(double x, double y) const noexcept
{
	switch (kind)
	{
		case ShapeKind::Circle:
			return (x - p[0]) * (x - p[0]) + (y - p[1]) * (y - p[1]) <= p[2] * p[2];
		case ShapeKind::Rectangle:
			return x >= p[0] && x <= p[2] && y >= p[1] && y <= p[3];
		case ShapeKind::Triangle:
		{
			const double d1 = cross(p[0], p[1], p[2], p[3], x, y);
			const double d2 = cross(p[2], p[3], p[4], p[5], x, y);
			const double d3 = cross(p[4], p[5], p[0], p[1], x, y);
			const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
			const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
			return !(neg && pos);
		}
	}
	return false;
}

bool operator==(const Dataset &a, const Dataset &b)
{
	if (a.seed != b.seed || a.classes != b.classes || a.samples.size() != b.samples.size())
		return false;
	for (std::size_t i = 0; i < a.samples.size(); ++i)
		if (a.samples[i].id != b.samples[i].id || !(a.samples[i].image == b.samples[i].image)
				|| a.samples[i].mask != b.samples[i].mask)
			return false;
	return true;
}

SegSample generate_sample(std::uint64_t seed, std::uint32_t id, std::size_t size, std::size_t n_classes)
{
	Rng rng = Rng(seed).split(id);
	const double sz = static_cast<double>(size);
	SegSample s;
	s.id = id;

	const std::size_t n_shapes = 1 + rng.below(4);
	for (std::size_t i = 0; i < n_shapes; ++i)
	{
		const int cls = 1 + static_cast<int>(rng.below(n_classes - 1));
		s.shapes.push_back(random_shape(rng, cls, sz));
	}

	// Background: smooth two-color gradient plus a low-frequency stripe texture.
	std::array<double, 3> bg0{}, bg1{}, shape_col[4]{};
	for (std::size_t c = 0; c < 3; ++c)
	{
		bg0[c] = 0.9 * (rng.uniform() - 0.5);
		bg1[c] = 0.9 * (rng.uniform() - 0.5);
	}
	const double angle = 2.0 * std::numbers::pi * rng.uniform();
	const double freq = 2.0 * std::numbers::pi * (1.0 + 3.0 * rng.uniform()) / sz;
	const double phase = 2.0 * std::numbers::pi * rng.uniform();
	for (std::size_t i = 0; i < s.shapes.size(); ++i)
	{
		const auto &base = kPalette[static_cast<std::size_t>(s.shapes[i].cls - 1) % kPalette.size()];
		for (std::size_t c = 0; c < 3; ++c)
			shape_col[i][c] = base[c] + 0.5 * (rng.uniform() - 0.5);
	}

	s.image = Tensor({kImageChannels, size, size});
	s.mask.assign(size * size, 0);
	for (std::size_t y = 0; y < size; ++y)
		for (std::size_t x = 0; x < size; ++x)
		{
			const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
			int cls = 0;
			std::size_t top = 0;
			for (std::size_t i = 0; i < s.shapes.size(); ++i)
				if (s.shapes[i].contains(px, py))
				{
					cls = s.shapes[i].cls;
					top = i;
				}
			s.mask[y * size + x] = static_cast<std::uint8_t>(cls);
			const double t = (px * std::cos(angle) + py * std::sin(angle)) / sz;
			const double stripe = 0.15 * std::sin(freq * (px * std::cos(angle + 1.0) + py * std::sin(angle + 1.0)) + phase);
			for (std::size_t c = 0; c < 3; ++c)
			{
				double v = cls == 0 ? bg0[c] + (bg1[c] - bg0[c]) * t + stripe : shape_col[top][c];
				v += 0.12 * rng.normal();
				v = std::clamp(v, -1.0, 1.0);
				// Stored as float32; keep the in-memory value identical to the file.
				s.image[(c * size + y) * size + x] = static_cast<double>(static_cast<float>(v));
			}
		}
	return s;
}

Dataset generate_shapes(std::uint64_t seed, std::size_t n_samples, std::size_t size, std::size_t n_classes)
{
	if (size < 32)
		throw std::invalid_argument("generate_shapes: image size must be >= 32, got " + std::to_string(size));
	if (n_classes < 2 || n_classes > 255)
		throw std::invalid_argument("generate_shapes: class count must be in [2, 255], got " + std::to_string(n_classes));
	Dataset ds;
	ds.seed = seed;
	ds.classes = n_classes;
	ds.samples.reserve(n_samples);
	for (std::size_t i = 0; i < n_samples; ++i)
		ds.samples.push_back(generate_sample(seed, static_cast<std::uint32_t>(i), size, n_classes));
	return ds;
}

std::uint64_t dataset_payload_bytes(const Dataset &ds)
{
	std::uint64_t n = 0;
	for (const SegSample &s : ds.samples)
		n += 16 + 4 * s.image.size() + s.mask.size();
	return n;
}

void save_dataset(const std::string &path, const Dataset &ds)
{
	std::string buf(kMagic, sizeof(kMagic));
	put_u32(buf, kVersion);
	put_u32(buf, static_cast<std::uint32_t>(ds.classes));
	put_u64(buf, ds.seed);
	put_u32(buf, static_cast<std::uint32_t>(ds.samples.size()));
	put_u64(buf, dataset_payload_bytes(ds));
	for (const SegSample &s : ds.samples)
	{
		put_u32(buf, s.id);
		put_u32(buf, static_cast<std::uint32_t>(s.channels()));
		put_u32(buf, static_cast<std::uint32_t>(s.height()));
		put_u32(buf, static_cast<std::uint32_t>(s.width()));
		for (double v : s.image.data())
		{
			const float f = static_cast<float>(v);
			std::uint32_t bits;
			std::memcpy(&bits, &f, 4);
			put_u32(buf, bits);
		}
		buf.append(reinterpret_cast<const char *>(s.mask.data()), s.mask.size());
	}
	std::ofstream out(path, std::ios::binary);
	if (!out)
		throw std::runtime_error("cannot open '" + path + "' for writing");
	out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
	if (!out)
		throw std::runtime_error("failed writing '" + path + "'");
}

Dataset load_dataset(const std::string &path)
{
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw std::runtime_error("cannot open dataset '" + path + "'");
	const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
	if (data.size() < kDatasetHeaderBytes)
		throw std::runtime_error(path + ": truncated dataset header");
	if (std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
		throw std::runtime_error(path + ": bad magic, not a dataset file");

	Reader r(data, path);
	for (std::size_t i = 0; i < sizeof(kMagic); ++i)
		r.byte();
	const std::uint32_t version = r.u32();
	if (version != kVersion)
		throw std::runtime_error(path + ": unsupported dataset version " + std::to_string(version));
	Dataset ds;
	ds.classes = r.u32();
	ds.seed = r.u64();
	const std::uint32_t n = r.u32();
	const std::uint64_t payload = r.u64();
	if (data.size() != kDatasetHeaderBytes + payload)
		throw std::runtime_error(path + ": file is " + std::to_string(data.size()) + " bytes, header declares "
				+ std::to_string(kDatasetHeaderBytes + payload));
	if (ds.classes < 2 || ds.classes > 255)
		throw std::runtime_error(path + ": invalid class count");

	ds.samples.reserve(n);
	for (std::uint32_t i = 0; i < n; ++i)
	{
		SegSample s;
		s.id = r.u32();
		const std::size_t C = r.u32(), H = r.u32(), W = r.u32();
		if (C == 0 || H == 0 || W == 0)
			throw std::runtime_error(path + ": sample " + std::to_string(i) + " has a zero dimension");
		r.need(4 * C * H * W + H * W);
		std::vector<double> img(C * H * W);
		for (double &v : img)
		{
			const std::uint32_t bits = r.u32();
			float f;
			std::memcpy(&f, &bits, 4);
			v = f;
		}
		s.image = Tensor({C, H, W}, std::move(img));
		s.mask.resize(H * W);
		for (auto &m : s.mask)
		{
			m = r.byte();
			if (m >= ds.classes && m != 255)
				throw std::runtime_error(path + ": mask class " + std::to_string(m) + " out of range");
		}
		ds.samples.push_back(std::move(s));
	}
	if (r.pos() != data.size())
		throw std::runtime_error(path + ": trailing bytes after last sample");
	return ds;
}

void write_manifest(const std::string &path, const Dataset &ds)
{
	std::ofstream out(path);
	if (!out)
		throw std::runtime_error("cannot open '" + path + "' for writing");
	out << "format=qseg-dataset-v" << kVersion << '\n';
	out << "seed=" << ds.seed << '\n';
	out << "samples=" << ds.samples.size() << '\n';
	out << "classes=" << ds.classes << '\n';
	if (!ds.samples.empty())
	{
		out << "channels=" << ds.samples[0].channels() << '\n';
		out << "height=" << ds.samples[0].height() << '\n';
		out << "width=" << ds.samples[0].width() << '\n';
	}
	out << "payload_bytes=" << dataset_payload_bytes(ds) << '\n';
}

Batch crop_batch(const Dataset &ds, std::size_t batch_size, std::size_t crop, Rng &rng)
{
	if (ds.samples.empty())
		throw std::invalid_argument("crop_batch: empty dataset");
	if (batch_size == 0)
		throw std::invalid_argument("crop_batch: batch size must be positive");
	const std::size_t C = ds.samples[0].channels();
	const std::size_t H = ds.samples[0].height(), W = ds.samples[0].width();
	const std::size_t ch = crop ? crop : H, cw = crop ? crop : W;
	if (ch > H || cw > W)
		throw std::invalid_argument("crop_batch: crop " + std::to_string(crop) + " exceeds sample size");

	Batch b;
	b.images = Tensor({batch_size, C, ch, cw});
	b.masks.resize(batch_size * ch * cw);
	for (std::size_t n = 0; n < batch_size; ++n)
	{
		const SegSample &s = ds.samples[rng.below(ds.samples.size())];
		if (s.height() != H || s.width() != W || s.channels() != C)
			throw std::invalid_argument("crop_batch: samples differ in size");
		const std::size_t y0 = rng.below(H - ch + 1);
		const std::size_t x0 = rng.below(W - cw + 1);
		for (std::size_t c = 0; c < C; ++c)
			for (std::size_t y = 0; y < ch; ++y)
				for (std::size_t x = 0; x < cw; ++x)
					b.images.at(n, c, y, x) = s.image[(c * H + y0 + y) * W + x0 + x];
		for (std::size_t y = 0; y < ch; ++y)
			for (std::size_t x = 0; x < cw; ++x)
				b.masks[(n * ch + y) * cw + x] = s.mask[(y0 + y) * W + x0 + x];
	}
	return b;
}

Batch stack_samples(const Dataset &ds, std::size_t first, std::size_t count)
{
	if (count == 0 || first + count > ds.samples.size())
		throw std::out_of_range("stack_samples: range outside dataset");
	const SegSample &s0 = ds.samples[first];
	const std::size_t C = s0.channels(), H = s0.height(), W = s0.width();
	Batch b;
	b.images = Tensor({count, C, H, W});
	b.masks.resize(count * H * W);
	for (std::size_t n = 0; n < count; ++n)
	{
		const SegSample &s = ds.samples[first + n];
		if (s.height() != H || s.width() != W || s.channels() != C)
			throw std::invalid_argument("stack_samples: samples differ in size");
		std::copy(s.image.data().begin(), s.image.data().end(), b.images.data().begin() + static_cast<std::ptrdiff_t>(n * C * H * W));
		std::copy(s.mask.begin(), s.mask.end(), b.masks.begin() + static_cast<std::ptrdiff_t>(n * H * W));
	}
	return b;
}

} // namespace qseg
