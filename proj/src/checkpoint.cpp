#include "qseg/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace qseg {

namespace {

constexpr char kMagic[8] = {'Q', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer
{
	public:
		void bytes(const void *p, std::size_t n) { m_out.append(static_cast<const char *>(p), n); }
		void u8(std::uint8_t v) { m_out.push_back(static_cast<char>(v)); }
		void u32(std::uint32_t v)
		{
			for (int i = 0; i < 4; ++i)
				u8(static_cast<std::uint8_t>(v >> (8 * i)));
		}
		void u64(std::uint64_t v)
		{
			for (int i = 0; i < 8; ++i)
				u8(static_cast<std::uint8_t>(v >> (8 * i)));
		}
		void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
		void f64(double v)
		{
			std::uint64_t b;
			std::memcpy(&b, &v, 8);
			u64(b);
		}
		void str(const std::string &s)
		{
			u32(static_cast<std::uint32_t>(s.size()));
			bytes(s.data(), s.size());
		}
		std::string take() { return std::move(m_out); }

	private:
		std::string m_out;
};

class Reader
{
	public:
		explicit Reader(const std::string &in) : m_in(in) {}

		void need(std::size_t n) const
		{
			if (m_in.size() - m_pos < n)
				throw std::runtime_error("checkpoint truncated");
		}
		std::uint8_t u8()
		{
			need(1);
			return static_cast<std::uint8_t>(m_in[m_pos++]);
		}
		std::uint32_t u32()
		{
			std::uint32_t v = 0;
			for (int i = 0; i < 4; ++i)
				v |= static_cast<std::uint32_t>(u8()) << (8 * i);
			return v;
		}
		std::uint64_t u64()
		{
			std::uint64_t v = 0;
			for (int i = 0; i < 8; ++i)
				v |= static_cast<std::uint64_t>(u8()) << (8 * i);
			return v;
		}
		std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
		double f64()
		{
			const std::uint64_t b = u64();
			double v;
			std::memcpy(&v, &b, 8);
			return v;
		}
		std::string str()
		{
			const std::uint32_t n = u32();
			need(n);
			std::string s = m_in.substr(m_pos, n);
			m_pos += n;
			return s;
		}
		bool done() const noexcept { return m_pos == m_in.size(); }

	private:
		const std::string &m_in;
		std::size_t m_pos = 0;
};

enum : std::uint8_t
{
	kRaw = 0,
	kGrid = 1
};

// Grid form when every value is exactly index * step(k) * scale.
bool on_grid(const std::vector<double> &v, int k, double scale, std::vector<std::int64_t> &idx)
{
	if (k < 2 || k > 32)
		return false;
	const double unit = quant_step(k) * scale;
	idx.resize(v.size());
	for (std::size_t i = 0; i < v.size(); ++i)
	{
		const double q = v[i] / unit;
		if (!std::isfinite(q) || q != std::nearbyint(q) || std::fabs(q) > 9.0e15)
			return false;
		idx[i] = static_cast<std::int64_t>(q);
		if (static_cast<double>(idx[i]) * unit != v[i])
			return false;
	}
	return true;
}

void put_values(Writer &w, const std::vector<double> &v, int k, double scale)
{
	std::vector<std::int64_t> idx;
	w.u64(v.size());
	if (k > 0 && on_grid(v, k, scale, idx))
	{
		w.u8(kGrid);
		w.u32(static_cast<std::uint32_t>(k));
		w.f64(scale);
		for (std::int64_t i : idx)
			w.i64(i);
	}
	else
	{
		w.u8(kRaw);
		for (double x : v)
			w.f64(x);
	}
}

std::vector<double> get_values(Reader &r)
{
	const std::uint64_t n = r.u64();
	const std::uint8_t enc = r.u8();
	if (n > (std::uint64_t{1} << 40))
		throw std::runtime_error("checkpoint: bad vector length");
	r.need(n * 8);
	std::vector<double> v(n);
	if (enc == kGrid)
	{
		const int k = static_cast<int>(r.u32());
		const double unit = quant_step(k) * r.f64();
		for (auto &x : v)
			x = static_cast<double>(r.i64()) * unit;
	}
	else if (enc == kRaw)
	{
		for (auto &x : v)
			x = r.f64();
	}
	else
		throw std::runtime_error("checkpoint: unknown value encoding");
	return v;
}

void put_bits(Writer &w, const BitConfig &cfg)
{
	for (std::size_t i = 0; i < kNumQObjects; ++i)
	{
		const QObject &o = cfg.get(static_cast<QObjectId>(i));
		w.u32(static_cast<std::uint32_t>(o.bits));
		w.u8(static_cast<std::uint8_t>(o.mode));
	}
}

BitConfig get_bits(Reader &r)
{
	BitConfig cfg;
	for (std::size_t i = 0; i < kNumQObjects; ++i)
	{
		QObject &o = cfg.get(static_cast<QObjectId>(i));
		o.bits = static_cast<int>(r.u32());
		const std::uint8_t m = r.u8();
		if (m > static_cast<std::uint8_t>(QuantMode::Constant2))
			throw std::runtime_error("checkpoint: bad quantization mode");
		o.mode = static_cast<QuantMode>(m);
	}
	return cfg;
}

} // namespace

std::string serialize_checkpoint(const Network &net, const ExperimentConfig &cfg)
{
	Writer w;
	w.bytes(kMagic, sizeof(kMagic));
	w.u32(kVersion);
	w.str(cfg.to_text());
	w.u32(static_cast<std::uint32_t>(net.options.classes));
	w.u32(static_cast<std::uint32_t>(net.layers.size()));
	for (const QLayer &l : net.layers)
	{
		w.str(l.name);
		w.u8(static_cast<std::uint8_t>(l.kind));
		for (std::size_t g : {l.geom.in_channels, l.geom.out_channels, l.geom.kernel, l.geom.stride, l.geom.padding})
			w.u32(static_cast<std::uint32_t>(g));
		w.u8(l.relu);
		w.u8(static_cast<std::uint8_t>(l.grad_mode));
		put_bits(w, l.cfg);
		const int k_U = l.cfg.U.enabled() ? l.cfg.U.bits : 0;
		w.u32(static_cast<std::uint32_t>(l.master.rank()));
		for (std::size_t d : l.master.shape())
			w.u64(d);
		put_values(w, l.master.vec(), k_U, 1.0);
		w.u8(l.bn.has_value());
		if (l.bn)
		{
			w.f64(l.bn->epsilon);
			w.f64(l.bn->momentum);
			w.u8(l.bn->stop_gradient);
			put_values(w, l.bn->gamma, k_U, 2.0);
			put_values(w, l.bn->beta, k_U, 2.0);
			put_values(w, l.bn->running_mu, 0, 1.0);
			put_values(w, l.bn->running_sigma, 0, 1.0);
		}
	}
	return w.take();
}

Checkpoint deserialize_checkpoint(const std::string &bytes)
{
	Reader r(bytes);
	r.need(sizeof(kMagic));
	if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
		throw std::runtime_error("not a checkpoint (bad magic)");
	for (std::size_t i = 0; i < sizeof(kMagic); ++i)
		r.u8();
	if (r.u32() != kVersion)
		throw std::runtime_error("unsupported checkpoint version");

	Checkpoint ck;
	ck.config.apply_text(r.str());
	const std::size_t classes = r.u32();
	Rng unused(0);
	ck.network = build_network(ck.config.network_options(classes), unused);
	if (r.u32() != ck.network.layers.size())
		throw std::runtime_error("checkpoint: layer count does not match the network");
	for (QLayer &l : ck.network.layers)
	{
		if (r.str() != l.name)
			throw std::runtime_error("checkpoint: layer order does not match the network");
		l.kind = static_cast<LayerKind>(r.u8());
		std::size_t g[5];
		for (auto &x : g)
			x = r.u32();
		l.geom = {g[0], g[1], g[2], g[3], g[4]};
		l.relu = r.u8() != 0;
		l.grad_mode = static_cast<GradMode>(r.u8());
		l.cfg = get_bits(r);
		const std::uint32_t rank = r.u32();
		if (rank > 8)
			throw std::runtime_error("checkpoint: bad tensor rank");
		Shape shape(rank);
		for (auto &d : shape)
			d = r.u64();
		std::vector<double> master = get_values(r);
		if (shape_numel(shape) != master.size() || shape != kernel_shape(l.kind, l.geom))
			throw std::runtime_error("checkpoint: weights of layer " + l.name + " do not match its geometry");
		l.master = Tensor(shape, std::move(master));
		const bool has_bn = r.u8() != 0;
		if (has_bn != l.bn.has_value())
			throw std::runtime_error("checkpoint: BN presence of layer " + l.name + " does not match the network");
		if (l.bn)
		{
			BNState &bn = *l.bn;
			bn.epsilon = r.f64();
			bn.momentum = r.f64();
			bn.stop_gradient = r.u8() != 0;
			bn.gamma = get_values(r);
			bn.beta = get_values(r);
			bn.running_mu = get_values(r);
			bn.running_sigma = get_values(r);
			const std::size_t c = l.geom.out_channels;
			if (bn.gamma.size() != c || bn.beta.size() != c || bn.running_mu.size() != c || bn.running_sigma.size() != c)
				throw std::runtime_error("checkpoint: BN vectors of layer " + l.name + " have the wrong length");
		}
	}
	if (!r.done())
		throw std::runtime_error("checkpoint: trailing bytes");
	return ck;
}

void save_checkpoint(const std::string &path, const Network &net, const ExperimentConfig &cfg)
{
	const std::string bytes = serialize_checkpoint(net, cfg);
	std::ofstream f(path, std::ios::binary);
	if (!f)
		throw std::runtime_error("cannot write checkpoint '" + path + "'");
	f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
	if (!f)
		throw std::runtime_error("error writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string &path)
{
	std::ifstream f(path, std::ios::binary);
	if (!f)
		throw std::runtime_error("cannot open checkpoint '" + path + "'");
	std::stringstream ss;
	ss << f.rdbuf();
	return deserialize_checkpoint(ss.str());
}

} // namespace qseg
