#include "qseg/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace qseg {

namespace {

std::string fmt_double(double v)
{
	char buf[64];
	auto res = std::to_chars(buf, buf + sizeof(buf), v);
	return std::string(buf, res.ptr);
}

double parse_double(const std::string &key, const std::string &v)
{
	try
	{
		std::size_t pos = 0;
		const double d = std::stod(v, &pos);
		if (pos == v.size())
			return d;
	}
	catch (const std::exception &)
	{
	}
	throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
}

std::uint64_t parse_uint(const std::string &key, const std::string &v)
{
	std::uint64_t out = 0;
	auto res = std::from_chars(v.data(), v.data() + v.size(), out);
	if (res.ec != std::errc() || res.ptr != v.data() + v.size())
		throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
	return out;
}

bool parse_bool(const std::string &key, const std::string &v)
{
	if (v == "on" || v == "true" || v == "1" || v == "yes")
		return true;
	if (v == "off" || v == "false" || v == "0" || v == "no")
		return false;
	throw std::invalid_argument("config key '" + key + "': expected on/off, got '" + v + "'");
}

std::string fmt_bool(bool b)
{
	return b ? "on" : "off";
}

struct Key
{
		std::string name;
		std::function<std::string(const ExperimentConfig &)> get;
		std::function<void(ExperimentConfig &, const std::string &)> set;
};

#define QSEG_SIZE_KEY(field)                                                                             \
	Key{#field, [](const ExperimentConfig &c) { return std::to_string(c.field); },                     \
			[](ExperimentConfig &c, const std::string &v) { c.field = parse_uint(#field, v); }}
#define QSEG_DOUBLE_KEY(field)                                                                           \
	Key{#field, [](const ExperimentConfig &c) { return fmt_double(c.field); },                         \
			[](ExperimentConfig &c, const std::string &v) { c.field = parse_double(#field, v); }}
#define QSEG_BOOL_KEY(field)                                                                             \
	Key{#field, [](const ExperimentConfig &c) { return fmt_bool(c.field); },                           \
			[](ExperimentConfig &c, const std::string &v) { c.field = parse_bool(#field, v); }}
#define QSEG_STRING_KEY(field)                                                                           \
	Key{#field, [](const ExperimentConfig &c) { return c.field; },                                     \
			[](ExperimentConfig &c, const std::string &v) { c.field = v; }}

const std::vector<Key> &key_table()
{
	static const std::vector<Key> table = [] {
		std::vector<Key> t{
				Key{"network", [](const ExperimentConfig &c) { return std::string(to_string(c.network)); },
						[](ExperimentConfig &c, const std::string &v) { c.network = parse_network_kind(v); }},
				QSEG_STRING_KEY(dataset),
				QSEG_STRING_KEY(val_dataset),
				QSEG_SIZE_KEY(batch_size),
				QSEG_SIZE_KEY(crop),
				QSEG_SIZE_KEY(steps),
				QSEG_SIZE_KEY(seed),
				QSEG_SIZE_KEY(eval_interval),
				QSEG_DOUBLE_KEY(lr),
				QSEG_DOUBLE_KEY(lr_fp),
				QSEG_SIZE_KEY(halving_period),
				QSEG_DOUBLE_KEY(weight_decay),
				Key{"grad_mode", [](const ExperimentConfig &c) { return c.grad_mode; },
						[](ExperimentConfig &c, const std::string &v) {
							if (v != "default")
								parse_grad_mode(v);
							c.grad_mode = v;
						}},
				QSEG_BOOL_KEY(quant),
				QSEG_BOOL_KEY(quant_encoder),
				QSEG_BOOL_KEY(quant_decoder),
				QSEG_BOOL_KEY(quant_after_add),
				QSEG_BOOL_KEY(bn_stop_gradient),
				QSEG_DOUBLE_KEY(bn_momentum),
				QSEG_DOUBLE_KEY(bn_epsilon),
				Key{"widths",
						[](const ExperimentConfig &c) {
							return std::to_string(c.widths[0]) + "," + std::to_string(c.widths[1]) + ","
									+ std::to_string(c.widths[2]) + "," + std::to_string(c.widths[3]);
						},
						[](ExperimentConfig &c, const std::string &v) {
							std::array<std::size_t, 4> w{};
							std::istringstream is(v);
							std::string item;
							std::size_t i = 0;
							while (std::getline(is, item, ','))
							{
								if (i >= 4)
									throw std::invalid_argument("config key 'widths': expected 4 values");
								w[i++] = parse_uint("widths", item);
								if (w[i - 1] == 0)
									throw std::invalid_argument("config key 'widths': widths must be positive");
							}
							if (i != 4)
								throw std::invalid_argument("config key 'widths': expected 4 values");
							c.widths = w;
						}},
		};
		for (std::size_t i = 0; i < kNumQObjects; ++i)
		{
			const auto id = static_cast<QObjectId>(i);
			const std::string obj(qobject_name(id));
			t.push_back(Key{"k_" + obj, [id](const ExperimentConfig &c) { return std::to_string(c.bits.get(id).bits); },
					[id, obj](ExperimentConfig &c, const std::string &v) {
						c.bits.get(id).bits = static_cast<int>(parse_uint("k_" + obj, v));
					}});
			t.push_back(Key{"mode_" + obj,
					[id](const ExperimentConfig &c) { return std::string(to_string(c.bits.get(id).mode)); },
					[id](ExperimentConfig &c, const std::string &v) { c.bits.get(id).mode = parse_quant_mode(v); }});
		}
		t.push_back(Key{"eval_mode",
				[](const ExperimentConfig &c) { return std::string(c.eval_mode == EvalMode::Global ? "global" : "per_image"); },
				[](ExperimentConfig &c, const std::string &v) {
					if (v == "global")
						c.eval_mode = EvalMode::Global;
					else if (v == "per_image")
						c.eval_mode = EvalMode::PerImage;
					else
						throw std::invalid_argument("config key 'eval_mode': expected global or per_image");
				}});
		t.push_back(Key{"ignore_label", [](const ExperimentConfig &c) { return std::to_string(c.ignore_label); },
				[](ExperimentConfig &c, const std::string &v) { c.ignore_label = static_cast<int>(parse_uint("ignore_label", v)); }});
		t.push_back(QSEG_SIZE_KEY(seeds));
		t.push_back(QSEG_SIZE_KEY(threads));
		t.push_back(QSEG_DOUBLE_KEY(divergence_factor));
		t.push_back(QSEG_SIZE_KEY(divergence_patience));
		return t;
	}();
	return table;
}

const Key &find_key(const std::string &name)
{
	for (const Key &k : key_table())
		if (k.name == name)
			return k;
	throw std::invalid_argument("unknown config key '" + name + "'");
}

std::string trim(const std::string &s)
{
	const auto b = s.find_first_not_of(" \t\r");
	if (b == std::string::npos)
		return {};
	const auto e = s.find_last_not_of(" \t\r");
	return s.substr(b, e - b + 1);
}

} // namespace

const std::vector<std::string> &config_keys()
{
	static const std::vector<std::string> keys = [] {
		std::vector<std::string> k;
		for (const Key &key : key_table())
			k.push_back(key.name);
		return k;
	}();
	return keys;
}

void ExperimentConfig::set(const std::string &key, const std::string &value)
{
	find_key(key).set(*this, trim(value));
}

std::string ExperimentConfig::get(const std::string &key) const
{
	return find_key(key).get(*this);
}

std::string ExperimentConfig::to_text() const
{
	std::string out;
	for (const Key &k : key_table())
		out += k.name + "=" + k.get(*this) + "\n";
	return out;
}

void ExperimentConfig::apply_text(const std::string &text)
{
	std::istringstream is(text);
	std::string line;
	std::size_t lineno = 0;
	while (std::getline(is, line))
	{
		++lineno;
		const auto hash = line.find('#');
		if (hash != std::string::npos)
			line.resize(hash);
		line = trim(line);
		if (line.empty())
			continue;
		const auto eq = line.find('=');
		if (eq == std::string::npos)
			throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
		set(trim(line.substr(0, eq)), line.substr(eq + 1));
	}
}

void ExperimentConfig::load_file(const std::string &path)
{
	std::ifstream in(path);
	if (!in)
		throw std::runtime_error("cannot open config file '" + path + "'");
	std::stringstream ss;
	ss << in.rdbuf();
	apply_text(ss.str());
}

double default_lr(NetworkKind kind) noexcept
{
	return kind == NetworkKind::ToyFcn ? 0.0078125 : 0.03125;
}

double default_lr_fp(NetworkKind kind) noexcept
{
	return kind == NetworkKind::ToyFcn ? 0.0625 : 0.03125;
}

double default_weight_decay(NetworkKind kind) noexcept
{
	return kind == NetworkKind::ToyFcn ? 5e-4 : 1e-5;
}

GradMode default_grad_mode(NetworkKind kind) noexcept
{
	return kind == NetworkKind::ToyFcn ? GradMode::AbandonScale : GradMode::PreserveScale;
}

GradMode ExperimentConfig::resolved_grad_mode() const
{
	return grad_mode == "default" ? default_grad_mode(network) : parse_grad_mode(grad_mode);
}

double ExperimentConfig::resolved_lr() const
{
	return lr > 0.0 ? lr : default_lr(network);
}

double ExperimentConfig::resolved_lr_fp() const
{
	return lr_fp > 0.0 ? lr_fp : default_lr_fp(network);
}

double ExperimentConfig::resolved_weight_decay() const
{
	return weight_decay >= 0.0 ? weight_decay : default_weight_decay(network);
}

BitConfig ExperimentConfig::effective_bits() const
{
	return quant ? bits : BitConfig::full_precision();
}

NetworkOptions ExperimentConfig::network_options(std::size_t classes) const
{
	NetworkOptions o;
	o.kind = network;
	o.classes = classes;
	o.widths = widths;
	o.cfg = effective_bits();
	o.grad_mode = resolved_grad_mode();
	o.quant_encoder = quant_encoder;
	o.quant_decoder = quant_decoder;
	o.quant_after_add = quant_after_add;
	o.bn_stop_gradient = bn_stop_gradient;
	o.bn_momentum = bn_momentum;
	o.bn_epsilon = bn_epsilon;
	return o;
}

void ExperimentConfig::validate() const
{
	effective_bits().validate();
	if (batch_size == 0)
		throw std::invalid_argument("batch_size must be positive");
	if (crop != 0 && crop % 4 != 0)
		throw std::invalid_argument("crop must be a multiple of 4");
	if (halving_period == 0)
		throw std::invalid_argument("halving_period must be >= 1");
	if (!(bn_momentum > 0.0 && bn_momentum < 1.0))
		throw std::invalid_argument("bn_momentum must be in (0, 1)");
	if (!(bn_epsilon > 0.0))
		throw std::invalid_argument("bn_epsilon must be positive");
	resolved_grad_mode();
}

} // namespace qseg
