#include "qseg/profile.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

namespace qseg {

std::uint64_t MagnitudeHistogram::total() const noexcept
{
	std::uint64_t n = zeros + underflow + overflow;
	for (std::uint64_t c : counts)
		n += c;
	return n;
}

MagnitudeHistogram magnitude_histogram(const std::vector<double> &v, int min_exp, int max_exp)
{
	if (min_exp >= max_exp)
		throw std::invalid_argument("magnitude_histogram: min_exp must be below max_exp");
	MagnitudeHistogram h;
	h.min_exp = min_exp;
	h.max_exp = max_exp;
	h.counts.assign(static_cast<std::size_t>(max_exp - min_exp), 0);
	for (double x : v)
	{
		const double a = std::fabs(x);
		if (a == 0.0)
			++h.zeros;
		else if (!(a < std::ldexp(1.0, max_exp)))
			++h.overflow;
		else if (a < std::ldexp(1.0, min_exp))
			++h.underflow;
		else
		{
			int e;
			std::frexp(a, &e);  // a in [2^(e-1), 2^e)
			++h.counts[static_cast<std::size_t>(e - 1 - min_exp)];
		}
	}
	return h;
}

BoxStats box_stats(std::vector<double> v)
{
	if (v.empty())
		throw std::invalid_argument("box_stats: empty input");
	std::sort(v.begin(), v.end());
	auto q = [&](double p) {
		const double pos = p * static_cast<double>(v.size() - 1);
		const auto lo = static_cast<std::size_t>(std::floor(pos));
		const std::size_t hi = std::min(lo + 1, v.size() - 1);
		return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
	};
	return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

namespace {

const std::vector<std::string> kObjects{"W", "A", "E1", "E2", "G", "mu", "sigma", "gamma", "beta", "xhat"};

LayerProfile make_profile(const std::string &layer, const std::vector<double> &v, const QObject &q, bool constant2)
{
	LayerProfile p;
	p.layer = layer;
	p.size = v.size();
	p.histogram = magnitude_histogram(v);
	p.box = box_stats(v);
	Tensor t({v.size()}, v);
	p.scale = max_abs(t);
	p.bits = q.enabled() ? q.bits : 8;
	// Constant-2 objects live on [-2, 2]; compare on the unit grid.
	p.failure = classify_distribution(constant2 ? scalar_mul(t, 0.5) : t, p.bits);
	return p;
}

} // namespace

bool is_profile_object(const std::string &name)
{
	return std::find(kObjects.begin(), kObjects.end(), name) != kObjects.end();
}

ProfileReport profile(const Network &source, const ExperimentConfig &cfg, const Dataset &ds, const std::string &object)
{
	if (!is_profile_object(object))
		throw std::invalid_argument("unknown profile object '" + object + "' (expected W A E1 E2 G mu sigma gamma beta xhat)");
	if (ds.classes != source.options.classes)
		throw std::invalid_argument("profile: dataset class count does not match the network");
	const QObjectId id = parse_qobject(object);

	Network net = source;
	net.set_capture(true);
	Rng data = Rng(cfg.seed).split(4);
	const Batch batch = crop_batch(ds, cfg.batch_size, cfg.crop, data);
	const Tensor logits = net.forward(batch.images, true);
	const LossResult loss = network_loss(net.options.kind, logits, batch.masks, cfg.ignore_label);
	Rng noise = Rng(cfg.seed).split(5);
	net.backward(loss.grad, noise, cfg.resolved_weight_decay());

	ProfileReport r;
	r.object = object;
	for (const QLayer &l : net.layers)
	{
		const QObject &q = l.cfg.get(id);
		std::vector<double> v;
		bool c2 = false;
		if (object == "W")
			v = l.master.vec();
		else if (object == "A" || object == "E1" || object == "E2" || object == "G")
		{
			const auto it = l.probe.find(object);
			if (it == l.probe.end())
				continue;
			v = it->second.vec();
		}
		else
		{
			if (!l.bn || !l.bn->cache)
				continue;
			const BNState &bn = *l.bn;
			c2 = object != "xhat";
			if (object == "mu" || object == "sigma")
			{
				const BNBatchStats st = l1_batch_stats(bn.cache->x);
				v = object == "mu" ? st.mu : st.sigma;
			}
			else if (object == "gamma")
				v = bn.gamma;
			else if (object == "beta")
				v = bn.beta;
			else
				v = bn.cache->xhat.vec();
		}
		if (!v.empty())
			r.layers.push_back(make_profile(l.name, v, q, c2));
	}
	if (!r.layers.empty())
	{
		r.scale_max = 0.0;
		r.scale_min = std::numeric_limits<double>::infinity();
		for (const LayerProfile &p : r.layers)
		{
			r.scale_max = std::max(r.scale_max, p.scale);
			r.scale_min = std::min(r.scale_min, p.scale);
		}
	}
	return r;
}

std::string layer_profile_json(const ProfileReport &report, std::size_t layer_index)
{
	const LayerProfile &p = report.layers.at(layer_index);
	nlohmann::ordered_json j;
	j["object"] = report.object;
	j["layer"] = p.layer;
	j["size"] = p.size;
	j["scale"] = p.scale;
	j["quartiles"] = {{"min", p.box.min}, {"q1", p.box.q1}, {"median", p.box.median}, {"q3", p.box.q3}, {"max", p.box.max}};
	nlohmann::ordered_json bins = nlohmann::ordered_json::array();
	for (std::size_t i = 0; i < p.histogram.counts.size(); ++i)
	{
		const int e = p.histogram.min_exp + static_cast<int>(i);
		bins.push_back({{"lo", std::ldexp(1.0, e)}, {"hi", std::ldexp(1.0, e + 1)}, {"count", p.histogram.counts[i]}});
	}
	j["histogram"] = {{"zeros", p.histogram.zeros}, {"underflow", p.histogram.underflow},
			{"overflow", p.histogram.overflow}, {"bins", bins}};
	j["failure_mode"] = {{"bits", p.bits}, {"mode", std::string(to_string(p.failure.mode))},
			{"fraction_below_step", p.failure.fraction_below_step}, {"fraction_clipped", p.failure.fraction_clipped}};
	j["layers_scale_max"] = report.scale_max;
	j["layers_scale_min"] = report.scale_min;
	return j.dump(2) + "\n";
}

std::vector<std::string> write_profile(const std::string &dir, const ProfileReport &report)
{
	std::filesystem::create_directories(dir);
	std::vector<std::string> paths;
	for (std::size_t i = 0; i < report.layers.size(); ++i)
	{
		const auto path = (std::filesystem::path(dir) / ("hist_" + report.object + "_" + report.layers[i].layer + ".json")).string();
		std::ofstream f(path, std::ios::binary);
		if (!f)
			throw std::runtime_error("cannot write '" + path + "'");
		f << layer_profile_json(report, i);
		paths.push_back(path);
	}
	return paths;
}

} // namespace qseg
