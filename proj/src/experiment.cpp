#include "qseg/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "qseg/checkpoint.hpp"
#include "qseg/optimizer.hpp"

namespace qseg {

std::string format_double(double v)
{
	char buf[40];
	std::snprintf(buf, sizeof(buf), "%.17g", v);
	return buf;
}

Network initial_network(const ExperimentConfig &cfg, std::size_t classes)
{
	Rng init = Rng(cfg.seed).split(1);
	return build_network(cfg.network_options(classes), init);
}

namespace {

Schedule layer_schedule(const ExperimentConfig &cfg, const QLayer &layer)
{
	Schedule s;
	s.halving_period = cfg.halving_period;
	if (layer.cfg.U.enabled())
	{
		s.lr0 = cfg.resolved_lr();
		s.k_U = layer.cfg.U.bits;
		s.quantize = true;
	}
	else
	{
		s.lr0 = cfg.resolved_lr_fp();
		s.quantize = false;
	}
	return s;
}

void check_classes(const Dataset &ds, std::size_t classes, const char *what)
{
	if (ds.classes != classes)
		throw std::invalid_argument(std::string(what) + ": dataset has " + std::to_string(ds.classes)
				+ " classes, network expects " + std::to_string(classes));
}

} // namespace

TrainResult train(const ExperimentConfig &cfg, const Dataset &train_ds, const Dataset *val_ds)
{
	cfg.validate();
	if (train_ds.samples.empty())
		throw std::invalid_argument("train: empty training set");
	const std::size_t classes = train_ds.classes;
	if (val_ds)
		check_classes(*val_ds, classes, "train (validation set)");

	const Rng root(cfg.seed);
	Rng data = root.split(2);
	const Rng noise = root.split(3);

	TrainResult out{initial_network(cfg, classes), {}};
	Network &net = out.network;
	RunRecord &rec = out.record;
	const double lambda = cfg.resolved_weight_decay();

	std::vector<Schedule> schedules;
	for (const QLayer &l : net.layers)
		schedules.push_back(layer_schedule(cfg, l));
	const Schedule lr_q = cfg.effective_bits().U.enabled()
			? Schedule{cfg.resolved_lr(), cfg.halving_period, cfg.effective_bits().U.bits, true}
			: Schedule{cfg.resolved_lr(), cfg.halving_period, 0, false};
	const Schedule lr_f{cfg.resolved_lr_fp(), cfg.halving_period, 0, false};

	auto run_eval = [&](std::size_t step) {
		rec.evals.push_back({step, evaluate(net, *val_ds, cfg.eval_mode, cfg.ignore_label)});
	};

	std::size_t above = 0;
	for (std::size_t step = 0; step < cfg.steps; ++step)
	{
		const Batch batch = crop_batch(train_ds, cfg.batch_size, cfg.crop, data);
		const Tensor logits = net.forward(batch.images, true);
		const LossResult loss = network_loss(cfg.network, logits, batch.masks, cfg.ignore_label);
		if (step == 0)
			rec.initial_loss = loss.loss;

		StepRecord sr;
		sr.step = step;
		sr.loss = loss.loss;
		sr.lr = quantized_lr(lr_q, step);
		sr.lr_fp = quantized_lr(lr_f, step);

		if (!std::isfinite(loss.loss))
		{
			rec.steps.push_back(sr);
			rec.diverged = true;
			rec.divergence_reason = "non-finite loss at step " + std::to_string(step);
			break;
		}
		above = loss.loss > cfg.divergence_factor * rec.initial_loss ? above + 1 : 0;
		if (cfg.divergence_patience > 0 && above >= cfg.divergence_patience)
		{
			rec.steps.push_back(sr);
			rec.diverged = true;
			rec.divergence_reason = "loss above " + format_double(cfg.divergence_factor) + "x initial for "
					+ std::to_string(above) + " steps at step " + std::to_string(step);
			break;
		}

		Rng step_rng = noise.split(step);
		const std::vector<LayerGrads> grads = net.backward(loss.grad, step_rng, lambda);

		sr.g_scale_max = 0.0;
		sr.g_scale_min = std::numeric_limits<double>::infinity();
		for (std::size_t i = 0; i < net.layers.size(); ++i)
		{
			const QLayer &l = net.layers[i];
			const double s = scale_factor(grads[i].raw_weight_grad);
			sr.g_scale_max = std::max(sr.g_scale_max, s);
			sr.g_scale_min = std::min(sr.g_scale_min, s);
			const int k_G = l.cfg.G.enabled() ? l.cfg.G.bits : 8;
			const auto fm = classify_distribution(grads[i].raw_weight_grad, k_G);
			sr.g_concentrated += fm.mode == FailureModeReport::Mode::Concentrated || fm.mode == FailureModeReport::Mode::Both;
			sr.g_clipped += fm.mode == FailureModeReport::Mode::Clipped || fm.mode == FailureModeReport::Mode::Both;
		}
		for (std::size_t i = 0; i < net.layers.size(); ++i)
			qlayer_update(net.layers[i], grads[i], quantized_lr(schedules[i], step));
		rec.steps.push_back(sr);

		if (val_ds && cfg.eval_interval && (step + 1) % cfg.eval_interval == 0 && step + 1 < cfg.steps)
			run_eval(step + 1);
	}
	for (QLayer &l : net.layers)
	{
		l.cache.reset();
		if (l.bn)
			l.bn->cache.reset();
	}
	if (val_ds && !rec.diverged)
		run_eval(cfg.steps);
	return out;
}

EvalResult evaluate(Network &net, const Dataset &ds, EvalMode mode, int ignore_label)
{
	check_classes(ds, net.options.classes, "evaluate");
	if (ds.samples.empty())
		throw std::invalid_argument("evaluate: empty dataset");

	EvalResult r;
	r.confusion = ConfusionMatrix(ds.classes);
	double per_image_sum = 0.0;
	std::size_t per_image_n = 0;
	// One image per forward: activation scales are per tensor, so batching would couple images.
	for (std::size_t i = 0; i < ds.samples.size(); ++i)
	{
		const Batch b = stack_samples(ds, i, 1);
		const std::vector<int> pred = argmax_classes(net.forward(b.images, false));
		if (mode == EvalMode::PerImage)
		{
			ConfusionMatrix one(ds.classes);
			one.accumulate(pred, b.masks, ignore_label);
			if (one.total() > 0)
			{
				per_image_sum += mean_iou(one);
				++per_image_n;
			}
			r.confusion.merge(one);
		}
		else
			r.confusion.accumulate(pred, b.masks, ignore_label);
	}
	r.iou = iou_per_class(r.confusion);
	r.pixel_accuracy = pixel_accuracy(r.confusion);
	if (mode == EvalMode::PerImage)
		r.miou = per_image_n ? per_image_sum / static_cast<double>(per_image_n) : 0.0;
	else
		r.miou = mean_iou(r.confusion);
	return r;
}

double class_prior_miou(const Dataset &ds, int ignore_label)
{
	std::vector<std::uint64_t> freq(ds.classes, 0);
	for (const SegSample &s : ds.samples)
		for (std::uint8_t m : s.mask)
			if (m != ignore_label)
				++freq[m];
	const int top = static_cast<int>(std::max_element(freq.begin(), freq.end()) - freq.begin());
	ConfusionMatrix cm(ds.classes);
	for (const SegSample &s : ds.samples)
	{
		std::vector<int> gt(s.mask.begin(), s.mask.end());
		std::vector<int> pred(gt.size(), top);
		cm.accumulate(pred, gt, ignore_label);
	}
	return mean_iou(cm);
}

void write_run_csv(const std::string &path, const RunRecord &record)
{
	std::ofstream f(path, std::ios::binary);
	if (!f)
		throw std::runtime_error("cannot write '" + path + "'");
	f << "step,loss,lr,lr_fp,g_scale_max,g_scale_min,g_concentrated,g_clipped\n";
	for (const StepRecord &s : record.steps)
		f << s.step << ',' << format_double(s.loss) << ',' << format_double(s.lr) << ',' << format_double(s.lr_fp) << ','
		  << format_double(s.g_scale_max) << ',' << format_double(s.g_scale_min) << ',' << s.g_concentrated << ','
		  << s.g_clipped << '\n';
}

void write_eval_csv(const std::string &path, const RunRecord &record, std::size_t classes)
{
	std::ofstream f(path, std::ios::binary);
	if (!f)
		throw std::runtime_error("cannot write '" + path + "'");
	f << "step,miou,pixel_accuracy";
	for (std::size_t c = 0; c < classes; ++c)
		f << ",iou_" << c;
	f << '\n';
	for (const EvalRecord &e : record.evals)
	{
		f << e.step << ',' << format_double(e.result.miou) << ',' << format_double(e.result.pixel_accuracy);
		for (std::size_t c = 0; c < classes; ++c)
		{
			f << ',';
			if (c < e.result.iou.size() && e.result.iou[c])
				f << format_double(*e.result.iou[c]);
		}
		f << '\n';
	}
}

void write_run_artifacts(const std::string &dir, const ExperimentConfig &cfg, const TrainResult &result)
{
	std::filesystem::create_directories(dir);
	const std::filesystem::path d(dir);
	write_run_csv((d / "run.csv").string(), result.record);
	write_eval_csv((d / "eval.csv").string(), result.record, result.network.options.classes);
	{
		std::ofstream f(d / "config.resolved", std::ios::binary);
		f << cfg.to_text();
	}
	save_checkpoint((d / "checkpoint.qckpt").string(), result.network, cfg);
}

const SweepRow &SweepTable::find(const std::vector<std::pair<std::string, std::string>> &labels) const
{
	for (const SweepRow &r : rows)
		if (r.labels == labels)
			return r;
	throw std::out_of_range("sweep table has no such row");
}

SweepTable run_sweep(const std::vector<SweepArm> &arms, std::size_t seeds, std::size_t threads, const Dataset &train_ds,
		const Dataset &val_ds, const std::string &out_dir)
{
	if (seeds == 0)
		throw std::invalid_argument("sweep needs at least one seed");
	SweepTable table;
	for (const SweepArm &a : arms)
	{
		a.cfg.validate();
		table.rows.push_back({a.labels, std::vector<double>(seeds, 0.0), 0.0, 0});
	}

	const std::size_t jobs = arms.size() * seeds;
	if (threads == 0)
		threads = std::max(1u, std::thread::hardware_concurrency());
	threads = std::min(threads, std::max<std::size_t>(jobs, 1));

	std::atomic<std::size_t> next{0};
	std::mutex err_mutex;
	std::exception_ptr error;
	auto worker = [&] {
		for (;;)
		{
			const std::size_t j = next.fetch_add(1);
			if (j >= jobs)
				return;
			const std::size_t a = j / seeds, s = j % seeds;
			try
			{
				ExperimentConfig cfg = arms[a].cfg;
				cfg.seed = arms[a].cfg.seed + s;
				cfg.eval_interval = 0;
				const TrainResult res = train(cfg, train_ds, &val_ds);
				table.rows[a].miou[s] = res.record.diverged ? std::numeric_limits<double>::quiet_NaN()
						: res.record.evals.back().result.miou;
				if (!out_dir.empty())
				{
					std::string name;
					for (const auto &[k, v] : arms[a].labels)
						name += (name.empty() ? "" : "_") + k + "-" + v;
					write_run_artifacts(
							(std::filesystem::path(out_dir) / (name + "_seed" + std::to_string(cfg.seed))).string(), cfg, res);
				}
			}
			catch (...)
			{
				std::lock_guard lock(err_mutex);
				if (!error)
					error = std::current_exception();
			}
		}
	};
	std::vector<std::thread> pool;
	for (std::size_t t = 1; t < threads; ++t)
		pool.emplace_back(worker);
	worker();
	for (std::thread &t : pool)
		t.join();
	if (error)
		std::rethrow_exception(error);

	for (SweepRow &r : table.rows)
	{
		double sum = 0.0;
		for (double m : r.miou)
		{
			if (std::isnan(m))
				++r.diverged;
			else
				sum += m;
		}
		// A diverged run counts as zero in the mean.
		r.mean = sum / static_cast<double>(r.miou.size());
	}
	return table;
}

std::vector<SweepArm> ku_arms(const ExperimentConfig &base, const std::vector<int> &k_u_values)
{
	if (k_u_values.empty())
		throw std::invalid_argument("sweep-ku needs at least one k_U value");
	std::vector<SweepArm> arms;
	for (int k : k_u_values)
	{
		SweepArm a{{{"k_U", std::to_string(k)}}, base};
		a.cfg.bits.U.bits = k;
		arms.push_back(std::move(a));
	}
	return arms;
}

std::vector<SweepArm> scaling_arms(const ExperimentConfig &base)
{
	std::vector<SweepArm> arms;
	for (NetworkKind kind : {NetworkKind::ToyFcn, NetworkKind::ToyBnNet})
		for (GradMode mode : {GradMode::PreserveScale, GradMode::AbandonScale})
		{
			SweepArm a{{{"network", std::string(to_string(kind))}, {"grad_mode", std::string(to_string(mode))}}, base};
			a.cfg.network = kind;
			a.cfg.grad_mode = std::string(to_string(mode));
			arms.push_back(std::move(a));
		}
	return arms;
}

std::vector<SweepArm> structure_arms(const ExperimentConfig &base)
{
	std::vector<SweepArm> arms;
	for (bool enc : {false, true})
		for (bool dec : {false, true})
		{
			SweepArm a{{{"encoder", enc ? "quantized" : "fp"}, {"decoder", dec ? "quantized" : "fp"}}, base};
			a.cfg.network = NetworkKind::ToyFcn;
			a.cfg.quant = true;
			a.cfg.quant_encoder = enc;
			a.cfg.quant_decoder = dec;
			arms.push_back(std::move(a));
		}
	return arms;
}

void write_sweep_csv(const std::string &path, const SweepTable &table)
{
	std::ofstream f(path, std::ios::binary);
	if (!f)
		throw std::runtime_error("cannot write '" + path + "'");
	if (table.rows.empty())
		return;
	for (const auto &[k, v] : table.rows[0].labels)
		f << k << ',';
	f << "mean_miou,diverged";
	for (std::size_t s = 0; s < table.rows[0].miou.size(); ++s)
		f << ",miou_seed" << s;
	f << '\n';
	for (const SweepRow &r : table.rows)
	{
		for (const auto &[k, v] : r.labels)
			f << v << ',';
		f << format_double(r.mean) << ',' << r.diverged;
		for (double m : r.miou)
			f << ',' << format_double(m);
		f << '\n';
	}
}

} // namespace qseg
