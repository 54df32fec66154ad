#include "qseg/qseg.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <new>
#include <stdexcept>
#include <string>

#include "qseg/checkpoint.hpp"
#include "qseg/experiment.hpp"
#include "qseg/profile.hpp"

struct qseg_config
{
		qseg::ExperimentConfig cfg;
};

struct qseg_dataset
{
		qseg::Dataset ds;
};

struct qseg_model
{
		qseg::ExperimentConfig cfg;
		qseg::Network net;
};

struct qseg_run
{
		qseg::ExperimentConfig cfg;
		qseg::TrainResult result;
};

struct qseg_table
{
		qseg::SweepTable table;
};

namespace {

thread_local std::string g_last_error;

template <class F>
qseg_status guarded(F &&f) noexcept
{
	try
	{
		g_last_error.clear();
		return f();
	}
	catch (const std::bad_alloc &)
	{
		g_last_error = "out of memory";
		return QSEG_ERR_INTERNAL;
	}
	catch (const std::filesystem::filesystem_error &e)
	{
		g_last_error = e.what();
		return QSEG_ERR_IO;
	}
	catch (const std::invalid_argument &e)
	{
		g_last_error = e.what();
		return QSEG_ERR_INVALID_ARGUMENT;
	}
	catch (const std::out_of_range &e)
	{
		g_last_error = e.what();
		return QSEG_ERR_INVALID_ARGUMENT;
	}
	catch (const std::logic_error &e)
	{
		g_last_error = e.what();
		return QSEG_ERR_INVALID_ARGUMENT;
	}
	catch (const std::runtime_error &e)
	{
		g_last_error = e.what();
		return QSEG_ERR_IO;
	}
	catch (const std::exception &e)
	{
		g_last_error = e.what();
		return QSEG_ERR_INTERNAL;
	}
	catch (...)
	{
		g_last_error = "unknown error";
		return QSEG_ERR_INTERNAL;
	}
}

void require(const void *p, const char *what)
{
	if (!p)
		throw std::invalid_argument(std::string(what) + " must not be NULL");
}

qseg_status copy_string(const std::string &s, char *buf, std::size_t cap, std::size_t *needed)
{
	if (needed)
		*needed = s.size() + 1;
	if (buf && cap > 0)
	{
		const std::size_t n = std::min(cap - 1, s.size());
		std::memcpy(buf, s.data(), n);
		buf[n] = '\0';
	}
	return QSEG_OK;
}

} // namespace

extern "C" {

const char *qseg_last_error(void)
{
	return g_last_error.c_str();
}

const char *qseg_status_name(qseg_status status)
{
	switch (status)
	{
		case QSEG_OK: return "ok";
		case QSEG_ERR_INVALID_ARGUMENT: return "invalid argument";
		case QSEG_ERR_IO: return "i/o error";
		case QSEG_ERR_DIVERGED: return "diverged";
		case QSEG_ERR_INTERNAL: return "internal error";
	}
	return "unknown status";
}

qseg_status qseg_config_create(qseg_config **out)
{
	return guarded([&] {
		require(out, "out");
		*out = new qseg_config{};
		return QSEG_OK;
	});
}

qseg_status qseg_config_clone(const qseg_config *cfg, qseg_config **out)
{
	return guarded([&] {
		require(cfg, "cfg");
		require(out, "out");
		*out = new qseg_config{*cfg};
		return QSEG_OK;
	});
}

void qseg_config_destroy(qseg_config *cfg)
{
	delete cfg;
}

qseg_status qseg_config_set(qseg_config *cfg, const char *key, const char *value)
{
	return guarded([&] {
		require(cfg, "cfg");
		require(key, "key");
		require(value, "value");
		cfg->cfg.set(key, value);
		return QSEG_OK;
	});
}

qseg_status qseg_config_get(const qseg_config *cfg, const char *key, char *buf, size_t cap, size_t *needed)
{
	return guarded([&] {
		require(cfg, "cfg");
		require(key, "key");
		return copy_string(cfg->cfg.get(key), buf, cap, needed);
	});
}

qseg_status qseg_config_load_file(qseg_config *cfg, const char *path)
{
	return guarded([&] {
		require(cfg, "cfg");
		require(path, "path");
		cfg->cfg.load_file(path);
		return QSEG_OK;
	});
}

qseg_status qseg_config_to_text(const qseg_config *cfg, char *buf, size_t cap, size_t *needed)
{
	return guarded([&] {
		require(cfg, "cfg");
		return copy_string(cfg->cfg.to_text(), buf, cap, needed);
	});
}

qseg_status qseg_config_validate(const qseg_config *cfg)
{
	return guarded([&] {
		require(cfg, "cfg");
		cfg->cfg.validate();
		return QSEG_OK;
	});
}

size_t qseg_config_key_count(void)
{
	return qseg::config_keys().size();
}

const char *qseg_config_key_name(size_t index)
{
	const auto &keys = qseg::config_keys();
	return index < keys.size() ? keys[index].c_str() : nullptr;
}

qseg_status qseg_dataset_generate(uint64_t seed, size_t samples, size_t size, size_t classes, qseg_dataset **out)
{
	return guarded([&] {
		require(out, "out");
		*out = new qseg_dataset{qseg::generate_shapes(seed, samples, size, classes)};
		return QSEG_OK;
	});
}

qseg_status qseg_dataset_load(const char *path, qseg_dataset **out)
{
	return guarded([&] {
		require(path, "path");
		require(out, "out");
		*out = new qseg_dataset{qseg::load_dataset(path)};
		return QSEG_OK;
	});
}

qseg_status qseg_dataset_save(const qseg_dataset *ds, const char *path, const char *manifest_path)
{
	return guarded([&] {
		require(ds, "ds");
		require(path, "path");
		qseg::save_dataset(path, ds->ds);
		if (manifest_path)
			qseg::write_manifest(manifest_path, ds->ds);
		return QSEG_OK;
	});
}

size_t qseg_dataset_size(const qseg_dataset *ds)
{
	return ds ? ds->ds.samples.size() : 0;
}

size_t qseg_dataset_classes(const qseg_dataset *ds)
{
	return ds ? ds->ds.classes : 0;
}

void qseg_dataset_destroy(qseg_dataset *ds)
{
	delete ds;
}

qseg_status qseg_train(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val, qseg_run **out)
{
	return guarded([&] {
		require(cfg, "cfg");
		require(train, "train");
		require(out, "out");
		auto *run = new qseg_run{cfg->cfg, qseg::train(cfg->cfg, train->ds, val ? &val->ds : nullptr)};
		*out = run;
		if (run->result.record.diverged)
		{
			g_last_error = run->result.record.divergence_reason;
			return QSEG_ERR_DIVERGED;
		}
		return QSEG_OK;
	});
}

size_t qseg_run_step_count(const qseg_run *run)
{
	return run ? run->result.record.steps.size() : 0;
}

qseg_status qseg_run_step(const qseg_run *run, size_t index, qseg_step_record *out)
{
	return guarded([&] {
		require(run, "run");
		require(out, "out");
		const qseg::StepRecord &s = run->result.record.steps.at(index);
		*out = {s.step, s.loss, s.lr, s.lr_fp, s.g_scale_max, s.g_scale_min, s.g_concentrated, s.g_clipped};
		return QSEG_OK;
	});
}

int qseg_run_diverged(const qseg_run *run)
{
	return run && run->result.record.diverged ? 1 : 0;
}

qseg_status qseg_run_final_miou(const qseg_run *run, double *miou)
{
	return guarded([&] {
		require(run, "run");
		require(miou, "miou");
		if (run->result.record.evals.empty())
			throw std::invalid_argument("run has no evaluation");
		*miou = run->result.record.evals.back().result.miou;
		return QSEG_OK;
	});
}

qseg_status qseg_run_write_artifacts(const qseg_run *run, const char *dir)
{
	return guarded([&] {
		require(run, "run");
		require(dir, "dir");
		qseg::write_run_artifacts(dir, run->cfg, run->result);
		return QSEG_OK;
	});
}

qseg_status qseg_run_model(const qseg_run *run, qseg_model **out)
{
	return guarded([&] {
		require(run, "run");
		require(out, "out");
		*out = new qseg_model{run->cfg, run->result.network};
		return QSEG_OK;
	});
}

void qseg_run_destroy(qseg_run *run)
{
	delete run;
}

qseg_status qseg_model_init(const qseg_config *cfg, size_t classes, qseg_model **out)
{
	return guarded([&] {
		require(cfg, "cfg");
		require(out, "out");
		cfg->cfg.validate();
		*out = new qseg_model{cfg->cfg, qseg::initial_network(cfg->cfg, classes)};
		return QSEG_OK;
	});
}

qseg_status qseg_model_load(const char *path, qseg_model **out)
{
	return guarded([&] {
		require(path, "path");
		require(out, "out");
		qseg::Checkpoint ck = qseg::load_checkpoint(path);
		*out = new qseg_model{std::move(ck.config), std::move(ck.network)};
		return QSEG_OK;
	});
}

qseg_status qseg_model_save(const qseg_model *model, const char *path)
{
	return guarded([&] {
		require(model, "model");
		require(path, "path");
		qseg::save_checkpoint(path, model->net, model->cfg);
		return QSEG_OK;
	});
}

qseg_status qseg_model_config(const qseg_model *model, qseg_config **out)
{
	return guarded([&] {
		require(model, "model");
		require(out, "out");
		*out = new qseg_config{model->cfg};
		return QSEG_OK;
	});
}

size_t qseg_model_classes(const qseg_model *model)
{
	return model ? model->net.options.classes : 0;
}

size_t qseg_model_parameter_count(const qseg_model *model)
{
	return model ? model->net.parameter_count() : 0;
}

void qseg_model_destroy(qseg_model *model)
{
	delete model;
}

qseg_status qseg_evaluate(qseg_model *model, const qseg_dataset *ds, int per_image, qseg_eval_result *out, double *iou,
		size_t iou_cap)
{
	return guarded([&] {
		require(model, "model");
		require(ds, "ds");
		require(out, "out");
		const qseg::EvalResult r = qseg::evaluate(model->net, ds->ds,
				per_image ? qseg::EvalMode::PerImage : qseg::EvalMode::Global, model->cfg.ignore_label);
		*out = {r.miou, r.pixel_accuracy, r.iou.size()};
		if (iou)
			for (std::size_t c = 0; c < std::min(iou_cap, r.iou.size()); ++c)
				iou[c] = r.iou[c] ? *r.iou[c] : std::numeric_limits<double>::quiet_NaN();
		return QSEG_OK;
	});
}

qseg_status qseg_profile(const qseg_model *model, const qseg_config *cfg, const qseg_dataset *ds, const char *object,
		const char *out_dir, qseg_profile_summary *out)
{
	return guarded([&] {
		require(model, "model");
		require(ds, "ds");
		require(object, "object");
		const qseg::ProfileReport r = qseg::profile(model->net, cfg ? cfg->cfg : model->cfg, ds->ds, object);
		if (out_dir)
			qseg::write_profile(out_dir, r);
		if (out)
			*out = {r.layers.size(), r.scale_max, r.scale_min};
		return QSEG_OK;
	});
}

namespace {

qseg_status run_table(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val, const char *out_dir,
		qseg_table **out, const std::vector<qseg::SweepArm> &arms)
{
	const auto &c = cfg->cfg;
	*out = new qseg_table{qseg::run_sweep(arms, c.seeds, c.threads, train->ds, val->ds, out_dir ? out_dir : "")};
	return QSEG_OK;
}

void require_sweep(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val, qseg_table **out)
{
	require(cfg, "cfg");
	require(train, "train");
	require(val, "val");
	require(out, "out");
}

} // namespace

qseg_status qseg_sweep_ku(const qseg_config *cfg, const int *k_u, size_t count, const qseg_dataset *train,
		const qseg_dataset *val, const char *out_dir, qseg_table **out)
{
	return guarded([&] {
		require_sweep(cfg, train, val, out);
		require(k_u, "k_u");
		return run_table(cfg, train, val, out_dir, out, qseg::ku_arms(cfg->cfg, std::vector<int>(k_u, k_u + count)));
	});
}

qseg_status qseg_sweep_scaling(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val,
		const char *out_dir, qseg_table **out)
{
	return guarded([&] {
		require_sweep(cfg, train, val, out);
		return run_table(cfg, train, val, out_dir, out, qseg::scaling_arms(cfg->cfg));
	});
}

qseg_status qseg_sweep_structure(const qseg_config *cfg, const qseg_dataset *train, const qseg_dataset *val,
		const char *out_dir, qseg_table **out)
{
	return guarded([&] {
		require_sweep(cfg, train, val, out);
		return run_table(cfg, train, val, out_dir, out, qseg::structure_arms(cfg->cfg));
	});
}

size_t qseg_table_rows(const qseg_table *table)
{
	return table ? table->table.rows.size() : 0;
}

qseg_status qseg_table_label(const qseg_table *table, size_t row, char *buf, size_t cap, size_t *needed)
{
	return guarded([&] {
		require(table, "table");
		std::string s;
		for (const auto &[k, v] : table->table.rows.at(row).labels)
			s += (s.empty() ? "" : ";") + k + "=" + v;
		return copy_string(s, buf, cap, needed);
	});
}

qseg_status qseg_table_mean(const qseg_table *table, size_t row, double *mean)
{
	return guarded([&] {
		require(table, "table");
		require(mean, "mean");
		*mean = table->table.rows.at(row).mean;
		return QSEG_OK;
	});
}

qseg_status qseg_table_write_csv(const qseg_table *table, const char *path)
{
	return guarded([&] {
		require(table, "table");
		require(path, "path");
		qseg::write_sweep_csv(path, table->table);
		return QSEG_OK;
	});
}

void qseg_table_destroy(qseg_table *table)
{
	delete table;
}

qseg_status qseg_quant_step(int bits, double *step)
{
	return guarded([&] {
		require(step, "step");
		*step = qseg::quant_step(bits);
		return QSEG_OK;
	});
}

qseg_status qseg_quantize(const double *in, double *out, size_t n, int bits, const char *mode, uint64_t seed, double *scale)
{
	return guarded([&] {
		require(mode, "mode");
		if (n > 0)
		{
			require(in, "in");
			require(out, "out");
		}
		const qseg::QObject obj{bits, qseg::parse_quant_mode(mode)};
		if (obj.enabled())
			qseg::quant_step(bits);
		qseg::Rng rng(seed);
		const qseg::QTensor q = qseg::apply_quant(obj, qseg::Tensor({n}, std::vector<double>(in, in + n)), rng);
		std::copy(q.values.vec().begin(), q.values.vec().end(), out);
		if (scale)
			*scale = q.scale;
		return QSEG_OK;
	});
}

} // extern "C"
