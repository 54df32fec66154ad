// qseg command-line front end. Talks to the engine only through qseg.h.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qseg/qseg.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

struct ApiError : std::runtime_error
{
		qseg_status status;
		ApiError(qseg_status s, const std::string &what) : std::runtime_error(what), status(s) {}
};

void check(qseg_status s, const char *what)
{
	if (s != QSEG_OK)
		throw ApiError(s, std::string(what) + ": " + qseg_last_error());
}

template <class T, void (*Destroy)(T *)>
struct Deleter
{
		void operator()(T *p) const { Destroy(p); }
};
using Config = std::unique_ptr<qseg_config, Deleter<qseg_config, qseg_config_destroy>>;
using DatasetPtr = std::unique_ptr<qseg_dataset, Deleter<qseg_dataset, qseg_dataset_destroy>>;
using Model = std::unique_ptr<qseg_model, Deleter<qseg_model, qseg_model_destroy>>;
using Run = std::unique_ptr<qseg_run, Deleter<qseg_run, qseg_run_destroy>>;
using Table = std::unique_ptr<qseg_table, Deleter<qseg_table, qseg_table_destroy>>;

std::string config_get(const qseg_config *cfg, const char *key)
{
	std::size_t n = 0;
	check(qseg_config_get(cfg, key, nullptr, 0, &n), "config");
	std::string s(n, '\0');
	check(qseg_config_get(cfg, key, s.data(), n, &n), "config");
	s.resize(n - 1);
	return s;
}

DatasetPtr load_dataset(const std::string &path, const char *what)
{
	if (path.empty())
		throw ApiError(QSEG_ERR_INVALID_ARGUMENT, std::string(what) + " path is required");
	qseg_dataset *ds = nullptr;
	check(qseg_dataset_load(path.c_str(), &ds), what);
	return DatasetPtr(ds);
}

std::string fmt(double v)
{
	char buf[40];
	std::snprintf(buf, sizeof(buf), "%.17g", v);
	return buf;
}

/// --config plus one --<key> flag per config key.
struct ConfigFlags
{
		std::string config_file;
		std::map<std::string, std::string> values;

		void attach(CLI::App *app)
		{
			app->add_option("--config", config_file, "key=value config file")->check(CLI::ExistingFile);
			for (std::size_t i = 0; i < qseg_config_key_count(); ++i)
			{
				const std::string key = qseg_config_key_name(i);
				app->add_option("--" + key, values[key], "config key " + key);
			}
		}

		Config build(const CLI::App *app) const
		{
			qseg_config *raw = nullptr;
			check(qseg_config_create(&raw), "config");
			Config cfg(raw);
			if (!config_file.empty())
				check(qseg_config_load_file(cfg.get(), config_file.c_str()), "config file");
			for (const auto &[key, value] : values)
				if (app->count("--" + key) > 0)
					check(qseg_config_set(cfg.get(), key.c_str(), value.c_str()), "config flag");
			check(qseg_config_validate(cfg.get()), "config");
			return cfg;
		}
};

void write_text(const std::filesystem::path &path, const std::string &text)
{
	std::FILE *f = std::fopen(path.string().c_str(), "wb");
	if (!f)
		throw ApiError(QSEG_ERR_IO, "cannot write " + path.string());
	std::fwrite(text.data(), 1, text.size(), f);
	std::fclose(f);
}

int cmd_gen_data(const std::string &out, std::uint64_t seed, std::size_t samples, std::size_t size, std::size_t classes)
{
	qseg_dataset *raw = nullptr;
	check(qseg_dataset_generate(seed, samples, size, classes, &raw), "gen-data");
	DatasetPtr ds(raw);
	const std::filesystem::path p(out);
	if (p.has_parent_path())
		std::filesystem::create_directories(p.parent_path());
	check(qseg_dataset_save(ds.get(), out.c_str(), (out + ".manifest").c_str()), "gen-data");
	std::printf("wrote %zu samples (%zux%zu, %zu classes) to %s\n", samples, size, size, classes, out.c_str());
	return kExitOk;
}

int cmd_train(const qseg_config *cfg, const std::string &out_dir)
{
	DatasetPtr train = load_dataset(config_get(cfg, "dataset"), "dataset");
	const std::string val_path = config_get(cfg, "val_dataset");
	DatasetPtr val = val_path.empty() ? nullptr : load_dataset(val_path, "val_dataset");

	qseg_run *raw = nullptr;
	const qseg_status s = qseg_train(cfg, train.get(), val.get(), &raw);
	if (s != QSEG_OK && s != QSEG_ERR_DIVERGED)
		check(s, "train");
	const std::string reason = s == QSEG_ERR_DIVERGED ? qseg_last_error() : "";
	Run run(raw);
	check(qseg_run_write_artifacts(run.get(), out_dir.c_str()), "train");
	if (s == QSEG_ERR_DIVERGED)
	{
		std::fprintf(stderr, "training diverged: %s\n", reason.c_str());
		return kExitDiverged;
	}
	qseg_step_record last{};
	if (const std::size_t n = qseg_run_step_count(run.get()); n > 0)
		check(qseg_run_step(run.get(), n - 1, &last), "train");
	std::printf("steps=%zu final_loss=%s", qseg_run_step_count(run.get()), fmt(last.loss).c_str());
	double miou = 0.0;
	if (qseg_run_final_miou(run.get(), &miou) == QSEG_OK)
		std::printf(" miou=%s", fmt(miou).c_str());
	std::printf("\nartifacts in %s\n", out_dir.c_str());
	return kExitOk;
}

int cmd_eval(const std::string &checkpoint, const std::string &dataset, bool per_image, const std::string &out_dir)
{
	qseg_model *raw = nullptr;
	check(qseg_model_load(checkpoint.c_str(), &raw), "checkpoint");
	Model model(raw);
	DatasetPtr ds = load_dataset(dataset, "dataset");
	const std::size_t classes = qseg_model_classes(model.get());
	std::vector<double> iou(classes);
	qseg_eval_result r{};
	check(qseg_evaluate(model.get(), ds.get(), per_image ? 1 : 0, &r, iou.data(), iou.size()), "eval");

	std::ostringstream csv;
	csv << "step,miou,pixel_accuracy";
	for (std::size_t c = 0; c < classes; ++c)
		csv << ",iou_" << c;
	csv << "\n0," << fmt(r.miou) << ',' << fmt(r.pixel_accuracy);
	for (double v : iou)
		csv << ',' << (std::isnan(v) ? "" : fmt(v));
	csv << '\n';
	std::filesystem::create_directories(out_dir);
	write_text(std::filesystem::path(out_dir) / "eval.csv", csv.str());
	std::printf("miou=%s pixel_accuracy=%s\n", fmt(r.miou).c_str(), fmt(r.pixel_accuracy).c_str());
	return kExitOk;
}

int cmd_profile(const qseg_config *cfg, const std::string &checkpoint, const std::string &object, const std::string &out_dir)
{
	DatasetPtr ds = load_dataset(config_get(cfg, "dataset"), "dataset");
	Model model;
	if (!checkpoint.empty())
	{
		qseg_model *raw = nullptr;
		check(qseg_model_load(checkpoint.c_str(), &raw), "checkpoint");
		model.reset(raw);
	}
	else
	{
		// No checkpoint: profile the end state of a run with this config.
		qseg_run *raw = nullptr;
		const qseg_status s = qseg_train(cfg, ds.get(), nullptr, &raw);
		Run run(raw);
		if (s == QSEG_ERR_DIVERGED)
		{
			std::fprintf(stderr, "training diverged: %s\n", qseg_last_error());
			return kExitDiverged;
		}
		check(s, "profile");
		qseg_model *m = nullptr;
		check(qseg_run_model(run.get(), &m), "profile");
		model.reset(m);
	}
	qseg_profile_summary sum{};
	check(qseg_profile(model.get(), cfg, ds.get(), object.c_str(), out_dir.c_str(), &sum), "profile");
	std::printf("object=%s layers=%zu scale_max=%s scale_min=%s\n", object.c_str(), sum.layers, fmt(sum.scale_max).c_str(),
			fmt(sum.scale_min).c_str());
	return kExitOk;
}

std::vector<int> parse_int_list(const std::string &s)
{
	std::vector<int> out;
	std::istringstream is(s);
	std::string item;
	while (std::getline(is, item, ','))
	{
		std::size_t pos = 0;
		int v = 0;
		try
		{
			v = std::stoi(item, &pos);
		}
		catch (const std::exception &)
		{
			pos = 0;
		}
		if (pos == 0 || pos != item.size())
			throw ApiError(QSEG_ERR_INVALID_ARGUMENT, "bad integer list '" + s + "'");
		out.push_back(v);
	}
	return out;
}

int cmd_sweep(const qseg_config *cfg, const std::string &kind, const std::string &k_u_values, const std::string &out_dir)
{
	DatasetPtr train = load_dataset(config_get(cfg, "dataset"), "dataset");
	const std::string val_path = config_get(cfg, "val_dataset");
	DatasetPtr val = load_dataset(val_path.empty() ? config_get(cfg, "dataset") : val_path, "val_dataset");
	std::filesystem::create_directories(out_dir);
	const std::string runs = (std::filesystem::path(out_dir) / "runs").string();

	qseg_table *raw = nullptr;
	if (kind == "ku")
	{
		const std::vector<int> ks = parse_int_list(k_u_values);
		check(qseg_sweep_ku(cfg, ks.data(), ks.size(), train.get(), val.get(), runs.c_str(), &raw), "sweep-ku");
	}
	else if (kind == "scaling")
		check(qseg_sweep_scaling(cfg, train.get(), val.get(), runs.c_str(), &raw), "sweep-scaling");
	else
		check(qseg_sweep_structure(cfg, train.get(), val.get(), runs.c_str(), &raw), "sweep-structure");
	Table table(raw);

	const std::string csv = (std::filesystem::path(out_dir) / ("sweep_" + kind + ".csv")).string();
	check(qseg_table_write_csv(table.get(), csv.c_str()), "sweep");
	for (std::size_t r = 0; r < qseg_table_rows(table.get()); ++r)
	{
		char label[256];
		double mean = 0.0;
		check(qseg_table_label(table.get(), r, label, sizeof(label), nullptr), "sweep");
		check(qseg_table_mean(table.get(), r, &mean), "sweep");
		std::printf("%s mean_miou=%s\n", label, fmt(mean).c_str());
	}
	std::printf("table in %s\n", csv.c_str());
	return kExitOk;
}

} // namespace

int main(int argc, char **argv)
{
	CLI::App app{"Quantized training and inference for a small segmentation network"};
	app.require_subcommand(1);

	auto *gen = app.add_subcommand("gen-data", "Generate a synthetic shapes dataset");
	std::string gen_out;
	std::uint64_t gen_seed = 1;
	std::size_t gen_samples = 2000, gen_size = 64, gen_classes = 6;
	gen->add_option("--out", gen_out, "output dataset file")->required();
	gen->add_option("--seed", gen_seed, "generator seed");
	gen->add_option("--samples", gen_samples, "number of samples");
	gen->add_option("--size", gen_size, "image side length (>= 32)");
	gen->add_option("--classes", gen_classes, "number of classes including background");

	std::string out_dir = ".";
	ConfigFlags train_flags, profile_flags, ku_flags, scaling_flags, structure_flags;

	auto *train = app.add_subcommand("train", "Train one network; writes run.csv, eval.csv, config.resolved, checkpoint");
	train_flags.attach(train);
	train->add_option("--out-dir", out_dir, "output directory");

	auto *eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
	std::string eval_ckpt, eval_ds;
	bool eval_per_image = false;
	eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
	eval->add_option("--dataset", eval_ds, "dataset file")->required();
	eval->add_flag("--per-image", eval_per_image, "average mIoU per image instead of over the dataset");
	eval->add_option("--out-dir", out_dir, "output directory");

	auto *prof = app.add_subcommand("profile", "Per-layer histograms of one quantization object");
	std::string prof_ckpt, prof_object;
	profile_flags.attach(prof);
	prof->add_option("--checkpoint", prof_ckpt, "checkpoint (default: train with the config first)");
	prof->add_option("--object", prof_object, "W A E1 E2 G mu sigma gamma beta xhat")->required();
	prof->add_option("--out-dir", out_dir, "output directory");

	auto *ku = app.add_subcommand("sweep-ku", "mIoU against update bit-width");
	std::string ku_values = "24,16,12,10,9";
	ku_flags.attach(ku);
	ku->add_option("--values", ku_values, "comma-separated k_U values");
	ku->add_option("--out-dir", out_dir, "output directory");

	auto *scaling = app.add_subcommand("sweep-scaling", "Both networks with preserve_scale and abandon_scale");
	scaling_flags.attach(scaling);
	scaling->add_option("--out-dir", out_dir, "output directory");

	auto *structure = app.add_subcommand("sweep-structure", "toy_fcn with encoder and decoder quantized separately");
	structure_flags.attach(structure);
	structure->add_option("--out-dir", out_dir, "output directory");

	try
	{
		app.parse(argc, argv);
	}
	catch (const CLI::ParseError &e)
	{
		const int code = app.exit(e);
		return code == 0 ? kExitOk : kExitUsage;
	}

	try
	{
		if (gen->parsed())
			return cmd_gen_data(gen_out, gen_seed, gen_samples, gen_size, gen_classes);
		if (eval->parsed())
			return cmd_eval(eval_ckpt, eval_ds, eval_per_image, out_dir);
		if (train->parsed())
			return cmd_train(train_flags.build(train).get(), out_dir);
		if (prof->parsed())
			return cmd_profile(profile_flags.build(prof).get(), prof_ckpt, prof_object, out_dir);
		if (ku->parsed())
			return cmd_sweep(ku_flags.build(ku).get(), "ku", ku_values, out_dir);
		if (scaling->parsed())
			return cmd_sweep(scaling_flags.build(scaling).get(), "scaling", "", out_dir);
		if (structure->parsed())
			return cmd_sweep(structure_flags.build(structure).get(), "structure", "", out_dir);
	}
	catch (const ApiError &e)
	{
		std::fprintf(stderr, "error: %s\n", e.what());
		return e.status == QSEG_ERR_DIVERGED ? kExitDiverged : kExitUsage;
	}
	catch (const std::exception &e)
	{
		std::fprintf(stderr, "error: %s\n", e.what());
		return kExitUsage;
	}
	return kExitUsage;
}
