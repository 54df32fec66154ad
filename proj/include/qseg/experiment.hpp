#ifndef QSEG_EXPERIMENT_HPP_
#define QSEG_EXPERIMENT_HPP_

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qseg/config.hpp"
#include "qseg/dataset.hpp"
#include "qseg/metrics.hpp"
#include "qseg/network.hpp"

namespace qseg {

struct StepRecord
{
		std::size_t step = 0;
		double loss = 0.0;
		double lr = 0.0;      // rate applied to quantized layers
		double lr_fp = 0.0;   // rate applied to full-precision layers
		double g_scale_max = 0.0;  // max / min over layers of Scale(G) before quantization
		double g_scale_min = 0.0;
		std::size_t g_concentrated = 0;  // layers whose raw G is concentrated on the k_G grid
		std::size_t g_clipped = 0;       // layers whose raw G is clipped on the k_G grid
};

struct EvalResult
{
		double miou = 0.0;
		double pixel_accuracy = 0.0;
		std::vector<std::optional<double>> iou;  // per class; nullopt when absent
		ConfusionMatrix confusion{2};
};

struct EvalRecord
{
		std::size_t step = 0;
		EvalResult result;
};

struct RunRecord
{
		std::vector<StepRecord> steps;
		std::vector<EvalRecord> evals;
		double initial_loss = 0.0;
		bool diverged = false;
		std::string divergence_reason;
};

struct TrainResult
{
		Network network;
		RunRecord record;
};

/// Full training loop. Evaluates on val (when given) every eval_interval steps and after
/// the last step. Stops early and sets record.diverged when the loss becomes non-finite or
/// stays above divergence_factor x the initial loss for divergence_patience steps.
TrainResult train(const ExperimentConfig &cfg, const Dataset &train_ds, const Dataset *val_ds = nullptr);

/// Network at step 0 for this config (what train() starts from).
Network initial_network(const ExperimentConfig &cfg, std::size_t classes);

/// Inference-mode evaluation (frozen BN statistics) on full images.
EvalResult evaluate(Network &net, const Dataset &ds, EvalMode mode = EvalMode::Global,
		int ignore_label = kDefaultIgnoreLabel);

/// mIoU of always predicting the most frequent class of ds.
double class_prior_miou(const Dataset &ds, int ignore_label = kDefaultIgnoreLabel);

void write_run_csv(const std::string &path, const RunRecord &record);
void write_eval_csv(const std::string &path, const RunRecord &record, std::size_t classes);
std::string format_double(double v);

/// One row of a sweep table: labelled settings plus per-seed final mIoU.
struct SweepRow
{
		std::vector<std::pair<std::string, std::string>> labels;
		std::vector<double> miou;  // one per seed; NaN for diverged runs
		double mean = 0.0;
		std::size_t diverged = 0;
};

struct SweepTable
{
		std::vector<SweepRow> rows;

		const SweepRow &find(const std::vector<std::pair<std::string, std::string>> &labels) const;
};

/// A sweep arm: label pairs and the config to run (seed is overwritten per seed).
struct SweepArm
{
		std::vector<std::pair<std::string, std::string>> labels;
		ExperimentConfig cfg;
};

/// Runs every arm for cfg.seeds seeds (seed, seed+1, ...), concurrently on up to
/// `threads` workers. When out_dir is non-empty each run writes its artifacts into its own
/// subdirectory.
SweepTable run_sweep(const std::vector<SweepArm> &arms, std::size_t seeds, std::size_t threads, const Dataset &train_ds,
		const Dataset &val_ds, const std::string &out_dir = {});

std::vector<SweepArm> ku_arms(const ExperimentConfig &base, const std::vector<int> &k_u_values);
std::vector<SweepArm> scaling_arms(const ExperimentConfig &base);
std::vector<SweepArm> structure_arms(const ExperimentConfig &base);

void write_sweep_csv(const std::string &path, const SweepTable &table);

/// Write run.csv, eval.csv, config.resolved and checkpoint.qckpt into dir (created if needed).
void write_run_artifacts(const std::string &dir, const ExperimentConfig &cfg, const TrainResult &result);

} // namespace qseg

#endif // QSEG_EXPERIMENT_HPP_
