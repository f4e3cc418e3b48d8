/**
 * @file trainer.hpp
 * @brief Loss composition, alternating discriminator/generator training,
 *        checkpoints and the ablation grid.
 */
#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "skf/adversarial.hpp"
#include "skf/config.hpp"
#include "skf/data.hpp"
#include "skf/histogram.hpp"
#include "skf/metrics.hpp"
#include "skf/nets.hpp"

namespace skf {

struct LossWeights {
    double sch = 0.002;
    double sa = 0.01;
};

/// recon + w.sch * sch + w.sa * sa. A non-finite component throws
/// TrainingAborted naming it and the step.
double total_loss(double recon, double sch, double sa, const LossWeights& weights, long step = 0);

/// Graph version; undefined components count as zero and add no node.
template <typename T>
Var<T> total_loss(const Var<T>& recon, const Var<T>& sch, const Var<T>& sa, const LossWeights& weights, long step = 0);

/// Everything logged for one training step.
struct StepRecord {
    long step = 0;
    double recon = 0;
    /// Batch mean of the SCH loss per pixel (the term that is weighted).
    double sch = 0;
    double sa_local = 0;
    double sa_global = 0;
    double total = 0;
    double d_local = 0;
    double d_global = 0;
    /// Class of the selected worst patch, per batch element.
    std::vector<int> worst_patches;

    double sa() const { return sa_local + sa_global; }
    std::string to_line() const;
};

struct ValidationRecord {
    long step = 0;
    double psnr = 0;
    double ssim = 0;

    std::string to_line() const;
};

EnhancerConfig enhancer_config(const TrainConfig& config);

/// Trains one enhancer. The dataset and provider must outlive the trainer.
class Trainer {
public:
    Trainer(const TrainConfig& config, const Dataset& dataset, const SemanticProvider& provider);
    ~Trainer();
    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    /// One discriminator update followed by one generator update.
    StepRecord step();
    ValidationRecord validate();

    /// Runs until config.steps, writing train_log.txt, periodic checkpoints
    /// (latest.ckpt) and the best validation checkpoint (best.ckpt) under
    /// out_dir. On a non-finite loss the last good state is written to
    /// last_good.ckpt and TrainingAborted propagates.
    void train(std::ostream* progress = nullptr);

    /// Metrics on a split with the current parameters, or the best validation
    /// parameters when available and requested.
    MetricsReport evaluate(const std::string& split, bool use_best = true);

    void save_checkpoint(const std::string& path) const;
    /// Restores parameters, optimizer and sampler state. The checkpoint's
    /// structural settings must match this trainer's configuration.
    void load_checkpoint(const std::string& path);

    long current_step() const;
    const TrainConfig& config() const;
    Enhancer<float>& generator();
    /// Discriminator parameters; empty when SA is off.
    const ParamStore<float>& discriminator_params() const;
    const SemanticProvider& provider() const;
    std::optional<ValidationRecord> best_validation() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Generator and config read back from a checkpoint.
struct LoadedModel {
    TrainConfig config;
    std::unique_ptr<Enhancer<float>> net;
    int class_count = 0;
};

/// Uses the best-validation parameters when the checkpoint has them and
/// `prefer_best` is set.
LoadedModel load_model(const std::string& checkpoint_path, bool prefer_best = true);

/// Enhances every pair of `pairs` with `net`.
std::vector<Image> enhance_pairs(const Enhancer<float>& net, const SemanticProvider& provider,
                                 const std::vector<const ScenePair*>& pairs, int chunk = 16);

// ============================================================================
// Ablation grid
// ============================================================================

struct AblationRow {
    std::string name;
    bool sch = false;
    bool sa = false;
    bool se = false;
    bool large = false;
};

/// baseline, all, large, or a '+'-joined subset of sch, sa, se.
AblationRow parse_ablation_row(const std::string& name);
TrainConfig row_config(const TrainConfig& base, const AblationRow& row, std::uint64_t seed);

struct AblationResult {
    AblationRow row;
    std::uint64_t seed = 0;
    std::size_t parameters = 0;
    ImageMetrics test;
    double seconds = 0;
};

std::vector<AblationResult> run_ablation(const TrainConfig& base, const Dataset& dataset,
                                         const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds,
                                         std::ostream* progress = nullptr);

/// Markdown table: one line per row with check marks, parameter count and
/// mean test metrics over seeds.
void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows,
                          const std::vector<AblationResult>& results);

}  // namespace skf
