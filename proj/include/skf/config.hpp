/**
 * @file config.hpp
 * @brief Training configuration: flat `key = value` files, command-line
 *        overrides and validation.
 */
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "skf/adversarial.hpp"
#include "skf/data.hpp"

namespace skf {

enum class ReconLoss { l1, mse };

struct TrainConfig {
    // Loss weights and histogram settings.
    double lambda_sch = 0.002;
    double lambda_sa = 0.01;
    double alpha = 400.0;
    int erosion_radius = 2;
    ReconLoss recon = ReconLoss::l1;

    // Component toggles.
    bool use_se = true;
    bool use_sch = true;
    bool use_sa = true;
    /// Widen a no-SE network to the SE parameter count.
    bool large_control = false;

    // Optimization.
    std::string optimizer = "adam";
    double lr_g = 2e-4;
    double lr_d = 1e-4;
    int batch_size = 8;
    long steps = 2000;
    std::uint64_t master_seed = 1;

    // Networks.
    std::array<int, 3> widths{32, 64, 128};
    std::array<int, 3> semantic_widths{16, 32, 64};
    int disc_width = 16;
    int patch_size = 64;
    LabelConvention gan_convention = LabelConvention::standard;

    // Semantic provider.
    std::string provider = "oracle";
    std::string prior_dir;

    // Bookkeeping.
    std::string data_dir;
    std::string out_dir = "runs/default";
    long val_every = 200;
    /// Validation pairs used (0 = all).
    int val_limit = 0;
    long log_every = 1;
    long checkpoint_every = 500;
};

/// Sets one key from its text value. Unknown keys and unparsable values
/// throw ConfigError.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);

/// Reads `key = value` lines; `#` starts a comment.
TrainConfig load_config(const std::string& path, TrainConfig base = {});
void apply_config_text(TrainConfig& config, const std::string& text, const std::string& origin);

/// Throws ConfigError for out-of-range values.
void validate(const TrainConfig& config);

/// Every key with its current value, one `key = value` line each, in a fixed order.
std::string config_to_text(const TrainConfig& config);

std::vector<std::string> config_keys();

/// Settings that must agree between a checkpoint and the run resuming it.
std::string structural_signature(const TrainConfig& config);

}  // namespace skf
