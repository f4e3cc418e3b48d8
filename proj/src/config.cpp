#include "skf/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "skf/errors.hpp"

namespace skf {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

double parse_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double out = 0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        bad_value(key, v, "a number");
    }
    if (used != v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
    return out;
}

long parse_long(const std::string& key, const std::string& v) {
    long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    bad_value(key, v, "a boolean");
}

std::array<int, 3> parse_triple(const std::string& key, const std::string& v) {
    std::array<int, 3> out{};
    std::stringstream ss(v);
    std::string part;
    std::size_t i = 0;
    while (std::getline(ss, part, ',')) {
        if (i == 3) bad_value(key, v, "three comma-separated integers");
        out[i++] = static_cast<int>(parse_long(key, trim(part)));
    }
    if (i != 3) bad_value(key, v, "three comma-separated integers");
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

std::string fmt(const std::array<int, 3>& v) {
    return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

struct Key {
    const char* name;
    bool structural;
    std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define SKF_DOUBLE_KEY(field, structural)                                                                   \
    Key{#field, structural, [](TrainConfig& c, const std::string& k, const std::string& v) {                \
            c.field = parse_double(k, v);                                                                    \
        },                                                                                                   \
        [](const TrainConfig& c) { return fmt(c.field); }}
#define SKF_INT_KEY(field, structural)                                                                      \
    Key{#field, structural, [](TrainConfig& c, const std::string& k, const std::string& v) {                \
            c.field = static_cast<decltype(c.field)>(parse_long(k, v));                                      \
        },                                                                                                   \
        [](const TrainConfig& c) { return std::to_string(c.field); }}
#define SKF_BOOL_KEY(field, structural)                                                                     \
    Key{#field, structural, [](TrainConfig& c, const std::string& k, const std::string& v) {                \
            c.field = parse_bool(k, v);                                                                      \
        },                                                                                                   \
        [](const TrainConfig& c) { return fmt(c.field); }}
#define SKF_STRING_KEY(field, structural)                                                                   \
    Key{#field, structural, [](TrainConfig& c, const std::string&, const std::string& v) { c.field = v; }, \
        [](const TrainConfig& c) { return c.field; }}
#define SKF_TRIPLE_KEY(field, structural)                                                                   \
    Key{#field, structural, [](TrainConfig& c, const std::string& k, const std::string& v) {                \
            c.field = parse_triple(k, v);                                                                    \
        },                                                                                                   \
        [](const TrainConfig& c) { return fmt(c.field); }}

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        SKF_DOUBLE_KEY(lambda_sch, true),
        SKF_DOUBLE_KEY(lambda_sa, true),
        SKF_DOUBLE_KEY(alpha, true),
        SKF_INT_KEY(erosion_radius, true),
        Key{"recon", true,
            [](TrainConfig& c, const std::string& k, const std::string& v) {
                if (v == "l1") c.recon = ReconLoss::l1;
                else if (v == "mse") c.recon = ReconLoss::mse;
                else bad_value(k, v, "l1 or mse");
            },
            [](const TrainConfig& c) { return std::string(c.recon == ReconLoss::l1 ? "l1" : "mse"); }},
        SKF_BOOL_KEY(use_se, true),
        SKF_BOOL_KEY(use_sch, true),
        SKF_BOOL_KEY(use_sa, true),
        SKF_BOOL_KEY(large_control, true),
        SKF_STRING_KEY(optimizer, true),
        SKF_DOUBLE_KEY(lr_g, true),
        SKF_DOUBLE_KEY(lr_d, true),
        SKF_INT_KEY(batch_size, true),
        SKF_INT_KEY(steps, false),
        Key{"master_seed", true,
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.master_seed = parse_u64(k, v); },
            [](const TrainConfig& c) { return std::to_string(c.master_seed); }},
        SKF_TRIPLE_KEY(widths, true),
        SKF_TRIPLE_KEY(semantic_widths, true),
        SKF_INT_KEY(disc_width, true),
        SKF_INT_KEY(patch_size, true),
        Key{"gan_convention", true,
            [](TrainConfig& c, const std::string&, const std::string& v) {
                c.gan_convention = parse_label_convention(v);
            },
            [](const TrainConfig& c) { return to_string(c.gan_convention); }},
        SKF_STRING_KEY(provider, true),
        SKF_STRING_KEY(prior_dir, false),
        SKF_STRING_KEY(data_dir, false),
        SKF_STRING_KEY(out_dir, false),
        SKF_INT_KEY(val_every, true),
        SKF_INT_KEY(val_limit, true),
        SKF_INT_KEY(log_every, false),
        SKF_INT_KEY(checkpoint_every, false),
    };
    return table;
}

}  // namespace

void apply_setting(TrainConfig& config, const std::string& key, const std::string& value) {
    std::string normalized = key;
    for (char& ch : normalized) {
        if (ch == '-') ch = '_';
    }
    for (const auto& k : keys()) {
        if (normalized == k.name) {
            k.set(config, normalized, trim(value));
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(TrainConfig& config, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
        }
        try {
            apply_setting(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

TrainConfig load_config(const std::string& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(base, ss.str(), path);
    return base;
}

void validate(const TrainConfig& c) {
    auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
    if (!(c.lambda_sch >= 0) || !(c.lambda_sa >= 0)) fail("loss weights must be non-negative");
    if (!(c.alpha > 0)) fail("alpha must be positive");
    if (c.erosion_radius < 0) fail("erosion_radius must be non-negative");
    if (c.optimizer != "adam") fail("optimizer must be adam");
    if (!(c.lr_g > 0) || !(c.lr_d > 0)) fail("learning rates must be positive");
    if (c.batch_size < 1) fail("batch_size must be at least 1");
    if (c.steps < 1) fail("steps must be at least 1");
    for (int w : c.widths) {
        if (w < 1) fail("widths must be positive");
    }
    for (int w : c.semantic_widths) {
        if (w < 1) fail("semantic_widths must be positive");
    }
    if (c.disc_width < 1) fail("disc_width must be positive");
    if (c.patch_size < 8) fail("patch_size must be at least 8");
    if (c.large_control && c.use_se) fail("large_control requires use_se = false");
    if (c.provider != "oracle" && c.provider != "file") fail("provider must be oracle or file");
    if (c.provider == "file" && c.prior_dir.empty()) fail("the file provider needs prior_dir");
    if (c.val_every < 0 || c.val_limit < 0 || c.log_every < 1 || c.checkpoint_every < 0) {
        fail("val_every, val_limit and checkpoint_every must be non-negative and log_every positive");
    }
}

std::string config_to_text(const TrainConfig& config) {
    std::string out;
    for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(config) + "\n";
    return out;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& k : keys()) out.emplace_back(k.name);
    return out;
}

std::string structural_signature(const TrainConfig& config) {
    std::string out;
    for (const auto& k : keys()) {
        if (k.structural) out += std::string(k.name) + " = " + k.get(config) + "\n";
    }
    return out;
}

}  // namespace skf
