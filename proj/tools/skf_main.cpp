// Command-line front end: dataset generation, training, enhancement,
// evaluation, gradient checks, ablations and a histogram dump.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "skf/config.hpp"
#include "skf/data.hpp"
#include "skf/errors.hpp"
#include "skf/gradcheck.hpp"
#include "skf/histogram.hpp"
#include "skf/metrics.hpp"
#include "skf/trainer.hpp"

namespace fs = std::filesystem;
using namespace skf;

namespace {

enum ExitCode : int {
    kOk = 0,
    kGeneric = 1,
    kUsage = 2,
    kInput = 3,
    kConfig = 4,
    kTrainingAborted = 5,
    kGradcheckFailed = 6,
    kLoad = 7,
};

constexpr const char* kDataRootEnv = "SKF_DATA_ROOT";

/// Thrown for malformed `--key value` overrides; reported with usage text.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

// Leftover arguments of train/ablate are config overrides: --key value or --key=value.
void apply_overrides(TrainConfig& config, const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0 || a.size() < 3) throw UsageError("unexpected argument '" + a + "'");
        std::string key = a.substr(2);
        std::string value;
        const auto eq = key.find('=');
        if (eq != std::string::npos) {
            value = key.substr(eq + 1);
            key.resize(eq);
        } else {
            if (i + 1 >= args.size()) throw UsageError("option --" + key + " needs a value");
            value = args[++i];
        }
        try {
            apply_setting(config, key, value);
        } catch (const ConfigError& e) {
            if (std::string(e.what()).rfind("unknown config key", 0) == 0) throw UsageError(e.what());
            throw;
        }
    }
}

TrainConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    TrainConfig config = config_path.empty() ? TrainConfig{} : load_config(config_path);
    apply_overrides(config, overrides);
    if (config.data_dir.empty()) {
        if (const char* root = std::getenv(kDataRootEnv)) config.data_dir = root;
    }
    validate(config);
    return config;
}

Dataset load_training_data(const TrainConfig& config) {
    if (config.data_dir.empty()) {
        throw InputError(std::string("no dataset: set data_dir or ") + kDataRootEnv);
    }
    if (!fs::exists(fs::path(config.data_dir) / "manifest.txt")) {
        throw InputError("no dataset at " + config.data_dir + " (manifest.txt missing)");
    }
    return load_dataset(config.data_dir);
}

std::string overrides_help() {
    std::string keys;
    for (const auto& k : config_keys()) keys += (keys.empty() ? "" : ", ") + k;
    return "Any config key may be given as --key value and overrides the file: " + keys;
}

// ---- subcommands -----------------------------------------------------------

struct GenerateArgs {
    std::string out;
    std::string import_dir;
    int train = 400, val = 50, test = 50;
    int height = 64, width = 64, classes = 4;
    std::uint64_t seed = 1;
    double val_fraction = 0.1, test_fraction = 0.1;
};

int run_generate(const GenerateArgs& a) {
    Dataset ds;
    if (!a.import_dir.empty()) {
        ds = import_pairs(a.import_dir, a.val_fraction, a.test_fraction);
    } else {
        DatasetConfig dc;
        dc.train = a.train;
        dc.val = a.val;
        dc.test = a.test;
        dc.master_seed = a.seed;
        dc.scene.height = a.height;
        dc.scene.width = a.width;
        dc.scene.class_count = a.classes;
        validate(dc);
        ds = generate_dataset(dc);
    }
    save_dataset(a.out, ds);
    std::cout << "wrote " << ds.pairs.size() << " pairs to " << a.out << "\n";
    return kOk;
}

struct TrainArgs {
    std::string config;
    std::string resume;
    std::vector<std::string> overrides;
};

int run_train(const TrainArgs& a) {
    const TrainConfig config = resolve_config(a.config, a.overrides);
    const Dataset ds = load_training_data(config);
    const auto provider = make_provider(config.provider, std::max(ds.class_count(), 1), config.semantic_widths, 7,
                                        config.prior_dir);
    Trainer trainer(config, ds, *provider);
    if (!a.resume.empty()) trainer.load_checkpoint(a.resume);
    trainer.train(&std::cerr);

    const MetricsReport report = trainer.evaluate("test", true);
    std::ofstream csv(fs::path(config.out_dir) / "test_metrics.csv");
    report.write_csv(csv);
    const ImageMetrics mean = report.aggregate();
    std::printf("test psnr %.4f ssim %.4f segment_color_error %.5f\n", mean.psnr, mean.ssim, mean.segment_color_error);
    return kOk;
}

struct EnhanceArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string input;
    std::string out;
    std::string prior_dir;
    bool latest = false;
};

// Pairs from a directory of <id>.low files, with <id>.labels when present.
std::vector<ScenePair> read_low_inputs(const std::string& dir) {
    std::vector<ScenePair> pairs;
    if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".low") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        ScenePair p;
        p.id = f.stem().string();
        p.low = load_image16(f.string());
        const fs::path labels = fs::path(f).replace_extension(".labels");
        if (fs::exists(labels)) p.labels = load_labels(labels.string());
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw InputError("no .low images in " + dir);
    return pairs;
}

int run_enhance(const EnhanceArgs& a) {
    if (a.data.empty() == a.input.empty()) throw UsageError("enhance needs exactly one of --data or --input");
    LoadedModel model = load_model(a.checkpoint, !a.latest);
    const std::string prior_dir = a.prior_dir.empty() ? model.config.prior_dir : a.prior_dir;
    const auto provider =
        make_provider(model.config.provider, model.class_count, model.config.semantic_widths, 7, prior_dir);

    Dataset ds;
    std::vector<ScenePair> loose;
    std::vector<const ScenePair*> pairs;
    if (!a.data.empty()) {
        ds = load_dataset(a.data);
        pairs = ds.split(a.split);
        if (pairs.empty()) throw InputError("split '" + a.split + "' of " + a.data + " is empty");
    } else {
        loose = read_low_inputs(a.input);
        for (const auto& p : loose) pairs.push_back(&p);
    }
    const std::vector<Image> outputs = enhance_pairs(*model.net, *provider, pairs);
    fs::create_directories(a.out);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        save_image16((fs::path(a.out) / (pairs[i]->id + ".enhanced")).string(), outputs[i]);
    }
    std::cout << "enhanced " << pairs.size() << " images into " << a.out << "\n";
    return kOk;
}

struct EvalArgs {
    std::string pred;
    std::string target;
    std::string out;
};

// A dataset root is accepted in place of its pairs/ directory.
fs::path pairs_dir(const std::string& dir) {
    const fs::path p(dir);
    if (fs::exists(p / "manifest.txt") && fs::is_directory(p / "pairs")) return p / "pairs";
    if (!fs::is_directory(p)) throw InputError("not a directory: " + dir);
    return p;
}

int run_eval(const EvalArgs& a) {
    const fs::path pred = pairs_dir(a.pred);
    const fs::path target = pairs_dir(a.target);
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(target)) {
        if (e.path().extension() == ".normal") ids.push_back(e.path().stem().string());
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw InputError("no .normal targets in " + target.string());

    MetricsReport report;
    std::size_t unmatched = 0;
    for (const auto& id : ids) {
        fs::path p = pred / (id + ".enhanced");
        if (!fs::exists(p)) p = pred / (id + ".normal");
        if (!fs::exists(p)) {
            ++unmatched;
            continue;
        }
        const Image target_image = load_image16((target / (id + ".normal")).string());
        const LabelMap labels = load_labels((target / (id + ".labels")).string());
        report.add(evaluate_pair(id, load_image16(p.string()), target_image, labels));
    }
    if (report.per_image.empty()) throw InputError("no prediction in " + pred.string() + " matches a target");
    if (unmatched > 0) std::cerr << unmatched << " targets without a prediction were skipped\n";
    if (a.out.empty()) {
        report.write_csv(std::cout);
    } else {
        std::ofstream out(a.out);
        if (!out) throw LoadError(a.out, "cannot open for writing");
        report.write_csv(out);
    }
    return kOk;
}

int run_gradcheck_cmd(std::uint64_t seed) {
    GradcheckOptions options;
    options.seed = seed;
    const bool ok = report_gradcheck(std::cout, run_gradcheck(options));
    std::cout << (ok ? "gradcheck passed\n" : "gradcheck FAILED\n");
    return ok ? kOk : kGradcheckFailed;
}

struct AblateArgs {
    std::string config;
    std::string rows = "baseline,sch,se,sch+se,all";
    std::string seeds = "1";
    std::string out;
    std::vector<std::string> overrides;
};

int run_ablate(const AblateArgs& a) {
    const TrainConfig config = resolve_config(a.config, a.overrides);
    const Dataset ds = load_training_data(config);
    std::vector<AblationRow> rows;
    for (const auto& r : split_list(a.rows)) rows.push_back(parse_ablation_row(r));
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(a.seeds)) {
        try {
            seeds.push_back(std::stoull(s));
        } catch (const std::exception&) {
            throw UsageError("bad seed '" + s + "'");
        }
    }
    if (rows.empty() || seeds.empty()) throw UsageError("ablate needs at least one row and one seed");
    const auto results = run_ablation(config, ds, rows, seeds, &std::cerr);
    write_ablation_table(std::cout, rows, results);
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw LoadError(a.out, "cannot open for writing");
        write_ablation_table(out, rows, results);
    }
    return kOk;
}

struct HistogramArgs {
    std::string image;
    std::string labels;
    double alpha = kDefaultAlpha;
    int erosion = 0;
};

int run_histogram(const HistogramArgs& a) {
    const Image image = load_image16(a.image);
    const LabelMap labels = load_labels(a.labels);
    const SegmentPatchSet set = erode_segment_masks(split_into_patches(image, labels), a.erosion);
    std::cout << "class,channel,pixels,bin,count\n";
    char line[96];
    for (const auto& patch : set.patches) {
        for (int c = 0; c < 3; ++c) {
            std::vector<double> values;
            values.reserve(patch.values.size());
            for (const auto& v : patch.values) values.push_back(v[static_cast<std::size_t>(c)]);
            const SoftHistogram h = soft_histogram(values, a.alpha);
            for (int i = 0; i < kHistogramBins; ++i) {
                std::snprintf(line, sizeof line, "%d,%c,%d,%d,%.9g\n", patch.class_id, "RGB"[c], h.pixel_count, i,
                              h.bins[static_cast<std::size_t>(i)]);
                std::cout << line;
            }
        }
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic-prior guided low-light enhancement toolkit"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate-data", "Write a synthetic paired dataset, or import existing pairs");
    g->add_option("--out", gen.out, "Output dataset directory")->required();
    g->add_option("--import", gen.import_dir, "Import <id>.{normal,low,labels} files from this directory");
    g->add_option("--train", gen.train, "Training pairs")->capture_default_str();
    g->add_option("--val", gen.val, "Validation pairs")->capture_default_str();
    g->add_option("--test", gen.test, "Test pairs")->capture_default_str();
    g->add_option("--height", gen.height, "Image height (multiple of 16)")->capture_default_str();
    g->add_option("--width", gen.width, "Image width (multiple of 16)")->capture_default_str();
    g->add_option("--classes", gen.classes, "Classes per scene, background included")->capture_default_str();
    g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
    g->add_option("--val-fraction", gen.val_fraction, "Validation share when importing")->capture_default_str();
    g->add_option("--test-fraction", gen.test_fraction, "Test share when importing")->capture_default_str();

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train an enhancer from a config file");
    t->add_option("--config", train.config, "key = value config file");
    t->add_option("--resume", train.resume, "Continue from a checkpoint");
    t->allow_extras();
    t->footer(overrides_help());

    EnhanceArgs enh;
    auto* e = app.add_subcommand("enhance", "Enhance low-light images with a checkpoint");
    e->add_option("--checkpoint", enh.checkpoint, "Checkpoint file")->required();
    e->add_option("--data", enh.data, "Dataset directory");
    e->add_option("--split", enh.split, "Split of --data to enhance")->capture_default_str();
    e->add_option("--input", enh.input, "Directory of <id>.low images (with <id>.labels for the oracle provider)");
    e->add_option("--out", enh.out, "Output directory for <id>.enhanced")->required();
    e->add_option("--prior-dir", enh.prior_dir, "Prior directory for the file provider");
    e->add_flag("--latest", enh.latest, "Use the latest parameters instead of the best validation ones");

    EvalArgs ev;
    auto* v = app.add_subcommand("eval", "Metrics CSV for predictions against targets");
    v->add_option("--pred", ev.pred, "Directory of <id>.enhanced (or <id>.normal) images; matched to targets by id")->required();
    v->add_option("--target", ev.target, "Directory of <id>.normal and <id>.labels, or a dataset")->required();
    v->add_option("--out", ev.out, "CSV path (default: stdout)");

    std::uint64_t gc_seed = 1;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of the SCH loss and SE block");
    gc->add_option("--seed", gc_seed, "Seed of the random instances")->capture_default_str();

    AblateArgs abl;
    auto* ab = app.add_subcommand("ablate", "Train and test a grid of component toggles");
    ab->add_option("--config", abl.config, "Base config file");
    ab->add_option("--rows", abl.rows, "Comma list of baseline, all, large or '+' joins of sch, sa, se")
        ->capture_default_str();
    ab->add_option("--seeds", abl.seeds, "Comma list of master seeds")->capture_default_str();
    ab->add_option("--table", abl.out, "Also write the markdown table here");
    ab->allow_extras();
    ab->footer(overrides_help());

    HistogramArgs hist;
    auto* h = app.add_subcommand("histogram", "Soft histograms of every segment and channel as CSV, 256 rows each");
    h->add_option("--image", hist.image, "Image file")->required();
    h->add_option("--labels", hist.labels, "Label map file")->required();
    h->add_option("--alpha", hist.alpha, "Kernel sharpness")->capture_default_str();
    h->add_option("--erosion", hist.erosion, "Erosion radius")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*g) return run_generate(gen);
        if (*t) {
            train.overrides = t->remaining();
            return run_train(train);
        }
        if (*e) return run_enhance(enh);
        if (*v) return run_eval(ev);
        if (*gc) return run_gradcheck_cmd(gc_seed);
        if (*ab) {
            abl.overrides = ab->remaining();
            return run_ablate(abl);
        }
        if (*h) return run_histogram(hist);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n\n" << app.help();
        return kUsage;
    } catch (const TrainingAborted& err) {
        std::cerr << "training aborted: " << err.what() << "\n";
        return kTrainingAborted;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kConfig;
    } catch (const LoadError& err) {
        std::cerr << "load error: " << err.what() << "\n";
        return kLoad;
    } catch (const InputError& err) {
        std::cerr << "input error: " << err.what() << "\n";
        return kInput;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kGeneric;
    }
    return kGeneric;
}
