#include "skf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "skf/binary_io.hpp"
#include "skf/errors.hpp"
#include "skf/ops.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fs = std::filesystem;

namespace skf {

namespace {

constexpr char kCheckpointMagic[] = "SKFCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint64_t kProviderSeed = 7;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9e", v);
    return buf;
}

void check_finite(double v, const char* component, long step) {
    if (!std::isfinite(v)) throw TrainingAborted(component, step);
}

// Training allocates and frees the same multi-megabyte buffers every step.
// Keeping them on the heap instead of fresh mmap pages avoids a page fault
// storm that otherwise costs a third of the step time.
void keep_large_buffers_on_heap() {
#if defined(__GLIBC__)
    static const bool once = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 512 << 20);
        mallopt(M_TOP_PAD, 64 << 20);
        return true;
    }();
    (void)once;
#endif
}

}  // namespace

// ============================================================================
// Loss composition
// ============================================================================

double total_loss(double recon, double sch, double sa, const LossWeights& weights, long step) {
    check_finite(recon, "recon", step);
    check_finite(sch, "sch", step);
    check_finite(sa, "sa", step);
    return recon + weights.sch * sch + weights.sa * sa;
}

template <typename T>
Var<T> total_loss(const Var<T>& recon, const Var<T>& sch, const Var<T>& sa, const LossWeights& weights, long step) {
    check_finite(static_cast<double>(recon.item()), "recon", step);
    Var<T> total = recon;
    if (sch.defined()) {
        check_finite(static_cast<double>(sch.item()), "sch", step);
        total = ops::add<T>(total, ops::scale<T>(sch, static_cast<T>(weights.sch)));
    }
    if (sa.defined()) {
        check_finite(static_cast<double>(sa.item()), "sa", step);
        total = ops::add<T>(total, ops::scale<T>(sa, static_cast<T>(weights.sa)));
    }
    check_finite(static_cast<double>(total.item()), "total", step);
    return total;
}

template Var<float> total_loss(const Var<float>&, const Var<float>&, const Var<float>&, const LossWeights&, long);
template Var<double> total_loss(const Var<double>&, const Var<double>&, const Var<double>&, const LossWeights&, long);

std::string StepRecord::to_line() const {
    std::string line = "step " + std::to_string(step) + " total " + fmt(total) + " recon " + fmt(recon) + " sch " +
                       fmt(sch) + " sa_local " + fmt(sa_local) + " sa_global " + fmt(sa_global) + " d_local " +
                       fmt(d_local) + " d_global " + fmt(d_global);
    if (!worst_patches.empty()) {
        line += " worst";
        for (int c : worst_patches) line += " " + std::to_string(c);
    }
    return line;
}

std::string ValidationRecord::to_line() const {
    return "val " + std::to_string(step) + " psnr " + fmt(psnr) + " ssim " + fmt(ssim);
}

EnhancerConfig enhancer_config(const TrainConfig& config) {
    EnhancerConfig ec;
    ec.widths = config.widths;
    ec.semantic_widths = config.semantic_widths;
    ec.use_se = config.use_se;
    if (config.large_control) {
        EnhancerConfig with_se = ec;
        with_se.use_se = true;
        ec = large_control_config(with_se);
    }
    return ec;
}

// ============================================================================
// Checkpoint serialization
// ============================================================================

namespace {

void write_tensor(BinaryWriter& out, const Tensor<float>& t) {
    const Shape& s = t.shape();
    out.u32(static_cast<std::uint32_t>(s.n));
    out.u32(static_cast<std::uint32_t>(s.c));
    out.u32(static_cast<std::uint32_t>(s.h));
    out.u32(static_cast<std::uint32_t>(s.w));
    out.bytes(t.data(), t.size() * sizeof(float));
}

Tensor<float> read_tensor(BinaryReader& in, const char* what) {
    Shape s;
    s.n = static_cast<int>(in.u32(what));
    s.c = static_cast<int>(in.u32(what));
    s.h = static_cast<int>(in.u32(what));
    s.w = static_cast<int>(in.u32(what));
    if (s.numel() > (std::size_t{1} << 30)) throw LoadError(in.path(), std::string("implausible shape for ") + what);
    Tensor<float> t(s);
    in.bytes(t.data(), t.size() * sizeof(float), what);
    return t;
}

void write_values(BinaryWriter& out, const std::vector<std::pair<std::string, Tensor<float>>>& values) {
    out.u32(static_cast<std::uint32_t>(values.size()));
    for (const auto& [name, t] : values) {
        out.str(name);
        write_tensor(out, t);
    }
}

std::vector<std::pair<std::string, Tensor<float>>> read_values(BinaryReader& in, const char* what) {
    const std::uint32_t count = in.u32(what);
    if (count > 100000) throw LoadError(in.path(), std::string("implausible tensor count for ") + what);
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = in.str(what);
        out.emplace_back(std::move(name), read_tensor(in, what));
    }
    return out;
}

std::vector<std::pair<std::string, Tensor<float>>> snapshot(const ParamStore<float>& store) {
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (const auto& [name, v] : store.entries()) out.emplace_back(name, v.value());
    return out;
}

void restore(ParamStore<float>& store, const std::vector<std::pair<std::string, Tensor<float>>>& values,
             const std::string& origin) {
    if (values.size() != store.entries().size()) {
        throw LoadError(origin, "parameter count " + std::to_string(values.size()) + " does not match the model (" +
                                    std::to_string(store.entries().size()) + ")");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto& [name, var] = store.entries()[i];
        if (values[i].first != name || !(values[i].second.shape() == var.shape())) {
            throw LoadError(origin, "parameter " + values[i].first + " does not match model parameter " + name);
        }
        var.mutable_value() = values[i].second;
    }
}

void write_adam(BinaryWriter& out, Adam<float>& adam) {
    out.u64(static_cast<std::uint64_t>(adam.steps()));
    out.u32(static_cast<std::uint32_t>(adam.first_moments().size()));
    for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
        write_tensor(out, adam.first_moments()[i]);
        write_tensor(out, adam.second_moments()[i]);
    }
}

void read_adam(BinaryReader& in, Adam<float>& adam) {
    adam.set_steps(static_cast<long>(in.u64("optimizer step")));
    const std::uint32_t count = in.u32("optimizer moment count");
    if (count > 100000) throw LoadError(in.path(), "implausible optimizer moment count");
    adam.first_moments().clear();
    adam.second_moments().clear();
    for (std::uint32_t i = 0; i < count; ++i) {
        adam.first_moments().push_back(read_tensor(in, "optimizer first moment"));
        adam.second_moments().push_back(read_tensor(in, "optimizer second moment"));
    }
}

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& state, const std::string& origin) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw LoadError(origin, "corrupt sampler state");
}

}  // namespace

// ============================================================================
// Trainer
// ============================================================================

struct Trainer::Impl {
    struct PairCache {
        const ScenePair* pair = nullptr;
        SemanticPrior prior;
        Tensor<float> real_logits;
        Tensor<float> fake_logits;
        SegmentPatchSet eroded;
        SegmentHistograms<float> target_hist;
        std::vector<PatchLayout> fake_layouts;
    };

    struct StepSnapshot {
        std::mt19937_64 rng;
        std::vector<int> order;
        std::size_t cursor = 0;
        std::vector<std::pair<std::string, Tensor<float>>> d_values;
        long d_steps = 0;
        std::vector<Tensor<float>> d_m, d_v;
    };

    TrainConfig config;
    const Dataset& dataset;
    const SemanticProvider& provider;
    int class_count = 0;
    int height = 0;
    int width = 0;
    GanTargets targets;
    LossWeights weights;

    std::vector<PairCache> train;
    std::vector<PairCache> val;

    Enhancer<float> net;
    Adam<float> adam_g;
    ParamStore<float> d_params;
    std::unique_ptr<Discriminator<float>> d_local;
    std::unique_ptr<Discriminator<float>> d_global;
    Adam<float> adam_d;

    std::mt19937_64 rng;
    std::vector<int> order;
    std::size_t cursor = 0;
    long step = 0;

    std::optional<ValidationRecord> best;
    std::vector<std::pair<std::string, Tensor<float>>> best_values;

    Impl(const TrainConfig& cfg, const Dataset& data, const SemanticProvider& prov)
        : config(cfg),
          dataset(data),
          provider(prov),
          targets(gan_targets(cfg.gan_convention)),
          weights{cfg.lambda_sch, cfg.lambda_sa},
          net(enhancer_config(cfg), cfg.master_seed),
          adam_g(cfg.lr_g),
          d_params(cfg.master_seed ^ 0xD15C0000ULL),
          adam_d(cfg.lr_d) {
        skf::validate(config);
        class_count = provider.class_count();
        for (int b = 0; b < kSemanticLevels; ++b) {
            if (provider.feature_channels(b) != net.config().level_semantic_width(b)) {
                throw ConfigError("provider feature widths do not match semantic_widths");
            }
        }
        for (const ScenePair* p : dataset.split("train")) train.push_back(cache(*p));
        if (train.empty()) throw InputError("dataset has no training pairs");
        auto val_pairs = dataset.split("val");
        if (config.val_limit > 0 && val_pairs.size() > static_cast<std::size_t>(config.val_limit)) {
            val_pairs.resize(static_cast<std::size_t>(config.val_limit));
        }
        for (const ScenePair* p : val_pairs) val.push_back(cache(*p));
        height = train.front().pair->normal.height;
        width = train.front().pair->normal.width;
        for (const auto& c : train) {
            if (c.pair->normal.height != height || c.pair->normal.width != width) {
                throw InputError("training pairs must share dims");
            }
        }
        if (config.use_sa) {
            d_local = std::make_unique<Discriminator<float>>(d_params, "d_local", 3, config.disc_width);
            d_global = std::make_unique<Discriminator<float>>(d_params, "d_global", 3 + class_count, config.disc_width);
        }
        std::seed_seq seq{static_cast<std::uint32_t>(config.master_seed),
                          static_cast<std::uint32_t>(config.master_seed >> 32), 0x5EEDu};
        rng.seed(seq);
        order.resize(train.size());
        reshuffle();
    }

    PairCache cache(const ScenePair& p) const {
        PairCache c;
        c.pair = &p;
        const PriorRequest request{p.id, &p.labels};
        c.prior = provider.provide(p.low, request);
        const SemanticPrior real_prior = provider.provide(p.normal, request);
        c.fake_logits = c.prior.logits.cast<float>();
        c.real_logits = real_prior.logits.cast<float>();
        // Segments come from the prior of the low-light input.
        c.eroded = erode_segment_masks(segment_masks(c.prior.label_map), config.erosion_radius);
        if (config.use_sch) {
            c.target_hist = segment_histograms<float>(image_to_tensor<float>(p.normal), 0, c.eroded,
                                                      static_cast<float>(config.alpha));
        }
        if (config.use_sa) c.fake_layouts = fake_patch_layouts(c.eroded, config.patch_size);
        return c;
    }

    void reshuffle() {
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
    }

    std::vector<int> next_batch() {
        const std::size_t b = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size), order.size());
        if (cursor + b > order.size()) reshuffle();
        std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                               order.begin() + static_cast<std::ptrdiff_t>(cursor + b));
        cursor += b;
        return batch;
    }

    static Tensor<float> stack_logits(const std::vector<const Tensor<float>*>& parts) {
        const Shape& s = parts.front()->shape();
        std::vector<float> data;
        data.reserve(s.numel() * parts.size());
        for (const auto* t : parts) data.insert(data.end(), t->values().begin(), t->values().end());
        return Tensor<float>(Shape{static_cast<int>(parts.size()), s.c, s.h, s.w}, std::move(data));
    }

    StepSnapshot capture() const {
        StepSnapshot s{rng, order, cursor, {}, 0, {}, {}};
        if (config.use_sa) {
            s.d_values = snapshot(d_params);
            s.d_steps = adam_d.steps();
            s.d_m = const_cast<Adam<float>&>(adam_d).first_moments();
            s.d_v = const_cast<Adam<float>&>(adam_d).second_moments();
        }
        return s;
    }

    void rollback(StepSnapshot& s) {
        rng = s.rng;
        order = s.order;
        cursor = s.cursor;
        if (config.use_sa) {
            restore(d_params, s.d_values, "snapshot");
            adam_d.set_steps(s.d_steps);
            adam_d.first_moments() = std::move(s.d_m);
            adam_d.second_moments() = std::move(s.d_v);
        }
    }

    StepRecord run_step() {
        StepSnapshot snap = capture();
        try {
            return run_step_unchecked();
        } catch (const TrainingAborted&) {
            rollback(snap);
            throw;
        }
    }

    StepRecord run_step_unchecked() {
        const long step_no = step + 1;
        const std::vector<int> batch = next_batch();
        const int n = static_cast<int>(batch.size());

        std::vector<const Image*> lows, normals;
        std::vector<const SemanticPrior*> priors;
        std::vector<const SegmentPatchSet*> sets;
        std::vector<const SegmentHistograms<float>*> hists;
        std::vector<const Tensor<float>*> real_logits, fake_logits;
        for (int i : batch) {
            const PairCache& c = train[static_cast<std::size_t>(i)];
            lows.push_back(&c.pair->low);
            normals.push_back(&c.pair->normal);
            priors.push_back(&c.prior);
            sets.push_back(&c.eroded);
            hists.push_back(&c.target_hist);
            real_logits.push_back(&c.real_logits);
            fake_logits.push_back(&c.fake_logits);
        }
        const Tensor<float> normal = images_to_tensor<float>(normals);
        const Var<float> low = Var<float>::constant(images_to_tensor<float>(lows));
        const Var<float> out = net.forward(low, stack_features<float>(priors));

        StepRecord rec;
        rec.step = step_no;

        Var<float> sa;
        if (config.use_sa) {
            const Var<float> real_images = Var<float>::constant(normal);
            const Tensor<float> logits_real = stack_logits(real_logits);
            const Tensor<float> logits_fake = stack_logits(fake_logits);

            std::vector<PatchLayout> fake_layouts, real_layouts;
            std::vector<int> owners, class_ids;
            for (int k = 0; k < n; ++k) {
                for (const auto& layout : train[static_cast<std::size_t>(batch[static_cast<std::size_t>(k)])].fake_layouts) {
                    fake_layouts.push_back(layout);
                    owners.push_back(k);
                    class_ids.push_back(layout.class_id);
                    real_layouts.push_back(random_crop_layout(height, width, config.patch_size, rng));
                }
            }
            const bool has_local = !fake_layouts.empty();

            Var<float> candidates, fake_target;
            Var<float> d_loss = global_discriminator_loss<float>(*d_global, real_images, out, logits_real,
                                                                  logits_fake, targets);
            rec.d_global = d_loss.item();
            if (has_local) {
                candidates = gather_patches<float>(out, fake_layouts, owners);
                const Var<float> real_patches = gather_patches<float>(real_images, real_layouts, owners);
                fake_target = select_patches<float>(candidates, select_targets<float>(*d_local, candidates, class_ids, owners));
                const Var<float> d_local_loss = local_discriminator_loss<float>(*d_local, real_patches, fake_target, targets);
                rec.d_local = d_local_loss.item();
                d_loss = ops::add<float>(d_loss, d_local_loss);
            }
            check_finite(static_cast<double>(d_loss.item()), "discriminator", step_no);
            d_params.zero_grad();
            backward(d_loss);
            adam_d.step(d_params);

            // The generator sees the updated discriminators.
            Var<float> g_global = global_generator_loss<float>(*d_global, out, logits_fake, targets);
            rec.sa_global = g_global.item();
            sa = g_global;
            if (has_local) {
                const std::vector<int> chosen = select_targets<float>(*d_local, candidates, class_ids, owners);
                for (int idx : chosen) rec.worst_patches.push_back(class_ids[static_cast<std::size_t>(idx)]);
                const Var<float> g_local = local_generator_loss<float>(*d_local, select_patches<float>(candidates, chosen), targets);
                rec.sa_local = g_local.item();
                sa = sa_loss<float>(g_local, g_global);
            }
        }

        const Var<float> recon = config.recon == ReconLoss::l1 ? ops::l1_loss<float>(out, normal)
                                                               : ops::mse_loss<float>(out, normal);
        rec.recon = recon.item();
        Var<float> sch;
        if (config.use_sch) {
            const float per_pixel = 1.0f / static_cast<float>(static_cast<double>(n) * height * width);
            sch = ops::scale<float>(sch_loss<float>(out, sets, hists, static_cast<float>(config.alpha)), per_pixel);
            rec.sch = sch.item();
        }
        const Var<float> total = total_loss<float>(recon, sch, sa, weights, step_no);
        rec.total = total.item();

        net.params().zero_grad();
        backward(total);
        adam_g.step(net.params());
        d_params.zero_grad();
        step = step_no;
        return rec;
    }

    std::vector<Image> enhance_cached(const std::vector<const PairCache*>& pairs) {
        std::vector<Image> out;
        const std::size_t chunk = 16;
        for (std::size_t i = 0; i < pairs.size(); i += chunk) {
            std::vector<const Image*> lows;
            std::vector<const SemanticPrior*> priors;
            for (std::size_t j = i; j < std::min(pairs.size(), i + chunk); ++j) {
                lows.push_back(&pairs[j]->pair->low);
                priors.push_back(&pairs[j]->prior);
            }
            const Var<float> y = net.forward(Var<float>::constant(images_to_tensor<float>(lows)), stack_features<float>(priors));
            for (int k = 0; k < y.shape().n; ++k) out.push_back(tensor_to_image(y.value(), k));
        }
        return out;
    }

    ValidationRecord run_validation() {
        ValidationRecord rec;
        rec.step = step;
        if (val.empty()) return rec;
        std::vector<const PairCache*> ptrs;
        for (const auto& c : val) ptrs.push_back(&c);
        const std::vector<Image> enhanced = enhance_cached(ptrs);
        for (std::size_t i = 0; i < val.size(); ++i) {
            rec.psnr += psnr(enhanced[i], val[i].pair->normal);
            rec.ssim += ssim(enhanced[i], val[i].pair->normal);
        }
        rec.psnr /= static_cast<double>(val.size());
        rec.ssim /= static_cast<double>(val.size());
        if (!best || rec.psnr > best->psnr) {
            best = rec;
            best_values = snapshot(net.params());
        }
        return rec;
    }

    void save(const std::string& path) {
        const std::string tmp = path + ".tmp";
        {
            BinaryWriter out(tmp);
            out.bytes(kCheckpointMagic, 8);
            out.u32(kCheckpointVersion);
            out.str(config_to_text(config));
            out.u64(static_cast<std::uint64_t>(step));
            out.u32(static_cast<std::uint32_t>(class_count));
            write_values(out, snapshot(net.params()));
            write_adam(out, adam_g);
            out.u8(config.use_sa ? 1 : 0);
            if (config.use_sa) {
                write_values(out, snapshot(d_params));
                write_adam(out, adam_d);
            }
            out.str(rng_state(rng));
            out.u32(static_cast<std::uint32_t>(order.size()));
            for (int v : order) out.u32(static_cast<std::uint32_t>(v));
            out.u64(cursor);
            out.u8(best ? 1 : 0);
            if (best) {
                out.u64(static_cast<std::uint64_t>(best->step));
                out.f64(best->psnr);
                out.f64(best->ssim);
                write_values(out, best_values);
            }
            out.close();
        }
        fs::rename(tmp, path);
    }

    void load(const std::string& path) {
        BinaryReader in(path);
        in.expect_magic(kCheckpointMagic);
        const std::uint32_t version = in.u32("version");
        if (version != kCheckpointVersion) throw LoadError(path, "unsupported checkpoint version " + std::to_string(version));
        TrainConfig saved;
        apply_config_text(saved, in.str("config"), path);
        if (structural_signature(saved) != structural_signature(config)) {
            throw ConfigError(path + ": checkpoint was written with different structural settings");
        }
        const long saved_step = static_cast<long>(in.u64("step"));
        if (static_cast<int>(in.u32("class count")) != class_count) throw LoadError(path, "class count mismatch");
        restore(net.params(), read_values(in, "generator parameters"), path);
        read_adam(in, adam_g);
        const bool has_d = in.u8("discriminator flag") != 0;
        if (has_d != config.use_sa) throw LoadError(path, "discriminator presence does not match use_sa");
        if (has_d) {
            restore(d_params, read_values(in, "discriminator parameters"), path);
            read_adam(in, adam_d);
        }
        set_rng_state(rng, in.str("sampler state"), path);
        const std::uint32_t order_size = in.u32("sampler order");
        if (order_size != train.size()) throw LoadError(path, "training split size differs from the checkpoint");
        for (auto& v : order) v = static_cast<int>(in.u32("sampler order"));
        cursor = static_cast<std::size_t>(in.u64("sampler cursor"));
        best.reset();
        best_values.clear();
        if (in.u8("best flag") != 0) {
            ValidationRecord b;
            b.step = static_cast<long>(in.u64("best step"));
            b.psnr = in.f64("best psnr");
            b.ssim = in.f64("best ssim");
            best = b;
            best_values = read_values(in, "best parameters");
        }
        if (!in.at_end()) throw LoadError(path, "trailing bytes");
        step = saved_step;
    }
};

Trainer::Trainer(const TrainConfig& config, const Dataset& dataset, const SemanticProvider& provider)
    : impl_((keep_large_buffers_on_heap(), std::make_unique<Impl>(config, dataset, provider))) {}

Trainer::~Trainer() = default;

StepRecord Trainer::step() { return impl_->run_step(); }

ValidationRecord Trainer::validate() { return impl_->run_validation(); }

void Trainer::train(std::ostream* progress) {
    Impl& s = *impl_;
    const fs::path out_dir(s.config.out_dir);
    fs::create_directories(out_dir);
    const std::string log_path = (out_dir / "train_log.txt").string();
    std::ofstream log(log_path, s.step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw LoadError(log_path, "cannot open for writing");
    if (s.step == 0) {
        std::istringstream echo(config_to_text(s.config));
        for (std::string line; std::getline(echo, line);) {
            if (line.rfind("data_dir", 0) == 0 || line.rfind("out_dir", 0) == 0 || line.rfind("prior_dir", 0) == 0) continue;
            log << "# " << line << "\n";
        }
    }
    const auto start = std::chrono::steady_clock::now();
    while (s.step < s.config.steps) {
        StepRecord rec;
        try {
            rec = s.run_step();
        } catch (const TrainingAborted& e) {
            log << "abort " << e.what() << "\n";
            log.flush();
            s.save((out_dir / "last_good.ckpt").string());
            throw;
        }
        if (rec.step % s.config.log_every == 0 || rec.step == s.config.steps) log << rec.to_line() << "\n";
        const bool last = s.step == s.config.steps;
        if (s.config.val_every > 0 && (s.step % s.config.val_every == 0 || last)) {
            const auto before = s.best ? s.best->step : -1;
            const ValidationRecord v = s.run_validation();
            log << v.to_line() << "\n";
            if (s.best && s.best->step != before) s.save((out_dir / "best.ckpt").string());
            if (progress) {
                const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
                *progress << "step " << s.step << "/" << s.config.steps << " total " << rec.total << " val psnr "
                          << v.psnr << " (" << secs << " s)\n";
            }
        }
        if ((s.config.checkpoint_every > 0 && s.step % s.config.checkpoint_every == 0) || last) {
            s.save((out_dir / "latest.ckpt").string());
        }
    }
    log.flush();
}

MetricsReport Trainer::evaluate(const std::string& split, bool use_best) {
    Impl& s = *impl_;
    std::vector<Impl::PairCache> caches;
    for (const ScenePair* p : s.dataset.split(split)) caches.push_back(s.cache(*p));
    std::vector<const Impl::PairCache*> ptrs;
    for (const auto& c : caches) ptrs.push_back(&c);
    std::vector<std::pair<std::string, Tensor<float>>> current;
    const bool swap = use_best && s.best && !s.best_values.empty();
    if (swap) {
        current = snapshot(s.net.params());
        restore(s.net.params(), s.best_values, "best parameters");
    }
    const std::vector<Image> enhanced = s.enhance_cached(ptrs);
    if (swap) restore(s.net.params(), current, "current parameters");
    MetricsReport report;
    for (std::size_t i = 0; i < caches.size(); ++i) {
        const ScenePair& p = *caches[i].pair;
        report.add(evaluate_pair(p.id, enhanced[i], p.normal, p.labels));
    }
    return report;
}

void Trainer::save_checkpoint(const std::string& path) const { impl_->save(path); }
void Trainer::load_checkpoint(const std::string& path) { impl_->load(path); }
long Trainer::current_step() const { return impl_->step; }
const TrainConfig& Trainer::config() const { return impl_->config; }
Enhancer<float>& Trainer::generator() { return impl_->net; }
const ParamStore<float>& Trainer::discriminator_params() const { return impl_->d_params; }
const SemanticProvider& Trainer::provider() const { return impl_->provider; }
std::optional<ValidationRecord> Trainer::best_validation() const { return impl_->best; }

LoadedModel load_model(const std::string& checkpoint_path, bool prefer_best) {
    BinaryReader in(checkpoint_path);
    in.expect_magic(kCheckpointMagic);
    const std::uint32_t version = in.u32("version");
    if (version != kCheckpointVersion) {
        throw LoadError(checkpoint_path, "unsupported checkpoint version " + std::to_string(version));
    }
    LoadedModel model;
    apply_config_text(model.config, in.str("config"), checkpoint_path);
    in.u64("step");
    model.class_count = static_cast<int>(in.u32("class count"));
    auto values = read_values(in, "generator parameters");
    Adam<float> scratch;
    read_adam(in, scratch);
    if (in.u8("discriminator flag") != 0) {
        read_values(in, "discriminator parameters");
        read_adam(in, scratch);
    }
    in.str("sampler state");
    const std::uint32_t order_size = in.u32("sampler order");
    for (std::uint32_t i = 0; i < order_size; ++i) in.u32("sampler order");
    in.u64("sampler cursor");
    if (in.u8("best flag") != 0) {
        in.u64("best step");
        in.f64("best psnr");
        in.f64("best ssim");
        auto best = read_values(in, "best parameters");
        if (prefer_best) values = std::move(best);
    }
    model.net = std::make_unique<Enhancer<float>>(enhancer_config(model.config), model.config.master_seed);
    restore(model.net->params(), values, checkpoint_path);
    return model;
}

std::vector<Image> enhance_pairs(const Enhancer<float>& net, const SemanticProvider& provider,
                                 const std::vector<const ScenePair*>& pairs, int chunk) {
    std::vector<Image> out;
    const std::size_t step = static_cast<std::size_t>(std::max(1, chunk));
    for (std::size_t i = 0; i < pairs.size(); i += step) {
        std::vector<const Image*> lows;
        std::vector<SemanticPrior> priors;
        for (std::size_t j = i; j < std::min(pairs.size(), i + step); ++j) {
            lows.push_back(&pairs[j]->low);
            priors.push_back(provider.provide(pairs[j]->low, PriorRequest{pairs[j]->id, &pairs[j]->labels}));
        }
        std::vector<const SemanticPrior*> prior_ptrs;
        for (const auto& p : priors) prior_ptrs.push_back(&p);
        const Var<float> y = net.forward(Var<float>::constant(images_to_tensor<float>(lows)), stack_features<float>(prior_ptrs));
        for (int k = 0; k < y.shape().n; ++k) out.push_back(tensor_to_image(y.value(), k));
    }
    return out;
}

// ============================================================================
// Ablation
// ============================================================================

AblationRow parse_ablation_row(const std::string& name) {
    AblationRow row;
    row.name = name;
    if (name == "baseline") return row;
    if (name == "all") {
        row.sch = row.sa = row.se = true;
        return row;
    }
    if (name == "large") {
        row.large = true;
        return row;
    }
    std::stringstream ss(name);
    std::string part;
    while (std::getline(ss, part, '+')) {
        if (part == "sch") row.sch = true;
        else if (part == "sa") row.sa = true;
        else if (part == "se") row.se = true;
        else throw ConfigError("unknown ablation component '" + part + "' in row '" + name + "'");
    }
    return row;
}

TrainConfig row_config(const TrainConfig& base, const AblationRow& row, std::uint64_t seed) {
    TrainConfig c = base;
    c.use_sch = row.sch;
    c.use_sa = row.sa;
    c.use_se = row.se;
    c.large_control = row.large;
    c.master_seed = seed;
    c.out_dir = (fs::path(base.out_dir) / row.name / ("seed" + std::to_string(seed))).string();
    return c;
}

std::vector<AblationResult> run_ablation(const TrainConfig& base, const Dataset& dataset,
                                         const std::vector<AblationRow>& rows, const std::vector<std::uint64_t>& seeds,
                                         std::ostream* progress) {
    const int classes = std::max(dataset.class_count(), 1);
    const auto provider =
        make_provider(base.provider, classes, base.semantic_widths, kProviderSeed, base.prior_dir);
    std::vector<AblationResult> results;
    for (const auto& row : rows) {
        for (std::uint64_t seed : seeds) {
            const auto start = std::chrono::steady_clock::now();
            Trainer trainer(row_config(base, row, seed), dataset, *provider);
            trainer.train(nullptr);
            AblationResult r;
            r.row = row;
            r.seed = seed;
            r.parameters = trainer.generator().params().count();
            r.test = trainer.evaluate("test", true).aggregate();
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if (progress) {
                *progress << row.name << " seed " << seed << ": psnr " << r.test.psnr << " ssim " << r.test.ssim
                          << " color " << r.test.segment_color_error << " (" << r.seconds << " s)\n";
            }
            results.push_back(r);
        }
    }
    return results;
}

void write_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows,
                          const std::vector<AblationResult>& results) {
    auto mark = [](bool on) { return on ? "x" : " "; };
    out << "| row | SCH loss | SA loss | SE module | params | PSNR | SSIM | segment color error | NIQE | LPIPS |\n";
    out << "|---|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : rows) {
        double p = 0, s = 0, e = 0;
        std::size_t n = 0, params = 0;
        for (const auto& r : results) {
            if (r.row.name != row.name) continue;
            p += r.test.psnr;
            s += r.test.ssim;
            e += r.test.segment_color_error;
            params = r.parameters;
            ++n;
        }
        char buf[160];
        if (n > 0) {
            std::snprintf(buf, sizeof buf, "%.3f | %.4f | %.4f", p / n, s / n, e / n);
        } else {
            std::snprintf(buf, sizeof buf, "n/a | n/a | n/a");
        }
        out << "| " << row.name << (row.large ? " (large)" : "") << " | " << mark(row.sch) << " | " << mark(row.sa)
            << " | " << mark(row.se) << " | " << params << " | " << buf << " | n/a | n/a |\n";
    }
}

}  // namespace skf
