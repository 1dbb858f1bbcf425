#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ramlab/attacks.hpp"
#include "ramlab/checkpoint.hpp"
#include "ramlab/image_io.hpp"
#include "ramlab/receptive_field.hpp"
#include "ramlab/train.hpp"

namespace ramlab {

// ---------------------------------------------------------------------------
// key=value experiment config; unknown keys are rejected, every key has a
// default, and the fully-resolved config is written next to each run's
// outputs. The config hash excludes out/jobs so relocating a run or changing
// worker count never changes its identity.
// ---------------------------------------------------------------------------

class ExperimentConfig {
public:
    ExperimentConfig() { kv_ = defaults(); }

    static ExperimentConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("config: cannot open " + path);
        ExperimentConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t\r");
                size_t b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                            " is not key=value");
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        if (!kv_.count(key)) throw std::invalid_argument("config: unknown key '" + key + "'");
        kv_[key] = value;
    }

    const std::string& str(const std::string& key) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
        return it->second;
    }
    int64_t integer(const std::string& key) const {
        try {
            return std::stoll(str(key));
        } catch (...) {
            throw std::invalid_argument("config: key '" + key + "' is not an integer");
        }
    }
    double real(const std::string& key) const {
        try {
            return std::stod(str(key));
        } catch (...) {
            throw std::invalid_argument("config: key '" + key + "' is not a number");
        }
    }
    bool flag(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "1" || v == "true" || v == "on") return true;
        if (v == "0" || v == "false" || v == "off") return false;
        throw std::invalid_argument("config: key '" + key + "' is not a boolean");
    }
    std::vector<std::string> list(const std::string& key) const {
        std::vector<std::string> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (!item.empty()) out.push_back(item);
        }
        return out;
    }

    std::string resolved_text() const {
        std::ostringstream os;
        for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
        return os.str();
    }

    // FNV-1a over the resolved text minus location bindings (paths, worker
    // count), so the hash names the experiment, not where it ran.
    uint64_t hash() const {
        static const std::set<std::string> excluded{
            "out",           "jobs",           "data.manifest", "train.checkpoint",
            "attack.checkpoints", "rf.checkpoints", "report.ledger"};
        uint64_t h = 0xCBF29CE484222325ull;
        for (const auto& [k, v] : kv_) {
            if (excluded.count(k)) continue;
            for (char c : k + "=" + v + "\n") {
                h ^= uint64_t(uint8_t(c));
                h *= 0x100000001B3ull;
            }
        }
        return h;
    }

    // typed views -----------------------------------------------------------

    uint64_t seed() const { return uint64_t(integer("seed")); }
    std::string out_dir() const { return str("out"); }
    int jobs() const { return std::max(1, int(integer("jobs"))); }

    DatasetSpec dataset_spec() const {
        DatasetSpec d;
        d.count = int(integer("data.count"));
        d.img_h = int(integer("data.img_h"));
        d.img_w = int(integer("data.img_w"));
        d.classes = int(integer("data.classes"));
        d.shapes_min = int(integer("data.shapes_min"));
        d.shapes_max = int(integer("data.shapes_max"));
        d.noise_std = real("data.noise_std");
        d.claim_radius = int(integer("data.claim_radius"));
        d.seed = RngState(seed()).child("data").key();
        return d;
    }

    SegModelConfig model_config() const {
        SegModelConfig m;
        m.img_h = int(integer("data.img_h"));
        m.img_w = int(integer("data.img_w"));
        m.patch = int(integer("model.patch"));
        m.dim = int(integer("model.dim"));
        m.layers = int(integer("model.layers"));
        m.heads = int(integer("model.heads"));
        m.classes = int(integer("data.classes"));
        m.mixer = mixer_from(str("model.mixer"));
        m.window = int(integer("model.window"));
        m.pool_window = int(integer("model.pool_window"));
        m.attention.mode = attention_mode_from(str("attention.mode"));
        m.attention.threshold_T = real("attention.threshold");
        m.attention.dropout_p = real("attention.dropout");
        m.attention.temperature_tau = real("attention.tau");
        m.attention.rad_at_eval = flag("attention.rad_at_eval");
        return m.normalized();
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.lr = real("train.lr");
        t.epochs = int(integer("train.epochs"));
        t.batch = int(integer("train.batch"));
        t.label_smoothing = real("train.label_smoothing");
        t.seed = RngState(seed()).child("train").key();
        const std::string adv = str("train.adversarial");
        if (adv == "pgd") {
            PgdTrainSpec p;
            p.steps = int(integer("train.adv_steps"));
            p.gamma = real("train.adv_gamma");
            p.patch_size = int(integer("train.adv_patch_size"));
            p.location = mask_location_from(str("train.adv_patch_location"));
            t.adversarial = p;
        } else if (adv != "off") {
            throw std::invalid_argument("config: train.adversarial must be off or pgd");
        }
        return t;
    }

private:
    static std::map<std::string, std::string> defaults() {
        return {
            {"seed", "0"},
            {"out", "runs/out"},
            {"jobs", "1"},
            {"data.count", "160"},
            {"data.img_h", "32"},
            {"data.img_w", "32"},
            {"data.classes", "8"},
            {"data.shapes_min", "2"},
            {"data.shapes_max", "5"},
            {"data.noise_std", "0.02"},
            {"data.claim_radius", "10"},
            {"data.manifest", ""},
            {"model.patch", "4"},
            {"model.dim", "32"},
            {"model.layers", "2"},
            {"model.heads", "2"},
            {"model.mixer", "global"},
            {"model.window", "4"},
            {"model.pool_window", "3"},
            {"attention.mode", "baseline"},
            {"attention.threshold", "0.3"},
            {"attention.dropout", "0.5"},
            {"attention.tau", "2.0"},
            {"attention.rad_at_eval", "1"},
            {"train.lr", "0.003"},
            {"train.epochs", "60"},
            {"train.batch", "8"},
            {"train.label_smoothing", "0.1"},
            {"train.val_count", "20"},
            {"train.adversarial", "off"},
            {"train.adv_steps", "10"},
            {"train.adv_gamma", "1.0"},
            {"train.adv_patch_size", "8"},
            {"train.adv_patch_location", "lower_right"},
            {"train.checkpoint", ""},
            {"attack.checkpoints", ""},
            {"attack.methods", "dag"},
            {"attack.targets", "permute"},
            {"attack.sizes", "8"},
            {"attack.locations", "lower_right"},
            {"attack.steps", "400"},
            {"attack.gamma", "1.0"},
            {"attack.gamma_pgd", "0.005"},
            {"attack.alpha", "0.5"},
            {"attack.eot_samples", "4"},
            {"attack.eot_translate", "2"},
            {"attack.eot_noise", "0.01"},
            {"attack.stripes", "4"},
            {"attack.eval_count", "20"},
            {"attack.save_images", "0"},
            {"attack.save_records", "1"},
            {"rf.checkpoints", ""},
            {"rf.q", "0.95"},
            {"rf.images", "64"},
            {"report.ledger", ""},
        };
    }

    std::map<std::string, std::string> kv_;
};

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << text;
}

inline std::string hash_hex(uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string fmt_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

inline void write_resolved(const ExperimentConfig& cfg, const std::string& command) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir());
    write_text((fs::path(cfg.out_dir()) / ("resolved-" + command + ".cfg")).string(),
               cfg.resolved_text());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dataset on disk
// ---------------------------------------------------------------------------

inline void cmd_gen_data(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    if (cfg.integer("data.count") <= 0) throw std::invalid_argument("gen-data: empty dataset");
    detail::write_resolved(cfg, "gen-data");
    auto data = generate_dataset(cfg.dataset_spec());
    fs::path out(cfg.out_dir());
    fs::create_directories(out / "images");
    fs::create_directories(out / "labels");
    std::ostringstream manifest;
    for (size_t i = 0; i < data.size(); ++i) {
        char img[32], lab[32];
        std::snprintf(img, sizeof img, "images/%05zu.ppm", i);
        std::snprintf(lab, sizeof lab, "labels/%05zu.pgm", i);
        write_ppm((out / img).string(), data[i].image);
        write_label_pgm((out / lab).string(), data[i].labels);
        manifest << i << "\t" << img << "\t" << lab << "\n";
    }
    detail::write_text((out / "manifest.tsv").string(), manifest.str());
    std::cout << "gen-data: wrote " << data.size() << " samples under " << out.string() << "\n";
}

inline std::vector<Sample> load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + manifest_path);
    fs::path base = fs::path(manifest_path).parent_path();
    std::vector<Sample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string idx, img, lab;
        if (!std::getline(ss, idx, '\t') || !std::getline(ss, img, '\t') ||
            !std::getline(ss, lab, '\t'))
            throw std::runtime_error("load_dataset: malformed manifest line: " + line);
        Sample s;
        s.image = read_ppm((base / img).string());
        s.labels = read_label_pgm((base / lab).string());
        out.push_back(std::move(s));
    }
    if (out.empty()) throw std::runtime_error("load_dataset: empty manifest");
    return out;
}

inline std::string manifest_path_of(const ExperimentConfig& cfg) {
    std::string m = cfg.str("data.manifest");
    if (m.empty()) m = (std::filesystem::path(cfg.out_dir()) / "manifest.tsv").string();
    return m;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

inline std::string cmd_train(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    detail::write_resolved(cfg, "train");
    auto data = load_dataset(manifest_path_of(cfg));
    int val_count = int(cfg.integer("train.val_count"));
    if (val_count < 0 || val_count >= int(data.size()))
        throw std::invalid_argument("train: val_count out of range");
    std::span<const Sample> train_set(data.data(), data.size() - size_t(val_count));
    std::span<const Sample> val_set(data.data() + data.size() - size_t(val_count),
                                    size_t(val_count));

    SegModel model = model_init(cfg.model_config(), RngState(cfg.seed()).child("modelinit").key());
    TrainCurves curves = train(model, train_set, val_set, cfg.train_config());

    fs::path out(cfg.out_dir());
    std::string tag = model.cfg.tag();
    std::string ckpt = cfg.str("train.checkpoint");
    if (ckpt.empty()) ckpt = (out / (tag + ".ckpt")).string();
    save_checkpoint(model, ckpt);

    std::ostringstream csv;
    csv << "epoch,train_loss,val_miou\n";
    for (size_t e = 0; e < curves.train_loss.size(); ++e)
        csv << e << "," << detail::fmt_metric(curves.train_loss[e]) << ","
            << detail::fmt_metric(curves.val_miou[e]) << "\n";
    detail::write_text((out / ("curves-" + tag + ".csv")).string(), csv.str());

    std::cout << "train: " << tag << " final loss " << detail::fmt_metric(curves.train_loss.back())
              << " val mIoU " << detail::fmt_metric(curves.val_miou.back()) << " -> " << ckpt
              << "\n";
    return ckpt;
}

// ---------------------------------------------------------------------------
// attack sweeps and the run ledger
// ---------------------------------------------------------------------------

struct LedgerRow {
    std::string run_id;
    std::string config_hash;
    std::string model;
    std::string method;
    std::string target;
    int size = 0;
    std::string location;
    double miou_gt = 0, miou_target = 0, pacc = 0;

    std::string csv() const {
        std::ostringstream os;
        os << run_id << "," << config_hash << "," << model << "," << method << "," << target << ","
           << size << "," << location << "," << detail::fmt_metric(miou_gt) << ","
           << detail::fmt_metric(miou_target) << "," << detail::fmt_metric(pacc);
        return os.str();
    }
    static const char* header() {
        return "run_id,config_hash,model,method,target,size,location,miou_gt,miou_target,pacc_masked";
    }
};

namespace detail {

inline std::set<std::string> existing_ledger_keys(const std::string& path) {
    std::set<std::string> keys;
    std::ifstream in(path);
    if (!in) return keys;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        auto c1 = line.find(',');
        if (c1 == std::string::npos) continue;
        auto c2 = line.find(',', c1 + 1);
        keys.insert(line.substr(0, c2));  // run_id,config_hash
    }
    return keys;
}

// index-ordered parallel map: worker count never changes results
template <class Fn>
inline void parallel_for(int n, int jobs, Fn fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::mutex m;
    int next = 0;
    for (int w = 0; w < std::min(jobs, n); ++w)
        pool.emplace_back([&] {
            for (;;) {
                int i;
                {
                    std::lock_guard<std::mutex> lk(m);
                    if (next >= n) return;
                    i = next++;
                }
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

}  // namespace detail

inline void cmd_attack(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    detail::write_resolved(cfg, "attack");
    auto ckpts = cfg.list("attack.checkpoints");
    if (ckpts.empty()) throw std::invalid_argument("attack: attack.checkpoints is empty");
    auto methods = cfg.list("attack.methods");
    auto targets = cfg.list("attack.targets");
    auto sizes = cfg.list("attack.sizes");
    auto locations = cfg.list("attack.locations");
    for (const auto& m : methods) attack_method_from(m);  // validate before any compute
    for (const auto& t : targets) target_mode_from(t);
    for (const auto& l : locations) mask_location_from(l);

    auto data = load_dataset(manifest_path_of(cfg));
    int eval_count = int(cfg.integer("attack.eval_count"));
    if (eval_count < 1 || eval_count > int(data.size()))
        throw std::invalid_argument("attack: eval_count out of range");
    std::span<const Sample> eval_set(data.data() + data.size() - size_t(eval_count),
                                     size_t(eval_count));

    fs::path out(cfg.out_dir());
    fs::create_directories(out);
    std::string ledger_path = (out / "ledger.csv").string();
    auto seen = detail::existing_ledger_keys(ledger_path);
    std::ofstream ledger(ledger_path, std::ios::app);
    if (!ledger) throw std::runtime_error("attack: cannot open ledger " + ledger_path);
    if (seen.empty()) ledger << LedgerRow::header() << "\n";
    std::ofstream timings((out / "timings.csv").string(), std::ios::app);
    std::ofstream metrics_csv;
    {
        std::string p = (out / "metrics.csv").string();
        bool fresh = !fs::exists(p) || fs::file_size(p) == 0;
        metrics_csv.open(p, std::ios::app);
        if (fresh) metrics_csv << "image_id,mode,method,miou_gt,miou_target,pacc_masked\n";
    }

    RngState master(cfg.seed());
    const std::string cfg_hash = detail::hash_hex(cfg.hash());

    for (const auto& ckpt : ckpts) {
        SegModel model = load_checkpoint(ckpt);
        const std::string tag = model.cfg.tag();
        const int H = model.cfg.img_h, W = model.cfg.img_w;
        for (const auto& method_s : methods) {
            AttackMethod method = attack_method_from(method_s);
            if (needs_attention_trace(method) && model.cfg.mixer == MixerKind::pool) {
                std::cerr << "attack: skipping " << method_s << " on " << tag
                          << " (no attention matrix to target)\n";
                continue;
            }
            for (const auto& target_s : targets)
                for (const auto& size_s : sizes)
                    for (const auto& loc_s : locations) {
                        const int size = std::stoi(size_s);
                        TargetMode tmode = target_mode_from(target_s);
                        MaskLocation loc = mask_location_from(loc_s);
                        std::string run_id = tag + "/" + method_s + "/" + target_s + "/m" + size_s +
                                             "/" + loc_s;
                        if (seen.count(run_id + "," + cfg_hash)) {
                            std::cerr << "attack: ledger already has " << run_id
                                      << " for this config hash; skipping\n";
                            continue;
                        }
                        auto t0 = std::chrono::steady_clock::now();
                        std::vector<AttackResult> results(size_t(eval_count), AttackResult{});
                        std::vector<AttackSpec> specs(size_t(eval_count), AttackSpec{});
                        detail::parallel_for(eval_count, cfg.jobs(), [&](int i) {
                            const Sample& s = eval_set[size_t(i)];
                            AttackSpec spec;
                            spec.method = method;
                            spec.steps = int(cfg.integer("attack.steps"));
                            spec.gamma = method == AttackMethod::pgd ? cfg.real("attack.gamma_pgd")
                                                                     : cfg.real("attack.gamma");
                            spec.alpha = cfg.real("attack.alpha");
                            spec.eot.samples = int(cfg.integer("attack.eot_samples"));
                            spec.eot.max_translate = int(cfg.integer("attack.eot_translate"));
                            spec.eot.noise_std = cfg.real("attack.eot_noise");
                            // masks and targets depend only on (axis value, image), so
                            // adding another sweep axis never changes them
                            RngState mask_rng =
                                master.child("mask-" + size_s + "-" + loc_s, uint64_t(i));
                            spec.mask = make_patch_mask(H, W, size, loc, mask_rng);
                            RngState target_rng = master.child("target-" + target_s, uint64_t(i));
                            spec.target =
                                tmode == TargetMode::permute
                                    ? permute_target(s.labels, model.cfg.classes, target_rng)
                                    : strip_target(s.labels, model.cfg.classes,
                                                   int(cfg.integer("attack.stripes")), target_rng);
                            RngState run_rng = master.child("run-" + run_id, uint64_t(i));
                            results[size_t(i)] = attack_run(model, s.image, s.labels, spec, run_rng);
                            specs[size_t(i)] = spec;
                        });
                        double secs =
                            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                                .count();

                        LedgerRow row;
                        row.run_id = run_id;
                        row.config_hash = cfg_hash;
                        row.model = tag;
                        row.method = method_s;
                        row.target = target_s;
                        row.size = size;
                        row.location = loc_s;
                        for (int i = 0; i < eval_count; ++i) {
                            const auto& m = results[size_t(i)].metrics;
                            row.miou_gt += m.miou_gt;
                            row.miou_target += m.miou_target;
                            row.pacc += m.pacc_masked;
                            metrics_csv << i << "," << target_s << "," << method_s << ","
                                        << detail::fmt_metric(m.miou_gt) << ","
                                        << detail::fmt_metric(m.miou_target) << ","
                                        << detail::fmt_metric(m.pacc_masked) << "\n";
                        }
                        row.miou_gt /= eval_count;
                        row.miou_target /= eval_count;
                        row.pacc /= eval_count;
                        ledger << row.csv() << "\n";
                        ledger.flush();
                        timings << run_id << "," << detail::fmt_metric(secs) << "\n";

                        if (cfg.flag("attack.save_records")) {
                            fs::path rec_dir = out / "records" / tag / method_s;
                            fs::create_directories(rec_dir);
                            for (int i = 0; i < eval_count; ++i) {
                                nlohmann::json j;
                                j["run_id"] = run_id;
                                j["image"] = i;
                                j["method"] = method_s;
                                j["target"] = target_s;
                                j["patch_size"] = size;
                                j["location"] = loc_s;
                                j["steps"] = specs[size_t(i)].steps;
                                j["gamma"] = specs[size_t(i)].gamma;
                                j["alpha"] = specs[size_t(i)].alpha;
                                j["iterations_run"] = results[size_t(i)].iterations_run;
                                j["loss_trace"] = results[size_t(i)].loss_trace;
                                j["miou_gt"] = results[size_t(i)].metrics.miou_gt;
                                j["miou_target"] = results[size_t(i)].metrics.miou_target;
                                j["pacc_masked"] = results[size_t(i)].metrics.pacc_masked;
                                char name[64];
                                std::snprintf(name, sizeof name, "%s-m%d-%s-img%03d.json",
                                              target_s.c_str(), size, loc_s.c_str(), i);
                                std::ofstream rec((rec_dir / name).string());
                                rec << j.dump(2) << "\n";
                            }
                        }
                        if (cfg.flag("attack.save_images")) {
                            fs::path adv_dir = out / "adv" / tag / method_s;
                            fs::create_directories(adv_dir);
                            for (int i = 0; i < eval_count; ++i) {
                                char name[64];
                                std::snprintf(name, sizeof name, "%s-m%d-%s-img%03d.ppm",
                                              target_s.c_str(), size, loc_s.c_str(), i);
                                write_ppm((adv_dir / name).string(), results[size_t(i)].adv_image);
                            }
                        }
                        std::cout << "attack: " << run_id << " miou_target "
                                  << detail::fmt_metric(row.miou_target) << " pacc "
                                  << detail::fmt_metric(row.pacc) << "\n";
                    }
        }
    }
}

// ---------------------------------------------------------------------------
// receptive fields
// ---------------------------------------------------------------------------

inline void cmd_rf(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    detail::write_resolved(cfg, "rf");
    auto ckpts = cfg.list("rf.checkpoints");
    if (ckpts.empty()) throw std::invalid_argument("rf: rf.checkpoints is empty");
    double q = cfg.real("rf.q");
    auto data = load_dataset(manifest_path_of(cfg));
    int count = std::min<int>(int(cfg.integer("rf.images")), int(data.size()));
    std::vector<Tensor> images;
    for (int i = 0; i < count; ++i) images.push_back(data[size_t(i)].image);

    fs::path out(cfg.out_dir());
    fs::create_directories(out);
    std::ostringstream csv;
    csv << "model,q,radius\n";
    for (const auto& ckpt : ckpts) {
        SegModel model = load_checkpoint(ckpt);
        RfMap map = rf_average(model, images);
        double radius = rf_effective_radius(map, q);
        std::string tag = model.cfg.tag();
        write_pgm((out / ("rf-" + tag + ".pgm")).string(), rf_heatmap_u8(map), map.h, map.w);
        csv << tag << "," << detail::fmt_metric(q) << "," << detail::fmt_metric(radius) << "\n";
        std::cout << "rf: " << tag << " radius(q=" << q << ") = " << radius << "\n";
    }
    detail::write_text((out / "rf-radii.csv").string(), csv.str());
}

// ---------------------------------------------------------------------------
// markdown report over the ledger
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<LedgerRow> read_ledger(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("report: cannot open ledger " + path);
    std::vector<LedgerRow> rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string f[10];
        for (int i = 0; i < 10; ++i)
            if (!std::getline(ss, f[i], ',')) throw std::runtime_error("report: bad ledger row");
        LedgerRow r;
        r.run_id = f[0];
        r.config_hash = f[1];
        r.model = f[2];
        r.method = f[3];
        r.target = f[4];
        r.size = std::stoi(f[5]);
        r.location = f[6];
        r.miou_gt = std::stod(f[7]);
        r.miou_target = std::stod(f[8]);
        r.pacc = std::stod(f[9]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// mean miou_target pivot over (row key, model), with a baseline-vs-ram delta
// column when both variants of a mixer are present
inline void pivot_table(std::ostream& os, const std::vector<LedgerRow>& rows,
                        const std::string& title,
                        const std::function<std::string(const LedgerRow&)>& key_of) {
    std::set<std::string> models, keys;
    std::map<std::pair<std::string, std::string>, std::pair<double, int>> cells;
    for (const auto& r : rows) {
        models.insert(r.model);
        std::string k = key_of(r);
        keys.insert(k);
        auto& c = cells[{k, r.model}];
        c.first += r.miou_target;
        c.second += 1;
    }
    std::vector<std::pair<std::string, std::string>> deltas;  // (baseline tag, ram tag)
    for (const auto& m : models) {
        auto pos = m.find("-baseline");
        if (pos == std::string::npos) continue;
        std::string ram = m.substr(0, pos) + "-ram";
        if (models.count(ram)) deltas.emplace_back(m, ram);
    }

    os << "## " << title << "\n\n|  |";
    for (const auto& m : models) os << " " << m << " |";
    for (const auto& [b, r] : deltas) os << " delta " << b.substr(0, b.find('-')) << " |";
    os << "\n|--|";
    for (size_t i = 0; i < models.size() + deltas.size(); ++i) os << "--|";
    os << "\n";
    for (const auto& k : keys) {
        os << "| " << k << " |";
        auto cell_of = [&](const std::string& m) -> std::optional<double> {
            auto it = cells.find({k, m});
            if (it == cells.end() || it->second.second == 0) return std::nullopt;
            return it->second.first / it->second.second;
        };
        for (const auto& m : models) {
            auto v = cell_of(m);
            os << " " << (v ? fmt_metric(*v) : std::string("—")) << " |";
        }
        for (const auto& [b, r] : deltas) {
            auto vb = cell_of(b), vr = cell_of(r);
            os << " " << (vb && vr ? fmt_metric(*vb - *vr) : std::string("—")) << " |";
        }
        os << "\n";
    }
    os << "\n";
}

}  // namespace detail

inline void cmd_report(const ExperimentConfig& cfg) {
    namespace fs = std::filesystem;
    detail::write_resolved(cfg, "report");
    std::string ledger = cfg.str("report.ledger");
    if (ledger.empty()) ledger = (fs::path(cfg.out_dir()) / "ledger.csv").string();
    auto rows = detail::read_ledger(ledger);
    if (rows.empty()) throw std::invalid_argument("report: ledger is empty");

    std::ostringstream md;
    md << "# Attack sweep report\n\nMean target mIoU per cell (lower = more robust model).\n\n";
    detail::pivot_table(md, rows, "method x model",
                        [](const LedgerRow& r) { return r.method + " (" + r.target + ")"; });
    detail::pivot_table(md, rows, "patch size x model",
                        [](const LedgerRow& r) { return "m=" + std::to_string(r.size); });
    detail::pivot_table(md, rows, "location x model",
                        [](const LedgerRow& r) { return r.location; });
    std::string path = (fs::path(cfg.out_dir()) / "report.md").string();
    detail::write_text(path, md.str());
    std::cout << "report: wrote " << path << "\n";
}

}  // namespace ramlab
