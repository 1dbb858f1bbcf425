// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criterion 9 additionally drives the installed CLI binary when its
// path is passed as argv[1].

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "ramlab/attacks.hpp"
#include "ramlab/experiment.hpp"
#include "ramlab/gradcheck.hpp"
#include "ramlab/receptive_field.hpp"
#include "ramlab/train.hpp"

using namespace ramlab;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

Tensor random_tensor(std::vector<int> shape, RngState& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// ---------------------------------------------------------------------------
// criterion 1: MAS bound theorem
// ---------------------------------------------------------------------------

void criterion_1() {
    auto t0 = clock_type::now();
    RngState rng(20240615);
    int trials = 0;
    double worst_excess = -1e9, worst_tightness = 1e9;
    std::vector<std::string> skipped;
    for (int n : {2, 16, 64, 256}) {
        for (double t : {0.2, 0.3, 0.5}) {
            if (t < 1.0 / n) {
                // max softmax entry of any row is >= 1/N, so the bound is
                // unsatisfiable below that; the guarantee needs
                // log((N-1)T/(1-T)) >= 0, i.e. T >= 1/N
                skipped.push_back("(N=" + std::to_string(n) + ",T=" + std::to_string(t) + ")");
                continue;
            }
            for (int rep = 0; rep < 100; ++rep) {
                Tensor a = random_tensor({n, n}, rng, -50.0, 50.0);
                Tensor m = softmax_rows(mas_transform(a, t, n));
                for (int64_t i = 0; i < m.size(); ++i)
                    worst_excess = std::max(worst_excess, m[i] - t);
                ++trials;
            }
            // tightness: one entry +1e9, rest -1e9 per row
            Tensor a(std::vector<int>{n, n});
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) a.at(i, j) = (j == i % n) ? 1e9 : -1e9;
            Tensor m = softmax_rows(mas_transform(a, t, n));
            for (int i = 0; i < n; ++i) {
                double mx = m.at(i, 0);
                for (int j = 1; j < n; ++j) mx = std::max(mx, m.at(i, j));
                worst_tightness = std::min(worst_tightness, t - std::fabs(mx - t));
            }
            for (int i = 0; i < n; ++i) {
                double mx = m.at(i, 0);
                for (int j = 1; j < n; ++j) mx = std::max(mx, m.at(i, j));
                if (std::fabs(mx - t) > 1e-6) worst_tightness = -1;
            }
        }
    }
    double secs = seconds_since(t0);
    bool pass = trials == 1000 && worst_excess <= 1e-9 && worst_tightness >= 0 && secs < 10.0;
    std::string detail = "MAS bound over " + std::to_string(trials) +
                         " random matrices: max excess over T = " + std::to_string(worst_excess) +
                         ", saturated construction within 1e-6 of T; " + std::to_string(secs) +
                         "s";
    if (!skipped.empty()) {
        detail += " [skipped T<1/N pairs:";
        for (const auto& s : skipped) detail += " " + s;
        detail += " — unsatisfiable: softmax row max >= 1/N]";
    }
    report(1, pass, detail);
}

// ---------------------------------------------------------------------------
// criterion 2: gradient correctness
// ---------------------------------------------------------------------------

void criterion_2() {
    auto t0 = clock_type::now();
    RngState rng(7);
    double worst_op = 0.0;
    auto track_op = [&](double err) { worst_op = std::max(worst_op, err); };

    Tensor a = random_tensor({5, 7}, rng, -1, 1);
    Tensor b = random_tensor({7, 3}, rng, -1, 1);
    track_op(finite_diff_check([&](Tape&, const Tensor& x) { return sum(matmul(x, b)); }, a));
    Tensor bn = random_tensor({3, 7}, rng, -1, 1);
    track_op(finite_diff_check([&](Tape&, const Tensor& x) { return sum(matmul_nt(x, bn)); }, a));
    Tensor sq = random_tensor({6, 6}, rng, -3, 3);
    track_op(finite_diff_check(
        [](Tape&, const Tensor& x) { return sum(mul(softmax_rows(x), softmax_rows(x))); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(saturate(x)); }, sq));
    track_op(finite_diff_check(
        [](Tape&, const Tensor& x) { return sum(mul(saturate(x), saturate(x))); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(mul(x, x)); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(exp(x)); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(gelu(x)); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(relu(x)); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(abs(x)); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return variance(x); }, sq));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return mean(mul(x, x)); }, sq));
    Tensor pos = random_tensor({4, 4}, rng, 0.5, 3.0);
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(log(x)); }, pos));
    track_op(finite_diff_check([](Tape&, const Tensor& x) { return sum(clamp_min(x, 1.0)); }, pos));
    Tensor g8 = random_tensor({8}, rng, 0.5, 1.5);
    Tensor b8 = random_tensor({8}, rng, -1, 1);
    Tensor x38 = random_tensor({3, 8}, rng, -1, 1);
    track_op(finite_diff_check(
        [&](Tape&, const Tensor& x) {
            return sum(mul(layernorm(x, g8, b8), layernorm(x, g8, b8)));
        },
        x38));
    track_op(finite_diff_check(
        [&](Tape&, const Tensor& x) { return sum(mul(transpose(x), transpose(x))); }, a));
    track_op(finite_diff_check(
        [&](Tape&, const Tensor& x) {
            Tensor g = gather_rows(x, {2, 0, 2});
            return sum(mul(g, g));
        },
        a));
    track_op(finite_diff_check(
        [&](Tape&, const Tensor& x) {
            Tensor s = select_per_row(x, {1, 0, 2, 1, 0});
            return sum(mul(s, s));
        },
        random_tensor({5, 3}, rng, -1, 1)));
    track_op(finite_diff_check(
        [&](Tape&, const Tensor& x) {
            Tensor c = concat_cols({x, x});
            return sum(mul(c, c));
        },
        a));

    // full default-size model: input gradient and 20 sampled weight gradients
    SegModelConfig cfg;
    SegModel model = model_init(cfg, 3);
    DatasetSpec dspec;
    dspec.count = 1;
    dspec.seed = 5;
    Sample s = generate_dataset(dspec)[0];
    double worst_model = 0.0;
    {
        auto f = [&](Tape&, const Tensor& x) {
            ForwardOpts opts;
            ForwardOut out = model_forward(model, x, opts, RngState(3));
            return pixel_cross_entropy(out, s.labels);
        };
        std::vector<int64_t> coords;
        RngState crng(17);
        for (int k = 0; k < 60; ++k) coords.push_back(crng.uniform_int(0, s.image.size() - 1));
        worst_model = std::max(worst_model, finite_diff_check_coords(f, s.image, coords));
    }
    {
        // perturb one weight tensor at a time through a model copy
        RngState crng(19);
        for (int k = 0; k < 20; ++k) {
            size_t pi = size_t(crng.uniform_int(0, int64_t(model.params.size()) - 1));
            const Tensor& w = model.params[pi].value;
            int64_t ci = crng.uniform_int(0, w.size() - 1);
            auto f = [&](Tape& tape, const Tensor& x) {
                SegModel m2 = model;
                m2.params[pi].value = x;
                ForwardOpts opts;
                ForwardOut out = model_forward(m2, s.image, opts, RngState(3));
                return pixel_cross_entropy(out, s.labels);
            };
            worst_model = std::max(worst_model, finite_diff_check_coords(f, w, {ci}));
        }
    }
    double secs = seconds_since(t0);
    bool pass = worst_op <= 1e-5 && worst_model <= 1e-4 && secs < 60.0;
    report(2, pass,
           "op gradients max rel err " + std::to_string(worst_op) + " (tol 1e-5), model " +
               std::to_string(worst_model) + " (tol 1e-4); " + std::to_string(secs) + "s");
}

// ---------------------------------------------------------------------------
// criterion 3: Algorithm 1 contract over all methods and targets
// ---------------------------------------------------------------------------

void criterion_3() {
    auto t0 = clock_type::now();
    DatasetSpec dspec;
    dspec.count = 37;
    dspec.seed = 11;
    auto data = generate_dataset(dspec);
    std::span<const Sample> train_set(data.data(), 32);
    std::span<const Sample> eval_set(data.data() + 32, 5);

    SegModelConfig cfg;
    SegModel model = model_init(cfg, 21);
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch = 8;
    tc.seed = 2;
    train(model, train_set, {}, tc);

    bool ok = true;
    std::string why;
    int cells = 0;
    for (AttackMethod method :
         {AttackMethod::pgd, AttackMethod::dag, AttackMethod::ipatch, AttackMethod::ssap,
          AttackMethod::patchfool, AttackMethod::attnfool, AttackMethod::eot,
          AttackMethod::maxvardag, AttackMethod::maxattndag}) {
        for (TargetMode tmode : {TargetMode::permute, TargetMode::strip}) {
            for (size_t i = 0; i < eval_set.size(); ++i) {
                RngState rng = RngState(77).child("c3", uint64_t(cells) * 100 + i);
                AttackSpec spec;
                spec.method = method;
                spec.steps = 50;
                spec.gamma = default_gamma(method);
                spec.mask = make_patch_mask(32, 32, 8, MaskLocation::lower_right, rng);
                spec.target = tmode == TargetMode::permute
                                  ? permute_target(eval_set[i].labels, 8, rng)
                                  : strip_target(eval_set[i].labels, 8, 4, rng);
                AttackResult res =
                    attack_run(model, eval_set[i].image, eval_set[i].labels, spec, rng.child("run"));
                for (int pi = 0; pi < 32 && ok; ++pi)
                    for (int pj = 0; pj < 32; ++pj) {
                        if (spec.mask.contains(pi, pj)) continue;
                        for (int c = 0; c < 3; ++c) {
                            int64_t k = (int64_t(pi) * 32 + pj) * 3 + c;
                            if (res.adv_image[k] != eval_set[i].image[k]) {
                                ok = false;
                                why = "off-mask pixel changed under " +
                                      std::string(to_string(method));
                                break;
                            }
                        }
                        if (!ok) break;
                    }
                for (double sl : res.step_linf)
                    if (sl != 0.0 && sl != spec.gamma) {
                        ok = false;
                        why = "applied step L-inf " + std::to_string(sl) + " != gamma under " +
                              std::string(to_string(method));
                    }
                if (!ok) break;
            }
            ++cells;
            if (!ok) break;
        }
        if (!ok) break;
    }
    double secs = seconds_since(t0);
    bool pass = ok && secs < 600.0;
    report(3, pass,
           ok ? ("mask confinement exact and step L-inf = gamma over 9 methods x 2 targets x 5 "
                 "images at 50 steps; " +
                 std::to_string(secs) + "s")
              : why);
}

// ---------------------------------------------------------------------------
// criterion 4: the six hand-derived loss oracles
// ---------------------------------------------------------------------------

void criterion_4() {
    bool pass = true;
    std::string why;
    auto expect = [&](const char* name, double got, double want) {
        if (std::fabs(got - want) > 1e-4) {
            pass = false;
            why += std::string(name) + " got " + std::to_string(got) + " want " +
                   std::to_string(want) + "; ";
        }
    };
    {
        Tensor probs({2, 2}, {0.7, 0.3, 0.2, 0.8});
        LabelMap t(1, 2);
        t.v = {1, 1};
        expect("pgd", value(loss_pgd(probs, t)), -1.4271);
    }
    {
        Tensor probs({1, 2}, {0.7, 0.3});
        LabelMap g(1, 1), t(1, 1);
        g.v = {0};
        t.v = {1};
        expect("dag", value(loss_dag(probs, g, t).loss), -0.4);
    }
    {
        Tensor probs({1, 2}, {0.2, 0.8});
        LabelMap t(1, 1);
        t.v = {1};
        expect("ipatch", value(loss_ipatch(probs, t)), -0.2231);
    }
    {
        Tensor probs({2, 2}, {0.7, 0.3, 0.2, 0.8});
        LabelMap t(1, 2);
        t.v = {1, 1};
        expect("ssap", value(loss_ssap(probs, t)), -0.7136);
    }
    {
        std::vector<double> betas;
        auto out = patchfool_combine({1.0, 0.0}, {{-2.0, 0.0}}, 1.0, &betas);
        expect("patchfool.beta", betas[0], -2.0);
        expect("patchfool.term0", out[0] - 1.0, 0.0);  // combined minus g_ce: the attention term
        expect("patchfool.term1", out[1], 0.0);
    }
    {
        AttentionTrace trace;
        AttentionTraceEntry e;
        e.layer = 0;
        e.head = 0;
        e.token_ids = {0, 1};
        e.weights = Tensor({2, 2}, {1, 0, 0, 1});
        trace.entries.push_back(e);
        expect("maxvardag.var", value(attention_variance(trace, 1)), 0.25);
    }
    report(4, pass, pass ? "six hand-derived loss values reproduce within 1e-4" : why);
}

// ---------------------------------------------------------------------------
// criteria 5-7: trained-model orderings (shared protocol)
// ---------------------------------------------------------------------------

struct Protocol {
    DatasetSpec data;
    std::vector<Sample> samples;
    std::span<const Sample> train_set, val_set, eval_set;
    int heads = 4;
    int epochs = 60;
    int attack_steps = 400;
    int patch_side = 10;
    std::vector<uint64_t> seeds{1, 2, 3};

    Protocol() {
        data.count = 168;
        data.seed = 20240601;
        samples = generate_dataset(data);
        train_set = std::span(samples.data(), 128);
        val_set = std::span(samples.data() + 128, 20);
        eval_set = std::span(samples.data() + 148, 20);
    }

    SegModelConfig model_cfg(MixerKind mixer, AttentionMode mode) const {
        SegModelConfig cfg;
        cfg.mixer = mixer;
        cfg.heads = heads;
        cfg.attention.mode = mode;
        return cfg;
    }

    SegModel train_model(MixerKind mixer, AttentionMode mode, uint64_t seed) const {
        SegModel m = model_init(model_cfg(mixer, mode), seed);
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch = 8;
        tc.seed = seed + 1000;
        train(m, train_set, {}, tc);
        return m;
    }

    double clean_score(const SegModel& m) const {
        return clean_miou(m, val_set, RngState(4242));
    }

    // mean target mIoU over the eval set, images attacked in parallel
    double attacked_target_miou(const SegModel& m, AttackMethod method) const {
        const int n = int(eval_set.size());
        std::vector<double> vals(size_t(n), 0.0);
        detail::parallel_for(n, int(std::thread::hardware_concurrency()), [&](int i) {
            RngState rng = RngState(9000).child("atk", uint64_t(i));
            AttackSpec spec;
            spec.method = method;
            spec.steps = attack_steps;
            spec.gamma = default_gamma(method);
            spec.mask = make_patch_mask(32, 32, patch_side, MaskLocation::lower_right, rng);
            spec.target = permute_target(eval_set[size_t(i)].labels, 8, rng);
            vals[size_t(i)] = attack_run(m, eval_set[size_t(i)].image, eval_set[size_t(i)].labels,
                                         spec, rng.child("run"))
                                  .metrics.miou_target;
        });
        double s = 0;
        for (double v : vals) s += v;
        return s / n;
    }
};

struct VariantStats {
    double clean = 0;
    std::map<AttackMethod, double> tiou;  // seed-averaged
};

VariantStats evaluate_variant(const Protocol& proto, MixerKind mixer, AttentionMode mode,
                              const std::vector<AttackMethod>& methods) {
    VariantStats out;
    for (uint64_t seed : proto.seeds) {
        SegModel m = proto.train_model(mixer, mode, seed);
        out.clean += proto.clean_score(m) / double(proto.seeds.size());
        for (AttackMethod meth : methods)
            out.tiou[meth] += proto.attacked_target_miou(m, meth) / double(proto.seeds.size());
    }
    return out;
}

void criteria_5_6_7() {
    Protocol proto;
    const std::vector<AttackMethod> trio{AttackMethod::dag, AttackMethod::pgd,
                                         AttackMethod::maxattndag};

    // criterion 5: mixer ordering under DAG-Permute + receptive-field radii
    {
        auto t0 = clock_type::now();
        std::map<MixerKind, double> tiou, radius;
        for (MixerKind mixer : {MixerKind::pool, MixerKind::window, MixerKind::global}) {
            double acc = 0, rad = 0;
            for (uint64_t seed : proto.seeds) {
                SegModel m = proto.train_model(mixer, AttentionMode::baseline, seed);
                acc += proto.attacked_target_miou(m, AttackMethod::dag);
                std::vector<Tensor> imgs;
                for (const auto& s : proto.eval_set) imgs.push_back(s.image);
                rad += rf_effective_radius(rf_average(m, imgs), 0.95);
            }
            tiou[mixer] = acc / double(proto.seeds.size());
            radius[mixer] = rad / double(proto.seeds.size());
        }
        double secs = seconds_since(t0);
        bool order_tiou = tiou[MixerKind::pool] < tiou[MixerKind::window] &&
                          tiou[MixerKind::window] < tiou[MixerKind::global];
        bool order_rad = radius[MixerKind::pool] < radius[MixerKind::window] &&
                         radius[MixerKind::window] < radius[MixerKind::global];
        bool pass = order_tiou && order_rad && secs < 1800.0;
        char buf[360];
        std::snprintf(buf, sizeof buf,
                      "DAG-Permute tIoU pool %.4f < window %.4f < global %.4f : %s; rf radius "
                      "pool %.2f < window %.2f < global %.2f : %s; %.0fs",
                      tiou[MixerKind::pool], tiou[MixerKind::window], tiou[MixerKind::global],
                      order_tiou ? "yes" : "NO", radius[MixerKind::pool],
                      radius[MixerKind::window], radius[MixerKind::global],
                      order_rad ? "yes" : "NO", secs);
        report(5, pass, buf);
    }

    // criteria 6 and 7 share the global-mixer variant stats
    VariantStats base = evaluate_variant(proto, MixerKind::global, AttentionMode::baseline, trio);
    VariantStats ram = evaluate_variant(proto, MixerKind::global, AttentionMode::ram, trio);
    {
        bool strict = true;
        std::string parts;
        for (AttackMethod meth : trio) {
            bool lower = ram.tiou[meth] < base.tiou[meth];
            strict = strict && lower;
            char buf[96];
            std::snprintf(buf, sizeof buf, "%s %.4f->%.4f%s ", to_string(meth), base.tiou[meth],
                          ram.tiou[meth], lower ? "" : "(NOT LOWER)");
            parts += buf;
        }
        double clean_drop = base.clean - ram.clean;
        bool pass = strict && clean_drop <= 0.05;
        char buf[256];
        std::snprintf(buf, sizeof buf, "RAM vs baseline target-mIoU: %sclean %.4f->%.4f drop %.4f (<=0.05)",
                      parts.c_str(), base.clean, ram.clean, clean_drop);
        report(6, pass, buf);
    }
    {
        VariantStats rad = evaluate_variant(proto, MixerKind::global, AttentionMode::rad, trio);
        VariantStats mas = evaluate_variant(proto, MixerKind::global, AttentionMode::mas, trio);
        auto pooled = [&](const VariantStats& v) {
            double s = 0;
            for (AttackMethod meth : trio) s += v.tiou.at(meth);
            return s / double(trio.size());
        };
        double b = pooled(base), r = pooled(rad), m = pooled(mas), rm = pooled(ram);
        const double tol = 0.01;  // seed-noise tie band
        bool pass = (b >= r - tol) && (r >= m - tol) && (m >= rm - tol) && (m < b);
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "ablation pooled tIoU baseline %.4f >= rad %.4f >= mas %.4f >= ram %.4f "
                      "(ties within %.2f), mas < baseline strict: %s",
                      b, r, m, rm, tol, m < b ? "yes" : "NO");
        report(7, pass, buf);
    }
}

// ---------------------------------------------------------------------------
// criterion 8: metric oracles vs brute force
// ---------------------------------------------------------------------------

void criterion_8() {
    RngState rng(23);
    bool pass = true;
    for (int t = 0; t < 50 && pass; ++t) {
        LabelMap x(8, 8), y(8, 8);
        for (auto& v : x.v) v = int(rng.uniform_int(0, 7));
        for (auto& v : y.v) v = int(rng.uniform_int(0, 7));
        auto mask = make_patch_mask(8, 8, 3, MaskLocation::random_loc, rng);

        double total = 0;
        int present = 0;
        for (int c = 0; c < 8; ++c) {
            int64_t inter = 0, uni = 0;
            for (size_t i = 0; i < x.v.size(); ++i) {
                bool p = x.v[i] == c, r = y.v[i] == c;
                if (p && r) ++inter;
                if (p || r) ++uni;
            }
            if (uni > 0) {
                total += double(inter) / double(uni);
                ++present;
            }
        }
        if (miou(x, y, 8) != total / present) pass = false;

        int64_t num = 0, den = 0;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                if (mask.contains(i, j)) continue;
                ++den;
                if (x.at(i, j) == y.at(i, j)) ++num;
            }
        if (pacc_masked(x, y, mask) != double(num) / double(den)) pass = false;
    }
    report(8, pass, pass ? "mIoU and masked pAcc match brute-force recomputation exactly on 50 "
                           "random 8x8 maps"
                         : "metric mismatch vs brute force");
}

// ---------------------------------------------------------------------------
// criterion 9: CLI determinism
// ---------------------------------------------------------------------------

std::string file_bytes(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) return "<missing " + p + ">";
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void criterion_9(const std::string& cli_path) {
    fs::path root = fs::temp_directory_path() / "ramlab_acceptance_c9";
    fs::remove_all(root);
    fs::create_directories(root);
    auto cfg_body = [&](const fs::path& out) {
        return "seed=33\nout=" + out.string() +
               "\ndata.count=26\ndata.img_h=16\ndata.img_w=16\ndata.classes=6\n"
               "data.shapes_min=2\ndata.shapes_max=2\ndata.claim_radius=6\n"
               "model.dim=16\nmodel.window=2\ntrain.epochs=2\ntrain.val_count=4\n"
               "attack.steps=5\nattack.eval_count=3\nattack.methods=dag,pgd\n"
               "attack.targets=permute,strip\nattack.save_records=0\n";
    };

    bool pass = true;
    std::string detail;
    std::vector<std::string> ledgers;
    for (int run = 0; run < 2; ++run) {
        fs::path out = root / ("run" + std::to_string(run));
        fs::path cfgp = root / ("c" + std::to_string(run) + ".cfg");
        {
            std::ofstream c(cfgp);
            c << cfg_body(out);
        }
        if (!cli_path.empty()) {
            std::string base = std::string(cli_path) + " ";
            std::string redirect = " >> " + (root / "cli.log").string() + " 2>&1";
            if (std::system((base + "gen-data --config " + cfgp.string() + redirect).c_str()) ||
                std::system((base + "train --config " + cfgp.string() + redirect).c_str())) {
                pass = false;
                detail = "CLI invocation failed (see " + (root / "cli.log").string() + ")";
                break;
            }
            std::string ckpt = (out / "global-baseline.ckpt").string();
            {
                std::ofstream c(cfgp, std::ios::app);
                c << "attack.checkpoints=" << ckpt << "\n";
            }
            if (std::system((base + "attack --config " + cfgp.string() + redirect).c_str())) {
                pass = false;
                detail = "CLI attack failed";
                break;
            }
        } else {
            ExperimentConfig cfg = ExperimentConfig::from_file(cfgp.string());
            cmd_gen_data(cfg);
            std::string ckpt = cmd_train(cfg);
            {
                std::ofstream c(cfgp, std::ios::app);
                c << "attack.checkpoints=" << ckpt << "\n";
            }
            cmd_attack(ExperimentConfig::from_file(cfgp.string()));
        }
        ledgers.push_back(file_bytes((out / "ledger.csv").string()));
    }
    if (pass) {
        pass = ledgers.size() == 2 && !ledgers[0].empty() && ledgers[0] == ledgers[1];
        detail = pass ? std::string("identical config+seed reproduced the ledger byte-identically") +
                            (cli_path.empty() ? " (library path)" : " (CLI binary)")
                      : "ledger bytes differ between identical runs";
    }
    fs::remove_all(root);
    report(9, pass, detail);
}

}  // namespace

int main(int argc, char** argv) {
    std::string cli = argc > 1 ? argv[1] : "";
    auto t0 = clock_type::now();
    criterion_1();
    criterion_2();
    criterion_4();
    criterion_8();
    criterion_9(cli);
    criterion_3();
    criteria_5_6_7();
    std::printf("acceptance finished in %.0fs: %d criterion(s) failed\n", seconds_since(t0),
                failures);
    return failures == 0 ? 0 : 1;
}
