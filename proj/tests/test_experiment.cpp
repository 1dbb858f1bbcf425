#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "ramlab/experiment.hpp"

using namespace ramlab;
using Catch::Approx;

namespace {
namespace fs = std::filesystem;

struct TmpDir {
    fs::path path;
    TmpDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string file_bytes(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_cfg(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    out << body;
}

// small-but-real experiment config; tiny budgets keep the test quick
std::string small_cfg_body(const std::string& out, const std::string& extra = "") {
    return "seed=11\nout=" + out +
           "\n"
           "data.count=24\ndata.img_h=16\ndata.img_w=16\ndata.classes=6\n"
           "data.shapes_min=2\ndata.shapes_max=2\ndata.claim_radius=6\n"
           "model.dim=16\nmodel.window=2\n"
           "train.epochs=2\ntrain.batch=8\ntrain.val_count=4\n"
           "attack.steps=4\nattack.eval_count=3\nattack.save_records=1\n" +
           extra;
}

}  // namespace

TEST_CASE("experiment config parsing") {
    TmpDir dir("ramlab_cfg_test");
    std::string p = (dir.path / "a.cfg").string();

    SECTION("defaults, overrides, comments") {
        write_cfg(p, "# comment\nseed=42\n\nattack.methods=dag,pgd # trailing comment\n");
        ExperimentConfig cfg = ExperimentConfig::from_file(p);
        CHECK(cfg.seed() == 42);
        CHECK(cfg.list("attack.methods") == std::vector<std::string>{"dag", "pgd"});
        CHECK(cfg.integer("model.dim") == 32);  // untouched default
    }
    SECTION("unknown keys rejected") {
        write_cfg(p, "does.not.exist=1\n");
        CHECK_THROWS_AS(ExperimentConfig::from_file(p), std::invalid_argument);
    }
    SECTION("malformed lines rejected") {
        write_cfg(p, "justtext\n");
        CHECK_THROWS_AS(ExperimentConfig::from_file(p), std::invalid_argument);
    }
    SECTION("hash ignores out and jobs") {
        write_cfg(p, "seed=1\nout=/a\njobs=2\n");
        ExperimentConfig a = ExperimentConfig::from_file(p);
        write_cfg(p, "seed=1\nout=/b\njobs=7\n");
        ExperimentConfig b = ExperimentConfig::from_file(p);
        CHECK(a.hash() == b.hash());
        write_cfg(p, "seed=2\n");
        CHECK(a.hash() != ExperimentConfig::from_file(p).hash());
    }
}

TEST_CASE("gen-data writes a loadable deterministic dataset") {
    TmpDir d1("ramlab_gen1"), d2("ramlab_gen2");
    std::string cfg_path = (d1.path / "c.cfg").string();

    write_cfg(cfg_path, small_cfg_body(d1.str()));
    cmd_gen_data(ExperimentConfig::from_file(cfg_path));
    auto data = load_dataset((d1.path / "manifest.tsv").string());
    CHECK(data.size() == 24);
    CHECK(data[0].image.shape == std::vector<int>{16, 16, 3});

    // count lines in the manifest
    std::string manifest = file_bytes((d1.path / "manifest.tsv").string());
    CHECK(std::count(manifest.begin(), manifest.end(), '\n') == 24);

    // same seed, different directory: identical bytes
    std::string cfg2 = (d2.path / "c.cfg").string();
    write_cfg(cfg2, small_cfg_body(d2.str()));
    cmd_gen_data(ExperimentConfig::from_file(cfg2));
    CHECK(file_bytes((d1.path / "images/00003.ppm").string()) ==
          file_bytes((d2.path / "images/00003.ppm").string()));
    CHECK(file_bytes((d1.path / "manifest.tsv").string()) ==
          file_bytes((d2.path / "manifest.tsv").string()));

    // count=0 rejected
    write_cfg(cfg_path, small_cfg_body(d1.str(), "data.count=0\n"));
    CHECK_THROWS_AS(cmd_gen_data(ExperimentConfig::from_file(cfg_path)), std::invalid_argument);

    // resolved config written next to outputs
    CHECK(fs::exists(d1.path / "resolved-gen-data.cfg"));
}

TEST_CASE("train, attack, rf, report pipeline with byte-identical reruns") {
    TmpDir d1("ramlab_pipe1"), d2("ramlab_pipe2");

    auto run_all = [&](const TmpDir& d) {
        std::string cfg_path = (d.path / "c.cfg").string();
        write_cfg(cfg_path, small_cfg_body(d.str()));
        ExperimentConfig cfg = ExperimentConfig::from_file(cfg_path);
        cmd_gen_data(cfg);
        std::string ckpt = cmd_train(cfg);
        write_cfg(cfg_path, small_cfg_body(d.str(), "attack.checkpoints=" + ckpt +
                                                        "\nattack.methods=dag,pgd\n"
                                                        "attack.targets=permute,strip\n"
                                                        "rf.checkpoints=" + ckpt + "\n"));
        cfg = ExperimentConfig::from_file(cfg_path);
        cmd_attack(cfg);
        cmd_rf(cfg);
        cmd_report(cfg);
        return ckpt;
    };

    std::string ckpt1 = run_all(d1);
    std::string ckpt2 = run_all(d2);

    SECTION("artifacts exist and parse") {
        CHECK(fs::exists(d1.path / "ledger.csv"));
        CHECK(fs::exists(d1.path / "metrics.csv"));
        CHECK(fs::exists(d1.path / "report.md"));
        CHECK(fs::exists(d1.path / "rf-radii.csv"));
        CHECK(fs::exists(d1.path / "rf-global-baseline.pgm"));
        CHECK(fs::exists(d1.path / "curves-global-baseline.csv"));
        std::string ledger = file_bytes((d1.path / "ledger.csv").string());
        // header + 2 methods x 2 targets
        CHECK(std::count(ledger.begin(), ledger.end(), '\n') == 5);
        std::string report = file_bytes((d1.path / "report.md").string());
        CHECK(report.find("dag (permute)") != std::string::npos);
    }

    SECTION("identical config and seed reproduce every CSV byte for byte") {
        CHECK(file_bytes(ckpt1) == file_bytes(ckpt2));
        CHECK(file_bytes((d1.path / "ledger.csv").string()) ==
              file_bytes((d2.path / "ledger.csv").string()));
        CHECK(file_bytes((d1.path / "metrics.csv").string()) ==
              file_bytes((d2.path / "metrics.csv").string()));
        CHECK(file_bytes((d1.path / "rf-radii.csv").string()) ==
              file_bytes((d2.path / "rf-radii.csv").string()));
    }

    SECTION("rerun with the same config hash is flagged, not duplicated") {
        std::string before = file_bytes((d1.path / "ledger.csv").string());
        std::string cfg_path = (d1.path / "c.cfg").string();
        ExperimentConfig cfg = ExperimentConfig::from_file(cfg_path);
        cmd_attack(cfg);  // every cell already present
        CHECK(file_bytes((d1.path / "ledger.csv").string()) == before);
    }

    SECTION("jobs=4 reproduces the jobs=1 ledger") {
        std::string cfg_path = (d1.path / "c.cfg").string();
        ExperimentConfig cfg = ExperimentConfig::from_file(cfg_path);
        TmpDir d3("ramlab_pipe3");
        cfg.set("out", d3.str());
        cfg.set("jobs", "4");
        cfg.set("data.manifest", (d1.path / "manifest.tsv").string());
        cmd_attack(cfg);
        std::string l1 = file_bytes((d1.path / "ledger.csv").string());
        std::string l3 = file_bytes((d3.path / "ledger.csv").string());
        CHECK(l1 == l3);
    }

    SECTION("unknown method rejected before compute") {
        std::string cfg_path = (d1.path / "c.cfg").string();
        write_cfg(cfg_path, small_cfg_body(d1.str(), "attack.checkpoints=" + ckpt1 +
                                                         "\nattack.methods=nosuch\n"));
        CHECK_THROWS_AS(cmd_attack(ExperimentConfig::from_file(cfg_path)), std::invalid_argument);
    }

    SECTION("report with empty ledger rejected") {
        TmpDir d4("ramlab_pipe4");
        std::string cfg_path = (d4.path / "c.cfg").string();
        write_cfg(cfg_path, small_cfg_body(d4.str()));
        ExperimentConfig cfg = ExperimentConfig::from_file(cfg_path);
        detail::write_text((d4.path / "ledger.csv").string(), std::string(LedgerRow::header()) + "\n");
        CHECK_THROWS_AS(cmd_report(cfg), std::invalid_argument);
    }
}
