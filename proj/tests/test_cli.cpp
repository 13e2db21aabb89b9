// Integration test for the command-line pipeline. Runs the real binary
// (path passed as argv[1]) through a miniature end-to-end recipe.
#define DOCTEST_CONFIG_IMPLEMENT
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "anl/data_io.hpp"
#include "doctest.h"
#include "nlohmann/json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
std::string g_binary;
fs::path g_work;

int run(const std::string& args) {
    const std::string cmd = g_binary + " " + args + " >> " + (g_work / "cli.log").string() +
                            " 2>&1";
    return std::system(cmd.c_str()) / 256;
}

json read_json(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    json j;
    f >> j;
    return j;
}
}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run("--help") == 0);
    CHECK(run("no-such-subcommand") == 1);
    CHECK(run("probe --manifest x.jsonl") == 1);  // missing required --ckpt
}

TEST_CASE("full miniature recipe") {
    const auto corpus = (g_work / "corpus").string();
    const auto fakes = (g_work / "fakes").string();
    const auto cache = (g_work / "cache").string();
    const auto dckpt = (g_work / "diffusion.anlckpt").string();
    const auto detckpt = (g_work / "detector.anlckpt").string();
    const auto evaldir = (g_work / "eval").string();

    // gen-corpus
    REQUIRE(run("gen-corpus --out " + corpus + " --n 40 --hw 16 --seed 11") == 0);
    REQUIRE(fs::exists(g_work / "corpus" / "manifest.jsonl"));
    const json rec = read_json(g_work / "corpus" / "run_gen-corpus.json");
    CHECK(rec.at("status") == "ok");
    CHECK(rec.at("seed") == 11);
    CHECK(rec.at("resolved_config").at("n") == 40);
    CHECK(rec.contains("git_describe"));
    CHECK(rec.at("wall_time_s").get<double>() >= 0.0);

    // idempotent rerun skips
    REQUIRE(run("gen-corpus --out " + corpus + " --n 40 --hw 16 --seed 11") == 0);
    CHECK(read_json(g_work / "corpus" / "run_gen-corpus.json").at("status") == "skipped");

    // train-diffusion (tiny)
    const std::string man = corpus + "/manifest.jsonl";
    REQUIRE(run("train-diffusion --manifest " + man + " --out " + dckpt +
                " --T 10 --hw 16 --width 4 --levels 2 --epochs 2 --batch 8 --seed 12") == 0);
    REQUIRE(fs::exists(dckpt));
    REQUIRE(fs::exists(dckpt + ".loss.csv"));

    // rerun skips
    REQUIRE(run("train-diffusion --manifest " + man + " --out " + dckpt +
                " --T 10 --hw 16 --width 4 --levels 2 --epochs 2 --batch 8 --seed 12") == 0);
    CHECK(read_json(g_work / "run_train-diffusion.json").at("status") == "skipped");

    // sample-fakes
    REQUIRE(run("sample-fakes --ckpt " + dckpt + " --out " + fakes +
                " --n 20 --generator-id toygen --seed 13") == 0);
    auto fm = anl::load_manifest(fakes + "/manifest.jsonl");
    REQUIRE(fm.rows.size() == 20);
    CHECK(fm.rows[0].label == "fake");
    CHECK(fm.rows[0].generator == "toygen");

    // probe both manifests
    const std::string fman = fakes + "/manifest.jsonl";
    REQUIRE(run("probe --manifest " + man + " --manifest " + fman + " --ckpt " + dckpt +
                " --t 1 --cache " + cache) == 0);
    REQUIRE(fs::exists(g_work / "cache" / "index.json"));

    // train-detector
    REQUIRE(run("train-detector --manifest " + man + " --manifest " + fman + " --probe-ckpt " +
                dckpt + " --cache " + cache + " --out " + detckpt +
                " --width 2 --stages 2 --epochs 2 --lr 1e-3 --seed 14") == 0);
    REQUIRE(fs::exists(detckpt));

    // infer on one corpus image
    auto cm = anl::load_manifest(man);
    REQUIRE(run("infer --image " + cm.rows[0].path + " --detector " + detckpt +
                " --probe-ckpt " + dckpt + " --attention-out " + (g_work / "attn.png").string()) ==
            0);
    CHECK(fs::exists(g_work / "attn.png"));

    // eval standard protocol with ablation pair
    REQUIRE(run("eval --manifest " + man + " --manifest " + fman + " --probe-ckpt " + dckpt +
                " --cache " + cache + " --out " + evaldir +
                " --protocol standard --epochs 2 --lr 1e-3 --seed 15 --ablate-attention") == 0);
    CHECK(fs::exists(g_work / "eval" / "eval_standard.json"));
    CHECK(fs::exists(g_work / "eval" / "eval_standard_acc.csv"));
    CHECK(fs::exists(g_work / "eval" / "eval_standard_acc.png"));
    CHECK(fs::exists(g_work / "eval" / "ablation.json"));
    const json ab = read_json(g_work / "eval" / "ablation.json");
    CHECK(ab.contains("with_attention"));
    CHECK(ab.contains("without_attention"));

    // analyze-psd
    REQUIRE(run("analyze-psd --manifest " + man + " --manifest " + fman + " --probe-ckpt " +
                dckpt + " --cache " + cache + " --out " + (g_work / "psd").string() +
                " --t 1 --png") == 0);
    CHECK(fs::exists(g_work / "psd" / "psd_summary.json"));
    CHECK(fs::exists(g_work / "psd" / "psd_real.csv"));
    CHECK(fs::exists(g_work / "psd" / "psd.png"));

    // analyze-lem
    REQUIRE(run("analyze-lem --image " + cm.rows[0].path + " --probe-ckpt " + dckpt + " --out " +
                (g_work / "lem").string() + " --window 8 --stride 4 --bins 16") == 0);
    bool lem_csv = false;
    for (const auto& e : fs::directory_iterator(g_work / "lem"))
        if (e.path().extension() == ".csv") lem_csv = true;
    CHECK(lem_csv);

    // report renders eval + psd artifacts
    fs::copy_file(g_work / "psd" / "psd_summary.json", g_work / "eval" / "psd_summary.json");
    REQUIRE(run("report --dir " + evaldir + " --out " + (g_work / "report.md").string()) == 0);
    std::ifstream rep(g_work / "report.md");
    std::string report((std::istreambuf_iterator<char>(rep)), std::istreambuf_iterator<char>());
    CHECK(report.find("ablation") != std::string::npos);
    CHECK(report.find("mean ACC") != std::string::npos);

    // data errors exit 2
    CHECK(run("probe --manifest /nonexistent.jsonl --ckpt " + dckpt + " --cache " + cache) == 2);
    CHECK(run("infer --image /nonexistent.png --detector " + detckpt + " --probe-ckpt " + dckpt) ==
          2);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <anl-binary>\n");
        return 2;
    }
    g_binary = argv[1];
    g_work = fs::temp_directory_path() / "anl_test_cli";
    fs::remove_all(g_work);
    fs::create_directories(g_work);
    doctest::Context ctx;
    const int res = ctx.run();
    if (res == 0) fs::remove_all(g_work);
    return res;
}
