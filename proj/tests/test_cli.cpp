#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cavm/io.hpp"
#include "cavm/phantom.hpp"
#include "support.hpp"

using namespace cavm;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(CAVM_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::size_t count_files(const fs::path& dir) {
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) ++n;
    return n;
}

} // namespace

TEST_CASE("gen-data writes a reproducible dataset") {
    testing::TempDir dir("cli-gen");
    const auto log = dir.path() / "log.txt";
    const auto a = dir.path() / "a", b = dir.path() / "b";
    const std::string common = " --train 10 --val 2 --test 2 --size 32 --seed 5";
    REQUIRE(run("gen-data --out " + a.string() + common, log).code == 0);
    REQUIRE(run("gen-data --out " + b.string() + common, log).code == 0);
    CHECK(count_files(a) == 15);
    CHECK(fs::exists(a / "manifest.json"));
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), a);
        CHECK(io::read_file(e.path()) == io::read_file(b / rel));
    }
    const auto sample = phantom::read_sample(a / "train" / "5.cavm");
    CHECK(sample == phantom::generate_phantom(5, 32));
}

TEST_CASE("usage errors exit with status 2 and name the problem") {
    testing::TempDir dir("cli-usage");
    const auto log = dir.path() / "log.txt";

    Run r = run("train-ar --data " + dir.path().string() + " --out " + (dir.path() / "o.ckpt").string(), log);
    CHECK(r.code == 2);
    CHECK(r.output.find("--init") != std::string::npos);

    std::ofstream(dir.path() / "bad.json") << "{\n  \"loss\": {,\n}";
    REQUIRE(run("gen-data --out " + (dir.path() / "d").string() + " --train 2 --val 1 --test 1 --size 32", log).code == 0);
    r = run("train-tokenizer --config " + (dir.path() / "bad.json").string() + " --data " + (dir.path() / "d").string() +
                " --out " + (dir.path() / "t.ckpt").string(),
            log);
    CHECK(r.code == 2);
    CHECK(r.output.find("bad.json:2:") != std::string::npos);

    r = run("frobnicate", log);
    CHECK(r.code == 2);

    r = run("evaluate --ckpt " + (dir.path() / "missing.ckpt").string() + " --data " + (dir.path() / "d").string() +
                " --out " + (dir.path() / "e.json").string(),
            log);
    CHECK(r.code == 2);
    CHECK(r.output.find("missing.ckpt") != std::string::npos);
}

TEST_CASE("train, synthesize and evaluate end to end") {
    testing::TempDir dir("cli-e2e");
    const auto log = dir.path() / "log.txt";
    const auto data = dir.path() / "data";
    REQUIRE(run("gen-data --out " + data.string() + " --train 3 --val 1 --test 2 --size 32 --seed 3", log).code == 0);
    std::ofstream(dir.path() / "cfg.json") << R"({
        "image_size": 32,
        "encoder_widths": [4, 6],
        "decoder_widths": [8, 6, 4, 4],
        "fine": {"embed_dim": 8, "heads": 2, "layers": 1, "max_seq_len": 48},
        "coarse": {"embed_dim": 8, "heads": 2, "layers": 1, "max_seq_len": 12},
        "training": {"pretrain_steps": 3, "ar_steps": 3, "log_interval": 1}
    })";
    const std::string cfg = " --config " + (dir.path() / "cfg.json").string();
    const auto tok = dir.path() / "tok.ckpt", arc = dir.path() / "ar.ckpt";
    Run r = run("train-tokenizer" + cfg + " --data " + data.string() + " --out " + tok.string(), log);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(tok.string() + ".log.jsonl"));
    r = run("train-ar --data " + data.string() + " --init " + tok.string() + " --out " + arc.string(), log);
    REQUIRE_MESSAGE(r.code == 0, r.output);

    const auto input = data / "test" / "7.cavm";
    const auto out3 = dir.path() / "s3", out1 = dir.path() / "s1";
    r = run("synthesize --ckpt " + arc.string() + " --input " + input.string() + " --out " + out3.string() + " --steps 3",
            log);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(count_files(out3) == 3);
    for (const char* name : {"1_y_ld.cavm", "2_y_hd.cavm", "3_y_sd.cavm"}) CHECK_MESSAGE(fs::exists(out3 / name), name);
    r = run("synthesize --ckpt " + arc.string() + " --input " + input.string() + " --out " + out1.string() +
                " --steps 1 --preview",
            log);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    std::size_t cavm_files = 0, previews = 0;
    for (const auto& e : fs::directory_iterator(out1)) {
        cavm_files += e.path().extension() == ".cavm";
        previews += e.path().extension() == ".pgm";
    }
    CHECK(cavm_files == 1);
    CHECK(fs::exists(out1 / "1_y_sd.cavm"));
    CHECK(previews == 1);

    const auto report = dir.path() / "eval.json";
    r = run("evaluate --ckpt " + arc.string() + " --data " + data.string() + " --out " + report.string(), log);
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("Tumor PSNR (dB)") != std::string::npos);
    const auto bytes = io::read_file(report);
    const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
    CHECK(j.at("rows").size() == 2);
    CHECK(j.at("provenance").contains("config_hash"));
    CHECK(j.at("dose_ramp").at("rim_mean").size() == 3);
}
