#include "doctest.h"

#include "olab/metrics.hpp"
#include "olab/tensor_io.hpp"

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
    int code = -1;
    std::string output;
};

CmdResult run_cmd(const std::string &args) {
    const std::string cmd = std::string(OLAB_BIN) + " " + args + " 2>&1";
    FILE *pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CmdResult r;
    std::array<char, 4096> buf;
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.output += buf.data();
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

void write_config(const std::string &path, const std::string &out_dir) {
    std::ofstream os(path);
    os << "[model]\n"
          "depth = 1\nwidth = 16\nheads = 2\nvocab = 16\ncontext = 8\n"
          "block = pre-norm\nnorm = layer-norm\nentropy = none\n"
          "[data]\nlength = 2048\n"
          "[schedule]\nmax_lr = 1e-3\n"
          "[run]\nbatch_size = 2\ntotal_steps = 4\ntap_interval = 2\n"
          "out_dir = " << out_dir << "\n";
}

} // namespace

TEST_CASE("train command trains, analyze verifies, overrides apply") {
    const std::string dir = "/tmp/olab_cli_run";
    const std::string conf = "/tmp/olab_cli.conf";
    fs::remove_all(dir);
    write_config(conf, dir);

    CmdResult r = run_cmd("train --config " + conf);
    INFO(r.output);
    CHECK(r.code == 0);
    CHECK(fs::exists(dir + "/manifest.json"));
    CHECK(r.output.find("final_loss") != std::string::npos);

    CmdResult a = run_cmd("analyze " + dir);
    INFO(a.output);
    CHECK(a.code == 0);
    CHECK(a.output.find("recomputation verified") != std::string::npos);

    // overrides land in the manifest
    const std::string dir2 = "/tmp/olab_cli_run2";
    fs::remove_all(dir2);
    CmdResult o = run_cmd("train --config " + conf + " --set run.out_dir=" + dir2 +
                          " --set optimizer.epsilon=1e-5");
    CHECK(o.code == 0);
    std::ifstream mf(dir2 + "/manifest.json");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    CHECK(manifest["optimizer"]["epsilon"].get<double>() == doctest::Approx(1e-5));

    fs::remove_all(dir2);
    // keep dir for the quantize test below
}

TEST_CASE("quantize command reports on a trained checkpoint") {
    const std::string dir = "/tmp/olab_cli_run";
    REQUIRE(fs::exists(dir));
    CmdResult q = run_cmd("quantize --run " + dir + " --bits 8 --calib-seeds 3 --calib-batches 2");
    INFO(q.output);
    CHECK(q.code == 0);
    CHECK(q.output.find("loss_fp") != std::string::npos);
    CHECK(q.output.find("std") != std::string::npos);
    std::ifstream rep(dir + "/quant-report.json");
    REQUIRE(rep.good());
    nlohmann::json j = nlohmann::json::parse(rep);
    CHECK(j.contains("loss_w8a8_std"));

    CmdResult hi = run_cmd("quantize --run " + dir + " --bits 31 --calib-seeds 1 --calib-batches 2");
    CHECK(hi.code == 0);
}

TEST_CASE("analyze works on a raw tensor dump") {
    // single outlier column, d=4 -> kurtosis 4
    olab::Tensor x(6, 4);
    for (std::size_t i = 0; i < 6; ++i) x(i, 1) = 1.0 + static_cast<double>(i);
    const std::string path = "/tmp/olab_cli_dump.tens";
    olab::write_tensor(path, x);
    CmdResult r = run_cmd("analyze " + path);
    INFO(r.output);
    CHECK(r.code == 0);
    CHECK(r.output.find("\"kurtosis\": 4") != std::string::npos);

    // constant-rms columns -> kurtosis 1
    olab::Tensor ones(4, 4);
    ones.fill(1.0);
    olab::write_tensor(path, ones);
    CmdResult u = run_cmd("analyze " + path);
    CHECK(u.code == 0);
    CHECK(u.output.find("\"kurtosis\": 1") != std::string::npos);
    fs::remove(path);
}

TEST_CASE("analyze flags tampered logs with nonzero exit") {
    const std::string dir = "/tmp/olab_cli_run";
    REQUIRE(fs::exists(dir));
    const std::string log = dir + "/metrics.jsonl";
    std::string original, tampered;
    {
        std::ifstream is(log);
        std::string line;
        while (std::getline(is, line)) {
            original += line + "\n";
            auto j = nlohmann::json::parse(line);
            j["kurtosis"] = j["kurtosis"].get<double>() + 0.5;
            tampered += j.dump() + "\n";
        }
    }
    {
        std::ofstream os(log);
        os << tampered;
    }
    CmdResult r = run_cmd("analyze " + dir);
    CHECK(r.code == 1);
    CHECK(r.output.find("step") != std::string::npos);
    {
        std::ofstream os(log);
        os << original;
    }
    CmdResult ok = run_cmd("analyze " + dir);
    CHECK(ok.code == 0);
}

TEST_CASE("oracle commands pass and report") {
    CmdResult g = run_cmd("oracle gaussian-prop --rho 0.5 --n 64 --d 64 --trials 200");
    INFO(g.output);
    CHECK(g.code == 0);
    CHECK(g.output.find("1.5234375") != std::string::npos);

    CHECK(run_cmd("oracle trace-identity --trials 100").code == 0);
    CHECK(run_cmd("oracle decomposition --trials 100").code == 0);
    CHECK(run_cmd("oracle no-such-oracle").code == 2);
}

TEST_CASE("compare command emits verdicts and csv") {
    const std::string a = "/tmp/olab_cli_cmp_a";
    const std::string b = "/tmp/olab_cli_cmp_b";
    const std::string conf = "/tmp/olab_cli_cmp.conf";
    fs::remove_all(a);
    fs::remove_all(b);
    write_config(conf, a);
    REQUIRE(run_cmd("train --config " + conf).code == 0);
    REQUIRE(run_cmd("train --config " + conf + " --set run.out_dir=" + b).code == 0);

    CmdResult r = run_cmd("compare " + a + " " + b);
    INFO(r.output);
    CHECK(r.code == 0);
    CHECK(r.output.find("tie") != std::string::npos);
    CHECK(fs::exists(a + "/metrics.csv"));
    CHECK(fs::exists(b + "/metrics.csv"));

    // different seed: verdicts cite both numbers
    const std::string c = "/tmp/olab_cli_cmp_c";
    fs::remove_all(c);
    REQUIRE(run_cmd("train --config " + conf + " --set run.out_dir=" + c +
                    " --set run.seed_model=99").code == 0);
    CmdResult d = run_cmd("compare " + a + " " + c);
    CHECK(d.code == 0);
    CHECK(d.output.find("peak_layer_mean_kurtosis") != std::string::npos);
    CHECK(d.output.find("A=") != std::string::npos);
    CHECK(d.output.find("B=") != std::string::npos);
    fs::remove_all(a);
    fs::remove_all(b);
    fs::remove_all(c);
    fs::remove(conf);
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run_cmd("train").code == 2);
    CHECK(run_cmd("train --config /tmp/olab_no_such_config.conf").code == 2);
    CHECK(run_cmd("definitely-not-a-command").code == 2);
    CHECK(run_cmd("--help").code == 0);

    // malformed config: parse error with location
    const std::string bad = "/tmp/olab_cli_bad.conf";
    {
        std::ofstream os(bad);
        os << "[model\nwidth = 16\n";
    }
    CmdResult r = run_cmd("train --config " + bad);
    CHECK(r.code == 2);
    CHECK(r.output.find(":1:") != std::string::npos);
    fs::remove(bad);
}

TEST_CASE("matrix command fans out over values and seeds") {
    const std::string conf = "/tmp/olab_cli_matrix.conf";
    const std::string out = "/tmp/olab_cli_matrix_out";
    fs::remove_all(out);
    write_config(conf, "unused");
    CmdResult r = run_cmd("matrix --config " + conf + " --vary optimizer.epsilon=1e-8,1e-6 "
                          "--seeds 2 --out " + out + " --set run.total_steps=2");
    INFO(r.output);
    CHECK(r.code == 0);
    CHECK(fs::exists(out + "/optimizer.epsilon-1e-8/seed-0/status.json"));
    CHECK(fs::exists(out + "/optimizer.epsilon-1e-8/seed-1/status.json"));
    CHECK(fs::exists(out + "/optimizer.epsilon-1e-6/seed-0/status.json"));
    fs::remove_all(out);
    fs::remove(conf);

    fs::remove_all("/tmp/olab_cli_run");
    fs::remove("/tmp/olab_cli.conf");
}
