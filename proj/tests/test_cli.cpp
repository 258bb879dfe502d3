#include "icl/cli.hpp"

#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string &name) {
    const fs::path p = fs::temp_directory_path() / ("icl_cli_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("gen-data is byte-for-byte reproducible") {
    const fs::path root = scratch("gen");
    for (const char *d : {"a", "b"})
        REQUIRE(icl::run({"gen-data", "--seed", "7", "--count", "4", "--T", "30", "--out", (root / d).string()}) ==
                icl::kExitPass);
    CHECK(slurp(root / "a" / "sequences.csv") == slurp(root / "b" / "sequences.csv"));
    CHECK(slurp(root / "a" / "kernels.json") == slurp(root / "b" / "kernels.json"));
    CHECK_FALSE(slurp(root / "a" / "sequences.csv").empty());
}

TEST_CASE("verify exit codes") {
    const fs::path root = scratch("verify");
    CHECK(icl::run({"verify", "--k", "2", "--S", "2", "--T", "256", "--family", "single_head", "--variant", "mlp_only",
                    "--count", "20", "--out", root.string()}) == icl::kExitPass);
    CHECK(fs::exists(root / "verification_report.json"));
    CHECK(icl::run({"verify", "--k", "3", "--S", "3", "--T", "512", "--count", "10", "--out", root.string()}) ==
          icl::kExitFail);
}

TEST_CASE("usage errors exit with 2") {
    const fs::path root = scratch("usage");
    {
        std::ofstream(root / "bad.json") << R"({"S": 2, "bogus": 1})";
    }
    CHECK(icl::run({"verify", "--config", (root / "bad.json").string()}) == icl::kExitUsage);
    CHECK(icl::run({"verify", "--S", "1"}) == icl::kExitUsage);
    CHECK(icl::run({"verify", "--family", "three_head"}) == icl::kExitUsage);
    CHECK(icl::run({"nonsense"}) == icl::kExitUsage);
    CHECK(icl::run({"verify", "--config", (root / "missing.json").string()}) == icl::kExitUsage);
}

TEST_CASE("config file and output directory override") {
    const fs::path root = scratch("config");
    {
        std::ofstream(root / "cfg.json") << R"({"S": 3, "k": 1, "T": 40, "out": ")" + (root / "from_cfg").string() + "\"}";
    }
    CHECK(icl::run({"build", "--config", (root / "cfg.json").string()}) == icl::kExitPass);
    CHECK(fs::exists(root / "from_cfg" / "weights.json"));
    CHECK(slurp(root / "from_cfg" / "weights.json").find("\"S\": 3") != std::string::npos);

    ::setenv(icl::kOutDirEnv, (root / "from_env").string().c_str(), 1);
    CHECK(icl::run({"build", "--k", "1", "--T", "16"}) == icl::kExitPass);
    ::unsetenv(icl::kOutDirEnv);
    CHECK(fs::exists(root / "from_env" / "weights.json"));
}

TEST_CASE("attn-export and report") {
    const fs::path root = scratch("export");
    CHECK(icl::run({"attn-export", "--k", "2", "--T", "24", "--average", "3", "--out", root.string()}) == icl::kExitPass);
    for (const char *kind : {"actual", "pseudo", "diff"}) {
        CHECK(fs::exists(root / (std::string("attention_layer1_head1_") + kind + ".csv")));
        CHECK(fs::exists(root / (std::string("attention_layer2_head1_") + kind + ".csv")));
    }
    CHECK(icl::run({"verify", "--k", "1", "--T", "128", "--count", "10", "--out", root.string()}) == icl::kExitPass);
    CHECK(icl::run({"report", "--input", (root / "verification_report.json").string(), "--out", root.string()}) ==
          icl::kExitPass);
    CHECK(fs::exists(root / "report.json"));
}

TEST_CASE("train-d writes its artifacts") {
    const fs::path root = scratch("train");
    CHECK(icl::run({"train-d", "--k", "2", "--out", root.string()}) ==
          icl::kExitPass);
    for (const char *f : {"trajectory.csv", "config.json", "final_softmax.csv", "summary.json"})
        CHECK(fs::exists(root / f));
}
