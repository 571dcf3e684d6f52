#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "ucan/config.hpp"
#include "ucan/errors.hpp"
#include "ucan/tensor_file.hpp"

using namespace ucan;
namespace fs = std::filesystem;

namespace {

// Runs the CLI with `args`, output discarded; returns its exit status.
int cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + UCAN_CLI_PATH + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// One trained lineage shared by the CLI cases below.
const fs::path& trained() {
    static const fs::path dir = [] {
        auto d = fixture::scratch("cli_train");
        REQUIRE(cli("train -o " + d.string()) == 0);
        return d;
    }();
    return dir;
}

std::string lineage_args() {
    return "--checkpoint " + (trained() / "deployed.ckpt").string() + " --manifest " +
           (trained() / "split.manifest").string();
}

}  // namespace

TEST_CASE("config defaults") {
    const RunConfig c;
    CHECK(c.ucan.gamma == 0.5);
    CHECK(c.ucan.lambda == 0.3);
    CHECK(c.ucan.tau_risk == 0.2);
    CHECK(c.ucan.alpha_max == 0.1);
    CHECK(c.ucan.beta == 2.0);
    CHECK(c.seed == 7);
    CHECK_NOTHROW(c.validate());
    const auto m = c.to_map();
    CHECK(m.at("ucan.gamma") == "0.5");
    CHECK(m.at("ucan.tau") == "0.2");
}

TEST_CASE("config text: sections, comments, later lines win") {
    RunConfig c;
    c.load_text("# comment\nseed = 11\n[ucan]\ngamma = 0.7\ntau = 0.4\n\n[train]\nepochs = 2\n");
    CHECK(c.seed == 11);
    CHECK(c.ucan.gamma == 0.7);
    CHECK(c.ucan.tau_risk == 0.4);
    CHECK(c.train.epochs == 2);
    c.set("ucan.tau", "0.3");
    CHECK(c.ucan.tau_risk == 0.3);

    RunConfig round;
    round.load_text(c.to_text());
    CHECK(round.to_map() == c.to_map());
    CHECK(round.lineage_hash() == c.lineage_hash());
}

TEST_CASE("config errors name the key") {
    RunConfig c;
    CHECK_THROWS_WITH_AS(c.set("ucan.gama", "0.5"), doctest::Contains("ucan.gama"), ConfigError);
    CHECK_THROWS_AS(c.set("ucan.tau", "abc"), ConfigError);
    CHECK_THROWS_AS(c.load_text("just words\n"), ConfigError);

    RunConfig ml;
    ml.set("dataset", "ml100k");
    CHECK_THROWS_AS(ml.validate(), ConfigError);
}

TEST_CASE("lineage hash ignores U-CAN knobs and output location") {
    RunConfig a, b;
    b.set("ucan.tau", "0.9");
    b.set("output_dir", "elsewhere");
    CHECK(a.lineage_hash() == b.lineage_hash());
    b.set("train.epochs", "3");
    CHECK(a.lineage_hash() != b.lineage_hash());
}

TEST_CASE("CLI argument and config errors exit 2") {
    CHECK(cli("") != 0);
    CHECK(cli("unlearn") == 2);
    CHECK(cli("train --set nonsense.key=1") == 2);
    CHECK(cli("train --set dataset=ml100k -o " + fixture::scratch("cli_ml").string()) == 2);
    const auto dir = fixture::scratch("cli_badcfg");
    fixture::write_file(dir / "bad.toml", "[ucan]\nlambda = 7\n");
    CHECK(cli("train -c " + (dir / "bad.toml").string() + " -o " + dir.string()) == 2);
}

TEST_CASE("training twice gives byte-identical checkpoints") {
    const auto other = fixture::scratch("cli_train_again");
    REQUIRE(cli("train -o " + other.string()) == 0);
    CHECK(read_bytes(other / "deployed.ckpt") == read_bytes(trained() / "deployed.ckpt"));
    CHECK(slurp(other / "split.manifest") == slurp(trained() / "split.manifest"));
    for (const char* f : {"train_log.csv", "config.toml"}) CHECK(fs::exists(trained() / f));
}

TEST_CASE("output directory precedence: env over file, flag over env") {
    const auto dir = fixture::scratch("cli_env");
    fixture::write_file(dir / "run.toml", "output_dir = " + (dir / "from_file").string() + "\n");
    REQUIRE(cli("split -c " + (dir / "run.toml").string(), "UCAN_OUTPUT_DIR=" + (dir / "from_env").string()) == 0);
    CHECK(fs::exists(dir / "from_env" / "split.manifest"));
    CHECK_FALSE(fs::exists(dir / "from_file"));

    REQUIRE(cli("split -c " + (dir / "run.toml").string() + " -o " + (dir / "from_flag").string(),
                "UCAN_OUTPUT_DIR=" + (dir / "from_env2").string()) == 0);
    CHECK(fs::exists(dir / "from_flag" / "split.manifest"));
    CHECK_FALSE(fs::exists(dir / "from_env2"));
}

TEST_CASE("unlearn with tau = 1 writes the input checkpoint unchanged") {
    const auto out = fixture::scratch("cli_tau1");
    REQUIRE(cli("unlearn " + lineage_args() + " --tau 1 --name noop -o " + out.string()) == 0);
    CHECK(read_bytes(out / "noop.ckpt") == read_bytes(trained() / "deployed.ckpt"));
    const auto run = read_json(out / "noop.run.json");
    CHECK(run["gradient_ops"] == 0);
}

TEST_CASE("unlearn records its settings and artifacts") {
    const auto out = fixture::scratch("cli_unlearn");
    REQUIRE(cli("unlearn " + lineage_args() + " -o " + out.string()) == 0);
    REQUIRE(cli("unlearn " + lineage_args() + " --ablation H --name hard -o " + out.string()) == 0);
    for (const char* f : {"ucan.ckpt", "ucan.risk.tsr", "ucan.stats.tsr", "ucan.run.json", "hard.ckpt"})
        CHECK(fs::exists(out / f));

    const auto run = read_json(out / "ucan.run.json");
    const auto& cfg = run["extra"]["config"];
    CHECK(cfg["gamma"] == 0.5);
    CHECK(cfg["lambda"] == 0.3);
    CHECK(cfg["tau_risk"] == 0.2);
    CHECK(cfg["alpha_max"] == 0.1);
    CHECK(cfg["beta"] == 2.0);
    CHECK(read_json(out / "hard.run.json")["extra"]["config"]["ablation"] == "H");

    const auto risk = TensorFile::load(out / "ucan.risk.tsr");
    CHECK_NOTHROW((void)risk.get("R_dim.0"));
    CHECK(risk.meta["config"]["tau_risk"] == 0.2);
    const auto stats = TensorFile::load(out / "ucan.stats.tsr");
    CHECK_NOTHROW((void)stats.get("S.1"));
}

TEST_CASE("lineage guards") {
    const auto out = fixture::scratch("cli_guard");
    // A manifest from a different split.
    REQUIRE(cli("split --seed 8 -o " + out.string()) == 0);
    CHECK(cli("unlearn --checkpoint " + (trained() / "deployed.ckpt").string() + " --manifest " +
              (out / "split.manifest").string() + " -o " + out.string()) == 3);
    CHECK(cli("unlearn --checkpoint " + (trained() / "deployed.ckpt").string() + " --manifest " +
              (out / "missing.manifest").string() + " -o " + out.string()) == 3);
    // Overrides that would change the deployed model.
    CHECK(cli("unlearn " + lineage_args() + " --set train.epochs=1 -o " + out.string()) == 2);

    // Eval refuses a candidate from another lineage.
    const auto other = fixture::scratch("cli_other");
    REQUIRE(cli("train --seed 8 -o " + other.string()) == 0);
    CHECK(cli("eval --original " + (trained() / "deployed.ckpt").string() + " --candidate " +
              (other / "deployed.ckpt").string() + " --manifest " + (trained() / "split.manifest").string() +
              " -o " + out.string()) == 3);
}

TEST_CASE("eval of a model against itself shows no change") {
    const auto out = fixture::scratch("cli_self");
    const auto ck = (trained() / "deployed.ckpt").string();
    REQUIRE(cli("eval --original " + ck + " --candidate " + ck + " --manifest " +
                (trained() / "split.manifest").string() + " --name self -o " + out.string()) == 0);
    const auto r = read_json(out / "self.eval.json");
    CHECK(r["kl"] == 0.0);
    CHECK(r["pred_shift_pct"] == 0.0);
    CHECK(r["tradeoff@10"] == 0.0);
    CHECK(fs::exists(out / "self.eval.csv"));
}

TEST_CASE("baselines through the CLI") {
    const auto out = fixture::scratch("cli_base");
    REQUIRE(cli("baseline --method ga " + lineage_args() + " -o " + out.string()) == 0);
    const auto run = read_json(out / "ga.run.json");
    CHECK(run["gradient_ops"].get<int>() > 0);
    const auto before = load_checkpoint(trained() / "deployed.ckpt");
    const auto after = load_checkpoint(out / "ga.ckpt");
    CHECK(after.model.embedding == before.model.embedding);
    for (std::size_t l = 0; l < before.model.layers.size(); ++l)
        CHECK(after.model.layers[l].base == before.model.layers[l].base);
    CHECK(cli("baseline --method sisa " + lineage_args() + " -o " + out.string()) == 2);
}

TEST_CASE("sweep writes one ordered row per grid value") {
    const auto out = fixture::scratch("cli_sweep");
    REQUIRE(cli("sweep --param tau --values 0.6,0.2,0.8,0.4 " + lineage_args() + " -o " + out.string()) == 0);
    std::ifstream in(out / "sweep_tau.csv");
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(line);
    REQUIRE(rows.size() == 5);
    CHECK(rows[1].rfind("0.2,", 0) == 0);
    CHECK(rows[4].rfind("0.8,", 0) == 0);
}

TEST_CASE("U-CAN report matches the stored golden values") {
    const auto out = fixture::scratch("cli_golden");
    REQUIRE(cli("unlearn " + lineage_args() + " -o " + out.string()) == 0);
    REQUIRE(cli("eval --original " + (trained() / "deployed.ckpt").string() + " --candidate " +
                (out / "ucan.ckpt").string() + " --manifest " + (trained() / "split.manifest").string() + " -o " +
                out.string()) == 0);
    const auto got = read_json(out / "ucan.eval.json");
    const auto want = read_json(fs::path(UCAN_GOLDEN_DIR) / "ucan.eval.json");
    for (const char* key : {"tradeoff@10", "kl", "pred_shift_pct", "ppl", "ppl_original"}) {
        CAPTURE(key);
        CHECK(got[key].get<double>() == doctest::Approx(want[key].get<double>()).epsilon(1e-6));
    }
    for (const char* side : {"forget", "retain", "forget_original", "retain_original"}) {
        for (const auto& [k, v] : want[side].items()) {
            CAPTURE(side);
            CAPTURE(k);
            CHECK(got[side][k].get<double>() == doctest::Approx(v.get<double>()).epsilon(1e-6));
        }
    }
}
