#include <gtest/gtest.h>

#include <fstream>

#include "process_util.hpp"
#include "stsc/eval.hpp"
#include "stsc/service.hpp"
#include "stsc/synthetic.hpp"
#include "test_util.hpp"

using namespace stsc;
namespace fs = std::filesystem;

namespace {

const std::string kCli = STSC_CLI;

RunResult cli(const std::string& args) { return run_command(quote(kCli) + " " + args); }

std::string slurp(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return std::string(b.begin(), b.end());
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    weights_ = init_weights<float>(ArchitectureConfig::test_preset(), 8);
    save_checkpoint(weights_, dir_ / "model.stsc", ModelMeta{32, 8});
    Xorshift64Star rng(3);
    save_image(synthetic_content<float>(48, rng), dir_ / "input.png");
    save_image(synthetic_content<float>(32, rng), dir_ / "input2.png");

    fs::create_directories(dir_ / "content");
    for (int i = 0; i < 3; ++i)
      save_image(synthetic_content<double>(16, rng), dir_ / "content" / ("c" + std::to_string(i) + ".png"));
    save_image(synthetic_style<double>(16), dir_ / "style.png");
  }

  nlohmann::json config(std::size_t epochs) const {
    return {{"image_size", 16},
            {"batch_size", 2},
            {"epochs", epochs},
            {"learning_rate", 1e-3},
            {"seed", 4},
            {"content_dir", "content"},
            {"style_image_path", "style.png"},
            {"checkpoint_out", "out.stsc"},
            {"log_out", "log.jsonl"},
            {"architecture", {{"widths", {8, 16, 32}}, {"residual_blocks", 5}}}};
  }
  std::string write_config(const nlohmann::json& j) const {
    const auto path = dir_ / "config.json";
    std::ofstream(path) << j.dump();
    return quote(path.string());
  }
  std::string path(const std::string& name) const { return quote((dir_ / name).string()); }
  std::string stylize_args(const std::string& input, const std::string& alpha, const std::string& output) const {
    return "stylize --model " + path("model.stsc") + " --input " + path(input) + " --alpha " + alpha + " --output " +
           path(output);
  }

  TempDir dir_;
  TransformerWeights<float> weights_;
};

}  // namespace

TEST_F(CliTest, TrainWithZeroEpochsWritesInitialWeights) {
  const auto r = cli("train --config " + write_config(config(0)));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(r.output.substr(0, 1), "{");  // resolved config first
  const auto m = load_model<float>(dir_ / "out.stsc");
  EXPECT_EQ(m.weights, init_weights<float>(ArchitectureConfig::test_preset(), 4));
  EXPECT_EQ(m.meta.image_size, 16u);
  EXPECT_EQ(m.meta.seed, 4u);
}

TEST_F(CliTest, TrainWritesCheckpointAndLog) {
  const auto r = cli("train --config " + write_config(config(1)));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NO_THROW(load_model<float>(dir_ / "out.stsc"));
  std::ifstream log(dir_ / "log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("alpha") && j.contains("total"));
  }
  EXPECT_EQ(lines, 2u);

  const auto again = cli("train --config " + write_config(config(1)));
  ASSERT_EQ(again.code, 0);
  const auto first = slurp(dir_ / "out.stsc");
  EXPECT_EQ(cli("train --config " + write_config(config(1))).code, 0);
  EXPECT_EQ(slurp(dir_ / "out.stsc"), first);
}

TEST_F(CliTest, TrainConfigErrorsExitTwo) {
  auto cfg = config(1);
  cfg.erase("style_image_path");
  const auto r = cli("train --config " + write_config(cfg));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("style_image_path"), std::string::npos) << r.output;

  EXPECT_EQ(cli("train --config " + path("nope.json")).code, 2);
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("train --config " + write_config(config(1)) + " --bogus").code, 2);
}

TEST_F(CliTest, TrainingAbortExitsThree) {
  fs::create_directories(dir_ / "empty");
  auto cfg = config(1);
  cfg["content_dir"] = "empty";
  const auto r = cli("train --config " + write_config(cfg));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("empty dataset"), std::string::npos);
}

TEST_F(CliTest, StylizeIsDeterministicAndMatchesLibrary) {
  const std::string input_before = slurp(dir_ / "input.png");
  ASSERT_EQ(cli(stylize_args("input.png", "2.5", "a.png")).code, 0);
  ASSERT_EQ(cli(stylize_args("input.png", "2.5", "b.png")).code, 0);
  EXPECT_EQ(slurp(dir_ / "a.png"), slurp(dir_ / "b.png"));
  const auto model = load_model<float>(dir_ / "model.stsc");
  const auto ref = stylize_image_bytes(model, read_file_bytes(dir_ / "input.png"), 2.5);
  EXPECT_EQ(slurp(dir_ / "a.png"), std::string(ref.png.begin(), ref.png.end()));
  EXPECT_EQ(slurp(dir_ / "input.png"), input_before);
}

TEST_F(CliTest, StylizeAtZeroIgnoresResidualWeights) {
  auto other = weights_;
  Xorshift64Star rng(77);
  for (auto& [name, p] : other.params)
    if (is_residual_branch_param(name))
      for (auto& v : p.data()) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
  save_checkpoint(other, dir_ / "other.stsc", ModelMeta{32, 8});
  ASSERT_EQ(cli(stylize_args("input.png", "0", "a.png")).code, 0);
  const auto r = cli("stylize --model " + path("other.stsc") + " --input " + path("input.png") +
                     " --alpha 0 --output " + path("b.png"));
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(slurp(dir_ / "a.png"), slurp(dir_ / "b.png"));
}

TEST_F(CliTest, StylizeErrors) {
  EXPECT_EQ(cli(stylize_args("input.png", "abc", "a.png")).code, 2);
  EXPECT_EQ(cli(stylize_args("input.png", "inf", "a.png")).code, 2);
  EXPECT_EQ(cli(stylize_args("missing.png", "1", "a.png")).code, 2);
  EXPECT_EQ(cli("stylize --model " + path("missing.stsc") + " --input " + path("input.png") +
                " --alpha 1 --output " + path("a.png"))
                .code,
            2);
  EXPECT_EQ(cli(stylize_args("input.png", "1", "a.png") + " --unknown").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  const auto warn = cli(stylize_args("input.png", "12", "a.png"));
  EXPECT_EQ(warn.code, 0);
  EXPECT_NE(warn.output.find("warning"), std::string::npos);
}

TEST_F(CliTest, SweepWritesOneFilePerAlphaAndIndex) {
  const auto r = cli("sweep --model " + path("model.stsc") + " --input " + path("input.png") +
                     " --alphas 0.1,1,5,10 --outdir " + path("sweep"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* f : {"out_0.1.png", "out_1.0.png", "out_5.0.png", "out_10.0.png", "index.json"})
    EXPECT_TRUE(fs::is_regular_file(dir_ / "sweep" / f)) << f;
  EXPECT_EQ(std::distance(fs::directory_iterator(dir_ / "sweep"), fs::directory_iterator()), 5);
  std::ifstream in(dir_ / "sweep" / "index.json");
  const auto index = nlohmann::json::parse(in);
  ASSERT_EQ(index.at("entries").size(), 4u);
  EXPECT_EQ(index["entries"][2]["file"], "out_5.0.png");
  EXPECT_EQ(index["entries"][2]["alpha"].get<double>(), 5.0);

  ASSERT_EQ(cli(stylize_args("input.png", "1", "one.png")).code, 0);
  EXPECT_EQ(slurp(dir_ / "sweep" / "out_1.0.png"), slurp(dir_ / "one.png"));
}

TEST_F(CliTest, SweepDeduplicatesWithWarning) {
  const auto r = cli("sweep --model " + path("model.stsc") + " --input " + path("input.png") +
                     " --alphas 1,1.0,2,1.00 --outdir " + path("sweep"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("warning: duplicate alpha 1.0"), std::string::npos) << r.output;
  EXPECT_EQ(std::distance(fs::directory_iterator(dir_ / "sweep"), fs::directory_iterator()), 3);
  EXPECT_EQ(cli("sweep --model " + path("model.stsc") + " --input " + path("input.png") +
                " --alphas 1,x --outdir " + path("sweep2"))
                .code,
            2);
}

TEST_F(CliTest, GradcheckPrintsMaxRelativeError) {
  const auto r = cli("gradcheck --seed 5 --instances 3");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("max relative error:"), std::string::npos);
}

TEST_F(CliTest, EvalSelfBaselineIsAllOnes) {
  const auto r = cli("eval --model " + path("model.stsc") + " --contents " + path("content") + " --style " +
                     path("style.png") + " --style " + path("input2.png") + " --alphas 0.1,1,5 --self-baseline" +
                     " --out-json " + path("r.json") + " --out-csv " + path("r.csv"));
  ASSERT_EQ(r.code, 0) << r.output;
  std::ifstream in(dir_ / "r.json");
  const auto report = report_from_json(nlohmann::json::parse(in));
  ASSERT_EQ(report.rows.size(), 3u);
  EXPECT_EQ(report.styles, (std::vector<std::string>{"style", "input2"}));
  for (const auto& row : report.rows)
    for (const RatioStat* s : {&row.total, &row.content, &row.style}) {
      EXPECT_EQ(s->mean, 1.0);
      EXPECT_EQ(s->std, 0.0);
    }
  EXPECT_EQ(raw_from_csv(slurp(dir_ / "r.csv")).size(), report.raw.size());

  const auto missing = cli("eval --model " + path("model.stsc") + " --contents " + path("content") + " --style " +
                           path("style.png") + " --alphas 0.1,1 --baseline 0.1=" + path("model.stsc"));
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("no --baseline for alpha 1"), std::string::npos) << missing.output;
}

TEST_F(CliTest, ServeBindsEphemeralPortAndMatchesStylize) {
  ServeProcess server(quote(kCli) + " serve --model " + path("model.stsc") + " --port 0");
  ASSERT_GT(server.port(), 0);
  EXPECT_EQ(server.log().substr(0, 1), "{");
  httplib::Client c("127.0.0.1", server.port());
  auto health = c.Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->body, R"({"status":"ok"})");

  ASSERT_EQ(cli(stylize_args("input.png", "2.5", "cli.png")).code, 0);
  auto res = c.Post("/api/stylize?alpha=2.5", slurp(dir_ / "input.png"), "image/png");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(res->body, slurp(dir_ / "cli.png"));
}
