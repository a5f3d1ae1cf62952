#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

#include "sr3/checkpoint.hpp"
#include "sr3/commands.hpp"
#include "sr3/config.hpp"
#include "sr3/errors.hpp"

using namespace sr3;
namespace fs = std::filesystem;

namespace {

const std::string kCli = SR3_CLI_PATH;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("sr3_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code;
  std::string output;
};

// Runs the CLI with the data-root variable cleared; stdout and stderr are
// captured together.
Run run(const std::string& args, const fs::path& log) {
  const std::string cmd = "env -u SR3_DATA_ROOT " + kCli + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, std::string{std::istreambuf_iterator<char>(in), {}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> dump_map(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : cfg.to_key_values()) out[k] = v;
  return out;
}

// A toy run small enough for a unit test.
const std::string kTiny =
    "--toy --preset gen1 --data.hr_size 16 --model.base_channels 8 --model.channel_multipliers 1,2 "
    "--model.groups 4 --model.gamma_embed_dim 16 --data.toy_train_count 8 --data.toy_val_count 2 "
    "--train.batch_size 2 --train.val_every 1000 --schedule.steps 20";

}  // namespace

TEST_CASE("presets carry the published feature matrix") {
  const auto g1 = dump_map(resolve_config("gen1", false, {}, {}));
  CHECK(g1.at("schedule.kind") == "linear");
  CHECK(g1.at("schedule.steps") == "2000");
  CHECK(g1.at("schedule.beta_start") == "1e-06");
  CHECK(g1.at("schedule.beta_end") == "0.01");
  CHECK(g1.at("train.base_lr") == "3e-06");
  CHECK(g1.at("train.batch_size") == "8");
  CHECK(g1.at("model.res_blocks_per_level") == "1");
  CHECK(g1.at("model.dropout") == "0");
  CHECK(g1.at("model.attention_resolutions") == "none");
  CHECK(g1.at("model.channel_multipliers") == "1,2,4,8,16");
  CHECK(g1.at("train.ema") == "false");
  CHECK(g1.at("train.clip") == "false");
  CHECK(g1.at("train.lr_milestones") == "none");

  const auto g2 = dump_map(resolve_config("gen2", false, {}, {}));
  CHECK(g2.at("schedule.kind") == "cosine");
  CHECK(g2.at("model.res_blocks_per_level") == "2");
  CHECK(g2.at("model.dropout") == "0.1");
  CHECK(g2.at("model.attention_resolutions") == "16,32,64");
  CHECK(g2.at("train.ema") == "true");
  CHECK(g2.at("train.ema_decay") == "0.9999");
  CHECK(g2.at("train.clip") == "true");
  CHECK(g2.at("train.clip_max_norm") == "1");
  CHECK(g2.at("train.lr_milestones") == "150000,230000");
  CHECK(g2.at("train.lr_factor") == "0.5");
  CHECK(g2.at("model.groups") == "16");

  CHECK_THROWS_AS(preset_config("gen3"), ConfigError);
}

TEST_CASE("config resolution: preset, toy scaling, file, overrides") {
  const fs::path dir = scratch("resolve");
  std::ofstream(dir / "c.txt") << "# comment\npreset = gen1\ntrain.batch_size = 3\nseed = 11\n";
  const auto cfg = resolve_config("", false, dir / "c.txt", {{"train.batch_size", "5"}});
  CHECK(cfg.preset == "gen1");
  CHECK(cfg.train.batch_size == 5);
  CHECK(cfg.seed == 11);

  const auto toy = resolve_config("gen2", true, {}, {});
  CHECK(toy.hr_size == 32);
  CHECK(toy.scale == 4);
  CHECK(toy.model.base_channels == 16);
  CHECK(toy.schedule.steps == 200);
  CHECK(toy.schedule.kind == ScheduleKind::Cosine);
  CHECK(toy.model.attention_resolutions == std::set<int>{16, 32});
  CHECK(toy.train.total_iters == 2000);

  const auto reparsed = parse_config_text(cfg.dump());
  RunConfig again = preset_config("gen2");
  apply_overrides(again, reparsed);
  CHECK(again.dump() == cfg.dump());

  CHECK_THROWS_AS(resolve_config("gen2", false, {}, {{"train.no_such_key", "1"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("gen2", false, {}, {{"train.batch_size", "many"}}), ConfigError);
  CHECK_THROWS_AS(parse_config_text("just words\n"), ConfigError);
  CHECK_THROWS_AS(resolve_config("gen2", false, dir / "missing.txt", {}), IoError);
}

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == kExitConfig);
  CHECK(exit_code_for(ShapeError("x")) == kExitConfig);
  CHECK(exit_code_for(IoError("x")) == kExitIo);
  CHECK(exit_code_for(FormatError("x")) == kExitIo);
  CHECK(exit_code_for(NumericalError("x")) == kExitNumerical);
  CHECK(exit_code_for(std::runtime_error("x")) == kExitOther);

  const fs::path dir = scratch("codes");
  CHECK(run("--help", dir / "log").code == kExitOk);
  CHECK(run("train --preset gen3", dir / "log").code == kExitConfig);
  CHECK(run("train --toy --train.nonsense 1", dir / "log").code == kExitConfig);
  CHECK(run("train --out " + (dir / "none").string(), dir / "log").code == kExitConfig);
  CHECK(run("bogus-command", dir / "log").code == kExitConfig);
  const Run missing = run("sample --checkpoint " + (dir / "missing.ckpt").string() + " --input x.png", dir / "log");
  CHECK(missing.code == kExitIo);
  CHECK(missing.output.find("missing.ckpt") != std::string::npos);
  std::ofstream(dir / "junk.ckpt") << "definitely not a checkpoint";
  CHECK(run("sample --checkpoint " + (dir / "junk.ckpt").string() + " --input x.png", dir / "log").code == kExitIo);
  const Run blowup = run("train " + kTiny + " --iters 5 --train.base_lr 1e30 --out " + (dir / "nan").string(),
                         dir / "log");
  CHECK(blowup.code == kExitNumerical);
  CHECK(blowup.output.find("non-finite") != std::string::npos);
}

TEST_CASE("binary round trip: train then config rerun then sample then evaluate") {
  const fs::path dir = scratch("flow");
  const Run trained = run("train " + kTiny + " --iters 4 --seed 2 --out " + (dir / "run").string(), dir / "log");
  REQUIRE(trained.code == kExitOk);
  CHECK(trained.output.find("schedule.kind = linear") != std::string::npos);
  CHECK(fs::exists(dir / "run" / "last.ckpt"));
  CHECK(fs::exists(dir / "run" / "config.txt"));

  // The resolved dump fed back in reproduces the run exactly.
  const Run again = run("train --config " + (dir / "run" / "config.txt").string() + " --out " + (dir / "rerun").string(),
                        dir / "log2");
  REQUIRE(again.code == kExitOk);
  CHECK(slurp(dir / "run" / "metrics.tsv") == slurp(dir / "rerun" / "metrics.tsv"));
  // Checkpoint headers record the output path, so compare tensors instead.
  const auto a = load_checkpoint<float>(dir / "run" / "last.ckpt");
  const auto b = load_checkpoint<float>(dir / "rerun" / "last.ckpt");
  CHECK(a.step == b.step);
  REQUIRE(a.params.size() == b.params.size());
  bool same_params = true;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto x = a.params[i].tensor.data(), y = b.params[i].tensor.data();
    same_params = same_params && std::equal(x.begin(), x.end(), y.begin(), y.end());
  }
  CHECK(same_params);

  fs::create_directories(dir / "lr");
  Rng rng(3);
  for (int i = 0; i < 2; ++i) {
    Image lr(4, 4);
    for (auto& v : lr.pixels) v = float(rng.uniform());
    save_image(lr, dir / "lr" / ("im" + std::to_string(i) + ".png"));
  }
  const std::string ckpt = (dir / "run" / "last.ckpt").string();
  for (const char* out : {"sr1", "sr2"}) {
    const Run s = run("sample --checkpoint " + ckpt + " --input " + (dir / "lr").string() + " --seed 9 --steps 5 --out " +
                          (dir / out).string(),
                      dir / "log3");
    REQUIRE(s.code == kExitOk);
    CHECK(s.output.find("reduced") != std::string::npos);
  }
  for (const char* name : {"im0.png", "im1.png"}) {
    CHECK(slurp(dir / "sr1" / name) == slurp(dir / "sr2" / name));
    const Image img = load_image(dir / "sr1" / name);
    CHECK(img.width == 16);
    CHECK(img.height == 16);
  }

  Image wrong(5, 5);
  save_image(wrong, dir / "wrong.png");
  CHECK(run("sample --checkpoint " + ckpt + " --input " + (dir / "wrong.png").string() + " --out " + (dir / "x").string(),
            dir / "log4")
            .code == kExitConfig);

  const Run self = run("evaluate " + (dir / "sr1").string() + " " + (dir / "sr1").string() + " --out " +
                           (dir / "eval").string(),
                       dir / "log5");
  REQUIRE(self.code == kExitOk);
  CHECK(self.output.find("mean ssim: 1") != std::string::npos);
  CHECK(self.output.find("mean psnr_db: inf") != std::string::npos);
  CHECK(fs::exists(dir / "eval" / "report.tsv"));
  CHECK(run("evaluate " + (dir / "sr1").string() + " " + (dir / "lr").string() + " --out " + (dir / "eval2").string(),
            dir / "log6")
            .code == kExitIo);
}

TEST_CASE("sampling a fresh model follows the scripted zero-predictor trajectory") {
  const fs::path dir = scratch("zero");
  const RunConfig cfg = resolve_config("gen2", true, {},
                                       {{"data.hr_size", "16"}, {"model.base_channels", "8"},
                                        {"model.channel_multipliers", "1,2"}, {"model.groups", "4"},
                                        {"model.attention_resolutions", "8"}, {"schedule.steps", "30"}});
  Rng init(4);
  UNet<float> model(cfg.denoiser(), init);
  auto state = TrainState<float>::initial(model.parameters(), cfg.schedule.build(), 0);
  state.header = cfg.to_key_values();
  save_checkpoint(state, dir / "zero.ckpt");

  Image lr(4, 4, 0.5f);
  save_image(lr, dir / "lr.png");
  std::ostringstream log;
  const auto written = cmd_sample({dir / "zero.ckpt", dir / "lr.png", dir / "out", 21, 6}, log);
  REQUIRE(written.size() == 1);
  const Image got = load_image(written[0]);

  const NoiseSchedule sched = respace(cfg.schedule.build(), 6);
  Rng root(21);
  Rng rng = root.fork();
  std::vector<float> y(3 * 16 * 16);
  for (auto& v : y) v = static_cast<float>(rng.gaussian());
  for (int t = 6; t >= 1; --t) {
    const double inv = 1.0 / std::sqrt(sched.alpha(t)), noise = std::sqrt(1.0 - sched.alpha(t));
    for (auto& v : y) v = static_cast<float>(inv * double(v));
    if (t > 1)
      for (auto& v : y) v = static_cast<float>(double(v) + noise * rng.gaussian());
  }
  bool same = true;
  for (int c = 0; c < 3; ++c)
    for (int py = 0; py < 16; ++py)
      for (int px = 0; px < 16; ++px) {
        const float v = std::clamp(y[(c * 16 + py) * 16 + px], -1.0f, 1.0f);
        same = same && to_u8(got.at(px, py, c)) == to_u8((v + 1.0f) / 2.0f);
      }
  CHECK(same);
}

TEST_CASE("toy training for 200 iterations writes a checkpoint") {
  const fs::path dir = scratch("toy200");
  const Run r = run("train --toy --iters 200 --out " + (dir / "run").string(), dir / "log");
  REQUIRE(r.code == kExitOk);
  CHECK(r.output.find("preset = gen2") != std::string::npos);
  CHECK(fs::exists(dir / "run" / "last.ckpt"));
  const auto last = load_checkpoint<float>(dir / "run" / "last.ckpt");
  CHECK(last.step == 200);
}
