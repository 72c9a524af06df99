#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "albf/active_session.hpp"
#include "albf/service.hpp"
#include "oracles.hpp"

using namespace albf;
namespace fs = std::filesystem;

namespace {

const std::string kCli = ALBF_CLI_PATH;
const fs::path kGolden = ALBF_GOLDEN_DIR;

struct Run {
  int code;
  std::string out;
};

// Runs a shell command, capturing stdout and stderr together.
Run run(const std::string& cmd) {
  Run r{-1, {}};
  FILE* p = popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / "albf_cli_test";
  fs::create_directories(d);
  return d / name;
}

// DAS B-mode PNG built only from the test oracles: naive resampling, plain channel sum,
// direct-DFT analytic signal, then the dB and level maps written out longhand.
std::vector<std::uint8_t> oracle_das_png(const RFFrame& f, const ImageGrid& g, double dr = 60.0) {
  const auto cube = oracle::delay(f, g);
  const std::size_t m = g.depth_px, n = g.lateral_px, c = g.channels;
  Array2 env({m, n});
  for (std::size_t q = 0; q < n; ++q) {
    std::vector<double> col(m);
    for (std::size_t p = 0; p < m; ++p) {
      std::vector<double> s(c);
      for (std::size_t i = 0; i < c; ++i) s[i] = cube(p, q, i);
      col[p] = oracle::das_pixel(s);
    }
    const auto a = oracle::analytic(col);
    for (std::size_t p = 0; p < m; ++p) env(p, q) = std::abs(a[p]);
  }
  double peak = 0;
  for (double v : env.flat()) peak = std::max(peak, v);
  Raster r;
  r.height = m;
  r.width = n;
  for (double v : env.flat()) {
    const double db = v > 0 ? std::max(20.0 * std::log10(v / peak), -dr) : -dr;
    r.pixels.push_back(static_cast<std::uint8_t>(std::floor((db + dr) / dr * 255.0 + 0.5)));
  }
  return encode_png(r);
}

std::string small_config_file() {
  const auto path = scratch("small.json");
  std::ofstream(path) << R"({"grid": {"depth_px": 32, "lateral_px": 16}, "network": {"stem_channels": 4}})";
  return path.string();
}

}  // namespace

TEST(Cli, SimulateWritesTheFixtureFrame) {
  const auto out = scratch("point.rfbin");
  const auto r = run(kCli + " simulate --preset point --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const SessionConfig cfg;
  const auto expect = emit_rfbin(synthesize_frame(default_phantoms(cfg.grid)[0], cfg.probe));
  EXPECT_EQ(read_file(out.string()), expect);
  EXPECT_EQ(read_file((kGolden / "point.rfbin").string()), expect);
}

TEST(Cli, BeamformDasMatchesGoldenPng) {
  const auto fixture = (kGolden / "point.rfbin").string();
  const auto frame = read_frame(fixture);
  const auto golden = oracle_das_png(frame, make_grid(frame.probe));
  if (std::getenv("ALBF_WRITE_GOLDEN")) write_file((kGolden / "point_das.png").string(), golden);
  EXPECT_EQ(read_file((kGolden / "point_das.png").string()), golden);

  const auto out = scratch("das.png");
  const auto r = run(kCli + " beamform --method das --in " + fixture + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(read_file(out.string()), golden);
}

TEST(Cli, UnknownMethodIsUsageError) {
  const auto fixture = (kGolden / "point.rfbin").string();
  const auto r = run(kCli + " beamform --method capon --in " + fixture + " --out " + scratch("x.png").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("--method"), std::string::npos) << r.out;
  EXPECT_FALSE(fs::exists(scratch("x.png")));
  EXPECT_NE(run(kCli).code, 0);
  EXPECT_NE(run(kCli + " frobnicate").code, 0);
}

TEST(Cli, ModelMethodNeedsCheckpoint) {
  const auto r = run(kCli + " beamform --method model --in " + (kGolden / "point.rfbin").string() + " --out " +
                     scratch("m.png").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("checkpoint"), std::string::npos) << r.out;
}

TEST(Cli, MissingInputFileIsError) {
  const auto r = run(kCli + " beamform --method das --in /nonexistent.rfbin --out " + scratch("n.png").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("error"), std::string::npos) << r.out;
}

TEST(Cli, MetricsReportsEveryMethod) {
  const auto r = run(kCli + " metrics --in " + (kGolden / "point.rfbin").string() + " --point 0,20.0");
  ASSERT_EQ(r.code, 0) << r.out;
  for (auto m : kConventionalMethods)
    EXPECT_NE(r.out.find(std::string("method=") + to_string(m)), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("lateral_fwhm_mm="), std::string::npos);
}

TEST(Cli, TrainOfflineThenReplayMatches) {
  const auto cfg = small_config_file();
  const auto log = scratch("offline.ndjson"), ckpt = scratch("offline.albf");
  auto r = run(kCli + " --config " + cfg + " train-offline --rounds 7 --select gcf --log " + log.string() +
               " --checkpoint " + ckpt.string());
  ASSERT_EQ(r.code, 0) << r.out;
  r = run(kCli + " replay --log " + log.string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("match=yes"), std::string::npos) << r.out;
  const auto recorded = read_session_log(log.string()).rounds.back().checkpoint_id;
  EXPECT_NE(r.out.find("final_checkpoint=" + recorded), std::string::npos);
  EXPECT_EQ(hex64(nn::checkpoint_checksum(read_file(ckpt.string()))), recorded);

  // The model verb loads the trained checkpoint.
  const auto frame = scratch("small_frame.rfbin");
  ASSERT_EQ(run(kCli + " --config " + cfg + " simulate --preset cyst --out " + frame.string()).code, 0);
  r = run(kCli + " --config " + cfg + " beamform --method model --checkpoint " + ckpt.string() + " --in " +
          frame.string() + " --out " + scratch("model.png").string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(decode_png(read_file(scratch("model.png").string())).height, 32u);

  // Editing a recorded selection breaks the match.
  std::ifstream in(log);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  const auto at = text.rfind("\"selected_method\":\"GCF\"");
  ASSERT_NE(at, std::string::npos);
  text.replace(at, 23, "\"selected_method\":\"DAS\"");
  const auto tampered = scratch("tampered.ndjson");
  std::ofstream(tampered) << text;
  r = run(kCli + " replay --log " + tampered.string());
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("match=no"), std::string::npos);
}

TEST(Cli, ServeHonoursPortEnvironment) {
  const int port = 18000 + static_cast<int>(::getpid() % 1000);
  const auto pidfile = scratch("serve.pid");
  const auto cmd = "ALBF_PORT=" + std::to_string(port) + " " + kCli + " --config " + small_config_file() +
                   " serve --port 1 --log " + scratch("serve.ndjson").string() + " --checkpoint " +
                   scratch("serve.albf").string() + " > " + scratch("serve.out").string() + " 2>&1 & echo $! > " +
                   pidfile.string();
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  httplib::Client cli("127.0.0.1", port);
  httplib::Result res;
  for (int k = 0; k < 100 && !res; ++k) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    res = cli.Get("/api/session/round");
  }
  std::string pid;
  std::ifstream(pidfile) >> pid;
  ASSERT_TRUE(res) << "server did not come up on " << port;
  EXPECT_EQ(res->status, 200);
  const auto round = json::parse(res->body);
  EXPECT_EQ(round["candidates"].size(), 4u);
  auto sel = cli.Post("/api/session/select",
                      json{{"round_id", "1"}, {"candidate_id", round["candidates"][0]["id"]}}.dump(), "application/json");
  ASSERT_TRUE(sel);
  EXPECT_EQ(sel->status, 200);
  EXPECT_EQ(json::parse(cli.Get("/api/session/stats")->body)["rounds"], "1");
  std::system(("kill " + pid).c_str());
  // SIGTERM stops the listener cleanly; the session log holds the round.
  for (int k = 0; k < 50 && run("kill -0 " + pid).code == 0; ++k) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  EXPECT_NE(run("kill -0 " + pid).code, 0);
  EXPECT_EQ(read_session_log(scratch("serve.ndjson").string()).rounds.size(), 1u);
}
