#include <filesystem>
#include <sstream>

#include "afp/cli.hpp"
#include "afp/config.hpp"
#include "afp/data_io.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace afp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 1") {
  auto r = run({"gen-data", "--bogus"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("--bogus") != std::string::npos);
  CHECK(r.err.find("--count") != std::string::npos);  // help text

  CHECK(run({}).code == kExitUsage);
  CHECK(run({"gen-data"}).code == kExitUsage);  // missing --out
  CHECK(run({"gen-data", "--out", testing::temp_dir("cli_usage"), "--set", "no_such_key=1"}).code == kExitUsage);
  CHECK(run({"gen-data", "--out", testing::temp_dir("cli_usage"), "--set", "novalue"}).code == kExitUsage);
  CHECK(run({"train", "--config", "afp_test_tmp/missing.cfg", "--input", "x", "--out", "y"}).code == kExitUsage);
}

TEST_CASE("extract rejects frames that do not fit the grid") {
  const std::string dir = testing::temp_dir("cli_grid");
  SequenceRecord rec;
  rec.frames.assign(3, Frame(63, 64));
  write_tseq(dir + "/odd.tseq", rec);
  auto r = run({"extract", "--input", dir, "--out", dir + "/fields"});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("63x64") != std::string::npos);
  CHECK(r.err.find("+1 rows") != std::string::npos);
}

TEST_CASE("missing inputs exit 2") {
  CHECK(run({"extract", "--input", "afp_test_tmp/none", "--out", testing::temp_dir("cli_none")}).code == kExitData);
}

TEST_CASE("gen-data, extract and train are reproducible") {
  const std::string a = testing::temp_dir("cli_rep_a"), b = testing::temp_dir("cli_rep_b");
  for (const auto& dir : {a, b}) {
    REQUIRE(run({"gen-data", "--out", dir + "/seq", "--count", "3", "--seed", "5", "--set", "length=7"}).code == 0);
    REQUIRE(run({"extract", "--input", dir + "/seq", "--out", dir + "/fld", "--set", "extract_iters=30"}).code == 0);
    REQUIRE(run({"train", "--input", dir + "/fld", "--out", dir + "/m.afpm", "--set", "epochs=2",
                 "--unroll", "2", "--threads", dir == a ? "1" : "2"})
                .code == 0);
  }
  for (const auto& sub : {"seq/seq_00000.tseq", "seq/seq_00002.tseq", "fld/seq_00001.tfld", "m.afpm"})
    CHECK(read_file(a + "/" + sub) == read_file(b + "/" + sub));

  const auto r = run({"rollout", "--model", a + "/m.afpm", "--input", a + "/seq/seq_00000.tseq", "--out", a + "/roll"});
  CHECK(r.code == 0);
  CHECK(read_tseq(a + "/roll/rollout.tseq").frames.size() == 8);
  CHECK(fs::exists(a + "/roll/frame_00000.pgm"));
}

TEST_CASE("train rejects fields from another grid") {
  const std::string dir = testing::temp_dir("cli_mismatch");
  write_tfld(dir + "/f.tfld", std::vector<AffineField>(6, AffineField::identity(7, 7)));
  CHECK(run({"train", "--input", dir, "--out", dir + "/m.afpm"}).code == kExitData);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("conv2d pad1") != std::string::npos);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.rfind("ok ", 0) == 0);
}

TEST_CASE("config text parsing") {
  const auto pairs = RunConfig::parse_text("# comment\npreset = patch12\nextract-iters = 50 # trailing\n\n", "x.cfg");
  const RunConfig c = RunConfig::from_pairs(pairs);
  CHECK(c.patch_in == 12);
  CHECK(c.patch_out == 8);
  CHECK(c.extractor.max_iters == 50);
  CHECK(c.grid().n_r == 15);

  try {
    RunConfig::parse_text("a = 1\nbroken line\n", "x.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("x.cfg:2") != std::string::npos);
  }
  CHECK_THROWS_AS(RunConfig::from_preset("nope"), ConfigError);
  RunConfig d;
  CHECK_THROWS_AS(d.set("stride", "abc"), ConfigError);
  d.set("frame_rows", "63");
  CHECK_THROWS_AS(d.validate(), ConfigError);

  const RunConfig round = RunConfig::from_pairs(RunConfig::parse_text(c.to_text(), "rt"));
  CHECK(round.to_text() == c.to_text());
}

}  // TEST_SUITE
