#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fbsde/nn.hpp"
#include "fbsde/problems.hpp"
#include "fbsde/riccati.hpp"
#include "fbsde/runner.hpp"

#include "helpers.hpp"

namespace fs = std::filesystem;
using namespace fbsde;

namespace {

fs::path scratch_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "fbsde_runner_tests" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> data_lines(const std::string& csv) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string cell;
  while (std::getline(in, cell, ',')) out.push_back(cell);
  return out;
}

// Toy-scale training budget; every runner test has to stay in milliseconds
// to seconds.
RunConfig tiny_cfg(const std::string& sub) {
  RunConfig cfg;
  cfg.subcommand = sub;
  cfg.preset = "lq1d";
  cfg.N = 4;
  cfg.M_train = 512;
  cfg.M_batch = 64;
  cfg.K_epoch = 1;
  cfg.M_eval = 2048;
  cfg.seed = 7;
  return cfg;
}

std::string write_problem_file(const std::string& name,
                               const std::string& body) {
  fs::path p = scratch_dir("problems") / name;
  std::ofstream out(p);
  out << body;
  return p.string();
}

}  // namespace

TEST_CASE("reference run hits the semi-analytic anchors and writes a table") {
  RunConfig cfg;
  cfg.subcommand = "reference";
  cfg.preset = "lq2d";
  cfg.out_dir = scratch_dir("ref2").string();
  ReferenceOutcome out = exec_reference(cfg);
  CHECK(std::abs(out.v0 - 0.6122) < 1e-3);

  const std::string csv = slurp(out.csv_path);
  CHECK(csv.rfind("# config=", 0) == 0);  // provenance on the first line
  auto lines = data_lines(csv);
  auto header = split_csv(lines[0]);
  CHECK(header.front() == "t");
  CHECK(header.back() == "R");
  CHECK(header.size() == 1 + 4 + 2 + 1);  // t, P(2x2), Q(2), R
  // first data row is t=0, last is t=T
  CHECK(split_csv(lines[1])[0] == "0");
  CHECK(std::stod(split_csv(lines.back())[0]) ==
        doctest::Approx(preset("lq2d").T));

  cfg.preset = "lq6d";
  cfg.out_dir = scratch_dir("ref6").string();
  CHECK(std::abs(exec_reference(cfg).v0 - 1.4599) < 1e-3);
}

TEST_CASE("reference run on a zero-cost problem returns exactly zero") {
  const std::string path = write_problem_file("zerocost.json", R"({
    "type": "lq", "name": "zerocost",
    "A": [[0.5]], "B": [[1.0]], "C": [0.0],
    "Sigma": [[0.3]],
    "Rx": [[0.0]], "Ru": [[1.0]], "G": [[0.0]],
    "x0": [0.2], "T": 1.0
  })");
  RunConfig cfg;
  cfg.subcommand = "reference";
  cfg.problem_file = path;
  cfg.steps_fine = 2048;
  cfg.out_dir = scratch_dir("refz").string();
  CHECK(exec_reference(cfg).v0 == 0.0);
}

TEST_CASE("reference run refuses problems without a Riccati form") {
  RunConfig cfg;
  cfg.subcommand = "reference";
  cfg.preset = "nl3d";
  cfg.out_dir = scratch_dir("refn").string();
  CHECK_THROWS_WITH_AS(exec_reference(cfg),
                       doctest::Contains("no semi-analytic reference"),
                       std::invalid_argument);
}

TEST_CASE("invalid preset error lists the available presets") {
  RunConfig cfg = tiny_cfg("train");
  cfg.preset = "lq9x";
  cfg.out_dir = scratch_dir("badpreset").string();
  CHECK_THROWS_WITH_AS(exec_train(cfg), doctest::Contains("valid presets"),
                       std::invalid_argument);
}

TEST_CASE("unknown subcommand is rejected with the valid list") {
  RunConfig cfg = tiny_cfg("tarin");
  CHECK_THROWS_WITH_AS(run_config(cfg), doctest::Contains("train | converge"),
                       std::invalid_argument);
}

TEST_CASE("train summary echoes config hash and seed and reruns byte-identically") {
  RunConfig cfg = tiny_cfg("train");
  cfg.out_dir = scratch_dir("tr_a").string();
  TrainOutcome a = exec_train(cfg);

  auto summary = nlohmann::json::parse(slurp(a.summary_path));
  CHECK(summary.at("seed").get<std::uint64_t>() == 7);
  CHECK(summary.at("config").get<std::string>().size() == 16);
  CHECK(summary.at("y0h").get<double>() == doctest::Approx(a.y0h));
  CHECK(summary.at("terminal_gap").get<double>() ==
        doctest::Approx(a.terminal));
  // robust method: no trainable y0 in the summary
  CHECK(summary.at("y0_trained").is_null());
  CHECK(summary.at("y0_ref").get<double>() ==
        doctest::Approx(0.2741534).epsilon(1e-5));

  RunConfig cfg2 = cfg;
  cfg2.out_dir = scratch_dir("tr_b").string();
  cfg2.workers = 2;  // thread count must not leak into any artifact
  TrainOutcome b = exec_train(cfg2);
  CHECK(slurp(a.summary_path) == slurp(b.summary_path));
  CHECK(slurp(a.checkpoint_path) == slurp(b.checkpoint_path));
}

TEST_CASE("trained naive y0 lands in the summary") {
  RunConfig cfg = tiny_cfg("train");
  cfg.method = "naive";
  cfg.out_dir = scratch_dir("tr_naive").string();
  TrainOutcome out = exec_train(cfg);
  REQUIRE(out.y0_trained.has_value());
  auto summary = nlohmann::json::parse(slurp(out.summary_path));
  CHECK(summary.at("y0_trained").get<double>() ==
        doctest::Approx(*out.y0_trained));
}

TEST_CASE("converge table carries EOC columns exactly when the list has pairs") {
  RunConfig cfg = tiny_cfg("converge");
  cfg.N_list = {4, 8};
  cfg.out_dir = scratch_dir("cv_pair").string();
  ConvergeOutcome out = exec_converge(cfg);
  REQUIRE(out.rows.size() == 2);
  CHECK(out.N_ref == 32);
  CHECK(out.eoc_y0.size() == 1);
  CHECK(out.rows[0].err_x_s.has_value());  // LQ: full table

  auto lines = data_lines(slurp(out.csv_path));
  auto header = split_csv(lines[0]);
  CHECK(header ==
        std::vector<std::string>{"N", "h", "y0h", "err_y0", "eoc_y0",
                                 "terminal", "eoc_terminal", "err_x_s",
                                 "eoc_x", "err_y_s", "eoc_y", "err_z_h",
                                 "eoc_z", "y0_ref", "M_eval"});
  // EOC cells: empty on the first row, filled on the second
  CHECK(split_csv(lines[1])[4].empty());
  CHECK(!split_csv(lines[2])[4].empty());

  SUBCASE("single-N list drops the EOC columns") {
    RunConfig one = cfg;
    one.N_list = {8};
    one.out_dir = scratch_dir("cv_one").string();
    ConvergeOutcome o = exec_converge(one);
    CHECK(o.eoc_y0.empty());
    auto h2 = split_csv(data_lines(slurp(o.csv_path))[0]);
    for (const std::string& col : h2) CHECK(col.rfind("eoc", 0) != 0);
  }

  SUBCASE("non-increasing N-list is rejected") {
    RunConfig bad = cfg;
    bad.N_list = {8, 8};
    CHECK_THROWS_WITH_AS(exec_converge(bad),
                         doctest::Contains("strictly increasing"),
                         std::invalid_argument);
  }
}

TEST_CASE("converge reruns are byte-identical across worker counts") {
  RunConfig cfg = tiny_cfg("converge");
  cfg.N_list = {4, 8};
  cfg.out_dir = scratch_dir("cv_w1").string();
  ConvergeOutcome a = exec_converge(cfg);
  RunConfig cfg2 = cfg;
  cfg2.workers = 2;
  cfg2.out_dir = scratch_dir("cv_w2").string();
  ConvergeOutcome b = exec_converge(cfg2);
  CHECK(slurp(a.csv_path) == slurp(b.csv_path));
}

TEST_CASE("nonlinear converge writes the reduced table against reference_y0") {
  RunConfig cfg = tiny_cfg("converge");
  cfg.preset = "nl3d";
  cfg.N_list = {2, 4};
  cfg.M_eval = 512;
  cfg.out_dir = scratch_dir("cv_nl").string();
  ConvergeOutcome out = exec_converge(cfg);
  CHECK(out.y0_ref == doctest::Approx(0.2194).epsilon(1e-3));
  CHECK(!out.rows[0].err_x_s.has_value());
  CHECK(out.eoc_x.empty());
  auto header = split_csv(data_lines(slurp(out.csv_path))[0]);
  CHECK(header == std::vector<std::string>{"N", "h", "y0h", "err_y0",
                                           "eoc_y0", "terminal",
                                           "eoc_terminal", "y0_ref",
                                           "M_eval"});
}

TEST_CASE("landscape run reports the grid and its argmin") {
  RunConfig cfg = tiny_cfg("landscape");
  cfg.land_epochs = 1;
  cfg.y0_grid = {0.0, 0.274, 0.8};
  cfg.out_dir = scratch_dir("land").string();
  LandscapeOutcome out = exec_landscape(cfg);
  REQUIRE(out.points.size() == 3);
  REQUIRE(out.y0_ref.has_value());
  for (const LandscapePointOut& p : out.points) {
    CHECK(std::isfinite(p.mse));
    CHECK(p.mse >= 0.0);
  }
  auto lines = data_lines(slurp(out.csv_path));
  CHECK(split_csv(lines[0]) == std::vector<std::string>{"y0", "mse", "cost"});
  CHECK(lines.size() == 4);

  SUBCASE("default grid spans the reference value with nine points") {
    RunConfig d = cfg;
    d.y0_grid.clear();
    d.out_dir = scratch_dir("land_default").string();
    LandscapeOutcome o = exec_landscape(d);
    REQUIRE(o.points.size() == 9);
    CHECK(o.points[4].y0 == doctest::Approx(*o.y0_ref));
    CHECK(o.points[0].y0 == doctest::Approx(*o.y0_ref - 0.5));
    CHECK(o.points[8].y0 == doctest::Approx(*o.y0_ref + 0.5));
  }

  SUBCASE("explicitly trained methods other than naive-fixed-y0 are refused") {
    RunConfig bad = cfg;
    bad.method = "naive";
    CHECK_THROWS_WITH_AS(exec_landscape(bad),
                         doctest::Contains("naive-fixed-y0"),
                         std::invalid_argument);
  }
}

TEST_CASE("bands on a noiseless problem collapse to a line") {
  // sigma = 0 makes every path identical, so p5 = mean = p95 at each node.
  const std::string path = write_problem_file("nonoise.json", R"({
    "type": "lq", "name": "nonoise",
    "A": [[1.0]], "B": [[1.0]], "C": [0.0],
    "Sigma": [[0.0]],
    "Rx": [[1.0]], "Ru": [[1.0]], "G": [[1.0]],
    "x0": [0.3], "T": 0.5
  })");
  fs::path dir = scratch_dir("bands_zero");

  NetworkStack stack = init_stack(4, 1, 1, 99, false);
  CheckpointMeta meta;
  meta.d = 1;
  meta.ell_out = 1;
  meta.N = 4;
  meta.seed = 99;
  meta.problem = "nonoise";
  const std::string ckpt = (dir / "ckpt.json").string();
  save_checkpoint(ckpt, stack, meta);

  RunConfig cfg;
  cfg.subcommand = "bands";
  cfg.problem_file = path;
  cfg.checkpoint = ckpt;
  cfg.M_eval = 32;  // power of two keeps the mean of a constant row exact
  cfg.steps_fine = 2048;
  cfg.out_dir = (dir / "out").string();
  BandsOutcome out = exec_bands(cfg);
  REQUIRE(out.csv_paths.size() == 4);

  for (const std::string& p : out.csv_paths) {
    auto lines = data_lines(slurp(p));
    auto header = split_csv(lines[0]);
    const bool has_component = header[0] == "component";
    const std::size_t lo = has_component ? 2 : 1;
    REQUIRE(lines.size() >= 2);
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto cells = split_csv(lines[i]);
      CHECK(cells[lo] == cells[lo + 1]);      // lo == mean
      CHECK(cells[lo + 1] == cells[lo + 2]);  // mean == hi
    }
  }

  SUBCASE("too few evaluation paths are refused") {
    RunConfig bad = cfg;
    bad.M_eval = 10;
    CHECK_THROWS_WITH_AS(exec_bands(bad), doctest::Contains("M_eval >= 20"),
                         std::invalid_argument);
  }

  SUBCASE("missing checkpoint is refused") {
    RunConfig bad = cfg;
    bad.checkpoint = (dir / "nope.json").string();
    CHECK_THROWS_WITH_AS(exec_bands(bad),
                         doctest::Contains("checkpoint not found"),
                         std::invalid_argument);
    bad.checkpoint.clear();
    CHECK_THROWS_WITH_AS(exec_bands(bad),
                         doctest::Contains("--checkpoint is required"),
                         std::invalid_argument);
  }
}

TEST_CASE("bands of a trained lq2d run straddle the reference mean") {
  // N matters here: the Euler bias of y0h shifts the whole Y band and at
  // coarse N it pushes the narrow early-time bands off the reference mean.
  RunConfig cfg;
  cfg.subcommand = "train";
  cfg.preset = "lq2d";
  cfg.N = 40;
  cfg.M_train = 1 << 13;
  cfg.M_batch = 1 << 8;
  cfg.K_epoch = 4;
  cfg.M_eval = 4096;
  cfg.seed = 3;
  cfg.out_dir = scratch_dir("bands_lq2d").string();
  TrainOutcome tr = exec_train(cfg);

  RunConfig bands = cfg;
  bands.subcommand = "bands";
  bands.checkpoint = tr.checkpoint_path;
  BandsOutcome out = exec_bands(bands);
  REQUIRE(out.y_cover.has_value());
  // Y_0 is a point mass at the estimate, so that node may miss; every other
  // node's 5-95 band straddles the Riccati mean.
  CHECK(*out.y_cover >= 0.9);
}
