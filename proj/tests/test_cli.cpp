#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "chromalayer/cli.hpp"

#include "fixtures.hpp"

using namespace chromalayer;

namespace {

class Cli : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fixtures::temp_dir("cli");
    const PixelVolume v = fixtures::block_board(Palette{{{0.85, 0.2, 0.15}, {0.1, 0.3, 0.8}}}, 16, 4);
    save_volume(v, path("in.png"));
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    args.insert(args.begin(), "chromalayer");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data(), out_, err_);
  }

  int decompose_default() {
    return run({"decompose", "--input", path("in.png"), "--out", path("l.lbld"), "--num-layers", "2", "--superpixels",
                "50", "--reconstruction", path("recon.png")});
  }

  std::filesystem::path dir_;
  std::ostringstream out_;
  std::ostringstream err_;
};

} // namespace

TEST_F(Cli, DecomposeWritesLayersAndReport) {
  ASSERT_EQ(decompose_default(), 0) << err_.str();
  const auto report = nlohmann::json::parse(out_.str());
  EXPECT_LT(report["rmse"].get<double>(), 0.02);
  EXPECT_EQ(report["N"], 2);
  EXPECT_EQ(report["S"], 50);
  const LayerSet l = load_layers(path("l.lbld"));
  EXPECT_EQ(l.width, 64u);
  EXPECT_EQ(l.layer_count(), 2u);
  EXPECT_TRUE(std::filesystem::exists(path("recon.png")));
}

TEST_F(Cli, ReportFileAndBoundaries) {
  ASSERT_EQ(run({"decompose", "--input", path("in.png"), "--out", path("l.lbld"), "--num-layers", "2",
                 "--superpixels", "20", "--report", path("r.json"), "--boundaries", path("b.png")}),
            0)
      << err_.str();
  EXPECT_TRUE(out_.str().empty());
  std::ifstream in(path("r.json"));
  EXPECT_EQ(nlohmann::json::parse(in)["S"], 20);
  EXPECT_EQ(load_volume(path("b.png"), VolumeKind::image).width(), 64u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"decompose", "--input", path("nope.png"), "--out", path("l.lbld")}), 2);
  EXPECT_NE(err_.str().find("--input"), std::string::npos);
  EXPECT_EQ(run({"decompose", "--input", path("in.png"), "--out", path("l.lbld"), "--num-layers", "0"}), 2);
  EXPECT_NE(err_.str().find("num-layers must be ≥ 1"), std::string::npos);
  EXPECT_EQ(run({"decompose", "--input", path("in.png")}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"inspect", "--layers", path("missing.lbld")}), 2);
  EXPECT_NE(err_.str().find("--layers"), std::string::npos);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  std::ofstream(path("junk.lbld")) << "not a layer file";
  EXPECT_EQ(run({"inspect", "--layers", path("junk.lbld")}), 1);
  EXPECT_NE(err_.str().find("bad magic"), std::string::npos);
}

TEST_F(Cli, HelpExitsZero) {
  EXPECT_EQ(run({"--help"}), 0);
  EXPECT_NE(out_.str().find("decompose"), std::string::npos);
  EXPECT_EQ(run({"decompose", "--help"}), 0);
  EXPECT_NE(out_.str().find("--lambda-m"), std::string::npos);
}

TEST_F(Cli, RecolorWithStoredPaletteMatchesReconstruction) {
  ASSERT_EQ(decompose_default(), 0) << err_.str();
  const LayerSet l = load_layers(path("l.lbld"));
  std::ofstream(path("p.json")) << palette_to_json(l.palette).dump();
  ASSERT_EQ(run({"recolor", "--layers", path("l.lbld"), "--palette", path("p.json"), "--out", path("re.png")}), 0)
      << err_.str();
  EXPECT_NE(out_.str().find("frame 0:"), std::string::npos);
  EXPECT_EQ(detail::read_file_bytes(path("re.png")), detail::read_file_bytes(path("recon.png")));

  Palette one{{l.palette[0]}};
  std::ofstream(path("one.json")) << palette_to_json(one).dump();
  EXPECT_EQ(run({"recolor", "--layers", path("l.lbld"), "--palette", path("one.json"), "--out", path("x.png")}), 2);
  EXPECT_NE(err_.str().find("palette has 1 colors"), std::string::npos);
}

TEST_F(Cli, RecolorChangesColors) {
  ASSERT_EQ(decompose_default(), 0);
  std::ofstream(path("swap.json")) << R"({"colors":[[0,1,0],[1,1,0]]})";
  ASSERT_EQ(run({"recolor", "--layers", path("l.lbld"), "--palette", path("swap.json"), "--out", path("s.png")}), 0);
  const PixelVolume v = load_volume(path("s.png"), VolumeKind::image);
  double green = 0.0;
  for (std::size_t p = 0; p < v.pixel_count(); ++p) green += v.color(p)[1];
  EXPECT_GT(green / static_cast<double>(v.pixel_count()), 0.9);
}

TEST_F(Cli, FilterAndInspect) {
  ASSERT_EQ(decompose_default(), 0);
  ASSERT_EQ(run({"filter", "--layers", path("l.lbld"), "--layer", "1", "--kernel", "motion-blur", "--length", "5",
                 "--out", path("f.lbld"), "--reconstruction", path("f.png")}),
            0)
      << err_.str();
  const LayerSet before = load_layers(path("l.lbld"));
  const LayerSet after = load_layers(path("f.lbld"));
  EXPECT_EQ(after.planes[0], before.planes[0]);
  EXPECT_NE(after.planes[1], before.planes[1]);
  EXPECT_TRUE(std::filesystem::exists(path("f.png")));

  EXPECT_EQ(run({"filter", "--layers", path("l.lbld"), "--layer", "2", "--out", path("g.lbld")}), 2);
  EXPECT_EQ(run({"filter", "--layers", path("l.lbld"), "--layer", "0", "--kernel", "sharpen", "--out",
                 path("g.lbld")}),
            2);

  ASSERT_EQ(run({"inspect", "--layers", path("f.lbld")}), 0);
  const auto info = nlohmann::json::parse(out_.str());
  EXPECT_EQ(info["num_layers"], 2);
  EXPECT_EQ(info["planes"].size(), 2u);
  EXPECT_EQ(info["width"], 64);
}

TEST_F(Cli, PaletteAndConstraintFiles) {
  std::ofstream(path("p.json")) << R"({"colors":[[0.85,0.2,0.15],[0.1,0.3,0.8]]})";
  std::ofstream(path("c.json")) << R"({"strokes":[{"x":1,"y":1,"layer":1,"value":1.0}]})";
  ASSERT_EQ(run({"decompose", "--input", path("in.png"), "--out", path("l.lbld"), "--palette", path("p.json"),
                 "--constraints", path("c.json"), "--superpixels", "30"}),
            0)
      << err_.str();
  EXPECT_EQ(nlohmann::json::parse(out_.str())["N"], 2);
  std::ofstream(path("bad.json")) << R"({"strokes":[{"x":999,"y":1,"layer":0,"value":1.0}]})";
  EXPECT_EQ(run({"decompose", "--input", path("in.png"), "--out", path("l.lbld"), "--palette", path("p.json"),
                 "--constraints", path("bad.json"), "--superpixels", "30"}),
            1);
  EXPECT_NE(err_.str().find("out of bounds"), std::string::npos);
}
