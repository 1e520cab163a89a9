#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fopro/artifacts.hpp"
#include "fopro/config.hpp"
#include "fopro/errors.hpp"

using namespace fopro;
namespace fs = std::filesystem;

TEST(Config, JsonRoundTripKeepsEveryField) {
  auto c = desk_config(Method::rw, 9);
  c.loss.gamma = 0.1234567890123;
  c.optimizer.scheduler = "cosine";
  c.model.student_arch = ArchSpec{"resnet18", {}};
  const auto back = config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.loss.gamma, 0.1234567890123);
  EXPECT_EQ(config_hash(back), config_hash(c));

  const auto dir = fs::temp_directory_path() / "fopro_config";
  fs::create_directories(dir);
  save_config(dir / "c.json", c);
  EXPECT_EQ(to_json(load_config(dir / "c.json")), to_json(c));
}

TEST(Config, HashIgnoresPlacementFields) {
  auto a = desk_config(Method::fopro_kd, 0);
  auto b = a;
  b.out_dir = "/elsewhere";
  b.threads = 4;
  b.debug_phase_isolation = true;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.loss.mu = 9.0;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ErrorsNameTheField) {
  auto j = to_json(desk_config(Method::ce, 0));
  j["loss"]["gamma"] = 2.0;
  try {
    config_from_json(j).validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss"), std::string::npos);
  }
  auto unknown = to_json(desk_config(Method::ce, 0));
  unknown["optimizer"]["lr_typo"] = 1.0;
  EXPECT_THROW(config_from_json(unknown), ConfigError);
  EXPECT_THROW(method_from_string("svm"), ConfigError);
  EXPECT_EQ(method_from_string(to_string(Method::linear_probe)), Method::linear_probe);
}

TEST(Config, MissingKeysKeepDefaults) {
  const auto c = config_from_json(nlohmann::json{{"method", "bsm"}});
  EXPECT_EQ(c.method, Method::bsm);
  EXPECT_EQ(c.batch_size, 32);
  EXPECT_EQ(c.optimizer.lr, 3e-4);
  EXPECT_EQ(c.loss.lambda_f, 3.0);
  EXPECT_EQ(c.schedule.exploit_epochs_per_cycle, 5);
}

TEST(Artifacts, PngRoundTripAndPlots) {
  const auto dir = fs::temp_directory_path() / "fopro_artifacts";
  fs::remove_all(dir);
  auto img = torch::zeros({2, 3, 4, 4});
  img[0][0].fill_(1.0);
  img[1][2].fill_(1.0);
  artifacts::write_image_grid_png(dir / "g.png", img, 2, 1, 0);
  const auto back = artifacts::read_png(dir / "g.png");
  ASSERT_EQ(back.sizes(), (std::vector<int64_t>{4, 8, 3}));
  EXPECT_EQ(back[0][0][0].item<int>(), 255);
  EXPECT_EQ(back[0][4][2].item<int>(), 255);
  EXPECT_EQ(back[0][4][0].item<int>(), 0);
  EXPECT_EQ(artifacts::read_png(dir / "missing.png").numel(), 0);

  artifacts::write_line_plot_svg(dir / "p.svg", "t", "x", "y", {{"loss", {0, 1, 2}, {1.0, 0.5, 0.25}}});
  std::ifstream in(dir / "p.svg");
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  EXPECT_NE(text.find("<svg"), std::string::npos);
  EXPECT_NE(text.find("loss"), std::string::npos);
}
