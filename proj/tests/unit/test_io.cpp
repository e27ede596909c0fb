#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "wf/io.hpp"
#include "wf/train.hpp"

using namespace wf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wf_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.depth = 3;
  cfg.period = 2;
  cfg.width = 8;
  cfg.patch = 4;
  cfg.image_height = cfg.image_width = 16;
  return cfg;
}

}  // namespace

TEST_CASE("DWT1 byte layout") {
  std::ostringstream os;
  write_tensor(os, Tensor({1, 2}, std::vector<double>{1.0, -2.0}));
  const std::string b = os.str();
  REQUIRE(b.size() == 8 + 4 + 2 * 8 + 2 * 8);
  CHECK(b.substr(0, 8) == "DWTENSR1");
  CHECK(b.substr(8, 4) == std::string("\x02\x00\x00\x00", 4));
  CHECK(b.substr(12, 8) == std::string("\x01\x00\x00\x00\x00\x00\x00\x00", 8));
  CHECK(b.substr(20, 8) == std::string("\x02\x00\x00\x00\x00\x00\x00\x00", 8));
  // 1.0 = 0x3FF0000000000000, little endian.
  CHECK(b.substr(28, 8) == std::string("\x00\x00\x00\x00\x00\x00\xF0\x3F", 8));
  CHECK(static_cast<unsigned char>(b[43]) == 0xC0);
}

TEST_CASE("DWT1 round trip") {
  Rng rng(1);
  for (const Shape& s : {Shape{}, Shape{5}, Shape{3, 4}, Shape{2, 3, 4}, Shape{1, 1, 1, 7}}) {
    const Tensor t = Tensor::randn(s, rng);
    std::stringstream ss;
    write_tensor(ss, t);
    CHECK(read_tensor(ss) == t);
  }
  const fs::path p = scratch("rt.dwt");
  const Tensor t = Tensor::randn({4, 4}, rng);
  save_tensor(p, t);
  CHECK(load_tensor(p) == t);
  fs::remove(p);
}

TEST_CASE("DWT1 rejects malformed input") {
  auto read = [](const std::string& bytes) {
    std::istringstream in(bytes);
    return read_tensor(in);
  };
  CHECK_THROWS_AS(read("DWTENSR2"), IoError);
  CHECK_THROWS_AS(read("DWTENS"), IoError);
  std::ostringstream os;
  write_tensor(os, Tensor({3}, 1.0));
  const std::string good = os.str();
  CHECK_THROWS_AS(read(good.substr(0, good.size() - 1)), IoError);
  std::string zero = good;
  zero[12] = 0;
  CHECK_THROWS_AS(read(zero), IoError);
  std::string big_rank = good;
  big_rank[8] = 100;
  CHECK_THROWS_AS(read(big_rank), IoError);
  CHECK_THROWS_AS(load_tensor("/nonexistent/x.dwt"), IoError);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(2);
  InitOptions o;
  o.zero_predictors = false;
  const Model m = init_model(small_model(), rng, o);
  const fs::path dir = scratch("ckpt");
  save_checkpoint(dir, m);
  CHECK(fs::exists(dir / "manifest.txt"));
  CHECK(fs::exists(dir / "blocks.1.fc1.delta.w1.dwt"));
  const Model back = load_checkpoint(dir);
  CHECK(back.config == m.config);
  const Tensor img = Tensor::randn({3, 16, 16}, rng);
  CHECK(model_forward(img, back) == model_forward(img, m));

  const fs::path again = scratch("ckpt2");
  save_checkpoint(again, back);
  CHECK(bytes_of(again / "manifest.txt") == bytes_of(dir / "manifest.txt"));
  CHECK(bytes_of(again / "head.w.dwt") == bytes_of(dir / "head.w.dwt"));
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST_CASE("checkpoint errors name the parameter") {
  Rng rng(3);
  const Model m = init_model(small_model(), rng);
  const fs::path dir = scratch("ckpt_bad");

  auto expect_error = [&](const std::string& fragment) {
    try {
      load_checkpoint(dir);
      FAIL("expected a checkpoint error");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find(fragment) != std::string::npos);
    }
  };

  save_checkpoint(dir, m);
  save_tensor(dir / "blocks.2.ln1.g.dwt", Tensor({7}));
  expect_error("blocks.2.ln1.g");

  save_checkpoint(dir, m);
  fs::remove(dir / "norm.b.dwt");
  expect_error("norm.b");

  save_checkpoint(dir, m);
  {
    std::ofstream out(dir / "manifest.txt", std::ios::app);
    out << "tensor.blocks.0.extra=blocks.0.extra.dwt\n";
  }
  expect_error("blocks.0.extra");

  save_checkpoint(dir, m);
  {
    std::ofstream out(dir / "manifest.txt", std::ios::app);
    out << "model.width=abc\n";
  }
  CHECK_THROWS_AS(load_checkpoint(dir), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), CheckpointError);
  fs::remove_all(dir);
}
