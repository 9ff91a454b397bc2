#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

#include "fernet/checkpoint.hpp"
#include "fernet/cli.hpp"
#include "fernet/dataset.hpp"
#include "fernet/registration.hpp"
#include "synthetic.hpp"

using namespace fernet;
using fernet::testing::read_text;
using fernet::testing::TempDir;
using fernet::testing::write_text;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

// Runs the installed binary through the shell; returns the exit status.
int run_binary(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FERNET_CLI_PATH) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool contains(const std::string& text, const std::string& needle) {
  return text.find(needle) != std::string::npos;
}

// 70 bar images over 10 subjects; databases "A" and "B" alternate by subject.
void prepare_bars(const fs::path& dir, int databases = 1) {
  DatasetManifest m;
  m.samples = testing::bar_samples(70, 9);
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const int subject = static_cast<int>(i % 10);
    m.samples[i].subject_id = "p" + std::to_string(subject);
    m.samples[i].database_id = databases == 1 ? "bars" : (subject % 2 ? "A" : "B");
  }
  write_prepared(m, dir);
}

std::vector<std::string> small_train_args(const fs::path& data, const fs::path& out) {
  return {"train", "--data", data.string(), "--out", out.string(), "--epochs", "2", "--batch-size", "10",
          "--width-divisor", "8", "--fc7", "512", "--fc8", "256", "--quiet"};
}

std::vector<Point2> face_landmarks(double dx, double dy, double scale) {
  std::vector<Point2> pts;
  for (int i = 0; i < kLandmarkCount; ++i) {
    pts.push_back({30 + dx + scale * ((i % 7) * 6.0 + (i / 7) % 2), 25 + dy + scale * ((i / 7) * 7.0 + i % 3)});
  }
  return pts;
}

std::string landmark_text(const std::vector<Point2>& pts) {
  std::ostringstream s;
  for (const Point2& p : pts) s << p.x << ' ' << p.y << '\n';
  return s.str();
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(cli({}).code != 0);
  CHECK(cli({"bogus"}).code != 0);
  CHECK(cli({"prepare", "--out", "x"}).code != 0);
  CHECK(cli({"--help"}).code == 0);
  CHECK(contains(cli({"--help"}).out, "opcount"));
}

TEST_CASE("prepare from a manifest") {
  TempDir dir("cli_prepare");
  Rng rng(1);
  for (int i = 0; i < 4; ++i) write_gray_image(dir / ("f" + std::to_string(i) + ".png"), testing::random_image(rng));
  write_text(dir / "m.csv",
             "path,label,subject_id,database_id,usage\n"
             "f0.png,AN,s1,MMI,train\n"
             "f1.png,HA,s1,MMI,train\n"
             "f2.png,HA,s2,SFEW,test\n"
             "f3.png,SU,s3,SFEW,val\n");
  const Run r = cli({"prepare", "--manifest", (dir / "m.csv").string(), "--out", (dir / "out").string()});
  INFO(r.out << r.err);
  CHECK(r.code == 0);
  CHECK(contains(r.out, "wrote 4 samples"));
  CHECK(contains(r.out, "MMI"));
  CHECK(contains(r.out, "SFEW"));
  CHECK(contains(r.out, "test"));
  const DatasetManifest back = read_prepared(dir / "out");
  CHECK(back.samples.size() == 4);
  CHECK(back.samples[3].usage == Usage::val);

  write_text(dir / "bad.csv", "path,label,subject_id,database_id,usage\nmissing_face.png,AN,s1,MMI,\n");
  const Run bad = cli({"prepare", "--manifest", (dir / "bad.csv").string(), "--out", (dir / "out2").string()});
  CHECK(bad.code != 0);
  CHECK(contains(bad.err, "missing_face.png"));
  CHECK_FALSE(fs::exists(dir / "out2" / "index.csv"));

  const Run both = cli({"prepare", "--manifest", "a", "--fer2013", "b", "--out", "c"});
  CHECK(both.code != 0);
}

TEST_CASE("prepare from a FER2013 CSV") {
  TempDir dir("cli_fer");
  std::string text = "emotion,pixels,Usage\n";
  for (int r = 0; r < 3; ++r) {
    text += std::to_string(r + 1) + ",";
    for (int i = 0; i < 2304; ++i) text += (i ? " " : "") + std::to_string((i + r) % 256);
    text += r == 2 ? ",PrivateTest\n" : ",Training\n";
  }
  write_text(dir / "fer.csv", text);
  const Run r = cli({"prepare", "--fer2013", (dir / "fer.csv").string(), "--out", (dir / "out").string()});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "FER2013"));
  CHECK(read_prepared(dir / "out").samples.size() == 3);
}

TEST_CASE("register skips images with unusable landmarks") {
  TempDir dir("cli_register");
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "lm");
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const std::string stem = "face" + std::to_string(i);
    write_gray_image(dir / "img" / (stem + ".png"), testing::random_image(rng, 100, 100));
    const double s = 0.9 + 0.02 * i;
    write_text(dir / "lm" / (stem + ".txt"), landmark_text(face_landmarks(i % 3, 2 - i % 2, s)));
  }
  write_text(dir / "lm" / "face4.txt", "1 2\nthree four\n");
  const Run r = cli({"register", "--images", (dir / "img").string(), "--landmarks", (dir / "lm").string(), "--out",
                     (dir / "out").string()});
  INFO(r.out << r.err);
  CHECK(r.code == 0);
  CHECK(contains(r.out, "registered 9 of 10 images"));
  CHECK(contains(r.err, "face4.png"));
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(dir / "out")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 9);
  CHECK_FALSE(fs::exists(dir / "out" / "face4.png"));
  CHECK(read_gray_image(dir / "out" / "face0.png").height == 48);
  CHECK(read_landmarks(dir / "out" / "mean_shape.txt").size() == 49);

  const Run pass = cli({"register", "--images", (dir / "img").string(), "--landmarks", (dir / "lm").string(), "--out",
                        (dir / "out_pass").string(), "--pass-through"});
  CHECK(pass.code == 0);
  CHECK(fs::exists(dir / "out_pass" / "face4.png"));
  CHECK(contains(pass.out, "1 passed through"));
}

TEST_CASE("register with a single aligned face keeps the face window") {
  TempDir dir("cli_register_id");
  fs::create_directories(dir / "img");
  fs::create_directories(dir / "lm");
  GrayImage img(120, 120);
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 120; ++x) img.at(y, x) = static_cast<float>((x + y) % 50) / 49.0f;
  write_gray_image(dir / "img" / "only.png", img);
  const std::vector<Point2> pts = face_landmarks(0, 0, 1);
  write_text(dir / "lm" / "only.txt", landmark_text(pts));
  const Run r = cli({"register", "--images", (dir / "img").string(), "--landmarks", (dir / "lm").string(), "--out",
                     (dir / "out").string()});
  CHECK(r.code == 0);
  CHECK(contains(r.out, "mean landmark residual 0.000 px"));
  const LandmarkSet lm(pts);
  const FaceRegion region = face_region(lm);
  const GrayImage want = warp_affine(read_gray_image(dir / "img" / "only.png"), region.to_output(), 48, 48);
  const GrayImage got = read_gray_image(dir / "out" / "only.png");
  float worst = 0;
  for (std::size_t i = 0; i < got.pixels.size(); ++i) worst = std::max(worst, std::abs(got.pixels[i] - want.pixels[i]));
  CHECK(worst <= 1.0f / 255.0f + 1e-6f);
}

TEST_CASE("k-fold training writes one checkpoint per fold and eval reproduces it") {
  TempDir dir("cli_kfold");
  prepare_bars(dir / "data");
  auto args = small_train_args(dir / "data", dir / "run");
  args.insert(args.end(), {"--protocol", "kfold", "--k", "5"});
  const Run r = cli(args);
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  for (int f = 0; f < 5; ++f) {
    const fs::path fold = dir / "run" / ("fold" + std::to_string(f));
    CHECK(fs::exists(fold / "checkpoint.fern"));
    CHECK(fs::exists(fold / "history.csv"));
    CHECK(fs::exists(fold / "metrics.csv"));
    CHECK(contains(read_text(fold / "train.log"), "training samples drawn per database"));
  }
  CHECK(contains(read_text(dir / "run" / "report.txt"), "±"));
  CHECK(contains(read_text(dir / "run" / "metrics.csv"), "top1_sd,"));
  CHECK(contains(r.out, "top-1"));

  const fs::path fold2 = dir / "run" / "fold2";
  const Run e = cli({"eval", "--checkpoint", (fold2 / "checkpoint.fern").string(), "--data", (dir / "data").string(),
                     "--subset", (fold2 / "test.idx").string(), "--out", (dir / "eval").string()});
  INFO(e.err);
  REQUIRE(e.code == 0);
  CHECK(read_text(dir / "eval" / "metrics.csv") == read_text(fold2 / "metrics.csv"));
  CHECK(read_text(dir / "eval" / "report.txt") == read_text(fold2 / "report.txt"));
  CHECK(contains(e.out, "views: 1"));

  const Run e11 = cli({"eval", "--checkpoint", (fold2 / "checkpoint.fern").string(), "--data",
                       (dir / "data").string(), "--views", "11"});
  CHECK(e11.code == 0);
  CHECK(contains(e11.out, "views: 11"));
  CHECK(contains(e11.out, "samples: 70"));

  const Run db = cli({"eval", "--checkpoint", (fold2 / "checkpoint.fern").string(), "--data",
                      (dir / "data").string(), "--db", "nope"});
  CHECK(db.code != 0);
}

TEST_CASE("training is reproducible from the command line") {
  TempDir dir("cli_repeat");
  prepare_bars(dir / "data");
  for (const char* run : {"a", "b"}) {
    auto args = small_train_args(dir / "data", dir / run);
    args.insert(args.end(), {"--k", "5", "--fold", "1", "--seed", "3"});
    REQUIRE(cli(args).code == 0);
  }
  CHECK(read_text(dir / "a" / "fold1" / "history.csv") == read_text(dir / "b" / "fold1" / "history.csv"));
  CHECK(read_text(dir / "a" / "fold1" / "checkpoint.fern") == read_text(dir / "b" / "fold1" / "checkpoint.fern"));
  CHECK_FALSE(fs::exists(dir / "a" / "fold0"));
}

TEST_CASE("cross-database training never draws the evaluation database") {
  TempDir dir("cli_crossdb");
  prepare_bars(dir / "data", 2);
  auto args = small_train_args(dir / "data", dir / "run");
  args.insert(args.end(), {"--protocol", "crossdb", "--eval-db", "A"});
  const Run r = cli(args);
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  const std::string log = read_text(dir / "run" / "train.log");
  CHECK(contains(log, "evaluation database A samples drawn in training: 0"));
  CHECK(contains(log, "  B 70"));  // 35 samples, 2 epochs
  CHECK(fs::exists(dir / "run" / "checkpoint.fern"));
  CHECK(contains(read_text(dir / "run" / "metrics.csv"), "samples,35\n"));

  auto missing = small_train_args(dir / "data", dir / "run2");
  missing.insert(missing.end(), {"--protocol", "crossdb", "--eval-db", "C"});
  CHECK(cli(missing).code != 0);
}

TEST_CASE("eval of a missing checkpoint fails") {
  TempDir dir("cli_eval_missing");
  prepare_bars(dir / "data");
  const Run r = cli({"eval", "--checkpoint", (dir / "nope.fern").string(), "--data", (dir / "data").string()});
  CHECK(r.code != 0);
  CHECK(contains(r.err, "nope.fern"));
  CHECK(run_binary("eval --checkpoint '" + (dir / "nope.fern").string() + "' --data '" + (dir / "data").string() + "'",
                   dir / "log.txt") != 0);
}

TEST_CASE("opcount") {
  const Run r = cli({"opcount"});
  CHECK(r.code == 0);
  for (const char* layer : {"conv1", "pool1", "conv2", "inception_3a", "inception_3b", "inception_4a", "fc7", "fc8"})
    CHECK(contains(r.out, layer));
  CHECK(contains(r.out, "1,806,336"));
  const Run rgb = cli({"opcount", "--channels", "3"});
  CHECK(contains(rgb.out, "5,419,008"));
  CHECK(cli({"opcount", "--channels", "2"}).code != 0);
}

TEST_CASE("gradcheck") {
  TempDir dir("cli_gradcheck");
  CHECK(run_binary("gradcheck --seed 4", dir / "a.txt") == 0);
  CHECK(run_binary("gradcheck --seed 4", dir / "b.txt") == 0);
  CHECK(read_text(dir / "a.txt") == read_text(dir / "b.txt"));
  CHECK(contains(read_text(dir / "a.txt"), "inception"));

  const Run bad = cli({"gradcheck", "--sabotage", "concat"});
  CHECK(bad.code != 0);
  CHECK(contains(bad.err, "layer concat"));
}
