#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>

#include "checkpoint.hpp"
#include "common.hpp"
#include "doctest.h"

using namespace c3ca;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "c3ca_ckpt_test";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("checkpoint round trip is exact") {
  auto path = (temp_dir() / "roundtrip.ckpt").string();
  std::vector<CheckpointRecord> records;
  records.push_back({"alpha.w", false, {2, 3}, {1.0, -2.5, 3.25, 0.0, 1e-300, -0.0}});
  records.push_back({"alpha.b", true, {3}, {0.1, 0.2, 0.3}});
  records.push_back({"__opt.step", false, {1}, {42.0}});
  save_checkpoint(path, records);

  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].name == records[i].name);
    CHECK(loaded[i].frozen == records[i].frozen);
    CHECK(loaded[i].shape == records[i].shape);
    REQUIRE(loaded[i].data.size() == records[i].data.size());
    for (size_t j = 0; j < records[i].data.size(); ++j) {
      // Bitwise equality, including signed zero.
      CHECK(std::memcmp(&loaded[i].data[j], &records[i].data[j],
                        sizeof(double)) == 0);
    }
  }
  fs::remove(path);
}

TEST_CASE("checkpoint save is byte-stable") {
  auto p1 = (temp_dir() / "stable1.ckpt").string();
  auto p2 = (temp_dir() / "stable2.ckpt").string();
  std::vector<CheckpointRecord> records{{"w", false, {2}, {1.5, -2.5}}};
  save_checkpoint(p1, records);
  save_checkpoint(p2, records);
  CHECK(read_text_file(p1) == read_text_file(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("checkpoint rejects garbage") {
  auto dir = temp_dir();
  auto bad_magic = (dir / "bad_magic.ckpt").string();
  write_text_file_atomic(bad_magic, "NOPE after that whatever");
  CHECK_THROWS_AS(load_checkpoint(bad_magic), Error);

  auto good = (dir / "good.ckpt").string();
  save_checkpoint(good, {{"w", false, {2}, {1.0, 2.0}}});
  std::string bytes = read_text_file(good);

  auto truncated = (dir / "truncated.ckpt").string();
  write_text_file_atomic(truncated, bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint(truncated), Error);

  auto bad_version = (dir / "bad_version.ckpt").string();
  std::string vbytes = bytes;
  vbytes[4] = 99;
  write_text_file_atomic(bad_version, vbytes);
  CHECK_THROWS_AS(load_checkpoint(bad_version), Error);

  CHECK_THROWS_AS(load_checkpoint((dir / "missing.ckpt").string()), Error);
  fs::remove(bad_magic);
  fs::remove(good);
  fs::remove(truncated);
  fs::remove(bad_version);
}

TEST_CASE("checkpoint validates records on save") {
  auto path = (temp_dir() / "invalid.ckpt").string();
  CHECK_THROWS_AS(save_checkpoint(path, {{"", false, {1}, {1.0}}}), Error);
  CHECK_THROWS_AS(save_checkpoint(path, {{"w", false, {2}, {1.0}}}), Error);
  CHECK_THROWS_AS(save_checkpoint(path, {{"w", false, {}, {}}}), Error);
  CHECK_FALSE(file_exists(path));
}

TEST_CASE("checkpoint leaves no temp files behind") {
  auto dir = temp_dir() / "atomic";
  fs::create_directories(dir);
  auto path = (dir / "a.ckpt").string();
  save_checkpoint(path, {{"w", false, {1}, {7.0}}});
  size_t entries = 0;
  for (auto& e : fs::directory_iterator(dir)) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 1);
  fs::remove_all(dir);
}
