#include "checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "common.hpp"

namespace c3ca {

namespace {

constexpr char kMagic[4] = {'C', '3', 'C', 'A'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) {
    if (pos + n > buf.size()) fail_io("truncated checkpoint: " + path);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    }
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  uint8_t u8() {
    need(1);
    return static_cast<unsigned char>(buf[pos++]);
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  bool at_end() const { return pos == buf.size(); }
};

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<CheckpointRecord>& records) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  for (const auto& rec : records) {
    if (rec.name.empty()) fail_invalid("checkpoint record has empty name");
    if (rec.shape.empty()) fail_invalid("checkpoint record has empty shape");
    int64_t n = 1;
    for (int64_t d : rec.shape) {
      if (d < 1) fail_invalid("checkpoint record has bad dimension");
      n *= d;
    }
    if (static_cast<int64_t>(rec.data.size()) != n) {
      fail_invalid("checkpoint record size mismatch for " + rec.name);
    }
    put_u32(out, static_cast<uint32_t>(rec.name.size()));
    out.append(rec.name);
    out.push_back(rec.frozen ? 1 : 0);
    put_u32(out, static_cast<uint32_t>(rec.shape.size()));
    for (int64_t d : rec.shape) put_u64(out, static_cast<uint64_t>(d));
    for (double v : rec.data) put_f64(out, v);
  }
  write_text_file_atomic(path, out);
}

std::vector<CheckpointRecord> load_checkpoint(const std::string& path) {
  std::string buf = read_text_file(path);
  Reader r{buf, 0, path};
  if (r.bytes(4) != std::string(kMagic, 4)) {
    fail_io("not a checkpoint file (bad magic): " + path);
  }
  uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail_io("unsupported checkpoint version " + std::to_string(version) + ": " +
            path);
  }
  std::vector<CheckpointRecord> records;
  while (!r.at_end()) {
    CheckpointRecord rec;
    uint32_t name_len = r.u32();
    rec.name = r.bytes(name_len);
    rec.frozen = r.u8() != 0;
    uint32_t rank = r.u32();
    if (rank < 1 || rank > 2) {
      fail_io("checkpoint record " + rec.name + " has unsupported rank");
    }
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint64_t d = r.u64();
      if (d < 1 || d > (1ull << 32)) {
        fail_io("checkpoint record " + rec.name + " has bad dimension");
      }
      rec.shape.push_back(static_cast<int64_t>(d));
      n *= static_cast<int64_t>(d);
    }
    rec.data.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) rec.data[static_cast<size_t>(i)] = r.f64();
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace c3ca
