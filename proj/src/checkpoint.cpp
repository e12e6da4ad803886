#include "cyclenet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cyclenet/config.hpp"

namespace cyclenet {

namespace {

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  uint64_t bits = std::bit_cast<uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const uint8_t* p;
  size_t n, off = 0;
  std::string path;

  void need(size_t k, const char* what) {
    if (off + k > n)
      throw IoError("truncated checkpoint (" + std::string(what) + "): " + path);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[off + size_t(i)]) << (8 * i);
    off += 4;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[off + size_t(i)]) << (8 * i);
    off += 8;
    return std::bit_cast<double>(v);
  }
  std::string str(uint32_t len, const char* what) {
    need(len, what);
    std::string s(reinterpret_cast<const char*>(p + off), len);
    off += len;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                     const std::vector<std::pair<std::string, Tensor>>& records) {
  std::string out = "CYCK";
  put_u32(out, kCheckpointVersion);
  std::string spec_text = network_spec_text(spec);
  put_u32(out, uint32_t(spec_text.size()));
  out += spec_text;
  for (const auto& [name, tensor] : records) {
    put_u32(out, uint32_t(name.size()));
    out += name;
    put_u32(out, uint32_t(tensor.rank()));
    for (int e : tensor.shape()) put_u32(out, uint32_t(e));
    for (size_t i = 0; i < tensor.size(); ++i) put_f64(out, tensor[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError("write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{bytes.data(), bytes.size(), 0, path};

  r.need(4, "magic");
  if (std::memcmp(bytes.data(), "CYCK", 4) != 0) throw IoError("not a checkpoint file: " + path);
  r.off = 4;
  uint32_t version = r.u32("version");
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);

  LoadedCheckpoint ckpt;
  uint32_t spec_len = r.u32("spec length");
  ckpt.spec_text = r.str(spec_len, "spec text");
  ckpt.spec = network_spec_from_config(KeyValueConfig::from_text(ckpt.spec_text));

  while (r.off < r.n) {
    uint32_t name_len = r.u32("record name length");
    std::string name = r.str(name_len, "record name");
    uint32_t rank = r.u32("record rank");
    if (rank < 1 || rank > 4) throw IoError("corrupt record rank in " + path);
    std::vector<int> shape;
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t e = r.u32("record extent");
      if (e == 0 || e > (1u << 28)) throw IoError("corrupt record extent in " + path);
      shape.push_back(int(e));
      numel *= e;
    }
    std::vector<double> data(numel);
    for (size_t i = 0; i < numel; ++i) data[i] = r.f64("record data");
    ckpt.records.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

const Tensor* LoadedCheckpoint::find(const std::string& name) const {
  for (const auto& [n, t] : records)
    if (n == name) return &t;
  return nullptr;
}

double LoadedCheckpoint::scalar_or(const std::string& name, double fallback) const {
  const Tensor* t = find(name);
  return t && t->size() == 1 ? (*t)[0] : fallback;
}

Network network_from_checkpoint(const LoadedCheckpoint& ckpt) {
  Network net(ckpt.spec);
  for (Param* p : net.params()) {
    const Tensor* t = ckpt.find(p->name);
    if (!t) throw IoError("checkpoint is missing parameter " + p->name);
    if (!t->same_shape(p->value))
      throw IoError("checkpoint parameter " + p->name + " has shape " +
                    shape_to_string(t->shape()) + ", network expects " +
                    shape_to_string(p->value.shape()));
    p->value = *t;
  }
  for (auto& [name, tensor] : net.buffers()) {
    const Tensor* t = ckpt.find(name);
    if (!t) throw IoError("checkpoint is missing buffer " + name);
    if (!t->same_shape(*tensor))
      throw IoError("checkpoint buffer " + name + " has mismatched shape");
    *tensor = *t;
  }
  return net;
}

}  // namespace cyclenet
