#include "patchformer/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "patchformer/errors.hpp"

namespace patchformer {

namespace {

constexpr char kMagic[8] = {'P', 'F', 'C', 'K', 'P', 'T', '\0', '\1'};
constexpr std::uint32_t kVersion = 1;
// Guards against absurd allocations when reading a corrupt file.
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 34;

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u64(std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out_.write(buf, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void strings(const std::vector<std::string>& v) {
    u64(v.size());
    for (const auto& s : v) str(s);
  }
  void map(const std::map<std::string, std::string>& m) {
    u64(m.size());
    for (const auto& [k, v] : m) {
      str(k);
      str(v);
    }
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  std::uint64_t u64() {
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), 8);
    if (in_.gcount() != 8) fail("truncated file");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | buf[i];
    return v;
  }
  std::uint64_t count() {
    const std::uint64_t n = u64();
    if (n > kMaxCount) fail("implausible element count " + std::to_string(n));
    return n;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    std::string s(count(), '\0');
    in_.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (static_cast<std::size_t>(in_.gcount()) != s.size()) fail("truncated string");
    return s;
  }
  std::vector<std::string> strings() {
    std::vector<std::string> v(count());
    for (auto& s : v) s = str();
    return v;
  }
  std::map<std::string, std::string> map() {
    std::map<std::string, std::string> m;
    const std::uint64_t n = count();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string k = str();
      m[k] = str();
    }
    return m;
  }
  std::vector<double> doubles() {
    std::vector<double> v(count());
    for (auto& x : v) x = f64();
    return v;
  }

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("checkpoint '" + path_ + "': " + why);
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

PatchformerModel Checkpoint::build_model() const {
  PatchformerModel model(config);
  load_weights(model, *this);
  return model;
}

Checkpoint make_checkpoint(const PatchformerModel& model, const Scaler& scaler,
                           const std::vector<std::string>& channel_names,
                           const std::map<std::string, std::string>& metadata) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  ckpt.metadata = metadata;
  ckpt.channel_names = channel_names;
  ckpt.scaler = scaler;
  for (const auto& e : model.parameters()) {
    ckpt.param_names.push_back(e.name);
    ckpt.param_shapes.push_back(e.tensor.shape());
  }
  ckpt.param_values = model.parameters().snapshot();
  return ckpt;
}

void load_weights(PatchformerModel& model, const Checkpoint& ckpt) {
  const auto& entries = model.parameters().entries();
  if (entries.size() != ckpt.param_names.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.param_names.size()) + " parameters, model expects " +
                      std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != ckpt.param_names[i]) {
      throw ConfigError("checkpoint parameter '" + ckpt.param_names[i] + "' does not match model parameter '" +
                        entries[i].name + "'");
    }
    if (entries[i].tensor.shape() != ckpt.param_shapes[i]) {
      throw ConfigError("checkpoint parameter '" + ckpt.param_names[i] + "' has shape " +
                        to_string(ckpt.param_shapes[i]) + ", model expects " + to_string(entries[i].tensor.shape()));
    }
  }
  model.parameters().restore(ckpt.param_values);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (ckpt.param_names.size() != ckpt.param_shapes.size() || ckpt.param_names.size() != ckpt.param_values.size()) {
    throw ConfigError("inconsistent checkpoint contents");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  Writer w(out);
  out.write(kMagic, sizeof(kMagic));
  w.u64(kVersion);
  w.map(ckpt.config.record());
  w.map(ckpt.metadata);
  w.strings(ckpt.channel_names);
  w.doubles(ckpt.scaler.mean);
  w.doubles(ckpt.scaler.std);
  w.u64(ckpt.param_names.size());
  for (std::size_t i = 0; i < ckpt.param_names.size(); ++i) {
    w.str(ckpt.param_names[i]);
    w.u64(ckpt.param_shapes[i].size());
    for (std::size_t d : ckpt.param_shapes[i]) w.u64(d);
    if (ckpt.param_values[i].size() != element_count(ckpt.param_shapes[i])) {
      throw ConfigError("checkpoint parameter '" + ckpt.param_names[i] + "' has the wrong element count");
    }
    for (double x : ckpt.param_values[i]) w.f64(x);
  }
  out.flush();
  if (!out) throw ConfigError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  Reader r(in, path);
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("not a checkpoint file");
  const std::uint64_t version = r.u64();
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_record(r.map());
  ckpt.metadata = r.map();
  ckpt.channel_names = r.strings();
  ckpt.scaler.mean = r.doubles();
  ckpt.scaler.std = r.doubles();
  const std::uint64_t n = r.count();
  for (std::uint64_t i = 0; i < n; ++i) {
    ckpt.param_names.push_back(r.str());
    const std::uint64_t rank = r.count();
    if (rank > 8) r.fail("implausible rank for '" + ckpt.param_names.back() + "'");
    Shape shape(rank);
    for (auto& d : shape) d = r.count();
    const std::size_t numel = element_count(shape);
    if (numel > kMaxCount) r.fail("implausible size for '" + ckpt.param_names.back() + "'");
    std::vector<double> values(numel);
    for (auto& x : values) x = r.f64();
    ckpt.param_shapes.push_back(std::move(shape));
    ckpt.param_values.push_back(std::move(values));
  }
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after parameters");
  return ckpt;
}

}  // namespace patchformer
