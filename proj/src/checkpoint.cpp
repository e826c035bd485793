// SPDX-License-Identifier: Apache-2.0

#include "mvssm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mvssm {
namespace {

constexpr char kMagic[8] = {'R', 'G', 'S', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void scalar(T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    bytes(buf, sizeof(T));
  }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f64s(const std::vector<double>& v) {
    for (double d : v) scalar(d);
  }
  void text(const std::string& s, bool wide) {
    if (wide)
      u64(s.size());
    else
      u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  const std::uint8_t* take(std::size_t n) {
    if (n > in_.size() - pos_) throw CheckpointError("truncated checkpoint");
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T scalar() {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, take(sizeof(T)), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  std::vector<double> f64s(std::size_t n) {
    if (n > (in_.size() - pos_) / sizeof(double)) throw CheckpointError("truncated checkpoint");
    std::vector<double> v(n);
    for (auto& d : v) d = scalar<double>();
    return v;
  }
  std::string text(bool wide) {
    const std::uint64_t n = wide ? u64() : u32();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

Checkpoint capture(const ParameterStore& store, std::string config_text, std::uint64_t step) {
  Checkpoint c;
  c.config_text = std::move(config_text);
  c.step = step;
  for (const Parameter* p : store.all()) {
    ParameterRecord r;
    r.name = p->name;
    r.shape = p->shape();
    r.value.assign(p->value.values().begin(), p->value.values().end());
    r.adam_step = p->step;
    r.first_moment = p->first_moment;
    r.second_moment = p->second_moment;
    c.params.push_back(std::move(r));
  }
  return c;
}

void restore(ParameterStore& store, const Checkpoint& checkpoint) {
  if (checkpoint.params.size() != store.size())
    throw CheckpointError("checkpoint holds " + std::to_string(checkpoint.params.size()) +
                          " parameters, model has " + std::to_string(store.size()));
  for (const auto& r : checkpoint.params) {
    if (!store.contains(r.name)) throw CheckpointError("checkpoint parameter " + r.name + " not in model");
    if (store.find(r.name).shape() != r.shape)
      throw CheckpointError("shape mismatch for " + r.name + ": checkpoint " + shape_str(r.shape) + ", model " +
                            shape_str(store.find(r.name).shape()));
  }
  for (const auto& r : checkpoint.params) {
    Parameter& p = store.find(r.name);
    auto dst = p.value.mutable_values();
    std::copy(r.value.begin(), r.value.end(), dst.begin());
    p.step = r.adam_step;
    p.first_moment = r.first_moment;
    p.second_moment = r.second_moment;
    p.zero_grad();
  }
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.text(checkpoint.config_text, true);
  w.u64(checkpoint.step);
  w.u64(checkpoint.params.size());
  for (const auto& r : checkpoint.params) {
    if (r.value.size() != numel_of(r.shape)) throw CheckpointError("record " + r.name + " has inconsistent size");
    const bool moments = !r.first_moment.empty();
    if (moments && (r.first_moment.size() != r.value.size() || r.second_moment.size() != r.value.size()))
      throw CheckpointError("record " + r.name + " has inconsistent optimizer state");
    w.text(r.name, false);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.u64(d);
    w.f64s(r.value);
    w.u64(r.adam_step);
    w.scalar<std::uint8_t>(moments ? 1 : 0);
    if (moments) {
      w.f64s(r.first_moment);
      w.f64s(r.second_moment);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0)
    throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_text = r.text(true);
  c.step = r.u64();
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    ParameterRecord p;
    p.name = r.text(false);
    const auto rank = r.u32();
    if (rank > 8) throw CheckpointError("implausible rank for " + p.name);
    for (std::uint32_t d = 0; d < rank; ++d) p.shape.push_back(r.u64());
    p.value = r.f64s(numel_of(p.shape));
    p.adam_step = r.u64();
    const auto flag = r.scalar<std::uint8_t>();
    if (flag > 1) throw CheckpointError("corrupt moment flag for " + p.name);
    if (flag == 1) {
      p.first_moment = r.f64s(p.value.size());
      p.second_moment = r.f64s(p.value.size());
    }
    c.params.push_back(std::move(p));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mvssm
