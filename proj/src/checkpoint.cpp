// SPDX-License-Identifier: Apache-2.0
#include "normprobe/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "normprobe/digest.hpp"

namespace normprobe {

namespace {

constexpr char kMagic[4] = {'N', 'P', 'C', 'K'};
constexpr double kMaxExactCount = 16777216.0;  // 2^24

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

NamedTensor from_tensor(std::string name, const Tensor3f& t) {
  const Shape3 s = t.shape();
  return {std::move(name),
          {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.s)},
          t.storage()};
}

NamedTensor scalar(std::string name, std::uint64_t count) {
  if (static_cast<double>(count) > kMaxExactCount) {
    throw CheckpointError(name + " = " + std::to_string(count) + " is not exact in 32-bit floating point");
  }
  return {std::move(name), {}, {static_cast<float>(count)}};
}

const NamedTensor& require(const Checkpoint& ckpt, const std::string& name) {
  const NamedTensor* t = ckpt.find(name);
  if (!t) throw CheckpointError("checkpoint has no tensor " + name);
  return *t;
}

void copy_into(const Checkpoint& ckpt, const std::string& name, Tensor3f& dst) {
  const NamedTensor& src = require(ckpt, name);
  const Shape3 s = dst.shape();
  const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
                                        static_cast<std::uint32_t>(s.s)};
  if (src.dims != dims) throw CheckpointError("tensor " + name + " has the wrong shape for this model");
  dst.storage() = src.data;
}

std::uint64_t read_count(const Checkpoint& ckpt, const std::string& name) {
  const NamedTensor& t = require(ckpt, name);
  if (!t.dims.empty() || t.data.size() != 1) throw CheckpointError(name + " must be a scalar");
  return static_cast<std::uint64_t>(t.data[0]);
}

}  // namespace

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    std::size_t numel = 1;
    for (auto d : t.dims) numel *= d;
    if (numel != t.data.size()) throw CheckpointError("tensor " + t.name + " data does not match its dims");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) throw CheckpointError("not an NPCK checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Checkpoint ckpt;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32();
    t.name = std::string(r.take(name_len));
    const std::uint32_t rank = r.u32();
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.u32());
      numel *= t.dims.back();
    }
    if (numel > bytes.size() / 4) throw CheckpointError("tensor " + t.name + " is larger than the file");
    t.data.resize(numel);
    for (auto& v : t.data) v = std::bit_cast<float>(r.u32());
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after the last tensor");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint capture_checkpoint(LocCnn& model, const AdamState<float>* optimizer) {
  Checkpoint ckpt;
  const auto named = model.named_parameters();
  for (const auto& [name, t] : named) ckpt.tensors.push_back(from_tensor(name, *t));
  const auto& norms = model.norms();
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const std::string prefix = "norm" + std::to_string(i);
    ckpt.tensors.push_back(from_tensor(prefix + ".running_mean", norms[i].running_mean));
    ckpt.tensors.push_back(from_tensor(prefix + ".running_var", norms[i].running_var));
    ckpt.tensors.push_back(scalar(prefix + ".ema_updates", norms[i].ema_updates));
  }
  if (optimizer) {
    if (optimizer->first_moment.size() != named.size()) {
      throw CheckpointError("optimizer state does not match the model parameters");
    }
    ckpt.tensors.push_back(scalar("adam.step", optimizer->step));
    for (std::size_t i = 0; i < named.size(); ++i) {
      ckpt.tensors.push_back(from_tensor("adam.m." + named[i].first, optimizer->first_moment[i]));
      ckpt.tensors.push_back(from_tensor("adam.v." + named[i].first, optimizer->second_moment[i]));
    }
  }
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, LocCnn& model, AdamState<float>* optimizer) {
  const auto named = model.named_parameters();
  for (const auto& [name, t] : named) copy_into(ckpt, name, *t);
  auto& norms = model.norms();
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const std::string prefix = "norm" + std::to_string(i);
    copy_into(ckpt, prefix + ".running_mean", norms[i].running_mean);
    copy_into(ckpt, prefix + ".running_var", norms[i].running_var);
    norms[i].ema_updates = read_count(ckpt, prefix + ".ema_updates");
  }
  if (optimizer) {
    if (optimizer->first_moment.size() != named.size()) {
      throw CheckpointError("optimizer state does not match the model parameters");
    }
    optimizer->step = read_count(ckpt, "adam.step");
    for (std::size_t i = 0; i < named.size(); ++i) {
      copy_into(ckpt, "adam.m." + named[i].first, optimizer->first_moment[i]);
      copy_into(ckpt, "adam.v." + named[i].first, optimizer->second_moment[i]);
    }
  }
}

}  // namespace normprobe
