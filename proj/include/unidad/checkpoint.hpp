#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "unidad/network.hpp"
#include "unidad/rng.hpp"
#include "unidad/tensor.hpp"

namespace unidad {

/// Checkpoint container, decoupled from any trainer layout: named tensor
/// lists per model, named optimizer states, RNG snapshot, step counter, and
/// free-form metadata. All integers little-endian, all reals 64-bit.
struct Checkpoint {
  static constexpr char kMagic[4] = {'U', 'D', 'A', 'D'};
  static constexpr std::uint16_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::map<std::string, std::vector<Tensor>> models;
  std::map<std::string, AdamState> optims;
  std::uint64_t rng_seed = 0;
  std::vector<std::pair<std::string, std::uint64_t>> rng_streams;
  std::uint64_t step = 0;
};

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw std::runtime_error("cannot open '" + path + "' for writing");
  }

  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }

  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void doubles(const std::vector<double>& v) {
    u64(v.size());
    bytes(v.data(), v.size() * sizeof(double));
  }

  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("failed writing '" + path_ + "'");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void bytes(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw std::runtime_error("checkpoint '" + path_ + "' truncated at byte " +
                               std::to_string(pos_));
    }
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }

  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  double f64() { double v; bytes(&v, 8); return v; }

  std::string str() {
    const std::uint32_t n = u32();
    if (n > buf_.size()) {
      throw std::runtime_error("checkpoint '" + path_ + "': implausible string length");
    }
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  std::vector<double> doubles() {
    const std::uint64_t n = u64();
    if (n * sizeof(double) > buf_.size()) {
      throw std::runtime_error("checkpoint '" + path_ + "': implausible array length");
    }
    std::vector<double> v(n);
    bytes(v.data(), n * sizeof(double));
    return v;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_checkpoint_file(const Checkpoint& ck, const std::string& path) {
  detail::ByteWriter w(path);
  w.bytes(Checkpoint::kMagic, 4);
  w.u16(Checkpoint::kVersion);
  w.u32(static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(ck.models.size()));
  for (const auto& [name, tensors] : ck.models) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const Tensor& t : tensors) {
      w.u32(static_cast<std::uint32_t>(t.shape().size()));
      for (int e : t.shape()) w.u64(static_cast<std::uint64_t>(e));
      w.doubles(t.data());
    }
  }
  w.u32(static_cast<std::uint32_t>(ck.optims.size()));
  for (const auto& [name, st] : ck.optims) {
    w.str(name);
    w.f64(st.lr);
    w.f64(st.beta1);
    w.f64(st.beta2);
    w.f64(st.eps);
    w.u64(st.step_count);
    w.doubles(st.m);
    w.doubles(st.v);
  }
  w.u64(ck.rng_seed);
  w.u32(static_cast<std::uint32_t>(ck.rng_streams.size()));
  for (const auto& [name, counter] : ck.rng_streams) {
    w.str(name);
    w.u64(counter);
  }
  w.u64(ck.step);
  w.close();
}

/// Parses the whole file before returning, so a corrupt checkpoint yields an
/// error and no partially filled container.
inline Checkpoint read_checkpoint_file(const std::string& path) {
  detail::ByteReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, Checkpoint::kMagic, 4) != 0) {
    throw std::runtime_error("'" + path + "' is not a checkpoint (bad magic)");
  }
  const std::uint16_t version = r.u16();
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("checkpoint '" + path + "' has version " + std::to_string(version) +
                             ", expected " + std::to_string(Checkpoint::kVersion));
  }
  Checkpoint ck;
  const std::uint32_t n_meta = r.u32();
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    std::string k = r.str();
    ck.meta[k] = r.str();
  }
  const std::uint32_t n_models = r.u32();
  for (std::uint32_t i = 0; i < n_models; ++i) {
    const std::string name = r.str();
    const std::uint32_t n_tensors = r.u32();
    std::vector<Tensor> tensors;
    tensors.reserve(n_tensors);
    for (std::uint32_t j = 0; j < n_tensors; ++j) {
      const std::uint32_t rank = r.u32();
      std::vector<int> shape(rank);
      for (std::uint32_t k = 0; k < rank; ++k) shape[k] = static_cast<int>(r.u64());
      std::vector<double> data = r.doubles();
      if (detail::shape_numel(shape) != data.size()) {
        throw std::runtime_error("checkpoint '" + path + "': tensor " + std::to_string(j) +
                                 " of model '" + name + "' has inconsistent shape");
      }
      tensors.emplace_back(std::move(shape), std::move(data));
    }
    ck.models.emplace(name, std::move(tensors));
  }
  const std::uint32_t n_optims = r.u32();
  for (std::uint32_t i = 0; i < n_optims; ++i) {
    const std::string name = r.str();
    AdamState st;
    st.lr = r.f64();
    st.beta1 = r.f64();
    st.beta2 = r.f64();
    st.eps = r.f64();
    st.step_count = r.u64();
    st.m = r.doubles();
    st.v = r.doubles();
    if (st.m.size() != st.v.size()) {
      throw std::runtime_error("checkpoint '" + path + "': optimizer '" + name +
                               "' moment arrays disagree");
    }
    ck.optims.emplace(name, std::move(st));
  }
  ck.rng_seed = r.u64();
  const std::uint32_t n_streams = r.u32();
  for (std::uint32_t i = 0; i < n_streams; ++i) {
    std::string name = r.str();
    const std::uint64_t counter = r.u64();
    ck.rng_streams.emplace_back(std::move(name), counter);
  }
  ck.step = r.u64();
  if (!r.at_end()) {
    throw std::runtime_error("checkpoint '" + path + "' has trailing bytes");
  }
  return ck;
}

/// Copies stored tensors onto a model's parameters, insisting on identical
/// shapes in order.
inline void load_model_params(const Checkpoint& ck, const std::string& name,
                              const std::vector<Tensor>& params) {
  const auto it = ck.models.find(name);
  if (it == ck.models.end()) {
    throw std::runtime_error("checkpoint is missing model block '" + name + "'");
  }
  const std::vector<Tensor>& stored = it->second;
  if (stored.size() != params.size()) {
    throw std::runtime_error("checkpoint model '" + name + "' holds " +
                             std::to_string(stored.size()) + " tensors, expected " +
                             std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (stored[i].shape() != params[i].shape()) {
      throw std::runtime_error("checkpoint model '" + name + "' tensor " + std::to_string(i) +
                               " has shape " + detail::shape_str(stored[i].shape()) +
                               ", expected " + detail::shape_str(params[i].shape()));
    }
    const_cast<Tensor&>(params[i]).data() = stored[i].data();
  }
}

}  // namespace unidad
