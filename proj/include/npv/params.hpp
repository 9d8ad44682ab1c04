#pragma once

// Named parameter registry: every learnable tensor and running-statistic
// buffer lives here under a hierarchical name, with a versioned binary
// archive format for checkpoints.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "npv/autodiff.hpp"
#include "npv/errors.hpp"
#include "npv/rng.hpp"

namespace npv::params {

using ad::Mat;
using ad::Tensor;

enum class Init { zero, one, normal };

struct Entry {
  std::string name;
  Tensor tensor;
  bool trainable = true;
  std::string group = "shared";  // "shared" vs "head" (finetune-exclusive)
};

class Registry {
 public:
  explicit Registry(uint64_t seed) : seed_(seed) {}

  void set_group(std::string group) { group_ = std::move(group); }

  // Trainable parameter, deterministically initialized from (seed, name).
  Tensor param(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init,
               double scale = 1.0) {
    check(!index_.count(name), "registry: duplicate parameter name " + name);
    Mat m(rows, cols);
    switch (init) {
      case Init::zero: m.setZero(); break;
      case Init::one: m.setOnes(); break;
      case Init::normal: {
        Rng rng = Rng::keyed(seed_, name);
        for (Eigen::Index j = 0; j < cols; ++j)
          for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
        break;
      }
    }
    Tensor t = ad::leaf(std::move(m));
    index_[name] = entries_.size();
    entries_.push_back({name, t, true, group_});
    return t;
  }

  // Non-trainable buffer (running statistics). Held as a constant node whose
  // value the pipeline mutates in deterministic order.
  Tensor buffer(const std::string& name, Eigen::Index rows, Eigen::Index cols, double fill) {
    check(!index_.count(name), "registry: duplicate buffer name " + name);
    Tensor t = ad::constant(Mat::Constant(rows, cols, fill));
    index_[name] = entries_.size();
    entries_.push_back({name, t, false, group_});
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& at(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "registry: unknown tensor " + name);
    return entries_[it->second];
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += size_t(e.tensor.rows() * e.tensor.cols());
    return n;
  }

  // Copies all values from another registry with identical structure.
  void copy_values_from(const Registry& other) {
    check(entries_.size() == other.entries_.size(), "registry: structure mismatch");
    for (size_t i = 0; i < entries_.size(); ++i) {
      check(entries_[i].name == other.entries_[i].name, "registry: name mismatch");
      entries_[i].tensor.node()->value = other.entries_[i].tensor.val();
    }
  }

  static constexpr uint32_t kFormatVersion = 1;

  // Archive layout (little-endian):
  //   magic "NPVPARAM" | u32 version | u32 meta_len | meta bytes |
  //   u64 count | { u32 name_len | name | u8 trainable | u64 rows | u64 cols |
  //                 f64 data (column-major) } sorted by name
  void save(const std::string& path, const std::string& meta = "") const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    auto w32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto w64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    out.write("NPVPARAM", 8);
    w32(kFormatVersion);
    w32(static_cast<uint32_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    std::vector<const Entry*> sorted;
    for (const auto& e : entries_) sorted.push_back(&e);
    std::sort(sorted.begin(), sorted.end(),
              [](const Entry* a, const Entry* b) { return a->name < b->name; });
    w64(sorted.size());
    for (const Entry* e : sorted) {
      w32(static_cast<uint32_t>(e->name.size()));
      out.write(e->name.data(), static_cast<std::streamsize>(e->name.size()));
      uint8_t tr = e->trainable ? 1 : 0;
      out.write(reinterpret_cast<const char*>(&tr), 1);
      w64(static_cast<uint64_t>(e->tensor.rows()));
      w64(static_cast<uint64_t>(e->tensor.cols()));
      const Mat& m = e->tensor.val();
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * size_t(m.size())));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
  }

  // Reads the archive header and returns its metadata without loading values.
  static std::string peek_meta(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "NPVPARAM", 8) != 0)
      throw std::runtime_error("not a parameter archive: " + path);
    uint32_t version = 0, meta_len = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&meta_len), 4);
    if (!in) throw std::runtime_error("truncated archive: " + path);
    if (version != kFormatVersion)
      throw std::runtime_error("archive version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kFormatVersion) + ")");
    std::string meta(meta_len, '\0');
    in.read(meta.data(), meta_len);
    if (!in) throw std::runtime_error("truncated archive: " + path);
    return meta;
  }

  // Loads values into this registry. Every archived tensor must exist here
  // with the same shape, and vice versa.
  std::string load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, "NPVPARAM", 8) != 0)
      throw std::runtime_error("not a parameter archive: " + path);
    uint32_t version = 0, meta_len = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&meta_len), 4);
    if (!in) throw std::runtime_error("truncated archive: " + path);
    if (version != kFormatVersion)
      throw std::runtime_error("archive version " + std::to_string(version) +
                               " unsupported (expected " + std::to_string(kFormatVersion) + ")");
    std::string meta(meta_len, '\0');
    in.read(meta.data(), meta_len);
    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    if (!in) throw std::runtime_error("truncated archive: " + path);
    if (count != entries_.size())
      throw std::runtime_error("archive holds " + std::to_string(count) + " tensors, model has " +
                               std::to_string(entries_.size()));
    for (uint64_t k = 0; k < count; ++k) {
      uint32_t name_len = 0;
      in.read(reinterpret_cast<char*>(&name_len), 4);
      if (!in || name_len > 4096) throw std::runtime_error("corrupt archive: " + path);
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      uint8_t tr = 0;
      in.read(reinterpret_cast<char*>(&tr), 1);
      uint64_t rows = 0, cols = 0;
      in.read(reinterpret_cast<char*>(&rows), 8);
      in.read(reinterpret_cast<char*>(&cols), 8);
      if (!in) throw std::runtime_error("truncated archive: " + path);
      auto it = index_.find(name);
      if (it == index_.end()) throw std::runtime_error("archive tensor not in model: " + name);
      Entry& e = entries_[it->second];
      if (e.tensor.rows() != Eigen::Index(rows) || e.tensor.cols() != Eigen::Index(cols))
        throw std::runtime_error("shape mismatch for " + name);
      Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * size_t(m.size())));
      if (!in) throw std::runtime_error("truncated archive while reading " + name);
      e.tensor.node()->value = std::move(m);
    }
    return meta;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
  uint64_t seed_;
  std::string group_ = "shared";
};

}  // namespace npv::params
