#pragma once

// Tagged binary checkpoint container, little-endian:
//
//   "BESTCKPT"  u32 version  u32 tag_len tag  u64 cfg_len cfg_json
//   u32 scalar_bytes  u32 tensor_count
//   { u32 name_len name  u64 rows  u64 cols  rows*cols scalars } ...
//   u32 crc32 of every preceding byte
//
// The checksum is verified before anything else is interpreted.

#include "best/backbone.hpp"
#include "best/config.hpp"
#include "best/downstream.hpp"
#include "best/error.hpp"
#include "best/tokenizer.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

namespace best {

inline constexpr char kCheckpointMagic[8] = {'B', 'E', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct CheckpointTensor {
  std::string name;
  std::uint64_t rows = 0, cols = 0;
  std::vector<unsigned char> bytes;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string tag;
  json config;
  std::uint32_t scalar_bytes = 0;
  std::vector<CheckpointTensor> tensors;
};

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size, std::string origin)
      : data_(data), size_(size), origin_(std::move(origin)) {}
  template <typename U>
  U get() {
    U v;
    std::memcpy(&v, take(sizeof(U)), sizeof(U));
    return v;
  }
  const unsigned char* take(std::size_t n) {
    if (n > size_ - pos_) throw Error(ErrorKind::integrity, origin_ + ": checkpoint is truncated");
    const unsigned char* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::string get_string(std::size_t n) {
    const auto* p = take(n);
    return {reinterpret_cast<const char*>(p), n};
  }
  bool done() const { return pos_ == size_; }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string origin_;
};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put<std::uint32_t>(c.version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tag.size()));
  w.put_bytes(c.tag.data(), c.tag.size());
  const std::string cfg = c.config.dump();
  w.put<std::uint64_t>(cfg.size());
  w.put_bytes(cfg.data(), cfg.size());
  w.put<std::uint32_t>(c.scalar_bytes);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint64_t>(t.rows);
    w.put<std::uint64_t>(t.cols);
    w.put_bytes(t.bytes.data(), t.bytes.size());
  }
  auto& buf = w.buffer();
  const std::uint32_t crc = detail::crc32_of(buf.data(), buf.size());
  w.put<std::uint32_t>(crc);
  return std::move(buf);
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& buf, const std::string& origin = "checkpoint") {
  if (buf.size() < sizeof kCheckpointMagic + 4 + 4)
    throw Error(ErrorKind::integrity, origin + ": checkpoint is truncated");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw Error(ErrorKind::integrity, origin + ": not a checkpoint (bad magic)");
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  if (detail::crc32_of(buf.data(), buf.size() - 4) != stored)
    throw Error(ErrorKind::integrity, origin + ": checksum mismatch (corrupt or truncated checkpoint)");

  detail::ByteReader r(buf.data(), buf.size() - 4, origin);
  r.take(sizeof kCheckpointMagic);
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion)
    throw Error(ErrorKind::schema, origin + ": incompatible checkpoint version " + std::to_string(c.version) +
                                       " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  c.tag = r.get_string(r.get<std::uint32_t>());
  const auto cfg_len = r.get<std::uint64_t>();
  try {
    c.config = json::parse(r.get_string(static_cast<std::size_t>(cfg_len)));
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::integrity, origin + ": unreadable configuration block: " + e.what());
  }
  c.scalar_bytes = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.get_string(r.get<std::uint32_t>());
    t.rows = r.get<std::uint64_t>();
    t.cols = r.get<std::uint64_t>();
    const auto* p = r.take(static_cast<std::size_t>(t.rows * t.cols * c.scalar_bytes));
    t.bytes.assign(p, p + t.rows * t.cols * c.scalar_bytes);
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw Error(ErrorKind::integrity, origin + ": trailing bytes after tensors");
  return c;
}

inline void write_checkpoint_file(const std::string& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::data, "cannot write checkpoint " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::data, "failed writing checkpoint " + path);
}

inline Checkpoint read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::dependency, "cannot open checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path);
}

template <typename T, typename Model>
Checkpoint pack_model(const std::string& tag, json config, Model& m) {
  Checkpoint c;
  c.tag = tag;
  c.config = std::move(config);
  c.scalar_bytes = sizeof(T);
  m.visit([&c](const std::string& name, ag::Var<T>& v) {
    CheckpointTensor t;
    t.name = name;
    t.rows = static_cast<std::uint64_t>(v.rows());
    t.cols = static_cast<std::uint64_t>(v.cols());
    const auto* p = reinterpret_cast<const unsigned char*>(v.value().data());
    t.bytes.assign(p, p + static_cast<std::size_t>(v.value().size()) * sizeof(T));
    c.tensors.push_back(std::move(t));
  });
  return c;
}

/// Copies tensors into a model built from the stored configuration. Names
/// and shapes must match exactly.
template <typename T, typename Model>
void unpack_tensors(const Checkpoint& c, Model& m, const std::string& origin) {
  if (c.scalar_bytes != sizeof(T))
    throw Error(ErrorKind::schema, origin + ": stored scalars are " + std::to_string(c.scalar_bytes) +
                                       " bytes, expected " + std::to_string(sizeof(T)));
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : c.tensors) by_name[t.name] = &t;
  std::size_t used = 0;
  m.visit([&](const std::string& name, ag::Var<T>& v) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorKind::schema, origin + ": missing tensor '" + name + "'");
    const auto& t = *it->second;
    if (t.rows != static_cast<std::uint64_t>(v.rows()) || t.cols != static_cast<std::uint64_t>(v.cols()))
      throw Error(ErrorKind::schema, origin + ": tensor '" + name + "' has the wrong shape");
    Matrix<T> value(v.rows(), v.cols());
    std::memcpy(value.data(), t.bytes.data(), t.bytes.size());
    v = ag::parameter<T>(std::move(value));
    ++used;
  });
  if (used != c.tensors.size()) throw Error(ErrorKind::schema, origin + ": checkpoint holds unexpected tensors");
}

inline void expect_tag(const Checkpoint& c, const std::string& tag, const std::string& origin) {
  if (c.tag != tag)
    throw Error(ErrorKind::schema, origin + ": checkpoint holds a '" + c.tag + "', expected a '" + tag + "'");
}

// ---------------------------------------------------------------------------
// Model-level helpers

template <typename T>
Checkpoint pack(TokenizerModel<T>& m) {
  json cfg = {{"tokenizer", to_json(m.config)},
              {"frozen", m.frozen},
              {"hand_usage", m.hand_codebook.usage_counts},
              {"body_usage", m.body_codebook.usage_counts}};
  return pack_model<T>("tokenizer", cfg, m);
}

template <typename T>
TokenizerModel<T> unpack_tokenizer(const Checkpoint& c, const std::string& origin = "checkpoint") {
  expect_tag(c, "tokenizer", origin);
  TokenizerModel<T> m;
  try {
    m = init_tokenizer<T>(tokenizer_config_from_json(c.config.at("tokenizer")), 0);
    m.frozen = c.config.at("frozen").get<bool>();
    m.hand_codebook.usage_counts = c.config.at("hand_usage").get<std::vector<std::uint64_t>>();
    m.body_codebook.usage_counts = c.config.at("body_usage").get<std::vector<std::uint64_t>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, origin + ": bad tokenizer configuration: " + e.what());
  }
  if (m.config.kind == TokenizerKind::kmeans) {
    // codebook shapes come from the stored tensors
    m.hand_codebook.codewords = ag::parameter<T>(Matrix<T>::Zero(m.config.hand_codes, 2 * kHandJoints));
    m.body_codebook.codewords = ag::parameter<T>(Matrix<T>::Zero(m.config.body_codes, 2 * kBodyJoints));
  }
  unpack_tensors<T>(c, m, origin);
  return m;
}

template <typename T>
Checkpoint pack(PretrainedModel<T>& m) {
  json cfg = {{"model", to_json(m.config)},
              {"hand_codes", m.hand_codes},
              {"body_codes", m.body_codes},
              {"objective", to_string(m.objective)},
              {"metadata", m.metadata}};
  return pack_model<T>("pretrained", cfg, m);
}

template <typename T>
PretrainedModel<T> unpack_pretrained(const Checkpoint& c, const std::string& origin = "checkpoint") {
  expect_tag(c, "pretrained", origin);
  PretrainedModel<T> m;
  try {
    m = init_pretrained<T>(model_config_from_json(c.config.at("model")), c.config.at("hand_codes").get<int>(),
                           c.config.at("body_codes").get<int>(), 0,
                           parse_objective(c.config.at("objective").get<std::string>()));
    m.metadata = c.config.at("metadata");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, origin + ": bad model configuration: " + e.what());
  }
  unpack_tensors<T>(c, m, origin);
  return m;
}

template <typename T>
Checkpoint pack(ClassifierModel<T>& m) {
  json cfg = {{"model", to_json(m.config)}, {"num_classes", m.num_classes}, {"metadata", m.metadata}};
  return pack_model<T>("classifier", cfg, m);
}

template <typename T>
ClassifierModel<T> unpack_classifier(const Checkpoint& c, const std::string& origin = "checkpoint") {
  expect_tag(c, "classifier", origin);
  ClassifierModel<T> m;
  try {
    m = classifier_from_scratch<T>(model_config_from_json(c.config.at("model")), c.config.at("num_classes").get<int>(), 0);
    m.metadata = c.config.at("metadata");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::schema, origin + ": bad model configuration: " + e.what());
  }
  unpack_tensors<T>(c, m, origin);
  return m;
}

template <typename Model>
void save_checkpoint(Model m, const std::string& path) {
  write_checkpoint_file(path, pack(m));
}

template <typename T>
TokenizerModel<T> load_tokenizer(const std::string& path) {
  return unpack_tokenizer<T>(read_checkpoint_file(path), path);
}

template <typename T>
PretrainedModel<T> load_pretrained(const std::string& path) {
  return unpack_pretrained<T>(read_checkpoint_file(path), path);
}

template <typename T>
ClassifierModel<T> load_classifier(const std::string& path) {
  return unpack_classifier<T>(read_checkpoint_file(path), path);
}

}  // namespace best
