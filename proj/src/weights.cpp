#include "fdft/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "fdft/error.hpp"

namespace fdft {

static_assert(std::endian::native == std::endian::little,
              "FDWT encoding assumes a little-endian host");

namespace {

class Writer {
 public:
  template <class U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what), sizeof(U));
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw FormatError(std::string("truncated ") + what, pos_);
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_entry(Writer& w, const std::string& name, std::uint8_t dtype,
               const std::vector<std::uint32_t>& dims, const void* payload,
               std::size_t payload_bytes) {
  if (name.size() > 0xFFFF) throw ConfigError("tensor name too long: " + name);
  if (dims.size() > 0xFF) throw ConfigError("tensor rank too large: " + name);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.put_bytes(name.data(), name.size());
  w.put<std::uint8_t>(dtype);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) w.put<std::uint32_t>(d);
  w.put_bytes(payload, payload_bytes);
}

}  // namespace

const NamedTensor* WeightsFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(
      ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> encode_weights(const WeightsFile& file) {
  Writer w;
  w.put_bytes("FDWT", 4);
  w.put<std::uint16_t>(kWeightsVersion);
  w.put<std::uint16_t>(0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(file.tensors.size() + 1));
  put_entry(w, kConfigTensorName, kDtypeRaw,
            {static_cast<std::uint32_t>(file.config_json.size())}, file.config_json.data(),
            file.config_json.size());
  for (const auto& t : file.tensors) {
    std::size_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.data.size()) {
      throw DimensionError("encode_weights: tensor '" + t.name + "' has " +
                           std::to_string(t.data.size()) + " values for its dims");
    }
    put_entry(w, t.name, kDtypeF32, t.dims, t.data.data(), t.data.size() * sizeof(float));
  }
  w.put<std::uint32_t>(crc32(w.bytes()));
  return std::move(w.bytes());
}

WeightsFile decode_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, "FDWT", 4) != 0) throw FormatError("bad magic, expected 'FDWT'", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kWeightsVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  r.get<std::uint16_t>("flags");
  if (bytes.size() < 16) throw FormatError("truncated file", bytes.size());
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (crc32(bytes.first(body)) != stored) throw FormatError("CRC-32 mismatch", body);

  const auto count = r.get<std::uint32_t>("tensor count");
  WeightsFile out;
  bool have_config = false;
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_at = r.pos();
    const auto len = r.get<std::uint16_t>("name length");
    const auto* name_bytes = r.take(len, "name");
    std::string name(reinterpret_cast<const char*>(name_bytes), len);
    if (!seen.insert(name).second) throw FormatError("duplicate tensor '" + name + "'", entry_at);
    const std::size_t dtype_at = r.pos();
    const auto dtype = r.get<std::uint8_t>("dtype");
    const auto rank = r.get<std::uint8_t>("rank");
    std::vector<std::uint32_t> dims(rank);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = r.get<std::uint32_t>("dims");
      n *= d;
    }
    if (r.pos() > body) throw FormatError("truncated tensor header", r.pos());
    if (dtype == kDtypeRaw) {
      const auto* p = r.take(n, "raw payload");
      if (name == kConfigTensorName) {
        out.config_json.assign(reinterpret_cast<const char*>(p), n);
        have_config = true;
      }
    } else if (dtype == kDtypeF32) {
      if (n * sizeof(float) > body - r.pos()) {
        throw FormatError("truncated payload of '" + name + "'", r.pos());
      }
      NamedTensor t{std::move(name), std::move(dims), std::vector<float>(n)};
      std::memcpy(t.data.data(), r.take(n * sizeof(float), "payload"), n * sizeof(float));
      out.tensors.push_back(std::move(t));
    } else {
      throw FormatError("unknown dtype " + std::to_string(dtype), dtype_at);
    }
  }
  if (r.pos() != body) throw FormatError("trailing bytes before checksum", r.pos());
  if (!have_config) throw FormatError("missing '__config__' header", 12);
  return out;
}

void write_weights(const std::filesystem::path& path, const WeightsFile& file) {
  const auto bytes = encode_weights(file);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing '" + path.string() + "'");
}

WeightsFile read_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

}  // namespace fdft
