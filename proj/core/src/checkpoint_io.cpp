#include "peftkit/checkpoint_io.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace peftkit {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v));
  out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw CorruptFileError("truncated payload");
  }
  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(bytes[pos]) | (std::uint16_t(bytes[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ParameterStore& store) {
  std::vector<std::uint8_t> out;
  out.push_back('P');
  out.push_back('F');
  out.push_back('R');
  out.push_back('G');
  put_u16(out, kCheckpointVersion);
  put_u32(out, std::uint32_t(store.size()));
  for (const auto& g : store.groups()) {
    put_u32(out, std::uint32_t(g.name.size()));
    out.insert(out.end(), g.name.begin(), g.name.end());
    out.push_back(static_cast<std::uint8_t>(g.role));
    out.push_back(std::uint8_t(g.tensor.rank()));
    for (std::size_t d : g.tensor.shape()) put_u64(out, d);
    for (double v : g.tensor.data()) put_f32(out, static_cast<float>(v));
  }
  put_u32(out, crc32(out));
  return out;
}

ParameterStore parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r{bytes};
  if (r.str(4) != "PFRG") throw CorruptFileError("bad magic: not a PFRG checkpoint");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported PFRG version " + std::to_string(version));
  }
  // integrity first: decode only CRC-clean bytes
  if (bytes.size() < 14) throw CorruptFileError("truncated payload");
  {
    ByteReader tail{bytes, bytes.size() - 4};
    if (tail.u32() != crc32(bytes.data(), bytes.size() - 4)) {
      throw CorruptFileError("CRC mismatch");
    }
  }
  const std::uint32_t count = r.u32();
  ParameterStore store;
  for (std::uint32_t gi = 0; gi < count; ++gi) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const Role role = role_from_byte(r.u8());
    const std::uint8_t rank = r.u8();
    if (rank == 0 || rank > 2) throw CorruptFileError("group " + name + " has rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      shape[i] = std::size_t(r.u64());
      numel *= shape[i];
    }
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) data[i] = double(r.f32());
    try {
      store.add({std::move(name), role, Tensor(std::move(shape), std::move(data))});
    } catch (const NumericError&) {
      throw CorruptFileError("group holds a non-finite payload");
    } catch (const DimensionError& e) {
      throw CorruptFileError(std::string("inconsistent group record: ") + e.what());
    }
  }
  if (r.pos != bytes.size() - 4) throw CorruptFileError("trailing bytes after the group records");
  return store;
}

Sha256Digest store_content_hash(const ParameterStore& store) {
  return Sha256::of(serialize_checkpoint(store));
}

std::string checkpoint_manifest_json(const ParameterStore& store) {
  nlohmann::json j;
  j["format"] = "PFRG";
  j["version"] = kCheckpointVersion;
  j["sha256"] = hex_string(store_content_hash(store));
  j["total_params"] = store.total_params();
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : store.groups()) {
    nlohmann::json gj;
    gj["name"] = g.name;
    gj["role"] = role_name(g.role);
    gj["shape"] = g.tensor.shape();
    groups.push_back(gj);
  }
  j["groups"] = groups;
  if (store.meta().known()) {
    const auto& m = store.meta();
    j["meta"] = {{"d", m.d},       {"layers", m.layers}, {"vocab", m.vocab},
                 {"max_seq", m.max_seq}, {"heads", m.heads},   {"classes", m.classes}};
  }
  return j.dump(2) + "\n";
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw LoadError("read failure on " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failure on " + path.string());
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".json";
  return p;
}

// meta consistency with the group anatomy, by role
void validate_meta(const ParameterStore& store, const ModelMeta& m) {
  if (!m.known()) return;
  std::size_t attn_weights = 0;
  for (const auto& g : store.groups()) {
    switch (g.role) {
      case Role::embedding:
        if (g.tensor.cols() != m.d || g.tensor.rows() != m.vocab) {
          throw MetaMismatchError("embedding shape " + g.tensor.shape_str() +
                                  " disagrees with meta (V,d)");
        }
        break;
      case Role::position_embedding:
        if (g.tensor.cols() != m.d || g.tensor.rows() != m.max_seq) {
          throw MetaMismatchError("position embedding shape " + g.tensor.shape_str() +
                                  " disagrees with meta (n,d)");
        }
        break;
      case Role::norm_weight:
      case Role::norm_bias:
        if (g.tensor.numel() != m.d) {
          throw MetaMismatchError("norm group " + g.name + " length disagrees with meta d");
        }
        break;
      case Role::attn_weight:
        ++attn_weights;
        break;
      default:
        break;
    }
  }
  if (m.layers > 0 && attn_weights > 0 && attn_weights != 4 * m.layers) {
    throw MetaMismatchError("attention weight count " + std::to_string(attn_weights) +
                            " disagrees with meta layers");
  }
  if (m.heads > 0 && m.d % m.heads != 0) {
    throw MetaMismatchError("meta d not divisible by heads");
  }
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_checkpoint(store));
  const std::string manifest = checkpoint_manifest_json(store);
  std::ofstream mout(manifest_path(path), std::ios::trunc);
  if (!mout) throw IoError("cannot write manifest for " + path.string());
  mout << manifest;
  mout.flush();
  if (!mout) throw IoError("write failure on manifest for " + path.string());
}

ParameterStore load_checkpoint(const std::filesystem::path& path) {
  ParameterStore store = parse_checkpoint(read_file_bytes(path));

  const auto mpath = manifest_path(path);
  if (std::filesystem::exists(mpath)) {
    std::ifstream min(mpath);
    nlohmann::json j;
    try {
      min >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CorruptFileError("manifest parse failure for " + path.string() + ": " + e.what());
    }
    if (j.contains("groups")) {
      const auto& gj = j["groups"];
      if (gj.size() != store.size()) {
        throw MetaMismatchError("manifest lists " + std::to_string(gj.size()) +
                                " groups, checkpoint has " + std::to_string(store.size()));
      }
      for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& g = store.groups()[i];
        if (gj[i].at("name").get<std::string>() != g.name ||
            gj[i].at("shape").get<std::vector<std::size_t>>() != g.tensor.shape()) {
          throw MetaMismatchError("manifest group " + std::to_string(i) +
                                  " disagrees with checkpoint payload");
        }
      }
    }
    if (j.contains("meta")) {
      ModelMeta m;
      const auto& mj = j["meta"];
      m.d = mj.value("d", 0);
      m.layers = mj.value("layers", 0);
      m.vocab = mj.value("vocab", 0);
      m.max_seq = mj.value("max_seq", 0);
      m.heads = mj.value("heads", 0);
      m.classes = mj.value("classes", 0);
      validate_meta(store, m);
      store.set_meta(m);
    }
  }
  return store;
}

}  // namespace peftkit
