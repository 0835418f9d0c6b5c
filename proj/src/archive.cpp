#include "jojo/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace jojo {

static_assert(std::endian::native == std::endian::little, "archive payloads are little-endian");

namespace {

std::string dtype_name(torch::Dtype t) {
  switch (t) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    default: throw InvalidInput("archive: unsupported dtype " + std::string(c10::toString(t)));
  }
}

torch::Dtype dtype_from(const std::string& s) {
  if (s == "f32") return torch::kFloat32;
  if (s == "f64") return torch::kFloat64;
  if (s == "i64") return torch::kInt64;
  throw InvalidInput("archive: unknown dtype '" + s + "'");
}

template <typename T>
void append_pod(std::string& out, T value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof value);
}

template <typename T>
T read_pod(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw InvalidInput("archive: truncated header");
  T value;
  std::memcpy(&value, bytes.data() + pos, sizeof value);
  pos += sizeof value;
  return value;
}

}  // namespace

void Archive::put(std::string_view prefix, const TensorMap& group) {
  for (const auto& [name, t] : group) tensors[std::string(prefix) + "/" + name] = t.detach();
}

TensorMap Archive::get(std::string_view prefix) const {
  const std::string key = std::string(prefix) + "/";
  TensorMap out;
  for (auto it = tensors.lower_bound(key); it != tensors.end() && it->first.starts_with(key); ++it)
    out.emplace(it->first.substr(key.size()), it->second);
  if (out.empty()) throw InvalidInput("archive: no tensors under '" + std::string(prefix) + "'");
  return out;
}

bool Archive::has(std::string_view prefix) const {
  const std::string key = std::string(prefix) + "/";
  auto it = tensors.lower_bound(key);
  return it != tensors.end() && it->first.starts_with(key);
}

std::string Archive::to_bytes() const {
  nlohmann::json manifest;
  manifest["format"] = "jojo-checkpoint";
  manifest["meta"] = meta;
  auto& entries = manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : tensors) {
    const auto c = t.detach().cpu().contiguous();
    entries.push_back({{"name", name},
                       {"dtype", dtype_name(c.scalar_type())},
                       {"shape", c.sizes().vec()},
                       {"offset", payload.size()},
                       {"nbytes", c.nbytes()}});
    payload.append(static_cast<const char*>(c.data_ptr()), c.nbytes());
  }
  const std::string header = manifest.dump();
  std::string out;
  out.reserve(kMagic.size() + 12 + header.size() + payload.size());
  out.append(kMagic);
  append_pod<std::uint32_t>(out, kVersion);
  append_pod<std::uint64_t>(out, header.size());
  out.append(header);
  out.append(payload);
  return out;
}

Archive Archive::from_bytes(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic)
    throw InvalidInput("archive: bad magic");
  std::size_t pos = kMagic.size();
  const auto version = read_pod<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw InvalidInput("archive: unsupported version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw InvalidInput("archive: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("archive: corrupt manifest: ") + e.what());
  }
  pos += header_len;
  const std::string_view payload = bytes.substr(pos);

  Archive a;
  a.meta = manifest.value("meta", nlohmann::json::object());
  if (!manifest.contains("tensors") || !manifest.at("tensors").is_array())
    throw InvalidInput("archive: manifest lists no tensors");
  for (const auto& e : manifest.at("tensors")) {
    const auto offset = e.at("offset").get<std::size_t>();
    const auto nbytes = e.at("nbytes").get<std::size_t>();
    if (offset + nbytes > payload.size()) throw InvalidInput("archive: tensor payload out of range");
    auto t = torch::empty(e.at("shape").get<std::vector<std::int64_t>>(),
                          options_for(dtype_from(e.at("dtype").get<std::string>())));
    if (static_cast<std::size_t>(t.nbytes()) != nbytes)
      throw InvalidInput("archive: size mismatch for " + e.at("name").get<std::string>());
    std::memcpy(t.data_ptr(), payload.data() + offset, nbytes);
    a.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
  }
  return a;
}

void Archive::save(const std::filesystem::path& path) const { write_file(path, to_bytes()); }

Archive Archive::load(const std::filesystem::path& path) { return from_bytes(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace jojo
