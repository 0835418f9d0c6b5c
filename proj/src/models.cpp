#include "jojo/models.hpp"

namespace jojo {

EmbeddingParams BaseModel::identity_embedding() const {
  if (embedding) return *embedding;
  EmbeddingParams e;
  e.trunk = critic;
  return e;
}

BaseModel BaseModel::to(torch::Dtype dtype) const {
  BaseModel out{generator.to(dtype), critic.to(dtype), std::nullopt};
  if (embedding) out.embedding = embedding->to(dtype);
  return out;
}

Archive BaseModel::to_archive() const {
  Archive a;
  a.meta["kind"] = "base";
  store_generator(a, generator);
  store_critic(a, critic);
  if (embedding) store_embedding(a, *embedding);
  return a;
}

BaseModel BaseModel::from_archive(const Archive& archive) {
  if (archive.meta.value("kind", "") != "base") throw InvalidInput("checkpoint is not a base model");
  BaseModel m{load_generator(archive), load_critic(archive), std::nullopt};
  if (archive.meta.contains("embedding")) m.embedding = load_embedding(archive);
  return m;
}

void BaseModel::save(const std::filesystem::path& path) const { to_archive().save(path); }
BaseModel BaseModel::load(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

void save_encoder(const std::filesystem::path& path, const EncoderParams& enc) {
  Archive a;
  a.meta["kind"] = "encoder";
  store_encoder(a, enc);
  a.save(path);
}

EncoderParams load_encoder(const std::filesystem::path& path) {
  const auto a = Archive::load(path);
  if (a.meta.value("kind", "") != "encoder") throw InvalidInput("checkpoint is not an encoder: " + path.string());
  return load_encoder(a);
}

}  // namespace jojo
