#include "jojo/common.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

namespace jojo {

torch::Generator make_rng(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

TensorMap clone_tensors(const TensorMap& tensors, bool requires_grad) {
  TensorMap out;
  for (const auto& [name, t] : tensors) {
    auto copy = t.detach().clone().contiguous();
    if (requires_grad && copy.is_floating_point()) copy.set_requires_grad(true);
    out.emplace(name, std::move(copy));
  }
  return out;
}

TensorMap cast_tensors(const TensorMap& tensors, torch::Dtype dtype) {
  TensorMap out;
  for (const auto& [name, t] : tensors) out.emplace(name, t.detach().to(dtype).contiguous());
  return out;
}

bool bit_equal(const TensorMap& a, const TensorMap& b) {
  if (a.size() != b.size()) return false;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    const auto x = ia->second.contiguous();
    const auto y = ib->second.contiguous();
    if (x.sizes() != y.sizes() || x.scalar_type() != y.scalar_type()) return false;
    if (std::memcmp(x.data_ptr(), y.data_ptr(), x.nbytes()) != 0) return false;
  }
  return true;
}

std::int64_t parameter_count(const TensorMap& tensors) {
  std::int64_t n = 0;
  for (const auto& [_, t] : tensors) n += t.numel();
  return n;
}

namespace {

struct Sha256 {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  Sha256() { EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr); }
  ~Sha256() { EVP_MD_CTX_free(ctx); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx, data, n); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, digest.data(), &len);
    std::string out;
    out.reserve(len * 2);
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", digest[i]);
      out += buf;
    }
    return out;
  }
};

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string hash_tensors(const TensorMap& tensors) {
  Sha256 h;
  for (const auto& [name, t] : tensors) {
    h.update(name.data(), name.size());
    const auto c = t.detach().contiguous();
    for (auto s : c.sizes()) h.update(&s, sizeof s);
    const auto type = static_cast<int>(c.scalar_type());
    h.update(&type, sizeof type);
    h.update(c.data_ptr(), c.nbytes());
  }
  return h.hex();
}

void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

}  // namespace jojo
