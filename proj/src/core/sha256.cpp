#include "core/sha256.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <memory>

#include "core/common.hpp"

namespace bvo {

namespace {

std::string to_hex(const unsigned char* d, unsigned len) {
  static const char* digits = "0123456789abcdef";
  std::string out(2 * len, '0');
  for (unsigned i = 0; i < len; ++i) {
    out[2 * i] = digits[d[i] >> 4];
    out[2 * i + 1] = digits[d[i] & 0xf];
  }
  return out;
}

struct CtxDel {
  void operator()(EVP_MD_CTX* c) const { EVP_MD_CTX_free(c); }
};

}  // namespace

std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::unique_ptr<EVP_MD_CTX, CtxDel> ctx(EVP_MD_CTX_new());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    fail(Err::Internal, "sha256 digest computation failed");
  return to_hex(md, len);
}

std::string sha256_hex(const std::string& s) {
  return sha256_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::string sha256_file(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) fail(Err::Io, "cannot open for digest: " + path);
  std::unique_ptr<EVP_MD_CTX, CtxDel> ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    fail(Err::Internal, "sha256 digest init failed");
  unsigned char buf[1 << 16];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), f.get())) > 0)
    if (EVP_DigestUpdate(ctx.get(), buf, got) != 1)
      fail(Err::Internal, "sha256 digest update failed");
  if (std::ferror(f.get())) fail(Err::Io, "read error while digesting " + path);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    fail(Err::Internal, "sha256 digest final failed");
  return to_hex(md, len);
}

}  // namespace bvo
