#include "faasim/common/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/sha.h>

#include <memory>
#include <stdexcept>

namespace faasim::crypto {

Hash32 sha256(std::span<const uint8_t> data) {
  Hash32 out;
  SHA256(data.data(), data.size(), out.data());
  return out;
}

Hash32 sha256(const Bytes& data) {
  return sha256(std::span<const uint8_t>(data.data(), data.size()));
}

Hash32 sha256(std::string_view data) { return sha256(as_bytes(data)); }

Hash32 hmac_sha256(const Hash32& key, std::span<const uint8_t> data) {
  Hash32 out;
  unsigned int len = 0;
  HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(),
       data.size(), out.data(), &len);
  if (len != out.size()) {
    throw std::runtime_error("HMAC produced unexpected length");
  }
  return out;
}

namespace {
struct CtxDeleter {
  void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
using CtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter>;

constexpr size_t kTagLen = 16;
constexpr size_t kNonceLen = 12;
}  // namespace

Bytes aead_seal(const Hash32& key, const GcmNonce& nonce,
                std::span<const uint8_t> plaintext) {
  CtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr,
                                 key.data(), nonce.data()) != 1) {
    throw std::runtime_error("AES-GCM init failed");
  }
  Bytes out(kNonceLen + plaintext.size() + kTagLen);
  std::memcpy(out.data(), nonce.data(), kNonceLen);
  int len = 0;
  if (EVP_EncryptUpdate(ctx.get(), out.data() + kNonceLen, &len,
                        plaintext.data(),
                        static_cast<int>(plaintext.size())) != 1) {
    throw std::runtime_error("AES-GCM encrypt failed");
  }
  int fin = 0;
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + kNonceLen + len, &fin) !=
      1) {
    throw std::runtime_error("AES-GCM finalize failed");
  }
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagLen,
                          out.data() + kNonceLen + len + fin) != 1) {
    throw std::runtime_error("AES-GCM tag retrieval failed");
  }
  out.resize(kNonceLen + static_cast<size_t>(len + fin) + kTagLen);
  return out;
}

std::optional<Bytes> aead_open(const Hash32& key,
                               std::span<const uint8_t> sealed) {
  if (sealed.size() < kNonceLen + kTagLen) {
    return std::nullopt;
  }
  const uint8_t* nonce = sealed.data();
  const uint8_t* ct = sealed.data() + kNonceLen;
  const size_t ct_len = sealed.size() - kNonceLen - kTagLen;
  const uint8_t* tag = sealed.data() + kNonceLen + ct_len;

  CtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr,
                                 key.data(), nonce) != 1) {
    return std::nullopt;
  }
  Bytes out(ct_len);
  int len = 0;
  if (ct_len > 0 && EVP_DecryptUpdate(ctx.get(), out.data(), &len, ct,
                                      static_cast<int>(ct_len)) != 1) {
    return std::nullopt;
  }
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagLen,
                          const_cast<uint8_t*>(tag)) != 1) {
    return std::nullopt;
  }
  int fin = 0;
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + len, &fin) != 1) {
    return std::nullopt;  // tag mismatch: ciphertext tampered or wrong key
  }
  out.resize(static_cast<size_t>(len + fin));
  return out;
}

Address address_from_label(std::string_view label) {
  ByteWriter w;
  w.str("addr:").str(label);
  return sha256(w.bytes());
}

Hash32 key_from_label(std::string_view label) {
  ByteWriter w;
  w.str("key:").str(label);
  return sha256(w.bytes());
}

}  // namespace faasim::crypto
