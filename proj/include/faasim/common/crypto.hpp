#pragma once

#include <optional>

#include "faasim/common/bytes.hpp"

namespace faasim::crypto {

// SHA-256 is the one digest used for block hashes, endpoint digests and
// content addresses.
Hash32 sha256(std::span<const uint8_t> data);
Hash32 sha256(const Bytes& data);
Hash32 sha256(std::string_view data);

Hash32 hmac_sha256(const Hash32& key, std::span<const uint8_t> data);

// AES-256-GCM with a caller-supplied 12-byte nonce. seal returns
// nonce || ciphertext || 16-byte tag; open verifies the tag and returns
// nullopt on any mismatch.
using GcmNonce = std::array<uint8_t, 12>;

Bytes aead_seal(const Hash32& key, const GcmNonce& nonce,
                std::span<const uint8_t> plaintext);
std::optional<Bytes> aead_open(const Hash32& key,
                               std::span<const uint8_t> sealed);

// Derived identifiers: addresses and symmetric keys are minted from string
// labels so scenarios and tests are reproducible.
Address address_from_label(std::string_view label);
Hash32 key_from_label(std::string_view label);

}  // namespace faasim::crypto
