#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "robochain/bytes.hpp"

namespace robochain::crypto {

/// SHA-256.
Digest sha256(ByteView data);
Digest sha256(std::initializer_list<ByteView> parts);

using PublicKey = std::array<std::uint8_t, 32>;
using SecretKey = std::array<std::uint8_t, 64>;

struct PublicIdentity {
  std::string id;
  PublicKey public_key{};
};

/// Ed25519 identity. The secret half never leaves the owning object; copies
/// are permitted only so simulations can hand identities to their owners.
class Identity {
 public:
  static Identity generate(std::string id);
  /// Deterministic keypair derived from a 32-byte seed.
  static Identity from_seed(std::string id, const Digest& seed);

  const std::string& id() const { return id_; }
  const PublicKey& public_key() const { return public_key_; }
  PublicIdentity public_identity() const { return {id_, public_key_}; }

  Bytes sign(ByteView message) const;

 private:
  Identity() = default;

  std::string id_;
  PublicKey public_key_{};
  SecretKey secret_key_{};
};

Bytes sign(ByteView message, const Identity& identity);
bool verify(ByteView message, ByteView signature, const PublicKey& public_key);

/// Symmetric key shared by the members of one private network.
class NetworkKey {
 public:
  static NetworkKey generate();
  static NetworkKey from_seed(const Digest& seed);
  static NetworkKey load(const std::filesystem::path& path);

  void save(const std::filesystem::path& path) const;
  const std::array<std::uint8_t, 32>& bytes() const { return key_; }

  bool operator==(const NetworkKey&) const = default;

 private:
  std::array<std::uint8_t, 32> key_{};
};

/// XChaCha20-Poly1305. Output is nonce || ciphertext || tag. The nonce is a
/// keyed BLAKE2b of the plaintext, so encryption is deterministic (equal
/// plaintexts under one key produce equal ciphertexts).
Bytes encrypt_payload(ByteView payload, const NetworkKey& key);

/// Throws Error{AuthenticationFailure} for a wrong key or tampered input.
Bytes decrypt_payload(ByteView ciphertext, const NetworkKey& key);

}  // namespace robochain::crypto
