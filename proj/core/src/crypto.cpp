#include "robochain/crypto.hpp"

#include <sodium.h>

#include <fstream>
#include <sstream>

#include "robochain/errors.hpp"

namespace robochain::crypto {

namespace {

void ensure_sodium() {
  static const bool ready = [] { return sodium_init() >= 0; }();
  if (!ready) throw std::runtime_error("libsodium initialisation failed");
}

constexpr std::size_t kNonceBytes = crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
constexpr std::size_t kTagBytes = crypto_aead_xchacha20poly1305_ietf_ABYTES;

static_assert(crypto_sign_PUBLICKEYBYTES == 32);
static_assert(crypto_sign_SECRETKEYBYTES == 64);
static_assert(crypto_sign_SEEDBYTES == 32);
static_assert(crypto_aead_xchacha20poly1305_ietf_KEYBYTES == 32);

}  // namespace

Digest sha256(ByteView data) {
  ensure_sodium();
  Digest d;
  crypto_hash_sha256(d.bytes.data(), data.data(), data.size());
  return d;
}

Digest sha256(std::initializer_list<ByteView> parts) {
  ensure_sodium();
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  for (ByteView p : parts) crypto_hash_sha256_update(&st, p.data(), p.size());
  Digest d;
  crypto_hash_sha256_final(&st, d.bytes.data());
  return d;
}

Identity Identity::generate(std::string id) {
  ensure_sodium();
  Identity out;
  out.id_ = std::move(id);
  crypto_sign_keypair(out.public_key_.data(), out.secret_key_.data());
  return out;
}

Identity Identity::from_seed(std::string id, const Digest& seed) {
  ensure_sodium();
  Identity out;
  out.id_ = std::move(id);
  crypto_sign_seed_keypair(out.public_key_.data(), out.secret_key_.data(), seed.bytes.data());
  return out;
}

Bytes Identity::sign(ByteView message) const {
  ensure_sodium();
  Bytes sig(crypto_sign_BYTES);
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), secret_key_.data());
  return sig;
}

Bytes sign(ByteView message, const Identity& identity) { return identity.sign(message); }

bool verify(ByteView message, ByteView signature, const PublicKey& public_key) {
  ensure_sodium();
  if (signature.size() != crypto_sign_BYTES) return false;
  return crypto_sign_verify_detached(signature.data(), message.data(), message.size(),
                                     public_key.data()) == 0;
}

NetworkKey NetworkKey::generate() {
  ensure_sodium();
  NetworkKey k;
  crypto_aead_xchacha20poly1305_ietf_keygen(k.key_.data());
  return k;
}

NetworkKey NetworkKey::from_seed(const Digest& seed) {
  NetworkKey k;
  k.key_ = seed.bytes;
  return k;
}

NetworkKey NetworkKey::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read key file " + path.string());
  std::string hex;
  in >> hex;
  Bytes raw = from_hex(hex);
  if (raw.size() != 32) throw Error(ErrorCode::CorruptData, "network key must be 32 bytes");
  NetworkKey k;
  std::copy(raw.begin(), raw.end(), k.key_.begin());
  return k;
}

void NetworkKey::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingArtifacts, "cannot write key file " + path.string());
  out << to_hex(key_) << '\n';
}

Bytes encrypt_payload(ByteView payload, const NetworkKey& key) {
  ensure_sodium();
  Bytes out(kNonceBytes + payload.size() + kTagBytes);
  crypto_generichash(out.data(), kNonceBytes, payload.data(), payload.size(), key.bytes().data(),
                     key.bytes().size());
  unsigned long long written = 0;
  crypto_aead_xchacha20poly1305_ietf_encrypt(out.data() + kNonceBytes, &written, payload.data(),
                                             payload.size(), nullptr, 0, nullptr, out.data(),
                                             key.bytes().data());
  out.resize(kNonceBytes + written);
  return out;
}

Bytes decrypt_payload(ByteView ciphertext, const NetworkKey& key) {
  ensure_sodium();
  if (ciphertext.size() < kNonceBytes + kTagBytes)
    throw Error(ErrorCode::AuthenticationFailure, "ciphertext too short");
  Bytes out(ciphertext.size() - kNonceBytes - kTagBytes);
  unsigned long long written = 0;
  if (crypto_aead_xchacha20poly1305_ietf_decrypt(
          out.data(), &written, nullptr, ciphertext.data() + kNonceBytes,
          ciphertext.size() - kNonceBytes, nullptr, 0, ciphertext.data(), key.bytes().data()) != 0)
    throw Error(ErrorCode::AuthenticationFailure, "payload does not authenticate under this key");
  out.resize(written);
  return out;
}

}  // namespace robochain::crypto
