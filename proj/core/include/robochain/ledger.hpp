#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "robochain/bytes.hpp"
#include "robochain/crypto.hpp"

namespace robochain::ledger {

enum class PermissionMode { Public, SemiPrivate, Private };

std::string_view to_string(PermissionMode mode);
PermissionMode parse_permission_mode(std::string_view text);

inline constexpr std::uint8_t kQueryAuditTag = 0x01;
inline constexpr std::uint8_t kModelConsensusTag = 0x02;

/// Digest of an audited query/answer pair. The raw pair stays with the data
/// service.
struct QueryAuditTx {
  Digest pair_hash;
  std::string querier_id;
  Tick timestamp = 0;

  bool operator==(const QueryAuditTx&) const = default;
};

struct ModelConsensusTx {
  Tick timestamp = 0;
  Digest model_update_hash;
  Bytes encrypted_payload;
  std::string signer_id;
  Bytes signature;

  /// timestamp || model_update_hash || encrypted_payload, canonically framed.
  Bytes signing_message() const;

  static ModelConsensusTx make(Tick timestamp, const Digest& update_hash, Bytes encrypted_payload,
                               const crypto::Identity& signer);

  bool operator==(const ModelConsensusTx&) const = default;
};

using Transaction = std::variant<QueryAuditTx, ModelConsensusTx>;

Bytes serialize(const Transaction& tx);
Transaction parse_transaction(ByteView data);
Digest transaction_hash(const Transaction& tx);
Tick timestamp_of(const Transaction& tx);

struct Block {
  std::uint64_t index = 0;
  Digest prev_hash;
  Tick timestamp = 0;
  std::vector<Transaction> transactions;
  Digest block_hash;

  Digest compute_hash() const;
};

Bytes serialize_block(const Block& block);
Block parse_block(ByteView data);

struct BlockRef {
  std::uint64_t block_index = 0;
  std::uint32_t tx_index = 0;

  auto operator<=>(const BlockRef&) const = default;
};

struct ValidationReport {
  bool ok = true;
  std::optional<std::uint64_t> first_broken;
  std::string reason;
  std::uint64_t blocks_checked = 0;
};

/// Recomputes every block hash and prev-hash link; reports the earliest
/// inconsistent block.
ValidationReport validate_chain(std::span<const Block> blocks);

struct AccessPolicy {
  PermissionMode mode = PermissionMode::Public;
  std::set<std::string> writers;  // SemiPrivate appenders
  std::set<std::string> members;  // Private readers and appenders

  bool may_read(std::string_view id) const;
  bool may_append(std::string_view id) const;
};

/// Parsed ledger file. Records after the first unparseable one are dropped;
/// `corrupt_record` names it.
struct LedgerFileContents {
  std::vector<Block> blocks;
  std::optional<std::uint64_t> corrupt_record;
  std::string error;
};

LedgerFileContents read_ledger_file(const std::filesystem::path& path);
LedgerFileContents parse_ledger_bytes(ByteView data);
Bytes encode_ledger(std::span<const Block> blocks);

/// Parse plus chain validation; a parse failure at record i counts as a
/// break at block i.
ValidationReport validate_ledger_bytes(ByteView data);
ValidationReport validate_ledger_file(const std::filesystem::path& path);

/// Append-only hash-chained ledger with mode-based permissions. One block
/// per appended transaction. Appends are exclusive; reads take a shared
/// lock and return copies.
class Ledger {
 public:
  explicit Ledger(AccessPolicy policy, Tick genesis_time = 0);

  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  /// Public keys used to verify ModelConsensus signatures.
  void register_identity(const crypto::PublicIdentity& identity);
  std::optional<crypto::PublicKey> public_key(std::string_view id) const;

  BlockRef append_transaction(Transaction tx, const crypto::Identity& caller);

  Transaction transaction(BlockRef ref, std::string_view reader) const;
  std::vector<Block> snapshot(std::string_view reader) const;
  ValidationReport validate(std::string_view reader) const;

  std::size_t block_count() const;
  const AccessPolicy& policy() const { return policy_; }

  /// Writes the current chain to `path` and appends every later block.
  void attach_file(const std::filesystem::path& path);

 private:
  void check_read(std::string_view reader) const;

  AccessPolicy policy_;
  mutable std::shared_mutex mutex_;
  std::vector<Block> blocks_;
  std::map<std::string, crypto::PublicKey, std::less<>> keys_;
  std::ofstream file_;
};

BlockRef append_transaction(Ledger& chain, Transaction tx, const crypto::Identity& caller);

}  // namespace robochain::ledger
