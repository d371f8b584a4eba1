#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "robochain/bytes.hpp"
#include "robochain/crypto.hpp"
#include "robochain/ledger.hpp"
#include "robochain/opal.hpp"

namespace robochain::audit {

struct AuditedPair {
  opal::Query query;
  opal::AggregatedAnswer answer;
  Digest pair_hash;
  std::string stored_at;
  ledger::BlockRef ledger_ref;
};

/// H(canonical(query) || canonical(answer)).
Digest compute_pair_hash(const opal::Query& query, const opal::AggregatedAnswer& answer);

/// Content-addressed store of full query/answer pairs, kept at the data
/// service. One `<hash>.pair` file per pair plus a `<hash>.ref` file naming
/// the audit transaction once it is on chain.
class PairStore {
 public:
  PairStore(std::filesystem::path dir, std::string party_id);

  Digest put(const opal::Query& query, const opal::AggregatedAnswer& answer);
  void set_ledger_ref(const Digest& pair_hash, ledger::BlockRef ref);

  /// Reads back what is on disk. The returned pair_hash is the storage key,
  /// not a recomputation.
  std::optional<AuditedPair> get(const Digest& pair_hash) const;
  std::vector<Digest> list() const;

  const std::filesystem::path& dir() const { return dir_; }
  const std::string& party_id() const { return party_id_; }

 private:
  std::filesystem::path pair_path(const Digest& h) const;
  std::filesystem::path ref_path(const Digest& h) const;

  std::filesystem::path dir_;
  std::string party_id_;
};

Digest record_pair(const opal::Query& query, const opal::AggregatedAnswer& answer, PairStore& store);

/// Appends a QueryAudit transaction on behalf of `querier_id`. The
/// submitter (the data service) must satisfy the chain's write rules.
ledger::BlockRef submit_audit_tx(ledger::Ledger& chain, const Digest& pair_hash,
                                 std::string_view querier_id, const crypto::Identity& submitter,
                                 Tick t);

/// True iff the candidate's stored pair re-hashes to the digest recorded at
/// candidate.ledger_ref. Throws Error{UnknownBlockRef} for a dangling ref.
bool verify_pair(const ledger::Ledger& chain, const AuditedPair& candidate,
                 std::string_view reader);

/// Same check against an exported chain (no permission layer).
bool verify_pair(std::span<const ledger::Block> chain, const AuditedPair& candidate);

/// Data-service side of the audit flow: store the pair, put its hash on the
/// chain, remember where. Runs as one serialized unit per pair.
class AuditService {
 public:
  AuditService(PairStore& store, ledger::Ledger& chain, const crypto::Identity& service_identity);

  AuditedPair audit(const opal::Query& query, const opal::AggregatedAnswer& answer, Tick t);

  std::size_t audited_count() const { return audited_; }

 private:
  PairStore& store_;
  ledger::Ledger& chain_;
  const crypto::Identity& identity_;
  std::size_t audited_ = 0;
};

}  // namespace robochain::audit
