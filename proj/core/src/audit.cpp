#include "robochain/audit.hpp"

#include <algorithm>
#include <fstream>

#include "robochain/errors.hpp"

namespace robochain::audit {

namespace fs = std::filesystem;

Digest compute_pair_hash(const opal::Query& query, const opal::AggregatedAnswer& answer) {
  return crypto::sha256({opal::serialize(query), opal::serialize(answer)});
}

PairStore::PairStore(fs::path dir, std::string party_id)
    : dir_(std::move(dir)), party_id_(std::move(party_id)) {
  fs::create_directories(dir_);
}

fs::path PairStore::pair_path(const Digest& h) const { return dir_ / (h.hex() + ".pair"); }
fs::path PairStore::ref_path(const Digest& h) const { return dir_ / (h.hex() + ".ref"); }

Digest PairStore::put(const opal::Query& query, const opal::AggregatedAnswer& answer) {
  if (query.query_id != answer.query_id)
    throw Error(ErrorCode::MismatchedIds,
                "answer '" + answer.query_id + "' does not belong to query '" + query.query_id + "'");
  Digest h = compute_pair_hash(query, answer);
  CanonicalWriter w;
  w.field(opal::serialize(query)).field(opal::serialize(answer)).field(party_id_);
  std::ofstream out(pair_path(h), std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingArtifacts, "cannot write " + pair_path(h).string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()),
            static_cast<std::streamsize>(w.bytes().size()));
  return h;
}

void PairStore::set_ledger_ref(const Digest& pair_hash, ledger::BlockRef ref) {
  std::ofstream out(ref_path(pair_hash), std::ios::trunc);
  if (!out) throw Error(ErrorCode::MissingArtifacts, "cannot write " + ref_path(pair_hash).string());
  out << ref.block_index << ' ' << ref.tx_index << '\n';
}

std::optional<AuditedPair> PairStore::get(const Digest& pair_hash) const {
  std::ifstream in(pair_path(pair_hash), std::ios::binary);
  if (!in) return std::nullopt;
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CanonicalReader r(data);
  AuditedPair pair;
  pair.query = opal::parse_query(r.field());
  pair.answer = opal::parse_answer(r.field());
  pair.stored_at = r.string_field();
  r.expect_done();
  pair.pair_hash = pair_hash;
  std::ifstream ref(ref_path(pair_hash));
  if (!ref || !(ref >> pair.ledger_ref.block_index >> pair.ledger_ref.tx_index))
    throw Error(ErrorCode::UnknownBlockRef, "pair " + pair_hash.short_hex() + " has no ledger ref");
  return pair;
}

std::vector<Digest> PairStore::list() const {
  std::vector<Digest> out;
  for (const auto& entry : fs::directory_iterator(dir_)) {
    if (entry.path().extension() != ".pair") continue;
    out.push_back(Digest::from_hex(entry.path().stem().string()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Digest record_pair(const opal::Query& query, const opal::AggregatedAnswer& answer, PairStore& store) {
  return store.put(query, answer);
}

ledger::BlockRef submit_audit_tx(ledger::Ledger& chain, const Digest& pair_hash,
                                 std::string_view querier_id, const crypto::Identity& submitter,
                                 Tick t) {
  ledger::QueryAuditTx tx{pair_hash, std::string(querier_id), t};
  return chain.append_transaction(std::move(tx), submitter);
}

namespace {

bool matches_on_chain(const ledger::Transaction& tx, const AuditedPair& candidate) {
  const auto* qa = std::get_if<ledger::QueryAuditTx>(&tx);
  if (!qa) return false;
  return compute_pair_hash(candidate.query, candidate.answer) == qa->pair_hash;
}

}  // namespace

bool verify_pair(const ledger::Ledger& chain, const AuditedPair& candidate,
                 std::string_view reader) {
  return matches_on_chain(chain.transaction(candidate.ledger_ref, reader), candidate);
}

bool verify_pair(std::span<const ledger::Block> chain, const AuditedPair& candidate) {
  const auto& ref = candidate.ledger_ref;
  if (ref.block_index >= chain.size() ||
      ref.tx_index >= chain[ref.block_index].transactions.size())
    throw Error(ErrorCode::UnknownBlockRef,
                "no transaction at block " + std::to_string(ref.block_index));
  return matches_on_chain(chain[ref.block_index].transactions[ref.tx_index], candidate);
}

AuditService::AuditService(PairStore& store, ledger::Ledger& chain,
                           const crypto::Identity& service_identity)
    : store_(store), chain_(chain), identity_(service_identity) {}

AuditedPair AuditService::audit(const opal::Query& query, const opal::AggregatedAnswer& answer,
                                Tick t) {
  AuditedPair pair;
  pair.query = query;
  pair.answer = answer;
  pair.pair_hash = record_pair(query, answer, store_);
  pair.stored_at = store_.party_id();
  pair.ledger_ref = submit_audit_tx(chain_, pair.pair_hash, query.requester_id, identity_, t);
  store_.set_ledger_ref(pair.pair_hash, pair.ledger_ref);
  ++audited_;
  return pair;
}

}  // namespace robochain::audit
