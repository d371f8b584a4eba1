#include "robochain/ledger.hpp"

#include <mutex>

#include "robochain/errors.hpp"

namespace robochain::ledger {

std::string_view to_string(PermissionMode mode) {
  switch (mode) {
    case PermissionMode::Public: return "public";
    case PermissionMode::SemiPrivate: return "semi-private";
    case PermissionMode::Private: return "private";
  }
  return "unknown";
}

PermissionMode parse_permission_mode(std::string_view text) {
  if (text == "public") return PermissionMode::Public;
  if (text == "semi-private") return PermissionMode::SemiPrivate;
  if (text == "private") return PermissionMode::Private;
  throw Error(ErrorCode::InvalidConfig, "unknown ledger mode '" + std::string(text) + "'");
}

Bytes ModelConsensusTx::signing_message() const {
  CanonicalWriter w;
  w.u64(timestamp).field(model_update_hash).field(encrypted_payload);
  return std::move(w).take();
}

ModelConsensusTx ModelConsensusTx::make(Tick timestamp, const Digest& update_hash,
                                        Bytes encrypted_payload, const crypto::Identity& signer) {
  ModelConsensusTx tx;
  tx.timestamp = timestamp;
  tx.model_update_hash = update_hash;
  tx.encrypted_payload = std::move(encrypted_payload);
  tx.signer_id = signer.id();
  tx.signature = signer.sign(tx.signing_message());
  return tx;
}

Bytes serialize(const Transaction& tx) {
  CanonicalWriter w;
  if (const auto* qa = std::get_if<QueryAuditTx>(&tx)) {
    w.tag(kQueryAuditTag).field(qa->pair_hash).field(qa->querier_id).u64(qa->timestamp);
  } else {
    const auto& mc = std::get<ModelConsensusTx>(tx);
    w.tag(kModelConsensusTag)
        .u64(mc.timestamp)
        .field(mc.model_update_hash)
        .field(mc.encrypted_payload)
        .field(mc.signer_id)
        .field(mc.signature);
  }
  return std::move(w).take();
}

Transaction parse_transaction(ByteView data) {
  CanonicalReader r(data);
  std::uint8_t tag = r.tag();
  Transaction out;
  if (tag == kQueryAuditTag) {
    QueryAuditTx qa;
    qa.pair_hash = r.digest_field();
    qa.querier_id = r.string_field();
    qa.timestamp = r.u64();
    out = std::move(qa);
  } else if (tag == kModelConsensusTag) {
    ModelConsensusTx mc;
    mc.timestamp = r.u64();
    mc.model_update_hash = r.digest_field();
    ByteView payload = r.field();
    mc.encrypted_payload.assign(payload.begin(), payload.end());
    mc.signer_id = r.string_field();
    ByteView sig = r.field();
    mc.signature.assign(sig.begin(), sig.end());
    out = std::move(mc);
  } else {
    throw Error(ErrorCode::CorruptData, "unknown transaction tag");
  }
  r.expect_done();
  return out;
}

Digest transaction_hash(const Transaction& tx) { return crypto::sha256(serialize(tx)); }

Tick timestamp_of(const Transaction& tx) {
  return std::visit([](const auto& t) { return t.timestamp; }, tx);
}

Digest Block::compute_hash() const {
  CanonicalWriter w;
  w.u64(index).field(prev_hash).u64(timestamp).u64(transactions.size());
  for (const auto& tx : transactions) w.field(serialize(tx));
  return crypto::sha256(w.bytes());
}

Bytes serialize_block(const Block& block) {
  CanonicalWriter w;
  w.u64(block.index).field(block.prev_hash).u64(block.timestamp).u64(block.transactions.size());
  for (const auto& tx : block.transactions) w.field(serialize(tx));
  w.field(block.block_hash);
  return std::move(w).take();
}

Block parse_block(ByteView data) {
  CanonicalReader r(data);
  Block b;
  b.index = r.u64();
  b.prev_hash = r.digest_field();
  b.timestamp = r.u64();
  std::uint64_t count = r.u64();
  if (count > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible transaction count");
  for (std::uint64_t i = 0; i < count; ++i) b.transactions.push_back(parse_transaction(r.field()));
  b.block_hash = r.digest_field();
  r.expect_done();
  return b;
}

ValidationReport validate_chain(std::span<const Block> blocks) {
  ValidationReport report;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Block& b = blocks[i];
    auto fail = [&](std::string why) {
      report.ok = false;
      report.first_broken = i;
      report.reason = std::move(why);
    };
    report.blocks_checked = i + 1;
    if (b.index != i) {
      fail("index field does not match position");
    } else if (b.compute_hash() != b.block_hash) {
      fail("block hash does not recompute");
    } else if (i == 0 && !b.prev_hash.is_zero()) {
      fail("genesis prev_hash is not zero");
    } else if (i > 0 && b.prev_hash != blocks[i - 1].block_hash) {
      fail("prev_hash does not link to previous block");
    } else if (i > 0 && b.timestamp < blocks[i - 1].timestamp) {
      fail("timestamp regresses");
    }
    if (!report.ok) return report;
  }
  return report;
}

bool AccessPolicy::may_read(std::string_view id) const {
  if (mode != PermissionMode::Private) return true;
  return members.find(std::string(id)) != members.end();
}

bool AccessPolicy::may_append(std::string_view id) const {
  switch (mode) {
    case PermissionMode::Public: return true;
    case PermissionMode::SemiPrivate: return writers.find(std::string(id)) != writers.end();
    case PermissionMode::Private: return members.find(std::string(id)) != members.end();
  }
  return false;
}

Bytes encode_ledger(std::span<const Block> blocks) {
  CanonicalWriter w;
  for (const auto& b : blocks) w.field(serialize_block(b));
  return std::move(w).take();
}

LedgerFileContents parse_ledger_bytes(ByteView data) {
  LedgerFileContents out;
  CanonicalReader r(data);
  std::uint64_t record = 0;
  while (!r.done()) {
    try {
      out.blocks.push_back(parse_block(r.field()));
    } catch (const Error& e) {
      out.corrupt_record = record;
      out.error = e.what();
      break;
    }
    ++record;
  }
  return out;
}

LedgerFileContents read_ledger_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot open ledger file " + path.string());
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_ledger_bytes(data);
}

namespace {

ValidationReport validate_contents(const LedgerFileContents& contents) {
  ValidationReport report = validate_chain(contents.blocks);
  if (report.ok && contents.corrupt_record) {
    report.ok = false;
    report.first_broken = contents.corrupt_record;
    report.reason = "unparseable block record: " + contents.error;
  }
  if (report.ok && contents.blocks.empty()) {
    report.ok = false;
    report.first_broken = 0;
    report.reason = "missing genesis block";
  }
  return report;
}

}  // namespace

ValidationReport validate_ledger_bytes(ByteView data) {
  return validate_contents(parse_ledger_bytes(data));
}

ValidationReport validate_ledger_file(const std::filesystem::path& path) {
  return validate_contents(read_ledger_file(path));
}

Ledger::Ledger(AccessPolicy policy, Tick genesis_time) : policy_(std::move(policy)) {
  Block genesis;
  genesis.index = 0;
  genesis.prev_hash = Digest::zero();
  genesis.timestamp = genesis_time;
  genesis.block_hash = genesis.compute_hash();
  blocks_.push_back(std::move(genesis));
}

void Ledger::register_identity(const crypto::PublicIdentity& identity) {
  std::unique_lock lock(mutex_);
  keys_[identity.id] = identity.public_key;
}

std::optional<crypto::PublicKey> Ledger::public_key(std::string_view id) const {
  std::shared_lock lock(mutex_);
  auto it = keys_.find(id);
  if (it == keys_.end()) return std::nullopt;
  return it->second;
}

BlockRef Ledger::append_transaction(Transaction tx, const crypto::Identity& caller) {
  std::unique_lock lock(mutex_);
  if (!policy_.may_append(caller.id()))
    throw Error(ErrorCode::PermissionDenied,
                "'" + caller.id() + "' may not append in " + std::string(to_string(policy_.mode)) +
                    " mode");
  if (const auto* mc = std::get_if<ModelConsensusTx>(&tx)) {
    auto it = keys_.find(mc->signer_id);
    if (it == keys_.end())
      throw Error(ErrorCode::InvalidSignature, "unknown signer '" + mc->signer_id + "'");
    if (!crypto::verify(mc->signing_message(), mc->signature, it->second))
      throw Error(ErrorCode::InvalidSignature, "signature does not verify for " + mc->signer_id);
  }
  const Block& tip = blocks_.back();
  Tick ts = timestamp_of(tx);
  if (ts < tip.timestamp)
    throw Error(ErrorCode::TimestampRegression, "transaction timestamp precedes chain tip");

  Block b;
  b.index = tip.index + 1;
  b.prev_hash = tip.block_hash;
  b.timestamp = ts;
  b.transactions.push_back(std::move(tx));
  b.block_hash = b.compute_hash();
  if (file_.is_open()) {
    CanonicalWriter w;
    w.field(serialize_block(b));
    file_.write(reinterpret_cast<const char*>(w.bytes().data()),
                static_cast<std::streamsize>(w.bytes().size()));
    file_.flush();
  }
  blocks_.push_back(std::move(b));
  return BlockRef{blocks_.back().index, 0};
}

void Ledger::check_read(std::string_view reader) const {
  if (!policy_.may_read(reader))
    throw Error(ErrorCode::PermissionDenied, "'" + std::string(reader) + "' may not read");
}

Transaction Ledger::transaction(BlockRef ref, std::string_view reader) const {
  std::shared_lock lock(mutex_);
  check_read(reader);
  if (ref.block_index >= blocks_.size() ||
      ref.tx_index >= blocks_[ref.block_index].transactions.size())
    throw Error(ErrorCode::UnknownBlockRef, "no transaction at block " +
                                                std::to_string(ref.block_index) + " tx " +
                                                std::to_string(ref.tx_index));
  return blocks_[ref.block_index].transactions[ref.tx_index];
}

std::vector<Block> Ledger::snapshot(std::string_view reader) const {
  std::shared_lock lock(mutex_);
  check_read(reader);
  return blocks_;
}

ValidationReport Ledger::validate(std::string_view reader) const {
  std::shared_lock lock(mutex_);
  check_read(reader);
  return validate_chain(blocks_);
}

std::size_t Ledger::block_count() const {
  std::shared_lock lock(mutex_);
  return blocks_.size();
}

void Ledger::attach_file(const std::filesystem::path& path) {
  std::unique_lock lock(mutex_);
  file_.close();
  file_.open(path, std::ios::binary | std::ios::trunc);
  if (!file_) throw Error(ErrorCode::MissingArtifacts, "cannot write ledger file " + path.string());
  Bytes all = encode_ledger(blocks_);
  file_.write(reinterpret_cast<const char*>(all.data()), static_cast<std::streamsize>(all.size()));
  file_.flush();
}

BlockRef append_transaction(Ledger& chain, Transaction tx, const crypto::Identity& caller) {
  return chain.append_transaction(std::move(tx), caller);
}

}  // namespace robochain::ledger
