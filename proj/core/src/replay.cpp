#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>

#include "robochain/audit.hpp"
#include "robochain/errors.hpp"
#include "robochain/simnet.hpp"

namespace robochain::simnet {

namespace fs = std::filesystem;
using consensus::RoundState;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptData, path.string() + ": " + e.what());
  }
}

std::map<std::string, crypto::PublicKey> read_identities(const fs::path& path) {
  std::map<std::string, crypto::PublicKey> out;
  const nlohmann::json j = read_json(path);
  for (const auto& [id, hex] : j.items()) {
    Bytes raw = from_hex(hex.get<std::string>());
    if (raw.size() != 32) throw Error(ErrorCode::CorruptData, "bad public key for " + id);
    crypto::PublicKey pk{};
    std::copy(raw.begin(), raw.end(), pk.begin());
    out[id] = pk;
  }
  return out;
}

RoundState parse_state(const std::string& s) {
  for (auto st : {RoundState::Open, RoundState::Accepted, RoundState::Rejected, RoundState::Expired})
    if (consensus::to_string(st) == s) return st;
  throw Error(ErrorCode::CorruptData, "unknown round outcome '" + s + "'");
}

}  // namespace

bool VerificationSummary::ok() const {
  if (!chain.ok || !failed_pairs.empty() || !hubs_agree) return false;
  for (const auto& r : rounds) {
    if (!r.update_hash_matches || !r.signature_valid) return false;
    if (r.payload_matches && !*r.payload_matches) return false;
  }
  return true;
}

nlohmann::ordered_json VerificationSummary::to_json() const {
  nlohmann::ordered_json j;
  j["ok"] = ok();
  j["chain"] = {{"ok", chain.ok},
                {"blocks_checked", chain.blocks_checked},
                {"first_broken", chain.first_broken ? nlohmann::ordered_json(*chain.first_broken)
                                                    : nlohmann::ordered_json(nullptr)},
                {"reason", chain.reason}};
  j["pairs_checked"] = pairs_checked;
  j["failed_pairs"] = failed_pairs;
  j["audit_transactions"] = audit_transactions;
  j["payloads_checked"] = payloads_checked;
  auto& rs = j["rounds"] = nlohmann::ordered_json::array();
  for (const auto& r : rounds) {
    nlohmann::ordered_json o;
    o["round_id"] = r.round_id;
    o["update_hash_matches"] = r.update_hash_matches;
    o["signature_valid"] = r.signature_valid;
    o["payload_matches"] =
        r.payload_matches ? nlohmann::ordered_json(*r.payload_matches) : nlohmann::ordered_json(nullptr);
    o["detail"] = r.detail;
    rs.push_back(std::move(o));
  }
  j["hubs_agree"] = hubs_agree;
  j["notices"] = notices;
  return j;
}

VerificationSummary replay(const fs::path& out_dir, const std::optional<crypto::NetworkKey>& key) {
  return replay(out_dir / "ledger.chain", out_dir / "pairs", out_dir, key);
}

VerificationSummary replay(const fs::path& ledger_path, const fs::path& store_path,
                           const fs::path& out_dir, const std::optional<crypto::NetworkKey>& key) {
  VerificationSummary s;
  if (!fs::exists(ledger_path))
    throw Error(ErrorCode::MissingArtifacts, "missing ledger " + ledger_path.string());
  auto contents = ledger::read_ledger_file(ledger_path);
  s.chain = ledger::validate_ledger_file(ledger_path);
  const std::span<const ledger::Block> blocks(contents.blocks);

  for (const auto& b : blocks)
    for (const auto& tx : b.transactions)
      if (std::holds_alternative<ledger::QueryAuditTx>(tx)) ++s.audit_transactions;

  audit::PairStore store(store_path, "opal");
  for (const auto& h : store.list()) {
    ++s.pairs_checked;
    bool good = false;
    try {
      auto pair = store.get(h);
      good = pair && audit::verify_pair(blocks, *pair);
    } catch (const Error&) {
      good = false;
    }
    if (!good) s.failed_pairs.push_back(h.hex());
  }
  if (s.pairs_checked != s.audit_transactions)
    s.notices.push_back(std::to_string(s.pairs_checked) + " stored pairs but " +
                        std::to_string(s.audit_transactions) + " audit transactions");

  const auto identities = read_identities(out_dir / "identities.json");
  s.payloads_checked = key.has_value();
  if (!key) s.notices.push_back("no network key given; encrypted payloads not checked");

  std::vector<fs::path> round_files;
  if (fs::exists(out_dir / "rounds"))
    for (const auto& e : fs::directory_iterator(out_dir / "rounds"))
      if (e.path().extension() == ".json") round_files.push_back(e.path());
  std::sort(round_files.begin(), round_files.end(), [](const fs::path& a, const fs::path& b) {
    return std::stoull(a.stem().string()) < std::stoull(b.stem().string());
  });

  for (const auto& path : round_files) {
    const auto j = read_json(path);
    RoundCheck rc;
    rc.round_id = j.at("round_id").get<consensus::RoundId>();
    const auto block = j.at("notarization").at("block").get<std::uint64_t>();
    const auto txi = j.at("notarization").at("tx").get<std::uint32_t>();
    if (block >= blocks.size() || txi >= blocks[block].transactions.size()) {
      rc.detail = "notarization reference not in ledger";
      s.rounds.push_back(std::move(rc));
      continue;
    }
    const auto* tx = std::get_if<ledger::ModelConsensusTx>(&blocks[block].transactions[txi]);
    if (!tx) {
      rc.detail = "notarization reference is not a model-consensus transaction";
      s.rounds.push_back(std::move(rc));
      continue;
    }
    rc.update_hash_matches = tx->model_update_hash.hex() == j.at("update_hash").get<std::string>();
    auto signer = identities.find(tx->signer_id);
    rc.signature_valid = signer != identities.end() && tx->signer_id == j.at("source_robot") &&
                         crypto::verify(tx->signing_message(), tx->signature, signer->second);
    if (key) {
      try {
        auto payload = consensus::decode_payload(crypto::decrypt_payload(tx->encrypted_payload, *key));
        const RoundState recorded = parse_state(j.at("outcome").get<std::string>());
        rc.payload_matches = payload.decision == recorded &&
                             consensus::recompute_decision(payload) == recorded &&
                             payload.entries.size() == j.at("candidate_count").get<std::size_t>();
        if (!*rc.payload_matches) rc.detail = "decrypted payload disagrees with recorded outcome";
      } catch (const Error& e) {
        rc.payload_matches = false;
        rc.detail = e.what();
      }
    }
    s.rounds.push_back(std::move(rc));
  }

  // Every hub repository must hold the same consensual model as the report.
  s.hubs_agree = true;
  std::optional<std::string> expected;
  if (fs::exists(out_dir / "report.json"))
    expected = read_json(out_dir / "report.json").at("final_consensual_id").get<std::string>();
  if (fs::exists(out_dir / "hubs")) {
    for (const auto& e : fs::directory_iterator(out_dir / "hubs")) {
      try {
        auto repo = modelstore::Repository::load(e.path());
        auto head = repo.consensual_head();
        if (!head || (expected && head->hex() != *expected)) {
          s.hubs_agree = false;
          s.notices.push_back(e.path().filename().string() + " consensual head differs");
        }
        if (!expected && head) expected = head->hex();
      } catch (const Error& err) {
        s.hubs_agree = false;
        s.notices.push_back(e.path().filename().string() + ": " + err.what());
      }
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Leak scan

std::pair<std::vector<std::string>, std::vector<Bytes>> probe_needles(const PrivacyProbes& probes) {
  std::vector<std::string> text(probes.record_ids.begin(), probes.record_ids.end());
  std::vector<Bytes> binary;
  for (double v : probes.raw_values) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec == std::errc()) {
      std::string shortest(buf, end);
      // Short renderings (0, 1, 0.5) carry no identifying precision.
      if (shortest.size() >= 8) text.push_back(shortest);
    }
    std::snprintf(buf, sizeof buf, "%.17g", v);
    if (std::strlen(buf) >= 8) text.emplace_back(buf);
    Bytes raw(8);
    std::memcpy(raw.data(), &v, 8);
    if (v != 0.0 && v != 1.0) binary.push_back(std::move(raw));
  }
  return {std::move(text), std::move(binary)};
}

std::vector<std::string> scan_artifacts(const fs::path& dir, const std::vector<std::string>& text_needles,
                                        const std::vector<Bytes>& binary_needles) {
  std::vector<std::string> hits;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    for (const auto& n : text_needles)
      if (data.find(n) != std::string::npos) hits.push_back(e.path().string() + ": " + n);
    for (const auto& n : binary_needles)
      if (std::search(data.begin(), data.end(), n.begin(), n.end(),
                      [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; }) !=
          data.end())
        hits.push_back(e.path().string() + ": raw " + to_hex(n));
  }
  return hits;
}

}  // namespace robochain::simnet
