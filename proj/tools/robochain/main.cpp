// robochain: run scenarios and inspect or verify their artifacts.
//
// Exit status: 0 success, 1 verification failed, 2 usage or input error,
// 3 invariant violation during a run.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "robochain/audit.hpp"
#include "robochain/errors.hpp"
#include "robochain/simnet.hpp"

namespace fs = std::filesystem;
using namespace robochain;

namespace {

nlohmann::ordered_json tx_json(const ledger::Transaction& tx) {
  nlohmann::ordered_json j;
  if (const auto* q = std::get_if<ledger::QueryAuditTx>(&tx)) {
    j["type"] = "query-audit";
    j["pair_hash"] = q->pair_hash.hex();
    j["querier_id"] = q->querier_id;
    j["timestamp"] = q->timestamp;
  } else {
    const auto& m = std::get<ledger::ModelConsensusTx>(tx);
    j["type"] = "model-consensus";
    j["timestamp"] = m.timestamp;
    j["model_update_hash"] = m.model_update_hash.hex();
    j["encrypted_payload_bytes"] = m.encrypted_payload.size();
    j["signer_id"] = m.signer_id;
    j["signature"] = to_hex(m.signature);
  }
  j["tx_hash"] = ledger::transaction_hash(tx).hex();
  return j;
}

std::optional<crypto::NetworkKey> load_key(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return crypto::NetworkKey::load(path);
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out) {
  auto config = config_path.empty() ? simnet::ScenarioConfig::defaults()
                                    : simnet::ScenarioConfig::load(config_path);
  if (seed) config.seed = *seed;
  config.validate();
  try {
    auto result = simnet::run_scenario(config, out);
    const auto& r = result.report;
    std::size_t accepted = 0;
    for (const auto& round : r.rounds) accepted += round.outcome == consensus::RoundState::Accepted;
    std::cout << "rounds " << r.rounds.size() << ", accepted " << accepted << ", ledger blocks "
              << r.ledger_blocks << " (" << (r.ledger_validation.ok ? "valid" : "INVALID") << ")\n"
              << "held-out mse " << r.initial_holdout_mse << " -> "
              << (r.holdout_trajectory.empty() ? r.initial_holdout_mse : r.holdout_trajectory.back())
              << "\n"
              << "audited answers " << r.audit.audit_transactions << ", verified pairs "
              << r.audit.verified_pairs << "\n"
              << "report " << (fs::path(out) / "report.json").string() << "\n";
    return r.ledger_validation.ok ? 0 : 1;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::InvariantViolation) throw;
    std::cerr << e.what() << "\n";
    return 3;
  }
}

int cmd_verify_chain(const std::string& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingArtifacts, "missing ledger " + path);
  auto v = ledger::validate_ledger_file(path);
  if (v.ok) {
    std::cout << "ok: " << v.blocks_checked << " blocks\n";
    return 0;
  }
  std::cout << "broken at block " << (v.first_broken ? std::to_string(*v.first_broken) : "?") << ": "
            << v.reason << "\n";
  return 1;
}

int cmd_inspect_tx(const std::string& path, std::uint64_t index) {
  auto contents = ledger::read_ledger_file(path);
  if (index >= contents.blocks.size())
    throw Error(ErrorCode::UnknownBlockRef, "block " + std::to_string(index) + " not in ledger (" +
                                                std::to_string(contents.blocks.size()) + " blocks)");
  const auto& b = contents.blocks[index];
  nlohmann::ordered_json j;
  j["index"] = b.index;
  j["timestamp"] = b.timestamp;
  j["prev_hash"] = b.prev_hash.hex();
  j["block_hash"] = b.block_hash.hex();
  auto& txs = j["transactions"] = nlohmann::ordered_json::array();
  for (const auto& tx : b.transactions) txs.push_back(tx_json(tx));
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_verify_pair(const std::string& store_dir, const std::string& hash, std::string ledger_path) {
  if (ledger_path.empty()) ledger_path = (fs::path(store_dir).parent_path() / "ledger.chain").string();
  audit::PairStore store(store_dir, "opal");
  auto pair = store.get(Digest::from_hex(hash));
  if (!pair) throw Error(ErrorCode::MissingArtifacts, "no pair " + hash + " in " + store_dir);
  auto contents = ledger::read_ledger_file(ledger_path);
  const bool ok = audit::verify_pair(std::span<const ledger::Block>(contents.blocks), *pair);
  std::cout << (ok ? "verified" : "MISMATCH") << ": " << hash << " at block "
            << pair->ledger_ref.block_index << " tx " << pair->ledger_ref.tx_index << "\n";
  return ok ? 0 : 1;
}

int cmd_inspect_round(const std::string& out_dir, std::uint64_t round_id, const std::string& key_path) {
  const fs::path path = fs::path(out_dir) / "rounds" / (std::to_string(round_id) + ".json");
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "no round " + std::to_string(round_id));
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(in);
  auto contents = ledger::read_ledger_file(fs::path(out_dir) / "ledger.chain");
  const auto block = j["notarization"]["block"].get<std::uint64_t>();
  const auto txi = j["notarization"]["tx"].get<std::uint32_t>();
  if (block >= contents.blocks.size() || txi >= contents.blocks[block].transactions.size())
    throw Error(ErrorCode::UnknownBlockRef, "notarization not found in ledger");
  const auto& tx = contents.blocks[block].transactions[txi];
  j["ledger_tx"] = tx_json(tx);
  if (auto key = load_key(key_path)) {
    const auto& m = std::get<ledger::ModelConsensusTx>(tx);
    auto payload = consensus::decode_payload(crypto::decrypt_payload(m.encrypted_payload, *key));
    auto& p = j["payload"];
    p["quorum"] = payload.quorum;
    p["decision"] = consensus::to_string(payload.decision);
    p["recomputed_decision"] = consensus::to_string(consensus::recompute_decision(payload));
    auto& entries = p["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : payload.entries)
      entries.push_back({{"public_id", e.public_id},
                         {"candidate_score", e.candidate_score},
                         {"baseline_score", e.baseline_score}});
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_replay(const std::string& out_dir, const std::string& key_path) {
  auto s = simnet::replay(out_dir, load_key(key_path));
  std::cout << s.to_json().dump(2) << "\n";
  return s.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robochain: federated robot learning with an audited data service"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "robochain-out";
  std::optional<std::uint64_t> seed;
  auto* run = app.add_subcommand("run", "run a scenario and write its artifacts");
  run->add_option("--config", config_path, "scenario JSON file (defaults when omitted)")
      ->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", out_dir, "output directory");

  std::string ledger_file;
  auto* verify_chain = app.add_subcommand("verify-chain", "check hash links and block order");
  verify_chain->add_option("ledger-file", ledger_file)->required();

  std::uint64_t index = 0;
  auto* inspect_tx = app.add_subcommand("inspect-tx", "print the transactions of one block");
  inspect_tx->add_option("ledger-file", ledger_file)->required();
  inspect_tx->add_option("index", index, "block index")->required();

  std::string store_dir, hash, pair_ledger;
  auto* verify_pair = app.add_subcommand("verify-pair", "check a stored pair against the ledger");
  verify_pair->add_option("store-dir", store_dir)->required();
  verify_pair->add_option("hash", hash)->required();
  verify_pair->add_option("--ledger", pair_ledger, "ledger file (default: <store-dir>/../ledger.chain)");

  std::string key_path;
  std::uint64_t round_id = 0;
  auto* inspect_round = app.add_subcommand("inspect-round", "show a round and its notarization");
  inspect_round->add_option("out-dir", out_dir)->required();
  inspect_round->add_option("round-id", round_id)->required();
  inspect_round->add_option("--key", key_path, "network key file; decrypts the payload");

  auto* replay = app.add_subcommand("replay", "re-verify every artifact of a run");
  replay->add_option("out-dir", out_dir)->required();
  replay->add_option("--key", key_path, "network key file; re-checks encrypted payloads");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, seed, out_dir);
    if (*verify_chain) return cmd_verify_chain(ledger_file);
    if (*inspect_tx) return cmd_inspect_tx(ledger_file, index);
    if (*verify_pair) return cmd_verify_pair(store_dir, hash, pair_ledger);
    if (*inspect_round) return cmd_inspect_round(out_dir, round_id, key_path);
    if (*replay) return cmd_replay(out_dir, key_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
