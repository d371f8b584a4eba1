#include <benchmark/benchmark.h>

#include <memory>

#include "robochain/ledger.hpp"

using namespace robochain;

namespace {

std::unique_ptr<ledger::Ledger> filled(std::size_t n, const crypto::Identity& w) {
  auto chain = std::make_unique<ledger::Ledger>(ledger::AccessPolicy{ledger::PermissionMode::Public, {}, {}});
  chain->register_identity(w.public_identity());
  for (std::size_t i = 0; i < n; ++i) {
    Digest h = crypto::sha256(ByteView(reinterpret_cast<const std::uint8_t*>(&i), sizeof i));
    chain->append_transaction(ledger::QueryAuditTx{h, "robot-0-0", static_cast<Tick>(i)}, w);
  }
  return chain;
}

}  // namespace

static void BM_Sha256(benchmark::State& state) {
  Bytes data(static_cast<std::size_t>(state.range(0)), 0x5a);
  for (auto _ : state) benchmark::DoNotOptimize(crypto::sha256(data));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Sha256)->Arg(64)->Arg(4096)->Arg(1 << 20);

static void BM_AppendAuditTx(benchmark::State& state) {
  auto w = crypto::Identity::generate("robot-0-0");
  for (auto _ : state) {
    state.PauseTiming();
    ledger::Ledger chain(ledger::AccessPolicy{ledger::PermissionMode::Public, {}, {}});
    chain.register_identity(w.public_identity());
    state.ResumeTiming();
    for (std::int64_t i = 0; i < state.range(0); ++i)
      chain.append_transaction(ledger::QueryAuditTx{Digest{}, "robot-0-0", static_cast<Tick>(i)}, w);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_AppendAuditTx)->Arg(100)->Arg(1000);

static void BM_AppendConsensusTx(benchmark::State& state) {
  auto w = crypto::Identity::generate("robot-0-0");
  ledger::Ledger chain(ledger::AccessPolicy{ledger::PermissionMode::Public, {}, {}});
  chain.register_identity(w.public_identity());
  Bytes payload(256, 0x11);
  Tick t = 0;
  for (auto _ : state) chain.append_transaction(ledger::ModelConsensusTx::make(t++, Digest{}, payload, w), w);
}
BENCHMARK(BM_AppendConsensusTx);

static void BM_ValidateChain(benchmark::State& state) {
  auto w = crypto::Identity::generate("robot-0-0");
  auto chain = filled(static_cast<std::size_t>(state.range(0)), w);
  for (auto _ : state) benchmark::DoNotOptimize(chain->validate("auditor"));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ValidateChain)->Arg(100)->Arg(1000);

static void BM_ValidateEncodedBytes(benchmark::State& state) {
  auto w = crypto::Identity::generate("robot-0-0");
  auto chain = filled(static_cast<std::size_t>(state.range(0)), w);
  const Bytes file = ledger::encode_ledger(chain->snapshot("auditor"));
  for (auto _ : state) benchmark::DoNotOptimize(ledger::validate_ledger_bytes(file));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(file.size()));
}
BENCHMARK(BM_ValidateEncodedBytes)->Arg(1000);
