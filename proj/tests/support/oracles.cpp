#include "oracles.hpp"

#include <mpfr.h>
#include <sodium.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace oracle {

namespace {

constexpr mpfr_prec_t kPrec = 4096;

struct Mpfr {
  mpfr_t v;
  Mpfr() {
    mpfr_init2(v, kPrec);
    mpfr_set_zero(v, 1);
  }
  ~Mpfr() { mpfr_clear(v); }
  Mpfr(const Mpfr&) = delete;
  Mpfr& operator=(const Mpfr&) = delete;
};

void accumulate(Mpfr& acc, std::span<const double> xs) {
  for (double x : xs) mpfr_add_d(acc.v, acc.v, x, MPFR_RNDN);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64_field(std::vector<std::uint8_t>& out, std::uint64_t v) {
  put_u32(out, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_field(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  put_u32(out, static_cast<std::uint32_t>(n));
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

std::vector<std::uint8_t> tx_bytes(const robochain::ledger::Transaction& tx) {
  std::vector<std::uint8_t> out;
  if (const auto* q = std::get_if<robochain::ledger::QueryAuditTx>(&tx)) {
    out.push_back(0x01);
    put_field(out, q->pair_hash.bytes.data(), 32);
    put_field(out, q->querier_id.data(), q->querier_id.size());
    put_u64_field(out, q->timestamp);
  } else {
    const auto& m = std::get<robochain::ledger::ModelConsensusTx>(tx);
    out.push_back(0x02);
    put_u64_field(out, m.timestamp);
    put_field(out, m.model_update_hash.bytes.data(), 32);
    put_field(out, m.encrypted_payload.data(), m.encrypted_payload.size());
    put_field(out, m.signer_id.data(), m.signer_id.size());
    put_field(out, m.signature.data(), m.signature.size());
  }
  return out;
}

}  // namespace

double exact_sum(std::span<const double> xs) {
  Mpfr acc;
  accumulate(acc, xs);
  return mpfr_get_d(acc.v, MPFR_RNDN);
}

int compare_sums(std::span<const double> a, std::span<const double> b) {
  Mpfr sa, sb;
  accumulate(sa, a);
  accumulate(sb, b);
  return mpfr_cmp(sa.v, sb.v) > 0 ? 1 : (mpfr_cmp(sa.v, sb.v) < 0 ? -1 : 0);
}

robochain::Digest block_hash(const robochain::ledger::Block& b) {
  std::vector<std::uint8_t> pre;
  put_u64_field(pre, b.index);
  put_field(pre, b.prev_hash.bytes.data(), 32);
  put_u64_field(pre, b.timestamp);
  put_u64_field(pre, b.transactions.size());
  for (const auto& tx : b.transactions) {
    auto t = tx_bytes(tx);
    put_field(pre, t.data(), t.size());
  }
  robochain::Digest d;
  crypto_hash_sha256(d.bytes.data(), pre.data(), pre.size());
  return d;
}

std::vector<std::pair<std::size_t, std::size_t>> record_spans(std::span<const std::uint8_t> file) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t pos = 0;
  while (pos + 4 <= file.size()) {
    std::uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= std::uint32_t(file[pos + i]) << (8 * i);
    if (pos + 4 + len > file.size()) throw std::runtime_error("truncated record");
    out.emplace_back(pos, pos + 4 + len);
    pos += 4 + len;
  }
  if (pos != file.size()) throw std::runtime_error("trailing bytes");
  return out;
}

std::optional<double> record_field(const robochain::opal::PatientRecord& r, const std::string& field) {
  if (field == "age") return static_cast<double>(r.age);
  if (field == "gender_code") return static_cast<double>(r.gender_code);
  if (field.rfind("score_", 0) == 0) {
    std::size_t i = std::stoul(field.substr(6));
    if (i < r.assessment_scores.size()) return r.assessment_scores[i];
  }
  return std::nullopt;
}

bool record_matches(const robochain::opal::PatientRecord& r, const robochain::opal::Condition& c) {
  using robochain::opal::CompareOp;
  if (c.field == "condition_tags") {
    for (const auto& l : c.labels)
      if (r.condition_tags.count(l)) return true;
    return false;
  }
  auto v = record_field(r, c.field);
  if (!v) return false;
  switch (c.op) {
    case CompareOp::Eq: return *v == c.numbers.at(0);
    case CompareOp::Lt: return *v < c.numbers.at(0);
    case CompareOp::Le: return *v <= c.numbers.at(0);
    case CompareOp::Gt: return *v > c.numbers.at(0);
    case CompareOp::Ge: return *v >= c.numbers.at(0);
    case CompareOp::In:
      for (double n : c.numbers)
        if (*v == n) return true;
      return false;
  }
  return false;
}

Pooled pooled(const std::vector<robochain::opal::PatientRecord>& records,
              const std::vector<robochain::opal::Condition>& filter, const std::string& target,
              double threshold) {
  std::vector<double> values;
  for (const auto& r : records) {
    bool ok = true;
    for (const auto& c : filter) ok = ok && record_matches(r, c);
    if (!ok) continue;
    auto v = record_field(r, target);
    if (v) values.push_back(*v);
  }
  Pooled p;
  p.count = values.size();
  if (values.empty()) return p;
  p.mean = exact_sum(values) / static_cast<double>(values.size());
  // Two-pass variance in high precision.
  Mpfr sum, mean, acc, d;
  accumulate(sum, values);
  mpfr_div_ui(mean.v, sum.v, values.size(), MPFR_RNDN);
  for (double x : values) {
    mpfr_set_d(d.v, x, MPFR_RNDN);
    mpfr_sub(d.v, d.v, mean.v, MPFR_RNDN);
    mpfr_sqr(d.v, d.v, MPFR_RNDN);
    mpfr_add(acc.v, acc.v, d.v, MPFR_RNDN);
  }
  mpfr_div_ui(acc.v, acc.v, values.size(), MPFR_RNDN);
  p.variance = mpfr_get_d(acc.v, MPFR_RNDN);
  std::size_t above = 0;
  for (double x : values) above += x > threshold;
  p.proportion = static_cast<double>(above) / static_cast<double>(values.size());
  return p;
}

robochain::consensus::RoundState decide(std::span<const double> candidate,
                                        std::span<const double> baseline, std::size_t quorum) {
  using robochain::consensus::RoundState;
  if (candidate.size() < quorum) return RoundState::Expired;
  if (candidate.size() != baseline.size()) throw std::logic_error("paired scores expected");
  if (candidate.empty()) return RoundState::Rejected;
  // Equal counts: comparing means is comparing sums.
  return compare_sums(candidate, baseline) > 0 ? RoundState::Accepted : RoundState::Rejected;
}

double naive_mse(std::span<const double> params, const robochain::learner::Batch& batch,
                 bool identity_activation) {
  long double total = 0.0L;
  for (const auto& s : batch) {
    long double z = params.back();
    for (std::size_t i = 0; i < s.x.dimension(); ++i) z += static_cast<long double>(params[i]) * s.x.at(i);
    long double p = identity_activation ? z : 1.0L / (1.0L + std::exp(-z));
    long double e = p - s.y.target;
    total += e * e;
  }
  return static_cast<double>(total / static_cast<long double>(batch.size()));
}

std::vector<double> numeric_gradient(std::span<const double> params,
                                     const robochain::learner::Batch& batch, double h) {
  std::vector<double> p(params.begin(), params.end());
  std::vector<double> g(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double up = naive_mse(p, batch);
    p[i] = orig - h;
    const double down = naive_mse(p, batch);
    p[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<robochain::opal::PatientRecord> random_records(std::mt19937_64& rng, std::size_t n,
                                                           const std::string& party) {
  static const char* tags[] = {"asd-level-1", "asd-level-2", "asd-level-3", "adhd"};
  std::uniform_int_distribution<int> age(3, 17), gender(0, 1), tag(0, 3), ntags(0, 2);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::vector<robochain::opal::PatientRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    robochain::opal::PatientRecord r;
    r.record_id = party + "-rec-" + std::to_string(rng());
    r.age = age(rng);
    r.gender_code = gender(rng);
    for (int s = 0; s < 3; ++s) r.assessment_scores.push_back(score(rng));
    for (int t = ntags(rng); t >= 0; --t) r.condition_tags.insert(tags[tag(rng)]);
    r.party_id = party;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace oracle
