#include "robochain/opal.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>

#include "robochain/errors.hpp"

namespace robochain::opal {

using nlohmann::json;

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Count: return "count";
    case Aggregation::Mean: return "mean";
    case Aggregation::Variance: return "variance";
    case Aggregation::ProportionAbove: return "proportion-above-threshold";
  }
  return "unknown";
}

Aggregation parse_aggregation(std::string_view text) {
  if (text == "count") return Aggregation::Count;
  if (text == "mean") return Aggregation::Mean;
  if (text == "variance") return Aggregation::Variance;
  if (text == "proportion-above-threshold") return Aggregation::ProportionAbove;
  throw Error(ErrorCode::InvalidConfig, "unknown aggregation '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Canonical forms

Bytes serialize(const Query& q) {
  CanonicalWriter w;
  w.field(q.query_id).field(q.algo_id).u64(q.filter.size());
  for (const auto& c : q.filter) {
    w.field(c.field).u64(static_cast<std::uint64_t>(c.op)).u64(c.numbers.size());
    for (double v : c.numbers) w.f64(v);
    w.u64(c.labels.size());
    for (const auto& l : c.labels) w.field(l);
  }
  w.field(q.target_field).field(q.requester_id).u64(q.timestamp);
  return std::move(w).take();
}

Query parse_query(ByteView data) {
  CanonicalReader r(data);
  Query q;
  q.query_id = r.string_field();
  q.algo_id = r.string_field();
  std::uint64_t n = r.u64();
  if (n > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible filter length");
  for (std::uint64_t i = 0; i < n; ++i) {
    Condition c;
    c.field = r.string_field();
    std::uint64_t op = r.u64();
    if (op > static_cast<std::uint64_t>(CompareOp::In))
      throw Error(ErrorCode::CorruptData, "unknown comparison operator");
    c.op = static_cast<CompareOp>(op);
    std::uint64_t nn = r.u64();
    if (nn > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible constant count");
    for (std::uint64_t j = 0; j < nn; ++j) c.numbers.push_back(r.f64());
    std::uint64_t nl = r.u64();
    if (nl > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible label count");
    for (std::uint64_t j = 0; j < nl; ++j) c.labels.push_back(r.string_field());
    q.filter.push_back(std::move(c));
  }
  q.target_field = r.string_field();
  q.requester_id = r.string_field();
  q.timestamp = r.u64();
  r.expect_done();
  return q;
}

Bytes serialize(const AggregatedAnswer& a) {
  CanonicalWriter w;
  w.field(a.query_id);
  w.boolean(a.group_size.has_value());
  if (a.group_size) w.u64(*a.group_size);
  w.boolean(a.statistic.has_value());
  if (a.statistic) w.f64(*a.statistic);
  w.boolean(a.relative_comparison_pct.has_value());
  if (a.relative_comparison_pct) w.f64(*a.relative_comparison_pct);
  w.u64(a.contributing_parties);
  return std::move(w).take();
}

AggregatedAnswer parse_answer(ByteView data) {
  CanonicalReader r(data);
  AggregatedAnswer a;
  a.query_id = r.string_field();
  if (r.boolean()) a.group_size = r.u64();
  if (r.boolean()) a.statistic = r.f64();
  if (r.boolean()) a.relative_comparison_pct = r.f64();
  a.contributing_parties = r.u64();
  r.expect_done();
  return a;
}

// ---------------------------------------------------------------------------
// Exact summation (Shewchuk partials, correctly rounded result)

void ExactSum::add(double x) {
  std::size_t i = 0;
  for (double y : partials_) {
    if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
    double hi = x + y;
    double lo = y - (hi - x);
    if (lo != 0.0) partials_[i++] = lo;
    x = hi;
  }
  partials_.resize(i);
  partials_.push_back(x);
}

void ExactSum::merge(const ExactSum& other) {
  for (double p : other.partials_) add(p);
}

double ExactSum::value() const {
  if (partials_.empty()) return 0.0;
  std::size_t n = partials_.size();
  double hi = partials_[n - 1];
  double lo = 0.0;
  std::size_t j = n - 1;
  while (j > 0) {
    double x = hi;
    --j;
    double y = partials_[j];
    hi = x + y;
    double yr = hi - x;
    lo = y - yr;
    if (lo != 0.0) break;
  }
  // Round-half-even correction when the tail sits exactly on a tie.
  if (j > 0 && ((lo < 0.0 && partials_[j - 1] < 0.0) || (lo > 0.0 && partials_[j - 1] > 0.0))) {
    double y = lo * 2.0;
    double x = hi + y;
    double yr = x - hi;
    if (y == yr) hi = x;
  }
  return hi;
}

// ---------------------------------------------------------------------------
// Partials and merging

PartialAggregate PartialAggregate::of(std::span<const double> values, double threshold) {
  PartialAggregate p;
  for (double v : values) {
    p.sum.add(v);
    ++p.count;
    if (v > threshold) ++p.above;
  }
  double mu = p.mean();
  for (double v : values) p.m2 += (v - mu) * (v - mu);
  return p;
}

PartialAggregate merge_partials(std::span<const PartialAggregate> parts) {
  PartialAggregate out;
  for (const auto& p : parts) {
    out.count += p.count;
    out.sum.merge(p.sum);
    out.above += p.above;
  }
  double mu = out.mean();
  for (const auto& p : parts) {
    if (p.count == 0) continue;
    double d = p.mean() - mu;
    out.m2 += p.m2 + static_cast<double>(p.count) * d * d;
  }
  return out;
}

double statistic_of(const PartialAggregate& p, Aggregation aggregation) {
  double n = static_cast<double>(p.count);
  switch (aggregation) {
    case Aggregation::Count: return n;
    case Aggregation::Mean: return p.mean();
    case Aggregation::Variance: return p.count == 0 ? 0.0 : p.m2 / n;
    case Aggregation::ProportionAbove: return p.count == 0 ? 0.0 : static_cast<double>(p.above) / n;
  }
  return 0.0;
}

AggregatedAnswer merge_answers(std::span<const PartialAggregate> parts, const VettedAlgorithm& algo,
                               const std::string& query_id) {
  AggregatedAnswer ans;
  ans.query_id = query_id;
  PartialAggregate merged = merge_partials(parts);
  if (merged.count < algo.min_group_size) return ans;
  ans.group_size = merged.count;
  ans.statistic = statistic_of(merged, algo.aggregation);
  ans.contributing_parties = static_cast<std::uint64_t>(
      std::count_if(parts.begin(), parts.end(), [](const auto& p) { return p.count > 0; }));
  return ans;
}

// ---------------------------------------------------------------------------
// Registry

AlgoRef AlgorithmRegistry::register_vetted_algorithm(VettedAlgorithm algo) {
  if (!algo.expert_verified)
    throw Error(ErrorCode::NotVerified, "algorithm '" + algo.algo_id + "' is not expert-verified");
  if (algo.min_group_size < 2)
    throw Error(ErrorCode::InvalidConfig, "min_group_size must be at least 2");
  for (const auto& f : algo.allowed_fields) {
    if (!is_numeric_field(f) && f != kTagsField)
      throw Error(ErrorCode::DisallowedField, "unknown field '" + f + "'");
  }
  std::unique_lock lock(mutex_);
  auto [it, inserted] = algorithms_.try_emplace(algo.algo_id, algo);
  if (!inserted) throw Error(ErrorCode::DuplicateId, "algorithm '" + algo.algo_id + "' exists");
  return AlgoRef{algo.algo_id};
}

std::optional<VettedAlgorithm> AlgorithmRegistry::find(std::string_view algo_id) const {
  std::shared_lock lock(mutex_);
  auto it = algorithms_.find(algo_id);
  if (it == algorithms_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> AlgorithmRegistry::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [id, _] : algorithms_) out.push_back(id);
  return out;
}

std::shared_ptr<AlgorithmRegistry> AlgorithmRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read registry " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("registry parse error: ") + e.what());
  }
  auto registry = std::make_shared<AlgorithmRegistry>();
  const json& list = doc.is_object() && doc.contains("algorithms") ? doc["algorithms"] : doc;
  try {
    for (const auto& entry : list) {
      VettedAlgorithm algo;
      algo.algo_id = entry.at("algo_id").get<std::string>();
      algo.aggregation = parse_aggregation(entry.at("aggregation").get<std::string>());
      algo.allowed_fields = entry.at("allowed_fields").get<std::set<std::string>>();
      algo.min_group_size = entry.at("min_group_size").get<std::uint64_t>();
      algo.expert_verified = entry.at("expert_verified").get<bool>();
      algo.threshold = entry.value("threshold", 0.0);
      registry->register_vetted_algorithm(std::move(algo));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("registry entry: ") + e.what());
  }
  return registry;
}

AlgoRef register_vetted_algorithm(AlgorithmRegistry& registry, VettedAlgorithm algo) {
  return registry.register_vetted_algorithm(std::move(algo));
}

// ---------------------------------------------------------------------------
// Fields and filters

namespace {

std::optional<std::size_t> score_index(std::string_view field) {
  constexpr std::string_view prefix = "score_";
  if (!field.starts_with(prefix) || field.size() == prefix.size()) return std::nullopt;
  std::size_t idx = 0;
  auto digits = field.substr(prefix.size());
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), idx);
  if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
  return idx;
}

bool compare(double value, CompareOp op, const std::vector<double>& constants) {
  if (constants.empty()) return false;
  switch (op) {
    case CompareOp::Eq: return value == constants.front();
    case CompareOp::Lt: return value < constants.front();
    case CompareOp::Le: return value <= constants.front();
    case CompareOp::Gt: return value > constants.front();
    case CompareOp::Ge: return value >= constants.front();
    case CompareOp::In:
      return std::find(constants.begin(), constants.end(), value) != constants.end();
  }
  return false;
}

}  // namespace

bool is_numeric_field(std::string_view field) {
  return field == "age" || field == "gender_code" || score_index(field).has_value();
}

std::optional<double> field_value(const PatientRecord& r, std::string_view field) {
  if (field == "age") return static_cast<double>(r.age);
  if (field == "gender_code") return static_cast<double>(r.gender_code);
  if (auto idx = score_index(field)) {
    if (*idx < r.assessment_scores.size()) return r.assessment_scores[*idx];
  }
  return std::nullopt;
}

bool matches(const PatientRecord& r, const Condition& c) {
  if (c.field == kTagsField) {
    if (c.op != CompareOp::Eq && c.op != CompareOp::In) return false;
    return std::any_of(c.labels.begin(), c.labels.end(),
                       [&](const std::string& l) { return r.condition_tags.count(l) > 0; });
  }
  auto v = field_value(r, c.field);
  return v && compare(*v, c.op, c.numbers);
}

// ---------------------------------------------------------------------------
// Protected database

ProtectedDatabase::ProtectedDatabase(std::string party_id, std::vector<PatientRecord> records,
                                     std::shared_ptr<const AlgorithmRegistry> registry)
    : party_id_(std::move(party_id)), records_(std::move(records)), registry_(std::move(registry)) {
  for (const auto& r : records_) {
    if (r.age < 0) throw Error(ErrorCode::CorruptData, "negative age in record");
    for (double s : r.assessment_scores)
      if (!std::isfinite(s)) throw Error(ErrorCode::CorruptData, "non-finite assessment score");
  }
}

ProtectedDatabase ProtectedDatabase::load(const std::filesystem::path& jsonl, std::string party_id,
                                          std::shared_ptr<const AlgorithmRegistry> registry) {
  std::ifstream in(jsonl);
  if (!in) throw Error(ErrorCode::MissingArtifacts, "cannot read database " + jsonl.string());
  std::vector<PatientRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_record_json(line));
  }
  return ProtectedDatabase(std::move(party_id), std::move(records), std::move(registry));
}

VettedAlgorithm ProtectedDatabase::resolve(const Query& q) const {
  auto algo = registry_ ? registry_->find(q.algo_id) : std::nullopt;
  if (!algo) throw Error(ErrorCode::UnknownAlgorithm, "no vetted algorithm '" + q.algo_id + "'");
  if (!algo->expert_verified)
    throw Error(ErrorCode::NotVerified, "algorithm '" + q.algo_id + "' is not verified");
  if (!is_numeric_field(q.target_field) || !algo->allowed_fields.count(q.target_field))
    throw Error(ErrorCode::DisallowedField, "target field '" + q.target_field + "' not allowed");
  for (const auto& c : q.filter) {
    if (!algo->allowed_fields.count(c.field))
      throw Error(ErrorCode::DisallowedField, "filter field '" + c.field + "' not allowed");
  }
  return *algo;
}

PartialAggregate ProtectedDatabase::compute(const Query& q, const VettedAlgorithm& algo) const {
  std::vector<double> values;
  for (const auto& r : records_) {
    bool ok = std::all_of(q.filter.begin(), q.filter.end(),
                          [&](const Condition& c) { return matches(r, c); });
    if (!ok) continue;
    if (auto v = field_value(r, q.target_field)) values.push_back(*v);
  }
  return PartialAggregate::of(values, algo.threshold);
}

std::optional<PartialAggregate> ProtectedDatabase::partial(const Query& q) const {
  VettedAlgorithm algo = resolve(q);
  PartialAggregate p = compute(q, algo);
  if (p.count < algo.min_group_size) return std::nullopt;
  return p;
}

AggregatedAnswer ProtectedDatabase::execute(const Query& q) const {
  VettedAlgorithm algo = resolve(q);
  PartialAggregate p = compute(q, algo);
  return merge_answers(std::span<const PartialAggregate>(&p, 1), algo, q.query_id);
}

AggregatedAnswer execute_query(const ProtectedDatabase& db, const Query& q) { return db.execute(q); }

FederatedAnswer federate_query(std::span<const ProtectedDatabase* const> parties, const Query& q) {
  FederatedAnswer out;
  out.answer.query_id = q.query_id;
  std::vector<PartialAggregate> parts;
  std::optional<VettedAlgorithm> algo;
  for (const ProtectedDatabase* db : parties) {
    try {
      if (auto p = db->partial(q)) parts.push_back(std::move(*p));
      if (!algo && db->registry()) algo = db->registry()->find(q.algo_id);
    } catch (const Error& e) {
      out.failures.push_back({db->party_id(), e.what()});
    }
  }
  if (algo) out.answer = merge_answers(parts, *algo, q.query_id);
  return out;
}

// ---------------------------------------------------------------------------
// Comparison template

double relative_difference_pct(const AggregatedAnswer& ans, const AggregatedAnswer& baseline) {
  if (ans.suppressed() || baseline.suppressed())
    throw Error(ErrorCode::SuppressedInput, "cannot compare suppressed answers");
  if (*baseline.statistic == 0.0) throw Error(ErrorCode::ZeroBaseline, "baseline statistic is 0");
  return 100.0 * (*ans.statistic - *baseline.statistic) / *baseline.statistic;
}

std::string render_answer_template(const AggregatedAnswer& ans, const AggregatedAnswer& baseline,
                                   std::string_view exercise) {
  double pct = relative_difference_pct(ans, baseline);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", std::fabs(pct));
  std::string magnitude = buf;
  bool lower = pct < 0.0 && magnitude != "0.0";
  return "For this type of patients, the propensity to negative emotional reactions is " +
         magnitude + "% " + (lower ? "lower" : "higher") +
         " than in other groups when exercise " + std::string(exercise) + " is applied.";
}

// ---------------------------------------------------------------------------
// Record text format (one JSON object per line)

PatientRecord parse_record_json(std::string_view line) {
  try {
    json j = json::parse(line);
    PatientRecord r;
    r.record_id = j.at("record_id").get<std::string>();
    r.age = j.at("age").get<std::int64_t>();
    r.gender_code = j.at("gender_code").get<std::int64_t>();
    r.assessment_scores = j.value("assessment_scores", std::vector<double>{});
    r.condition_tags = j.value("condition_tags", std::set<std::string>{});
    r.party_id = j.value("party_id", std::string{});
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptData, std::string("bad record line: ") + e.what());
  }
}

std::string record_to_json(const PatientRecord& r) {
  json j;
  j["record_id"] = r.record_id;
  j["age"] = r.age;
  j["gender_code"] = r.gender_code;
  j["assessment_scores"] = r.assessment_scores;
  j["condition_tags"] = r.condition_tags;
  j["party_id"] = r.party_id;
  return j.dump();
}

}  // namespace robochain::opal
