#include "robochain/modelstore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "robochain/crypto.hpp"
#include "robochain/errors.hpp"

namespace robochain::modelstore {

namespace fs = std::filesystem;

namespace {

bool same_bits(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b);
}

void write_hyper(CanonicalWriter& w, const Hyperparams& h) {
  w.u64(h.size());
  for (const auto& [k, v] : h) w.field(k).f64(v);
}

Hyperparams read_hyper(CanonicalReader& r) {
  Hyperparams h;
  std::uint64_t n = r.u64();
  if (n > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible hyperparameter count");
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string k = r.string_field();
    h[k] = r.f64();
  }
  return h;
}

void write_vector(CanonicalWriter& w, std::span<const double> v) {
  w.u64(v.size());
  for (double x : v) w.f64(x);
}

std::vector<double> read_vector(CanonicalReader& r) {
  std::uint64_t n = r.u64();
  if (n > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible vector length");
  std::vector<double> v;
  v.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) v.push_back(r.f64());
  return v;
}

void check_hyper_keys(const Hyperparams& h) {
  for (const auto& [k, v] : h) {
    bool known = std::find(std::begin(kHyperparamKeys), std::end(kHyperparamKeys), k) !=
                 std::end(kHyperparamKeys);
    if (!known) throw Error(ErrorCode::RejectedContent, "store refuses entry '" + k + "'");
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteParams, "hyperparameter " + k);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Versions

VersionId ModelVersion::compute_id(std::span<const double> params, const Hyperparams& hyperparams,
                                   const std::optional<VersionId>& parent_id) {
  CanonicalWriter w;
  write_vector(w, params);
  write_hyper(w, hyperparams);
  w.boolean(parent_id.has_value());
  if (parent_id) w.field(*parent_id);
  return crypto::sha256(w.bytes());
}

ModelVersion ModelVersion::make(std::vector<double> params, Hyperparams hyperparams,
                                std::optional<VersionId> parent_id, Tick created_at) {
  ModelVersion v;
  v.version_id = compute_id(params, hyperparams, parent_id);
  v.params = std::move(params);
  v.hyperparams = std::move(hyperparams);
  v.parent_id = std::move(parent_id);
  v.created_at = created_at;
  return v;
}

bool ModelVersion::id_matches_content() const {
  return compute_id(params, hyperparams, parent_id) == version_id;
}

Bytes serialize(const ModelVersion& v) {
  CanonicalWriter w;
  w.field(v.version_id);
  write_vector(w, v.params);
  write_hyper(w, v.hyperparams);
  w.boolean(v.parent_id.has_value());
  if (v.parent_id) w.field(*v.parent_id);
  w.u64(v.created_at).boolean(v.consensual);
  return std::move(w).take();
}

ModelVersion parse_version(ByteView data) {
  CanonicalReader r(data);
  ModelVersion v;
  v.version_id = r.digest_field();
  v.params = read_vector(r);
  v.hyperparams = read_hyper(r);
  if (r.boolean()) v.parent_id = r.digest_field();
  v.created_at = r.u64();
  v.consensual = r.boolean();
  r.expect_done();
  return v;
}

// ---------------------------------------------------------------------------
// Deltas

namespace {

void write_delta_body(CanonicalWriter& w, const ModelDelta& d) {
  w.field(d.from_id).field(d.to_id);
  write_vector(w, d.param_diff);
  write_vector(w, d.residual);
  w.u64(d.exact.size());
  for (const auto& [i, v] : d.exact) w.u64(i).f64(v);
  write_hyper(w, d.hyper_diff);
}

}  // namespace

Digest ModelDelta::compute_hash() const {
  CanonicalWriter w;
  write_delta_body(w, *this);
  return crypto::sha256(w.bytes());
}

Bytes serialize(const ModelDelta& d) {
  CanonicalWriter w;
  write_delta_body(w, d);
  w.field(d.update_hash);
  return std::move(w).take();
}

ModelDelta parse_delta(ByteView data) {
  CanonicalReader r(data);
  ModelDelta d;
  d.from_id = r.digest_field();
  d.to_id = r.digest_field();
  d.param_diff = read_vector(r);
  d.residual = read_vector(r);
  std::uint64_t n = r.u64();
  if (n > r.remaining()) throw Error(ErrorCode::CorruptData, "implausible override count");
  for (std::uint64_t i = 0; i < n; ++i) {
    auto idx = r.u64();
    d.exact[static_cast<std::uint32_t>(idx)] = r.f64();
  }
  d.hyper_diff = read_hyper(r);
  d.update_hash = r.digest_field();
  r.expect_done();
  return d;
}

ModelDelta make_delta(const ModelVersion& from, const ModelVersion& to) {
  if (from.params.size() != to.params.size())
    throw Error(ErrorCode::DimensionMismatch, "versions have different dimensions");
  ModelDelta d;
  d.from_id = from.version_id;
  d.to_id = to.version_id;
  const std::size_t n = from.params.size();
  d.param_diff.resize(n);
  d.residual.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = from.params[i];
    const double t = to.params[i];
    const double diff = t - f;
    const double s = f + diff;
    const double r = t - s;
    d.param_diff[i] = diff;
    d.residual[i] = r;
    if (!same_bits(s + r, t)) d.exact[static_cast<std::uint32_t>(i)] = t;
  }
  for (const auto& [k, v] : to.hyperparams) {
    auto it = from.hyperparams.find(k);
    if (it == from.hyperparams.end() || !same_bits(it->second, v)) d.hyper_diff[k] = v;
  }
  d.update_hash = d.compute_hash();
  return d;
}

std::vector<double> apply_delta(const ModelVersion& base, const ModelDelta& delta) {
  if (base.version_id != delta.from_id)
    throw Error(ErrorCode::StaleBase, "delta is based on " + delta.from_id.short_hex() +
                                          ", not " + base.version_id.short_hex());
  if (base.params.size() != delta.param_diff.size() ||
      delta.residual.size() != delta.param_diff.size())
    throw Error(ErrorCode::DimensionMismatch, "delta dimension does not match base");
  std::vector<double> out(base.params.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = (base.params[i] + delta.param_diff[i]) + delta.residual[i];
  for (const auto& [i, v] : delta.exact) {
    if (i >= out.size()) throw Error(ErrorCode::DimensionMismatch, "override index out of range");
    out[i] = v;
  }
  return out;
}

Hyperparams apply_hyper_delta(const Hyperparams& base, const ModelDelta& delta) {
  Hyperparams out = base;
  for (const auto& [k, v] : delta.hyper_diff) out[k] = v;
  return out;
}

ModelVersion reconstruct(const ModelVersion& base, const ModelDelta& delta, Tick now) {
  ModelVersion v = ModelVersion::make(apply_delta(base, delta), apply_hyper_delta(base.hyperparams, delta),
                                      base.version_id, now);
  if (v.version_id != delta.to_id)
    throw Error(ErrorCode::CorruptData, "reconstructed version does not match delta target");
  return v;
}

// ---------------------------------------------------------------------------
// Repository

Repository::Repository(std::size_t dimension) : dimension_(dimension) {}

void Repository::check_params(std::span<const double> params) const {
  if (params.size() != dimension_)
    throw Error(ErrorCode::DimensionMismatch, "expected " + std::to_string(dimension_) +
                                                  " parameters, got " +
                                                  std::to_string(params.size()));
  for (double p : params)
    if (!std::isfinite(p)) throw Error(ErrorCode::NonFiniteParams, "parameter is not finite");
}

const ModelVersion& Repository::get(const VersionId& id) const {
  auto it = versions_.find(id);
  if (it == versions_.end()) throw Error(ErrorCode::UnknownVersion, "no version " + id.short_hex());
  return it->second;
}

ModelVersion Repository::commit(std::vector<double> params, Hyperparams hyperparams, Tick now) {
  check_params(params);
  check_hyper_keys(hyperparams);
  ModelVersion v = ModelVersion::make(std::move(params), std::move(hyperparams), head_, now);
  auto [it, inserted] = versions_.try_emplace(v.version_id, v);
  head_ = v.version_id;
  return it->second;
}

ModelVersion Repository::commit(ModelVersion version) {
  if (version.parent_id != head_)
    throw Error(ErrorCode::StaleBase, "version " + version.version_id.short_hex() +
                                          " is not based on the current head");
  ModelVersion stored = import_version(std::move(version));
  head_ = stored.version_id;
  return stored;
}

ModelVersion Repository::checkout(const VersionId& id) const { return get(id); }

ModelDelta Repository::diff(const VersionId& from, const VersionId& to) const {
  return make_delta(get(from), get(to));
}

ModelVersion Repository::rollback() {
  if (!consensual_head_) throw Error(ErrorCode::NoConsensualVersion, "nothing to roll back to");
  head_ = consensual_head_;
  return get(*consensual_head_);
}

bool Repository::is_ancestor(const VersionId& ancestor, const VersionId& descendant) const {
  std::optional<VersionId> cur = descendant;
  while (cur) {
    if (*cur == ancestor) return true;
    auto it = versions_.find(*cur);
    if (it == versions_.end()) return false;
    cur = it->second.parent_id;
  }
  return false;
}

ModelVersion Repository::promote(const VersionId& id) {
  get(id);
  if (consensual_head_ && !is_ancestor(*consensual_head_, id))
    throw Error(ErrorCode::InvariantViolation,
                "promotion of " + id.short_hex() + " would branch the consensual chain");
  versions_.at(id).consensual = true;
  consensual_head_ = id;
  head_ = id;
  return versions_.at(id);
}

ModelVersion Repository::import_version(ModelVersion v) {
  check_params(v.params);
  check_hyper_keys(v.hyperparams);
  if (!v.id_matches_content())
    throw Error(ErrorCode::CorruptData, "version id does not match content");
  if (v.parent_id && !contains(*v.parent_id))
    throw Error(ErrorCode::UnknownVersion, "parent " + v.parent_id->short_hex() + " not present");
  v.consensual = false;
  auto [it, inserted] = versions_.try_emplace(v.version_id, std::move(v));
  return it->second;
}

std::vector<VersionId> Repository::consensual_chain() const {
  std::vector<VersionId> out;
  std::optional<VersionId> cur = consensual_head_;
  while (cur) {
    const ModelVersion& v = get(*cur);
    if (v.consensual) out.push_back(*cur);
    cur = v.parent_id;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

void Repository::save(const fs::path& dir) const {
  fs::create_directories(dir / "versions");
  for (const auto& [id, v] : versions_) {
    Bytes data = serialize(v);
    std::ofstream out(dir / "versions" / (id.hex() + ".ver"), std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  }
  std::ofstream head(dir / "HEAD", std::ios::trunc);
  head << "dimension " << dimension_ << '\n';
  head << "head " << (head_ ? head_->hex() : "-") << '\n';
  head << "consensual " << (consensual_head_ ? consensual_head_->hex() : "-") << '\n';
  if (!head) throw Error(ErrorCode::MissingArtifacts, "cannot write " + (dir / "HEAD").string());
}

Repository Repository::load(const fs::path& dir) {
  std::ifstream head(dir / "HEAD");
  if (!head) throw Error(ErrorCode::MissingArtifacts, "no HEAD in " + dir.string());
  std::string key, head_hex, cons_hex;
  std::size_t dimension = 0;
  head >> key >> dimension >> key >> head_hex >> key >> cons_hex;
  if (!head) throw Error(ErrorCode::CorruptData, "malformed HEAD in " + dir.string());
  Repository repo(dimension);
  if (fs::exists(dir / "versions")) {
    for (const auto& entry : fs::directory_iterator(dir / "versions")) {
      std::ifstream in(entry.path(), std::ios::binary);
      Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      ModelVersion v = parse_version(data);
      if (!v.id_matches_content() || entry.path().stem().string() != v.version_id.hex())
        throw Error(ErrorCode::CorruptData, "version file " + entry.path().string() + " tampered");
      repo.versions_.emplace(v.version_id, std::move(v));
    }
  }
  if (head_hex != "-") repo.head_ = Digest::from_hex(head_hex);
  if (cons_hex != "-") repo.consensual_head_ = Digest::from_hex(cons_hex);
  for (const auto& ref : {repo.head_, repo.consensual_head_})
    if (ref && !repo.contains(*ref))
      throw Error(ErrorCode::CorruptData, "HEAD names missing version " + ref->short_hex());
  return repo;
}

bool Repository::operator==(const Repository& other) const {
  return dimension_ == other.dimension_ && versions_ == other.versions_ && head_ == other.head_ &&
         consensual_head_ == other.consensual_head_;
}

ModelVersion commit(Repository& repo, std::vector<double> params, Hyperparams hyperparams, Tick now) {
  return repo.commit(std::move(params), std::move(hyperparams), now);
}
ModelVersion checkout(const Repository& repo, const VersionId& id) { return repo.checkout(id); }
ModelDelta diff(const Repository& repo, const VersionId& from, const VersionId& to) {
  return repo.diff(from, to);
}
ModelVersion rollback(Repository& repo) { return repo.rollback(); }

// ---------------------------------------------------------------------------
// Announcements

Bytes serialize(const Announcement& a) {
  CanonicalWriter w;
  w.field(a.update_hash).field(serialize(a.delta)).field(a.source_hub);
  return std::move(w).take();
}

Announcement parse_announcement(ByteView data) {
  CanonicalReader r(data);
  Announcement a;
  a.update_hash = r.digest_field();
  a.delta = parse_delta(r.field());
  a.source_hub = r.string_field();
  r.expect_done();
  return a;
}

Announcement make_announcement(ModelDelta delta, HubId source_hub) {
  Announcement a;
  a.update_hash = delta.update_hash;
  a.delta = std::move(delta);
  a.source_hub = std::move(source_hub);
  return a;
}

namespace {

void check_announcement(const Announcement& ann) {
  Digest h = ann.delta.compute_hash();
  if (h != ann.update_hash || h != ann.delta.update_hash)
    throw Error(ErrorCode::CorruptData, "announcement update hash does not match its delta");
}

}  // namespace

// ---------------------------------------------------------------------------
// Hub

Hub::Hub(HubId id, Repository repository) : id_(std::move(id)), repo_(std::move(repository)) {}

void Hub::subscribe(const std::string& robot_id) {
  subscribers_.insert(robot_id);
  if (!working_.count(robot_id)) {
    const auto& base = repo_.consensual_head() ? repo_.consensual_head() : repo_.head();
    if (base) checkout_to(robot_id, *base);
  }
}

const WorkingCopy& Hub::working_copy(const std::string& robot_id) const {
  auto it = working_.find(robot_id);
  if (it == working_.end())
    throw Error(ErrorCode::UnknownVersion, "robot '" + robot_id + "' has no working copy");
  return it->second;
}

void Hub::checkout_to(const std::string& robot_id, const VersionId& id) {
  ModelVersion v = repo_.checkout(id);
  working_[robot_id] = WorkingCopy{v.version_id, std::move(v.params), std::move(v.hyperparams)};
}

std::size_t Hub::notify_subscribers(const Announcement& ann, Tick now) {
  check_announcement(ann);
  const auto& cons = repo_.consensual_head();
  if (!cons || *cons != ann.delta.from_id)
    throw Error(ErrorCode::StaleBase,
                "hub " + id_ + " consensual head differs from announced base " +
                    ann.delta.from_id.short_hex());
  ModelVersion target = reconstruct(repo_.checkout(*cons), ann.delta, now);
  for (const auto& robot : subscribers_)
    working_[robot] = WorkingCopy{target.version_id, target.params, target.hyperparams};
  return subscribers_.size();
}

std::size_t Hub::receive_full(const ModelVersion& version) {
  if (!version.id_matches_content())
    throw Error(ErrorCode::CorruptData, "received version id does not match content");
  for (const auto& robot : subscribers_)
    working_[robot] = WorkingCopy{version.version_id, version.params, version.hyperparams};
  return subscribers_.size();
}

ModelVersion Hub::adopt(const Announcement& ann, Tick now) {
  check_announcement(ann);
  const auto& cons = repo_.consensual_head();
  if (cons && *cons == ann.delta.to_id) {
    for (const auto& robot : subscribers_) checkout_to(robot, *cons);
    return repo_.checkout(*cons);
  }
  if (!cons || *cons != ann.delta.from_id)
    throw Error(ErrorCode::StaleBase, "hub " + id_ + " cannot adopt update based on " +
                                          ann.delta.from_id.short_hex());
  ModelVersion v = reconstruct(repo_.checkout(*cons), ann.delta, now);
  repo_.import_version(v);
  ModelVersion promoted = repo_.promote(v.version_id);
  for (const auto& robot : subscribers_) checkout_to(robot, promoted.version_id);
  return promoted;
}

ModelVersion Hub::adopt_full(const ModelVersion& version) {
  repo_.import_version(version);
  ModelVersion promoted = repo_.promote(version.version_id);
  for (const auto& robot : subscribers_) checkout_to(robot, promoted.version_id);
  return promoted;
}

void Hub::rollback() {
  ModelVersion base = repo_.rollback();
  for (const auto& robot : subscribers_) checkout_to(robot, base.version_id);
}

// ---------------------------------------------------------------------------
// Flooding

std::map<HubId, std::size_t> flood_schedule(const Adjacency& adjacency, const HubId& source) {
  std::map<HubId, std::size_t> received{{source, 0}};
  std::set<HubId> frontier{source};
  std::size_t round = 0;
  while (!frontier.empty()) {
    std::set<HubId> next;
    for (const auto& hub : frontier) {
      auto it = adjacency.find(hub);
      if (it == adjacency.end()) continue;
      for (const auto& peer : it->second) {
        if (received.count(peer)) continue;
        next.insert(peer);
      }
    }
    ++round;
    for (const auto& peer : next) received.emplace(peer, round);
    frontier = std::move(next);
  }
  return received;
}

Hub& HubNetwork::add_hub(Hub hub) {
  HubId id = hub.id();
  auto [it, inserted] = hubs_.try_emplace(id, std::move(hub));
  if (!inserted) throw Error(ErrorCode::DuplicateId, "hub '" + id + "' already present");
  adjacency_[id];
  return it->second;
}

void HubNetwork::connect(const HubId& a, const HubId& b) {
  hub(a);
  hub(b);
  if (a == b) return;
  adjacency_[a].insert(b);
  adjacency_[b].insert(a);
}

Hub& HubNetwork::hub(const HubId& id) {
  auto it = hubs_.find(id);
  if (it == hubs_.end()) throw Error(ErrorCode::InvalidConfig, "no hub '" + id + "'");
  return it->second;
}

const Hub& HubNetwork::hub(const HubId& id) const {
  auto it = hubs_.find(id);
  if (it == hubs_.end()) throw Error(ErrorCode::InvalidConfig, "no hub '" + id + "'");
  return it->second;
}

std::vector<HubId> HubNetwork::hub_ids() const {
  std::vector<HubId> out;
  for (const auto& [id, _] : hubs_) out.push_back(id);
  return out;
}

AnnouncementId HubNetwork::publish_update(const HubId& source, const ModelDelta& delta,
                                          AnnouncementKind kind) {
  hub(source);
  InFlight f{next_id_++, kind, make_announcement(delta, source), 0, {}, {source}};
  in_flight_.push_back(std::move(f));
  return in_flight_.back().id;
}

Delivery HubNetwork::deliver(InFlight& f, const HubId& hub_id, Tick now) {
  Delivery d{f.id, hub_id, f.round, 0, false};
  Hub& h = hub(hub_id);
  Hub& source = hub(f.ann.source_hub);
  try {
    if (f.kind == AnnouncementKind::Candidate) {
      d.delivered = h.notify_subscribers(f.ann, now);
    } else {
      h.adopt(f.ann, now);
      d.delivered = h.subscribers().size();
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::StaleBase) throw;
    d.stale = true;
    ModelVersion full = source.repository().checkout(f.ann.delta.to_id);
    if (f.kind == AnnouncementKind::Candidate) {
      d.delivered = h.receive_full(full);
    } else {
      h.adopt_full(full);
      d.delivered = h.subscribers().size();
    }
  }
  return d;
}

std::vector<Delivery> HubNetwork::step(Tick now) {
  std::vector<Delivery> out;
  for (auto& f : in_flight_) {
    std::set<HubId> next;
    for (const auto& hub_id : f.frontier) {
      f.seen.insert(hub_id);
      out.push_back(deliver(f, hub_id, now));
    }
    for (const auto& hub_id : f.frontier) {
      for (const auto& peer : adjacency_.at(hub_id))
        if (!f.seen.count(peer) && !f.frontier.count(peer)) next.insert(peer);
    }
    f.frontier = std::move(next);
    ++f.round;
  }
  std::erase_if(in_flight_, [](const InFlight& f) { return f.frontier.empty(); });
  return out;
}

std::vector<Delivery> HubNetwork::deliver_all(Tick now) {
  std::vector<Delivery> out;
  while (!idle()) {
    auto batch = step(now);
    out.insert(out.end(), batch.begin(), batch.end());
  }
  return out;
}

AnnouncementId publish_update(HubNetwork& network, const HubId& hub, const ModelDelta& delta) {
  return network.publish_update(hub, delta);
}

std::size_t notify_subscribers(Hub& hub, const Announcement& announcement, Tick now) {
  return hub.notify_subscribers(announcement, now);
}

}  // namespace robochain::modelstore
