#ifndef ALIGNFLOW_PAIRING_HPP
#define ALIGNFLOW_PAIRING_HPP

// Noise-data pairs for aligned training. A pair never stores its noise
// vector: it keeps the 64-bit seed that regenerates it (noise_from_seed) and
// the data index the SDOT map sent it to.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "binary_io.hpp"
#include "error.hpp"
#include "random.hpp"
#include "sdot.hpp"

namespace alignflow {

struct PairRecord {
  std::uint64_t seed = 0;
  std::uint32_t class_id = 0;
  std::uint32_t data_index = 0;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

/// Class-local dual vectors, indexed like Dataset::members(class).
using ClassDuals = std::map<std::uint32_t, Vec>;

/// Splits a dataset-length dual vector into class-local vectors.
inline ClassDuals split_duals(const Dataset& data, const Vec& global) {
  require(global.size() == data.size(), "dual vector length does not match dataset size");
  ClassDuals out;
  for (const auto cls : data.classes()) {
    const auto idx = data.members(cls);
    Vec local(static_cast<Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) local[static_cast<Index>(k)] = global[idx[k]];
    out.emplace(cls, std::move(local));
  }
  return out;
}

/// Inverse of split_duals. Classes partition the index set, so one vector
/// of dataset length holds every class.
inline Vec merge_duals(const Dataset& data, const ClassDuals& duals) {
  Vec global = Vec::Zero(data.size());
  for (const auto cls : data.classes()) {
    const auto it = duals.find(cls);
    require(it != duals.end(), "missing dual weights for class " + std::to_string(cls));
    const auto idx = data.members(cls);
    require(it->second.size() == static_cast<Index>(idx.size()),
            "dual weights for class " + std::to_string(cls) + " have the wrong length");
    for (std::size_t k = 0; k < idx.size(); ++k) global[idx[k]] = it->second[static_cast<Index>(k)];
  }
  return global;
}

struct ClassCount {
  std::uint32_t class_id = 0;
  std::uint64_t count = 0;
};

/// Splits `total` across classes proportionally to class mass using the
/// largest-remainder rule (ties to the smaller class id).
inline std::vector<ClassCount> proportional_class_mix(const Dataset& data, std::uint64_t total) {
  const auto classes = data.classes();
  std::vector<ClassCount> mix;
  std::vector<std::pair<double, std::size_t>> remainders;
  std::uint64_t assigned = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    double mass = 0.0;
    for (const auto i : data.members(classes[c])) mass += data.weights[i];
    const double exact = mass * static_cast<double>(total);
    const auto base = static_cast<std::uint64_t>(std::floor(exact));
    mix.push_back({classes[c], base});
    assigned += base;
    remainders.emplace_back(exact - static_cast<double>(base), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) {
    ++mix[remainders[k % remainders.size()].second].count;
  }
  return mix;
}

/// Record j carries seed derive_seed(master_seed, j) and is matched to the
/// Laguerre cell of its noise within its own class. With several classes the
/// class of each position comes from a seeded shuffle of the requested mix,
/// so classes interleave along the training stream.
inline std::vector<PairRecord> generate_pairs(const Dataset& data, const ClassDuals& duals,
                                              const NoisePrior& prior,
                                              const std::vector<ClassCount>& class_mix,
                                              std::uint64_t master_seed) {
  data.validate();
  require(prior.dim == data.dim(), "prior dimension does not match dataset");
  struct ClassPlan {
    std::vector<Index> members;
    Dataset local;
    const Vec* duals = nullptr;
  };
  std::map<std::uint32_t, ClassPlan> plans;
  std::vector<std::uint32_t> labels;
  for (const auto& cc : class_mix) {
    if (cc.count == 0) continue;
    const auto it = duals.find(cc.class_id);
    if (it == duals.end()) {
      throw ValidationError("missing dual weights for class " + std::to_string(cc.class_id));
    }
    if (!plans.contains(cc.class_id)) {
      ClassPlan plan;
      plan.members = data.members(cc.class_id);
      require(!plan.members.empty(), "class " + std::to_string(cc.class_id) + " has no data points");
      plan.local = data.restrict_to(plan.members);
      require(it->second.size() == plan.local.size(),
              "dual weights for class " + std::to_string(cc.class_id) + " have the wrong length");
      require(it->second.allFinite(),
              "dual weights for class " + std::to_string(cc.class_id) + " are not finite");
      plan.duals = &it->second;
      plans.emplace(cc.class_id, std::move(plan));
    }
    labels.insert(labels.end(), cc.count, cc.class_id);
  }
  if (plans.size() > 1) {
    SplitMix64 rng(derive_seed(master_seed, UINT64_MAX));
    for (std::size_t k = labels.size(); k > 1; --k) {
      std::swap(labels[k - 1], labels[rng.below(k)]);
    }
  }
  std::vector<PairRecord> records;
  records.reserve(labels.size());
  for (std::uint64_t j = 0; j < labels.size(); ++j) {
    const auto& plan = plans.at(labels[j]);
    const std::uint64_t seed = derive_seed(master_seed, j);
    const Vec x0 = noise_from_seed(seed, data.dim());
    const Index local_index = detail::argmin_shifted_cost(x0.data(), plan.local, *plan.duals);
    records.push_back({seed, labels[j],
                       static_cast<std::uint32_t>(plan.members[static_cast<std::size_t>(local_index)])});
  }
  return records;
}

/// Single-class convenience overload.
inline std::vector<PairRecord> generate_pairs(const Dataset& data, const Vec& duals,
                                              const NoisePrior& prior, std::uint64_t count,
                                              std::uint64_t master_seed) {
  return generate_pairs(data, split_duals(data, duals), prior, proportional_class_mix(data, count),
                        master_seed);
}

struct RebalanceReport {
  std::uint64_t total = 0;
  std::uint64_t changed = 0;
  std::vector<std::uint64_t> counts_before;
  std::vector<std::uint64_t> counts_after;
};

/// Minimal edit of `indices` so every index in [0, n) occurs floor(M/n) or
/// ceil(M/n) times. The M mod n ceil slots go to the most frequent indices
/// (ties to the smaller index), which minimizes the number of edits. Within
/// an over-represented index the latest occurrences are rewritten; the
/// replacements fill under-represented indices in ascending order.
inline std::vector<std::uint32_t> rebalance(const std::vector<std::uint32_t>& indices,
                                            std::uint32_t n, RebalanceReport* report = nullptr) {
  require(n >= 1 || indices.empty(), "rebalance needs at least one index");
  const std::uint64_t total = indices.size();
  std::vector<std::uint64_t> counts(n, 0);
  for (std::size_t j = 0; j < indices.size(); ++j) {
    require(indices[j] < n, "index " + std::to_string(indices[j]) + " at position " +
                                std::to_string(j) + " is out of range [0, " + std::to_string(n) +
                                ")");
    ++counts[indices[j]];
  }
  std::vector<std::uint32_t> out = indices;
  if (report) {
    report->total = total;
    report->counts_before = counts;
  }
  if (n == 0) {
    if (report) report->counts_after = counts;
    return out;
  }

  const std::uint64_t floor_count = total / n;
  const std::uint64_t extra = total % n;
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return counts[a] > counts[b]; });
  std::vector<std::uint64_t> target(n, floor_count);
  for (std::uint64_t k = 0; k < extra; ++k) ++target[order[k]];

  // Walk backwards so each over-represented index sheds its latest slots.
  std::vector<std::uint64_t> excess(n, 0);
  for (std::uint32_t i = 0; i < n; ++i) excess[i] = counts[i] > target[i] ? counts[i] - target[i] : 0;
  std::vector<std::size_t> positions;
  for (std::size_t j = out.size(); j-- > 0;) {
    if (excess[out[j]] > 0) {
      --excess[out[j]];
      positions.push_back(j);
    }
  }
  std::sort(positions.begin(), positions.end());

  std::uint32_t fill = 0;
  std::vector<std::uint64_t> have = counts;
  for (const auto j : positions) {
    while (have[fill] >= target[fill]) ++fill;
    --have[out[j]];
    out[j] = fill;
    ++have[fill];
  }
  if (report) {
    report->changed = positions.size();
    report->counts_after = std::move(have);
  }
  return out;
}

/// Rebalances each class independently over that class's member indices;
/// an index never moves to another class.
inline RebalanceReport rebalance_per_class(std::vector<PairRecord>& records, const Dataset& data) {
  RebalanceReport total;
  total.total = records.size();
  total.counts_before.assign(static_cast<std::size_t>(data.size()), 0);
  total.counts_after.assign(static_cast<std::size_t>(data.size()), 0);
  for (const auto cls : data.classes()) {
    const auto members = data.members(cls);
    std::vector<std::uint32_t> local_of(static_cast<std::size_t>(data.size()), UINT32_MAX);
    for (std::size_t k = 0; k < members.size(); ++k) {
      local_of[static_cast<std::size_t>(members[k])] = static_cast<std::uint32_t>(k);
    }
    std::vector<std::size_t> slots;
    std::vector<std::uint32_t> local;
    for (std::size_t j = 0; j < records.size(); ++j) {
      if (records[j].class_id != cls) continue;
      require(records[j].data_index < data.size(), "record data_index out of range");
      const auto li = local_of[records[j].data_index];
      require(li != UINT32_MAX, "record " + std::to_string(j) + " points outside class " +
                                    std::to_string(cls));
      slots.push_back(j);
      local.push_back(li);
    }
    RebalanceReport rep;
    const auto fixed = rebalance(local, static_cast<std::uint32_t>(members.size()), &rep);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      records[slots[k]].data_index = static_cast<std::uint32_t>(members[fixed[k]]);
    }
    total.changed += rep.changed;
    for (std::size_t k = 0; k < members.size(); ++k) {
      total.counts_before[static_cast<std::size_t>(members[k])] = rep.counts_before[k];
      total.counts_after[static_cast<std::size_t>(members[k])] = rep.counts_after[k];
    }
  }
  return total;
}

/// Seeded Fisher-Yates shuffle of record order. Rebalance rewrites the latest
/// occurrences, so without this the rewritten pairs pile up at the end of the
/// training stream and dominate the final steps.
inline void shuffle_records(std::vector<PairRecord>& records, std::uint64_t master_seed) {
  SplitMix64 rng(derive_seed(master_seed, UINT64_MAX - 1));
  for (std::size_t k = records.size(); k > 1; --k) std::swap(records[k - 1], records[rng.below(k)]);
}

using PointTransform = std::function<Vec(const Vec&)>;

/// Dataset doubled by an involution (e.g. a horizontal flip): originals
/// first, transformed copies appended, all weights halved.
inline Dataset augment_involution(const Dataset& data, const PointTransform& transform,
                                  std::uint64_t check_seed = 0x5eed) {
  data.validate();
  SplitMix64 rng(check_seed);
  for (int k = 0; k < 100; ++k) {
    Vec p(data.dim());
    for (Index c = 0; c < p.size(); ++c) p[c] = 2.0 * rng.normal();
    const Vec back = transform(transform(p));
    require(back.size() == p.size(), "transform changes the point dimension");
    if ((back - p).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + p.cwiseAbs().maxCoeff())) {
      throw ValidationError("transform is not an involution (check point " + std::to_string(k) + ")");
    }
  }
  const Index n = data.size();
  Dataset out;
  out.points.resize(data.dim(), 2 * n);
  out.weights.resize(2 * n);
  out.points.leftCols(n) = data.points;
  for (Index i = 0; i < n; ++i) out.points.col(n + i) = transform(data.points.col(i));
  out.weights.head(n) = 0.5 * data.weights;
  out.weights.tail(n) = 0.5 * data.weights;
  if (!data.class_ids.empty()) {
    out.class_ids = data.class_ids;
    out.class_ids.insert(out.class_ids.end(), data.class_ids.begin(), data.class_ids.end());
  }
  return out;
}

/// Mirror across the hyperplane x[axis] = 0.
inline PointTransform mirror_axis(Index axis) {
  return [axis](const Vec& p) {
    Vec q = p;
    q[axis] = -q[axis];
    return q;
  };
}

// Pair file: "ALNF", u16 version, u16 reserved, u32 count, u32 dataset size,
// then (u64 seed, u32 class_id, u32 data_index) per record; little-endian.
inline constexpr std::uint16_t kPairFileVersion = 1;
inline constexpr std::size_t kPairHeaderBytes = 16;
inline constexpr std::size_t kPairRecordBytes = 16;

struct PairFile {
  std::uint32_t dataset_size = 0;
  std::vector<PairRecord> records;
};

inline std::vector<char> encode_pairs(const PairFile& file) {
  ByteWriter w;
  w.magic("ALNF");
  w.u16(kPairFileVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(file.records.size()));
  w.u32(file.dataset_size);
  for (const auto& r : file.records) {
    w.u64(r.seed);
    w.u32(r.class_id);
    w.u32(r.data_index);
  }
  return w.bytes();
}

inline PairFile decode_pairs(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("ALNF");
  auto at = r.offset();
  if (r.u16() != kPairFileVersion) throw FormatError("unsupported pair file version", at);
  at = r.offset();
  if (r.u16() != 0) throw FormatError("reserved header field is not zero", at);
  const std::uint32_t count = r.u32();
  PairFile file;
  file.dataset_size = r.u32();
  if (r.remaining() != kPairRecordBytes * count) {
    throw FormatError("pair file holds " + std::to_string(r.remaining()) + " payload bytes, expected " +
                          std::to_string(kPairRecordBytes * count),
                      r.offset());
  }
  file.records.resize(count);
  for (auto& rec : file.records) {
    rec.seed = r.u64();
    rec.class_id = r.u32();
    at = r.offset();
    rec.data_index = r.u32();
    if (rec.data_index >= file.dataset_size) {
      throw FormatError("data_index " + std::to_string(rec.data_index) + " exceeds dataset size", at);
    }
  }
  return file;
}

inline void write_pairs(const std::string& path, const PairFile& file) {
  write_file(path, encode_pairs(file));
}

inline PairFile read_pairs(const std::string& path) { return decode_pairs(read_file(path)); }

}  // namespace alignflow

#endif  // ALIGNFLOW_PAIRING_HPP
