#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "momentfit/moments.hpp"

namespace momentfit::bundle_io {

using moments::SummaryBundle;

// Bundles from all providers after signature reconciliation.
struct BundleSet {
  int schema_version = 1;
  std::vector<SummaryBundle> bundles;
};

// Canonical JSON: fixed key order, moments sorted by (total order, lexical),
// doubles rendered as shortest round-trip decimals. Serialize-parse-serialize
// is byte-identical.
std::string to_json(const SummaryBundle& bundle);

// Parses and checks every bundle invariant: schema version, field ranges,
// moment-key completeness against the enumerated targets, PSD order-2 matrix
// (smallest eigenvalue >= -1e-8), and q(1-q) variance identity for binary
// columns. Throws ValidationError naming the offending field.
SummaryBundle validate_bundle(const std::string& raw);

// Enforces a shared variable signature, max_order, and unique cluster ids.
BundleSet merge_bundles(std::vector<SummaryBundle> bundles);

// Directory layout: one <cluster>.bundle.json per cluster plus manifest.json
// with the signature and content hashes.
void write_bundle_set(const BundleSet& set, const std::filesystem::path& dir);
BundleSet read_bundle_dir(const std::filesystem::path& dir);

}  // namespace momentfit::bundle_io
