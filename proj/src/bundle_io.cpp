#include "momentfit/bundle_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "momentfit/rng.hpp"

namespace momentfit::bundle_io {

using json = nlohmann::ordered_json;
using moments::MomentSpec;
using moments::MultiIndex;
using moments::VariableMeta;
using moments::VarKind;

namespace {

json meta_to_json(const VariableMeta& meta) {
  json v;
  v["name"] = meta.name;
  v["kind"] = moments::to_string(meta.kind);
  v["level"] = meta.level;
  v["parent"] = meta.parent;
  v["standardized"] = meta.standardized;
  v["center"] = meta.center;
  v["scale"] = meta.scale;
  return v;
}

VariableMeta meta_from_json(const json& v) {
  VariableMeta meta;
  meta.name = v.at("name").get<std::string>();
  meta.kind = moments::var_kind_from_string(v.at("kind").get<std::string>());
  meta.level = v.value("level", std::string{});
  meta.parent = v.value("parent", std::string{});
  meta.standardized = v.at("standardized").get<bool>();
  meta.center = v.at("center").get<double>();
  meta.scale = v.at("scale").get<double>();
  return meta;
}

std::string signature_string(const std::vector<VariableMeta>& variables) {
  std::ostringstream out;
  for (const auto& v : variables) out << v.name << ":" << moments::to_string(v.kind) << ";";
  return out.str();
}

void check(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace

std::string to_json(const SummaryBundle& bundle) {
  json out;
  out["schema_version"] = 1;
  out["cluster_id"] = bundle.cluster_id;
  out["n"] = bundle.n;
  out["max_order"] = bundle.max_order;
  json vars = json::array();
  for (const auto& v : bundle.variables) vars.push_back(meta_to_json(v));
  out["variables"] = std::move(vars);
  out["response_mean"] = bundle.response_mean;
  json moments_json = json::array();
  for (const auto& [index, value] : bundle.moments) {  // map iterates canonically
    json entry;
    entry["index"] = index.orders;
    entry["value"] = value;
    moments_json.push_back(std::move(entry));
  }
  out["moments"] = std::move(moments_json);
  return out.dump(2) + "\n";
}

SummaryBundle validate_bundle(const std::string& raw) {
  json parsed;
  try {
    parsed = json::parse(raw);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bundle is not valid JSON: ") + e.what());
  }

  try {
    check(parsed.value("schema_version", -1) == 1, "unsupported schema_version");

    SummaryBundle bundle;
    bundle.cluster_id = parsed.at("cluster_id").get<std::string>();
    bundle.n = parsed.at("n").get<long>();
    check(bundle.n >= 1, "n must be a positive integer");
    bundle.max_order = parsed.at("max_order").get<int>();
    check(bundle.max_order >= 2 && bundle.max_order <= 4, "max_order must be in {2,3,4}");

    for (const auto& v : parsed.at("variables")) bundle.variables.push_back(meta_from_json(v));
    check(bundle.variables.size() >= 2, "need a response and at least one predictor");
    int responses = 0;
    for (const auto& v : bundle.variables) {
      if (v.kind == VarKind::binary_response) ++responses;
      if (v.standardized) check(v.scale > 0.0, "variable '" + v.name + "': scale must be > 0");
    }
    check(responses == 1, "exactly one variable must have kind binary_response");
    check(bundle.variables[0].kind == VarKind::binary_response,
          "the response must be the first variable");

    bundle.response_mean = parsed.at("response_mean").get<double>();
    check(bundle.response_mean >= 0.0 && bundle.response_mean <= 1.0,
          "response_mean must lie in [0,1]");

    const std::size_t width = bundle.variables.size();
    for (const auto& entry : parsed.at("moments")) {
      MultiIndex index;
      index.orders = entry.at("index").get<std::vector<int>>();
      check(index.orders.size() == width,
            "moment index " + index.to_string() + " has wrong length");
      const double value = entry.at("value").get<double>();
      check(bundle.moments.emplace(index, value).second,
            "duplicate moment key " + index.to_string());
    }

    // Key-set completeness, both directions.
    const MomentSpec spec = moments::enumerate_moment_spec(bundle.variables, bundle.max_order);
    for (const auto& target : spec.targets) {
      check(bundle.moments.count(target) == 1, "missing moment " + target.to_string());
    }
    check(bundle.moments.size() == spec.targets.size(),
          "bundle contains moment keys outside the enumerated targets");

    // Order-2 block: symmetric by construction of the key set; require PSD
    // up to a small eigenvalue floor and nonnegative variances.
    const int v = bundle.var_count();
    Eigen::MatrixXd cov(v, v);
    for (int i = 0; i < v; ++i) {
      for (int j = i; j < v; ++j) {
        MultiIndex r;
        r.orders.assign(width, 0);
        r.orders[static_cast<std::size_t>(i)] += 1;
        r.orders[static_cast<std::size_t>(j)] += 1;
        const double value = bundle.moments.at(r);
        cov(i, j) = value;
        cov(j, i) = value;
      }
      check(cov(i, i) >= 0.0,
            "variance of '" + bundle.variables[static_cast<std::size_t>(i)].name + "' is negative");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
    check(eig.eigenvalues().minCoeff() >= -1e-8,
          "order-2 moment matrix is not positive semidefinite");

    // Binary columns: variance must equal q(1-q).
    for (std::size_t j = 0; j < width; ++j) {
      const auto& meta = bundle.variables[j];
      if (meta.kind == VarKind::numeric) continue;
      MultiIndex mean_idx;
      mean_idx.orders.assign(width, 0);
      mean_idx.orders[j] = 1;
      MultiIndex var_idx;
      var_idx.orders.assign(width, 0);
      var_idx.orders[j] = 2;
      const double q = bundle.moments.at(mean_idx);
      const double var = bundle.moments.at(var_idx);
      check(std::abs(var - q * (1.0 - q)) <= 1e-12,
            "variable '" + meta.name + "': variance does not equal q(1-q) for 0/1 data");
    }

    // Response mean field must agree with the stored order-1 moment.
    MultiIndex resp_mean;
    resp_mean.orders.assign(width, 0);
    resp_mean.orders[0] = 1;
    check(std::abs(bundle.moments.at(resp_mean) - bundle.response_mean) <= 1e-12,
          "response_mean disagrees with the stored response mean moment");

    return bundle;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bundle schema error: ") + e.what());
  }
}

BundleSet merge_bundles(std::vector<SummaryBundle> bundles) {
  if (bundles.empty()) throw InvalidInputError("merge_bundles: no bundles given");
  const std::string signature = signature_string(bundles.front().variables);
  const int max_order = bundles.front().max_order;
  std::set<std::string> ids;
  for (const auto& b : bundles) {
    if (signature_string(b.variables) != signature) {
      // Name the first differing variable for the error message.
      std::string offender = "variable list";
      const auto& a = bundles.front().variables;
      const auto& c = b.variables;
      for (std::size_t i = 0; i < std::max(a.size(), c.size()); ++i) {
        const std::string left = i < a.size() ? a[i].name : "<none>";
        const std::string right = i < c.size() ? c[i].name : "<none>";
        if (left != right || i >= a.size() || i >= c.size() || a[i].kind != c[i].kind) {
          offender = left + " vs " + right;
          break;
        }
      }
      throw IncompatibleProvidersError("cluster '" + b.cluster_id +
                                       "' has a different variable signature (" + offender + ")");
    }
    if (b.max_order != max_order)
      throw IncompatibleProvidersError("cluster '" + b.cluster_id + "' has a different max_order");
    if (!ids.insert(b.cluster_id).second)
      throw IncompatibleProvidersError("duplicate cluster_id '" + b.cluster_id + "'");
  }
  BundleSet set;
  set.bundles = std::move(bundles);
  return set;
}

namespace {

std::string sanitize_filename(const std::string& id) {
  std::string out;
  for (char c : id) {
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  }
  if (out.empty()) out = "cluster";
  return out;
}

std::string hex64(std::uint64_t value) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << value;
  return out.str();
}

}  // namespace

void write_bundle_set(const BundleSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["schema_version"] = 1;
  if (!set.bundles.empty()) {
    manifest["max_order"] = set.bundles.front().max_order;
    json sig = json::array();
    for (const auto& v : set.bundles.front().variables) {
      json item;
      item["name"] = v.name;
      item["kind"] = moments::to_string(v.kind);
      sig.push_back(std::move(item));
    }
    manifest["variable_signature"] = std::move(sig);
  }
  json entries = json::array();
  std::set<std::string> used_names;
  for (const auto& bundle : set.bundles) {
    std::string base = sanitize_filename(bundle.cluster_id);
    std::string filename = base + ".bundle.json";
    int suffix = 1;
    while (!used_names.insert(filename).second) {
      filename = base + "_" + std::to_string(++suffix) + ".bundle.json";
    }
    const std::string payload = to_json(bundle);
    std::ofstream out(dir / filename, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / filename).string());
    out << payload;
    json entry;
    entry["cluster_id"] = bundle.cluster_id;
    entry["file"] = filename;
    entry["n"] = bundle.n;
    entry["fnv1a64"] = hex64(fnv1a64(payload));
    entries.push_back(std::move(entry));
  }
  manifest["bundles"] = std::move(entries);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error("cannot write manifest.json");
  out << manifest.dump(2) << "\n";
}

BundleSet read_bundle_dir(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path))
    throw InvalidInputError("no manifest.json in " + dir.string());
  std::ifstream in(manifest_path, std::ios::binary);
  json manifest = json::parse(std::string(std::istreambuf_iterator<char>(in), {}));

  std::vector<SummaryBundle> bundles;
  for (const auto& entry : manifest.at("bundles")) {
    const auto path = dir / entry.at("file").get<std::string>();
    std::ifstream file(path, std::ios::binary);
    if (!file) throw InvalidInputError("cannot read " + path.string());
    const std::string raw(std::istreambuf_iterator<char>(file), {});
    const std::string expected = entry.value("fnv1a64", std::string{});
    if (!expected.empty() && hex64(fnv1a64(raw)) != expected)
      throw ValidationError("hash mismatch for " + path.string());
    bundles.push_back(validate_bundle(raw));
  }
  return merge_bundles(std::move(bundles));
}

}  // namespace momentfit::bundle_io
