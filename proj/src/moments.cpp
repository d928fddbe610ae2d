#include "momentfit/moments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace momentfit::moments {

std::string to_string(VarKind kind) {
  switch (kind) {
    case VarKind::binary_response: return "binary_response";
    case VarKind::numeric: return "numeric";
    case VarKind::binary: return "binary";
    case VarKind::dummy: return "dummy";
  }
  return "numeric";
}

VarKind var_kind_from_string(const std::string& s) {
  if (s == "binary_response") return VarKind::binary_response;
  if (s == "numeric") return VarKind::numeric;
  if (s == "binary") return VarKind::binary;
  if (s == "dummy") return VarKind::dummy;
  throw InvalidInputError("unknown variable kind: " + s);
}

int MultiIndex::total_order() const {
  int total = 0;
  for (int r : orders) total += r;
  return total;
}

std::string MultiIndex::to_string() const {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < orders.size(); ++i) {
    if (i) out << ",";
    out << orders[i];
  }
  out << ")";
  return out.str();
}

bool MultiIndexLess::operator()(const MultiIndex& a, const MultiIndex& b) const {
  const int ta = a.total_order();
  const int tb = b.total_order();
  if (ta != tb) return ta < tb;
  return a.orders < b.orders;
}

bool MomentSpec::contains(const MultiIndex& r) const {
  return std::binary_search(targets.begin(), targets.end(), r, MultiIndexLess{});
}

double central_moment(const Eigen::VectorXd& x, int r) {
  if (x.size() == 0) throw InvalidInputError("central_moment: empty vector");
  if (r < 1) throw InvalidInputError("central_moment: order must be >= 1");
  const double n = static_cast<double>(x.size());
  const double mean = x.mean();
  // Two-pass centered accumulation; raw-moment expansion cancels badly at
  // order 4.
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    acc += std::pow(x[i] - mean, r);
  }
  return acc / n;
}

double joint_central_moment(const Eigen::MatrixXd& x, const MultiIndex& r) {
  if (static_cast<std::size_t>(x.cols()) != r.orders.size())
    throw InvalidInputError("joint_central_moment: column count does not match index length");
  if (r.total_order() < 2)
    throw InvalidInputError("joint_central_moment: total order must be >= 2");
  const Eigen::Index n = x.rows();
  if (n == 0) throw InvalidInputError("joint_central_moment: empty matrix");

  Eigen::VectorXd means = x.colwise().mean();
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double term = 1.0;
    for (std::size_t j = 0; j < r.orders.size(); ++j) {
      const int e = r.orders[j];
      if (e == 0) continue;
      term *= std::pow(x(i, static_cast<Eigen::Index>(j)) - means[static_cast<Eigen::Index>(j)], e);
    }
    acc += term;
  }
  return acc / static_cast<double>(n);
}

double evaluate_moment(const Eigen::MatrixXd& all_columns, const MultiIndex& r) {
  if (r.total_order() == 1) {
    for (std::size_t j = 0; j < r.orders.size(); ++j) {
      if (r.orders[j] == 1) return all_columns.col(static_cast<Eigen::Index>(j)).mean();
    }
    throw InvalidInputError("evaluate_moment: malformed order-1 index");
  }
  return joint_central_moment(all_columns, r);
}

namespace {

// All length-`positions.size()`-supported multi-indices of total order k over
// the given variable positions, written into vectors of full length `width`.
void compositions(int k, const std::vector<int>& positions, std::size_t next, int width,
                  std::vector<int>& current, std::vector<MultiIndex>& out) {
  if (next == positions.size()) {
    if (k == 0) out.push_back(MultiIndex{current});
    return;
  }
  // Exponent for positions[next] from k down to 0 so recursion terminates.
  for (int e = k; e >= 0; --e) {
    current[static_cast<std::size_t>(positions[next])] = e;
    compositions(k - e, positions, next + 1, width, current, out);
  }
  current[static_cast<std::size_t>(positions[next])] = 0;
}

std::vector<MultiIndex> indices_of_order(int k, const std::vector<int>& positions, int width) {
  std::vector<MultiIndex> out;
  std::vector<int> current(static_cast<std::size_t>(width), 0);
  compositions(k, positions, 0, width, current, out);
  return out;
}

int response_position(const std::vector<VariableMeta>& variables) {
  int pos = -1;
  for (std::size_t i = 0; i < variables.size(); ++i) {
    if (variables[i].kind == VarKind::binary_response) {
      if (pos >= 0) throw InvalidInputError("variable list has more than one response");
      pos = static_cast<int>(i);
    }
  }
  if (pos < 0) throw InvalidInputError("variable list has no response");
  return pos;
}

}  // namespace

MomentSpec enumerate_moment_spec(const std::vector<VariableMeta>& variables, int max_order) {
  if (max_order < 2 || max_order > 4)
    throw ConfigError("max_order must be 2, 3, or 4");
  const int width = static_cast<int>(variables.size());
  if (width < 2) throw InvalidInputError("need a response and at least one predictor");
  const int resp = response_position(variables);

  std::vector<int> all_positions;
  std::vector<int> predictor_positions;
  for (int j = 0; j < width; ++j) {
    all_positions.push_back(j);
    if (j != resp) predictor_positions.push_back(j);
  }

  MomentSpec spec;
  for (const auto& idx : indices_of_order(1, all_positions, width)) spec.targets.push_back(idx);
  for (const auto& idx : indices_of_order(2, all_positions, width)) spec.targets.push_back(idx);
  for (int k = 3; k <= max_order; ++k) {
    for (const auto& idx : indices_of_order(k, predictor_positions, width))
      spec.targets.push_back(idx);
  }
  std::sort(spec.targets.begin(), spec.targets.end(), MultiIndexLess{});
  return spec;
}

long summary_measure_count(const std::vector<VariableMeta>& variables, int max_order) {
  if (max_order < 2 || max_order > 4)
    throw ConfigError("max_order must be 2, 3, or 4");
  const long v = static_cast<long>(variables.size());
  const long p = v - 1;
  long count = v;               // means
  count += v * (v + 1) / 2;     // order-2 triangle, response included
  if (max_order >= 3) {
    // Two p x p symmetric matrices (univariate thirds on both diagonals)
    // plus the strictly trivariate vector.
    count += p * (p + 1);
    count += p * (p - 1) * (p - 2) / 6;
  }
  if (max_order >= 4) {
    // No matrix accounting is reported at order 4; count distinct indices.
    count += static_cast<long>(
        enumerate_moment_spec(variables, 4).targets.size() -
        enumerate_moment_spec(variables, 3).targets.size());
  }
  return count;
}

Eigen::MatrixXd encode_dummies(const std::vector<std::string>& column,
                               const std::vector<std::string>& levels) {
  if (levels.size() < 2) throw InvalidInputError("encode_dummies: need at least 2 levels");
  const Eigen::Index n = static_cast<Eigen::Index>(column.size());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(levels.size()) - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& value = column[static_cast<std::size_t>(i)];
    auto it = std::find(levels.begin(), levels.end(), value);
    if (it == levels.end())
      throw InvalidInputError("encode_dummies: unseen level '" + value + "'");
    const Eigen::Index idx = static_cast<Eigen::Index>(it - levels.begin());
    if (idx > 0) out(i, idx - 1) = 1.0;
  }
  return out;
}

Standardized standardize(const Eigen::VectorXd& column) {
  if (column.size() == 0) throw InvalidInputError("standardize: empty column");
  const double center = column.mean();
  const double scale = std::sqrt(central_moment(column, 2));
  if (!(scale > 0.0))
    throw DegenerateScaleError("standardize: column is constant");
  Standardized out;
  out.values = (column.array() - center) / scale;
  out.center = center;
  out.scale = scale;
  return out;
}

Eigen::MatrixXd bundle_scale_columns(const ClusterData& data,
                                     const std::vector<VariableMeta>& variables) {
  const Eigen::Index n = data.y.size();
  const int p = static_cast<int>(variables.size()) - 1;
  if (data.x.rows() != n || data.x.cols() != p)
    throw InvalidInputError("cluster data does not match variable list");
  Eigen::MatrixXd m(n, p + 1);
  m.col(0) = data.y;
  for (int j = 0; j < p; ++j) {
    const auto& meta = variables[static_cast<std::size_t>(j + 1)];
    if (meta.standardized) {
      m.col(j + 1) = (data.x.col(j).array() - meta.center) / meta.scale;
    } else {
      m.col(j + 1) = data.x.col(j);
    }
  }
  return m;
}

SummaryBundle summarize_cluster(const ClusterData& data, std::vector<VariableMeta> variables,
                                int max_order) {
  const Eigen::Index n = data.y.size();
  if (n < 2) throw ClusterTooSmallError("cluster '" + data.cluster_id + "' has n < 2");
  if (variables.empty() || variables[0].kind != VarKind::binary_response)
    throw InvalidInputError("variable list must start with the binary response");
  response_position(variables);  // enforces uniqueness
  const int p = static_cast<int>(variables.size()) - 1;
  if (data.x.rows() != n || data.x.cols() != p)
    throw InvalidInputError("cluster data does not match variable list");

  for (Eigen::Index i = 0; i < n; ++i) {
    if (data.y[i] != 0.0 && data.y[i] != 1.0)
      throw InvalidInputError("response must be 0/1 in cluster '" + data.cluster_id + "'");
  }

  Eigen::MatrixXd m(n, p + 1);
  m.col(0) = data.y;
  for (int j = 0; j < p; ++j) {
    auto& meta = variables[static_cast<std::size_t>(j + 1)];
    Eigen::VectorXd col = data.x.col(j);
    if (meta.kind == VarKind::binary || meta.kind == VarKind::dummy) {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (col[i] != 0.0 && col[i] != 1.0)
          throw InvalidInputError("column '" + meta.name + "' declared binary but is not 0/1");
      }
    }
    const double spread = central_moment(col, 2);
    if (!(spread > 0.0))
      throw DegenerateScaleError("predictor '" + meta.name + "' is constant in cluster '" +
                                 data.cluster_id + "'");
    if (meta.standardized) {
      Standardized s = standardize(col);
      col = s.values;
      meta.center = s.center;
      meta.scale = s.scale;
    } else {
      meta.center = 0.0;
      meta.scale = 1.0;
    }
    m.col(j + 1) = col;
  }

  SummaryBundle bundle;
  bundle.cluster_id = data.cluster_id;
  bundle.n = static_cast<long>(n);
  bundle.variables = std::move(variables);
  bundle.max_order = max_order;
  bundle.response_mean = data.y.mean();

  const MomentSpec spec = enumerate_moment_spec(bundle.variables, max_order);
  for (const auto& r : spec.targets) {
    bundle.moments.emplace(r, evaluate_moment(m, r));
  }
  return bundle;
}

}  // namespace momentfit::moments
