#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "momentfit/errors.hpp"

namespace momentfit::moments {

enum class VarKind { binary_response, numeric, binary, dummy };

std::string to_string(VarKind kind);
VarKind var_kind_from_string(const std::string& s);

// Per-column metadata carried inside a summary bundle. For standardized
// numeric columns, center/scale are the original-scale mean and (divisor-n)
// standard deviation, so coefficients can be reported on either scale.
struct VariableMeta {
  std::string name;
  VarKind kind = VarKind::numeric;
  std::string level;   // dummy only: level this column indicates
  std::string parent;  // dummy only: originating categorical column
  bool standardized = false;
  double center = 0.0;
  double scale = 1.0;
};

// Per-variable exponent vector defining a joint moment. Entry order follows
// the cluster's variable ordering (response first, then predictors).
struct MultiIndex {
  std::vector<int> orders;

  int total_order() const;
  std::string to_string() const;  // e.g. "(1,0,2)"
  bool operator==(const MultiIndex& other) const { return orders == other.orders; }
};

// Canonical ordering: by total order, then lexicographically. Used for map
// keys, serialization, and diagnostics so every artifact lists moments in
// the same order.
struct MultiIndexLess {
  bool operator()(const MultiIndex& a, const MultiIndex& b) const;
};

using MomentMap = std::map<MultiIndex, double, MultiIndexLess>;

// The enumerated moment targets implied by a variable list and maximum
// order: all order-1 means, all order-2 indices over every variable
// (response included), and for k >= 3 all multi-indices of total order k
// over predictors only.
struct MomentSpec {
  std::vector<MultiIndex> targets;  // distinct indices in canonical order
  std::size_t size() const { return targets.size(); }
  bool contains(const MultiIndex& r) const;
};

// One cluster's privacy-preserving payload.
struct SummaryBundle {
  std::string cluster_id;
  long n = 0;
  std::vector<VariableMeta> variables;  // response at position 0
  int max_order = 2;
  MomentMap moments;  // |r| == 1 entries hold raw means, higher orders are central
  double response_mean = 0.0;

  int var_count() const { return static_cast<int>(variables.size()); }
  int predictor_count() const { return var_count() - 1; }
};

struct ClusterData {
  std::string cluster_id;
  Eigen::VectorXd y;  // binary response, length n
  Eigen::MatrixXd x;  // n x p predictors, response excluded
};

// Univariate sample central moment of order r with divisor n.
double central_moment(const Eigen::VectorXd& x, int r);

// p-variate sample central moment; columns of x follow the index entries.
double joint_central_moment(const Eigen::MatrixXd& x, const MultiIndex& r);

// Value of one bundle target on a full column matrix [response, predictors]:
// raw mean for |r| == 1, joint central moment otherwise.
double evaluate_moment(const Eigen::MatrixXd& all_columns, const MultiIndex& r);

MomentSpec enumerate_moment_spec(const std::vector<VariableMeta>& variables, int max_order);

// Count of summary measures under the symmetric-matrix accounting, where the
// univariate order-3 moments sit on the diagonal of both cross-moment
// matrices and are therefore tallied twice (97 for 6 predictors at order 3).
// The distinct-target count is enumerate_moment_spec(...).size().
long summary_measure_count(const std::vector<VariableMeta>& variables, int max_order);

// Dummy-codes a categorical column. The first level in `levels` is the
// reference (all-zero row); the result has levels.size()-1 columns.
Eigen::MatrixXd encode_dummies(const std::vector<std::string>& column,
                               const std::vector<std::string>& levels);

struct Standardized {
  Eigen::VectorXd values;
  double center = 0.0;
  double scale = 1.0;
};

// Centers and scales to mean 0, divisor-n standard deviation 1.
Standardized standardize(const Eigen::VectorXd& column);

// Reduces one cluster to its summary bundle. `variables` lists the response
// (position 0, kind binary_response) followed by the predictor columns of
// data.x in order; numeric columns flagged `standardized` are standardized
// here and their center/scale recorded.
SummaryBundle summarize_cluster(const ClusterData& data, std::vector<VariableMeta> variables,
                                int max_order);

// Column matrix [y, x...] on the bundle scale (standardization applied).
// Shared by summarize_cluster and the generation diagnostics.
Eigen::MatrixXd bundle_scale_columns(const ClusterData& data,
                                     const std::vector<VariableMeta>& variables);

}  // namespace momentfit::moments
