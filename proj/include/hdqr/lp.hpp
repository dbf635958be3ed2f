#pragma once

// Dense bounded-variable revised simplex.
//
// Every row i carries a logical variable r_i equal to its activity a_i^T x,
// bounded by the row relation. The basis inverse is held only on the
// "kernel": rows whose logical is nonbasic crossed with the basic structural
// columns. Basic logicals are recovered from row activities, so both the
// factorization and the dual solve scale with the number of basic
// structurals rather than with the row count.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdqr::lp {

using Index = Eigen::Index;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Sense { Minimize, Maximize };
enum class Relation { LessEqual, Equal, GreaterEqual, Range };
enum class Status { Optimal, Infeasible, Unbounded, IterationLimit };
enum class VarStatus : std::uint8_t { Basic, AtLower, AtUpper, Free };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "Optimal";
    case Status::Infeasible: return "Infeasible";
    case Status::Unbounded: return "Unbounded";
    case Status::IterationLimit: return "IterationLimit";
  }
  return "Unknown";
}

struct Bound {
  double lower = 0.0;
  double upper = kInf;
};

/// Linear program with dense row storage. Rows are a_i^T x {<=,=,>=} rhs, or
/// rhs <= a_i^T x <= rhs_upper for Relation::Range.
class LpProblem {
 public:
  explicit LpProblem(Index num_vars, Sense sense = Sense::Minimize)
      : sense_(sense), num_vars_(num_vars), cost_(Eigen::VectorXd::Zero(num_vars)),
        bounds_(static_cast<std::size_t>(num_vars)) {
    if (num_vars <= 0) throw std::invalid_argument("LpProblem: need at least one variable");
  }

  Index num_vars() const { return num_vars_; }
  Index num_rows() const { return static_cast<Index>(relation_.size()); }
  Sense sense() const { return sense_; }
  void set_sense(Sense s) { sense_ = s; }

  Eigen::VectorXd& cost() { return cost_; }
  const Eigen::VectorXd& cost() const { return cost_; }

  const Bound& bound(Index j) const { return bounds_[static_cast<std::size_t>(j)]; }
  void set_bounds(Index j, double lower, double upper) { bounds_[static_cast<std::size_t>(j)] = {lower, upper}; }

  /// Declares j and k a split pair: nonnegative, unbounded above, columns
  /// exact negatives of each other, and c_j + c_k >= 0. The solver may then
  /// carry a basic variable through zero onto its twin within one iteration.
  void set_twins(Index j, Index k) {
    if (twin_.empty()) twin_.assign(static_cast<std::size_t>(num_vars_), -1);
    twin_[static_cast<std::size_t>(j)] = k;
    twin_[static_cast<std::size_t>(k)] = j;
  }
  Index twin(Index j) const { return twin_.empty() ? -1 : twin_[static_cast<std::size_t>(j)]; }

  void reserve_rows(Index rows) {
    coeffs_.reserve(static_cast<std::size_t>(rows * num_vars_));
    relation_.reserve(static_cast<std::size_t>(rows));
    rhs_.reserve(static_cast<std::size_t>(rows));
    rhs_upper_.reserve(static_cast<std::size_t>(rows));
  }

  Index add_row(std::span<const double> coeffs, Relation rel, double rhs, double rhs_upper = kInf) {
    if (static_cast<Index>(coeffs.size()) != num_vars_)
      throw std::invalid_argument("LpProblem::add_row: coefficient vector has wrong length");
    coeffs_.insert(coeffs_.end(), coeffs.begin(), coeffs.end());
    relation_.push_back(rel);
    rhs_.push_back(rhs);
    rhs_upper_.push_back(rel == Relation::Range ? rhs_upper : rhs);
    return num_rows() - 1;
  }

  Index add_row(const Eigen::Ref<const Eigen::VectorXd>& coeffs, Relation rel, double rhs,
                double rhs_upper = kInf) {
    return add_row(std::span<const double>(coeffs.data(), static_cast<std::size_t>(coeffs.size())), rel, rhs,
                   rhs_upper);
  }

  std::span<const double> row(Index i) const {
    return {coeffs_.data() + i * num_vars_, static_cast<std::size_t>(num_vars_)};
  }
  double coeff(Index i, Index j) const { return coeffs_[static_cast<std::size_t>(i * num_vars_ + j)]; }
  double& coeff(Index i, Index j) { return coeffs_[static_cast<std::size_t>(i * num_vars_ + j)]; }
  const double* data() const { return coeffs_.data(); }

  Relation relation(Index i) const { return relation_[static_cast<std::size_t>(i)]; }
  double rhs(Index i) const { return rhs_[static_cast<std::size_t>(i)]; }
  double rhs_upper(Index i) const { return rhs_upper_[static_cast<std::size_t>(i)]; }
  void set_rhs(Index i, double rhs, double rhs_upper = kInf) {
    rhs_[static_cast<std::size_t>(i)] = rhs;
    rhs_upper_[static_cast<std::size_t>(i)] = relation(i) == Relation::Range ? rhs_upper : rhs;
  }

  /// Bounds on the activity of row i implied by its relation.
  double row_lower(Index i) const {
    switch (relation(i)) {
      case Relation::LessEqual: return -kInf;
      default: return rhs(i);
    }
  }
  double row_upper(Index i) const {
    switch (relation(i)) {
      case Relation::GreaterEqual: return kInf;
      case Relation::Range: return rhs_upper(i);
      default: return rhs(i);
    }
  }

  void validate() const {
    for (Index j = 0; j < num_vars_; ++j) {
      const auto& b = bound(j);
      if (std::isnan(b.lower) || std::isnan(b.upper) || b.lower > b.upper)
        throw std::invalid_argument("LpProblem: invalid bounds on variable " + std::to_string(j));
      if (!std::isfinite(cost_[j])) throw std::invalid_argument("LpProblem: non-finite cost " + std::to_string(j));
    }
    for (Index i = 0; i < num_rows(); ++i) {
      if (!std::isfinite(rhs(i)) || (relation(i) == Relation::Range && std::isnan(rhs_upper(i))) ||
          row_lower(i) > row_upper(i))
        throw std::invalid_argument("LpProblem: invalid right-hand side on row " + std::to_string(i));
    }
    for (double v : coeffs_)
      if (!std::isfinite(v)) throw std::invalid_argument("LpProblem: non-finite constraint coefficient");
    for (Index j = 0; j < static_cast<Index>(twin_.size()); ++j) {
      const Index k = twin(j);
      if (k < j) continue;
      const double flip = sense_ == Sense::Maximize ? -1.0 : 1.0;
      bool ok = bound(j).lower == 0.0 && bound(k).lower == 0.0 && std::isinf(bound(j).upper) &&
                std::isinf(bound(k).upper) && flip * (cost_[j] + cost_[k]) >= 0.0;
      for (Index i = 0; ok && i < num_rows(); ++i) ok = coeff(i, j) == -coeff(i, k);
      if (!ok) throw std::invalid_argument("LpProblem: invalid twin pair " + std::to_string(j) + "," + std::to_string(k));
    }
  }

 private:
  Sense sense_;
  Index num_vars_;
  Eigen::VectorXd cost_;
  std::vector<Bound> bounds_;
  std::vector<Index> twin_;
  std::vector<double> coeffs_;
  std::vector<Relation> relation_;
  std::vector<double> rhs_;
  std::vector<double> rhs_upper_;
};

enum class Pricing { Devex, Dantzig };

struct SolverOptions {
  double tol_feas = 1e-9;
  double tol_cost = 1e-9;
  Index max_iters = 0;  // 0 selects 50 * (vars + rows)
  Index degeneracy_limit = 50;
  Index refactor_interval = 100;
  // Refactor before declaring optimality once this many updates have accumulated.
  Index verify_updates = 50;
  Pricing pricing = Pricing::Devex;
};

/// Status of every structural and logical variable; the warm-start currency.
struct Basis {
  std::vector<VarStatus> structural;
  std::vector<VarStatus> logical;
  bool empty() const { return structural.empty() && logical.empty(); }
};

struct LpSolution {
  Status status = Status::IterationLimit;
  Eigen::VectorXd x;
  double objective = 0.0;
  /// Multipliers y with cost = A^T y + reduced_costs in the problem's own sense.
  Eigen::VectorXd row_duals;
  Eigen::VectorXd reduced_costs;
  Eigen::VectorXd row_activity;
  Basis basis;
  Index iterations = 0;
  bool warm_started = false;
};

namespace detail {

class BoundedSimplex {
 public:
  BoundedSimplex(const LpProblem& prob, const SolverOptions& opt)
      : prob_(prob), opt_(opt), m_(prob.num_rows()), n_(prob.num_vars()), a_(prob.data()) {
    const auto nt = static_cast<std::size_t>(n_ + m_);
    c_.assign(nt, 0.0);
    lo_.resize(nt);
    up_.resize(nt);
    x_.assign(nt, 0.0);
    st_.assign(nt, VarStatus::AtLower);
    const double flip = prob.sense() == Sense::Maximize ? -1.0 : 1.0;
    for (Index j = 0; j < n_; ++j) {
      c_[j] = flip * prob.cost()[j];
      lo_[j] = prob.bound(j).lower;
      up_[j] = prob.bound(j).upper;
    }
    for (Index i = 0; i < m_; ++i) {
      lo_[n_ + i] = prob.row_lower(i);
      up_[n_ + i] = prob.row_upper(i);
    }
    qpos_.assign(nt, -1);
    rpos_.assign(static_cast<std::size_t>(m_), -1);
    y_.assign(static_cast<std::size_t>(m_), 0.0);
    d_.assign(nt, 0.0);
    acc_.assign(static_cast<std::size_t>(n_), 0.0);
    alpha_p_.assign(static_cast<std::size_t>(m_), 0.0);
    work_cost_.assign(nt, 0.0);
    if (opt_.max_iters <= 0) opt_.max_iters = 50 * (n_ + m_);
    // Sparse rows for pricing; the second column of a twin pair is implied.
    twin_.assign(static_cast<std::size_t>(n_), -1);
    for (Index j = 0; j < n_; ++j) {
      twin_[static_cast<std::size_t>(j)] = prob.twin(j);
      has_twins_ = has_twins_ || prob.twin(j) >= 0;
    }
    row_start_.reserve(static_cast<std::size_t>(m_ + 1));
    nz_col_.reserve(static_cast<std::size_t>(m_ * n_ / (has_twins_ ? 2 : 1)));
    nz_val_.reserve(nz_col_.capacity());
    for (Index i = 0; i < m_; ++i) {
      row_start_.push_back(static_cast<Index>(nz_col_.size()));
      for (Index j = 0; j < n_; ++j)
        if (a(i, j) != 0.0 && !(twin_[static_cast<std::size_t>(j)] >= 0 && twin_[static_cast<std::size_t>(j)] < j)) {
          nz_col_.push_back(j);
          nz_val_.push_back(a(i, j));
        }
    }
    row_start_.push_back(static_cast<Index>(nz_col_.size()));
    acol_.resize(static_cast<std::size_t>(n_ * m_));
    if (m_ > 0)
      Eigen::Map<Eigen::MatrixXd>(acol_.data(), m_, n_) =
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(a_, m_, n_);
    weight_.assign(nt, 1.0);
    rho_.assign(static_cast<std::size_t>(m_), 0.0);
  }

  LpSolution run(const Basis* warm) {
    bool warm_ok = false;
    if (warm != nullptr && !warm->empty()) warm_ok = install_basis(*warm);
    if (!warm_ok) install_slack_basis();
    return iterate(warm_ok);
  }

  /// Continues from the current basis, e.g. after cost changes.
  LpSolution resume() {
    std::fill(weight_.begin(), weight_.end(), 1.0);
    return iterate(true);
  }

  void set_cost(Index j, double c) { c_[j] = prob_.sense() == Sense::Maximize ? -c : c; }

 private:
  LpSolution iterate(bool warm_ok) {
    LpSolution sol;
    sol.warm_started = warm_ok;

    Index degenerate_run = 0;
    Index iter = 0;
    Status status = Status::IterationLimit;
    bool verified = false;
    while (iter < opt_.max_iters) {
      const bool phase1 = build_phase_costs();
      btran(work_cost_);
      const bool bland = degenerate_run >= opt_.degeneracy_limit;
      const Index enter = price(work_cost_, bland);
      if (enter < 0) {
        if (!verified && updates_ >= opt_.verify_updates) {
          refactor();
          verified = true;
          continue;
        }
        status = phase1 ? Status::Infeasible : Status::Optimal;
        break;
      }
      verified = false;
      const double dir = d_[enter] < 0.0 ? 1.0 : -1.0;
      ftran(enter);
      const auto step = ratio_test(enter, dir, phase1, bland);
      if (step.kind == StepKind::Unbounded) {
        status = phase1 ? Status::Infeasible : Status::Unbounded;
        break;
      }
      ++iter;
      degenerate_run = step.t <= 1e-12 ? degenerate_run + 1 : 0;
      if (step.kind == StepKind::Pivot && opt_.pricing == Pricing::Devex) update_weights(enter, step.leave);
      apply_step(enter, dir, step);
      if (updates_ >= opt_.refactor_interval) refactor();
    }

    finish(sol, status, iter);
    return sol;
  }

  enum class StepKind { Flip, Pivot, Unbounded };
  struct Cand {
    Index var;
    double delta;  // rate of change of the basic variable per unit step
    double dist;   // distance to the blocking bound
    bool to_upper;
  };
  struct Step {
    StepKind kind = StepKind::Unbounded;
    double t = 0.0;
    Index leave = -1;
    bool leave_to_upper = false;
  };

  double ftol(double bound) const { return opt_.tol_feas * std::max(1.0, std::abs(bound)); }
  double ctol(Index j) const { return opt_.tol_cost * std::max(1.0, std::abs(c_[j])); }
  double a(Index i, Index j) const { return a_[i * n_ + j]; }
  Index k() const { return static_cast<Index>(q_.size()); }
  double& kinv(Index qa, Index rb) { return kinv_[static_cast<std::size_t>(qa * cap_ + rb)]; }
  double kinv(Index qa, Index rb) const { return kinv_[static_cast<std::size_t>(qa * cap_ + rb)]; }

  void ensure_capacity(Index need) {
    if (need <= cap_) return;
    Index cap = std::max<Index>(cap_ == 0 ? 16 : cap_ * 2, need);
    std::vector<double> grown(static_cast<std::size_t>(cap * cap), 0.0);
    const Index keep = std::min(k(), cap_);
    for (Index r = 0; r < keep; ++r)
      for (Index c = 0; c < keep; ++c) grown[static_cast<std::size_t>(r * cap + c)] = kinv(r, c);
    kinv_.swap(grown);
    cap_ = cap;
  }

  static double nonbasic_value(double lo, double up, VarStatus s) {
    switch (s) {
      case VarStatus::AtUpper: return std::isfinite(up) ? up : (std::isfinite(lo) ? lo : 0.0);
      case VarStatus::Free: return 0.0;
      default: return std::isfinite(lo) ? lo : (std::isfinite(up) ? up : 0.0);
    }
  }

  static VarStatus default_status(double lo, double up) {
    if (std::isfinite(lo)) return VarStatus::AtLower;
    if (std::isfinite(up)) return VarStatus::AtUpper;
    return VarStatus::Free;
  }

  void place_nonbasic(Index j, VarStatus s) {
    if (s == VarStatus::AtLower && !std::isfinite(lo_[j])) s = default_status(lo_[j], up_[j]);
    if (s == VarStatus::AtUpper && !std::isfinite(up_[j])) s = default_status(lo_[j], up_[j]);
    if (s == VarStatus::Free && (std::isfinite(lo_[j]) || std::isfinite(up_[j]))) s = default_status(lo_[j], up_[j]);
    st_[j] = s;
    x_[j] = nonbasic_value(lo_[j], up_[j], s);
  }

  void install_slack_basis() {
    q_.clear();
    r_.clear();
    std::fill(qpos_.begin(), qpos_.end(), -1);
    std::fill(rpos_.begin(), rpos_.end(), -1);
    for (Index j = 0; j < n_; ++j) place_nonbasic(j, default_status(lo_[j], up_[j]));
    for (Index i = 0; i < m_; ++i) st_[n_ + i] = VarStatus::Basic;
    updates_ = 0;
    recompute_basics();
  }

  bool install_basis(const Basis& b) {
    if (static_cast<Index>(b.structural.size()) != n_ || static_cast<Index>(b.logical.size()) != m_) return false;
    Index basic = 0;
    for (auto s : b.structural) basic += s == VarStatus::Basic;
    for (auto s : b.logical) basic += s == VarStatus::Basic;
    if (basic != m_) return false;
    q_.clear();
    r_.clear();
    std::fill(qpos_.begin(), qpos_.end(), -1);
    std::fill(rpos_.begin(), rpos_.end(), -1);
    for (Index j = 0; j < n_; ++j) {
      if (b.structural[static_cast<std::size_t>(j)] == VarStatus::Basic) {
        st_[j] = VarStatus::Basic;
        qpos_[j] = k();
        q_.push_back(j);
      } else {
        place_nonbasic(j, b.structural[static_cast<std::size_t>(j)]);
      }
    }
    for (Index i = 0; i < m_; ++i) {
      if (b.logical[static_cast<std::size_t>(i)] == VarStatus::Basic) {
        st_[n_ + i] = VarStatus::Basic;
      } else {
        place_nonbasic(n_ + i, b.logical[static_cast<std::size_t>(i)]);
        rpos_[i] = static_cast<Index>(r_.size());
        r_.push_back(i);
      }
    }
    return refactor();
  }

  /// Rebuilds the kernel inverse from scratch; false if singular.
  bool refactor() {
    const Index kk = k();
    updates_ = 0;
    if (kk == 0) {
      recompute_basics();
      return true;
    }
    Eigen::MatrixXd kern(kk, kk);
    for (Index b = 0; b < kk; ++b)
      for (Index qa = 0; qa < kk; ++qa) kern(b, qa) = a(r_[b], q_[qa]);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(kern);
    const auto& u = lu.matrixLU();
    double umax = 0.0, umin = kInf;
    for (Index i = 0; i < kk; ++i) {
      umax = std::max(umax, std::abs(u(i, i)));
      umin = std::min(umin, std::abs(u(i, i)));
    }
    if (!(umin > 1e-13 * std::max(1.0, umax))) return false;
    const Eigen::MatrixXd inv = lu.inverse();
    ensure_capacity(kk);
    for (Index qa = 0; qa < kk; ++qa)
      for (Index b = 0; b < kk; ++b) kinv(qa, b) = inv(qa, b);
    recompute_basics();
    return true;
  }

  /// Basic values from the nonbasic ones: kernel solve for structurals, row
  /// activities for logicals.
  void recompute_basics() {
    const Index kk = k();
    if (kk > 0) {
      std::vector<double> rhs(static_cast<std::size_t>(kk));
      for (Index b = 0; b < kk; ++b) {
        const Index i = r_[b];
        double s = x_[n_ + i];
        const double* row = a_ + i * n_;
        for (Index j = 0; j < n_; ++j)
          if (st_[j] != VarStatus::Basic && x_[j] != 0.0) s -= row[j] * x_[j];
        rhs[static_cast<std::size_t>(b)] = s;
      }
      for (Index qa = 0; qa < kk; ++qa) {
        double s = 0.0;
        for (Index b = 0; b < kk; ++b) s += kinv(qa, b) * rhs[static_cast<std::size_t>(b)];
        x_[q_[qa]] = s;
      }
    }
    std::vector<double> act(static_cast<std::size_t>(m_), 0.0);
    for (Index j = 0; j < n_; ++j) {
      const double v = x_[j];
      if (v == 0.0) continue;
      const double* col = acol_.data() + j * m_;
      for (Index i = 0; i < m_; ++i) act[static_cast<std::size_t>(i)] += v * col[i];
    }
    for (Index i = 0; i < m_; ++i)
      if (rpos_[i] < 0) x_[n_ + i] = act[static_cast<std::size_t>(i)];
  }

  /// Fills work_cost_ with the phase-1 infeasibility gradient when any basic
  /// variable is out of bounds, otherwise with the true costs.
  bool build_phase_costs() {
    bool infeasible = false;
    const auto nt = n_ + m_;
    for (Index j = 0; j < nt; ++j) {
      work_cost_[j] = 0.0;
      if (st_[j] != VarStatus::Basic) continue;
      if (x_[j] < lo_[j] - ftol(lo_[j])) {
        work_cost_[j] = -1.0;
        infeasible = true;
      } else if (x_[j] > up_[j] + ftol(up_[j])) {
        work_cost_[j] = 1.0;
        infeasible = true;
      }
    }
    if (!infeasible)
      for (Index j = 0; j < n_; ++j) work_cost_[j] = c_[j];
    return infeasible;
  }

  /// Solves B^T y = cost_B.
  void btran(const std::vector<double>& cost) {
    const Index kk = k();
    sparse_yp_.clear();
    for (Index i = 0; i < m_; ++i) {
      y_[i] = 0.0;
      if (rpos_[i] < 0 && cost[n_ + i] != 0.0) {
        y_[i] = -cost[n_ + i];
        sparse_yp_.push_back(i);
      }
    }
    if (kk == 0) return;
    std::vector<double> rhs(static_cast<std::size_t>(kk));
    for (Index qa = 0; qa < kk; ++qa) {
      const Index j = q_[qa];
      double s = cost[j];
      for (Index i : sparse_yp_) s -= a(i, j) * y_[i];
      rhs[static_cast<std::size_t>(qa)] = s;
    }
    std::vector<double> out(static_cast<std::size_t>(kk), 0.0);
    for (Index qa = 0; qa < kk; ++qa) {
      const double v = rhs[static_cast<std::size_t>(qa)];
      if (v == 0.0) continue;
      const double* kr = kinv_.data() + qa * cap_;
      for (Index b = 0; b < kk; ++b) out[static_cast<std::size_t>(b)] += v * kr[b];
    }
    for (Index b = 0; b < kk; ++b) y_[r_[b]] = out[static_cast<std::size_t>(b)];
  }

  Index price(const std::vector<double>& cost, bool bland) {
    row_combination(y_, acc_);
    Index best = -1;
    double best_score = 0.0;
    auto consider = [&](Index j, double dj) {
      d_[j] = dj;
      const auto s = st_[j];
      if (s == VarStatus::Basic || !(up_[j] > lo_[j])) return;
      const double tol = j < n_ ? ctol(j) : opt_.tol_cost;
      bool eligible = false;
      if (s == VarStatus::AtLower) eligible = dj < -tol;
      else if (s == VarStatus::AtUpper) eligible = dj > tol;
      else eligible = std::abs(dj) > tol;
      if (!eligible) return;
      if (bland) {
        if (best < 0) best = j;
        return;
      }
      const double score = dj * dj / weight_[j];
      if (score > best_score) {
        best_score = score;
        best = j;
      }
    };
    for (Index j = 0; j < n_; ++j) consider(j, cost[j] - acc_[j]);
    for (Index i = 0; i < m_; ++i) consider(n_ + i, cost[n_ + i] + y_[i]);
    return best;
  }

  /// out_j = sum_i w_i a_ij over the sparse rows.
  void row_combination(const std::vector<double>& w, std::vector<double>& out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (Index i = 0; i < m_; ++i) {
      const double wi = w[i];
      if (wi == 0.0) continue;
      for (Index e = row_start_[i]; e < row_start_[i + 1]; ++e) out[nz_col_[e]] += wi * nz_val_[e];
    }
    if (has_twins_)
      for (Index j = 0; j < n_; ++j) {
        const Index tw = twin_[static_cast<std::size_t>(j)];
        if (tw >= 0 && tw < j) out[j] = -out[tw];
      }
  }

  /// Devex reference weights, updated from the pivot row of `leave`.
  void update_weights(Index enter, Index leave) {
    std::fill(rho_.begin(), rho_.end(), 0.0);
    double alpha_r = 0.0;
    if (leave < n_) {
      const Index qa = qpos_[leave];
      const double* kr = kinv_.data() + qa * cap_;
      for (Index b = 0; b < k(); ++b) rho_[r_[b]] = kr[b];
      alpha_r = alpha_q_[static_cast<std::size_t>(qa)];
    } else {
      const Index i = leave - n_;
      const auto g = row_times_kinv(i);
      for (Index b = 0; b < k(); ++b) rho_[r_[b]] = g[static_cast<std::size_t>(b)];
      rho_[i] = -1.0;
      alpha_r = alpha_p_[i];
    }
    if (std::abs(alpha_r) < 1e-12) return;
    row_combination(rho_, acc_);
    const double wq = weight_[enter];
    const double base = wq / (alpha_r * alpha_r);
    for (Index j = 0; j < n_ + m_; ++j) {
      if (st_[j] == VarStatus::Basic || j == enter) continue;
      const double arj = j < n_ ? acc_[j] : -rho_[j - n_];
      if (arj == 0.0) continue;
      weight_[j] = std::max(weight_[j], arj * arj * base);
    }
    weight_[leave] = std::max(base, 1.0);
    if (weight_[leave] > 1e6) std::fill(weight_.begin(), weight_.end(), 1.0);
  }

  /// alpha = B^{-1} a_enter, split into the kernel part and basic logicals.
  void ftran(Index enter) {
    const Index kk = k();
    alpha_q_.assign(static_cast<std::size_t>(kk), 0.0);
    if (enter < n_) {
      std::vector<double> col(static_cast<std::size_t>(kk));
      for (Index b = 0; b < kk; ++b) col[static_cast<std::size_t>(b)] = a(r_[b], enter);
      for (Index qa = 0; qa < kk; ++qa) {
        double s = 0.0;
        for (Index b = 0; b < kk; ++b) s += kinv(qa, b) * col[static_cast<std::size_t>(b)];
        alpha_q_[static_cast<std::size_t>(qa)] = s;
      }
    } else {
      const Index b0 = rpos_[enter - n_];
      for (Index qa = 0; qa < kk; ++qa) alpha_q_[static_cast<std::size_t>(qa)] = -kinv(qa, b0);
    }
    if (k() == m_) return;
    if (enter < n_) {
      const double* col = acol_.data() + enter * m_;
      for (Index i = 0; i < m_; ++i) alpha_p_[i] = -col[i];
    } else {
      std::fill(alpha_p_.begin(), alpha_p_.end(), 0.0);
    }
    for (Index qa = 0; qa < kk; ++qa) {
      const double w = alpha_q_[static_cast<std::size_t>(qa)];
      if (w == 0.0) continue;
      const double* col = acol_.data() + q_[qa] * m_;
      for (Index i = 0; i < m_; ++i) alpha_p_[i] += w * col[i];
    }
  }

  Step ratio_test(Index enter, double dir, bool phase1, bool bland) {
    constexpr double kPivotTol = 1e-9;
    std::vector<Cand>& cands = cands_;
    cands.clear();
    auto check = [&](Index var, double alpha) {
      if (std::abs(alpha) <= kPivotTol) return;
      const double delta = -dir * alpha;
      const double xv = x_[var], lo = lo_[var], up = up_[var];
      if (delta < 0.0) {
        if (phase1 && xv > up + ftol(up)) cands.push_back({var, delta, xv - up, true});
        else if (std::isfinite(lo) && xv >= lo - ftol(lo)) cands.push_back({var, delta, xv - lo, false});
      } else {
        if (phase1 && xv < lo - ftol(lo)) cands.push_back({var, delta, lo - xv, false});
        else if (std::isfinite(up) && xv <= up + ftol(up)) cands.push_back({var, delta, up - xv, true});
      }
    };
    for (Index qa = 0; qa < k(); ++qa) check(q_[qa], alpha_q_[static_cast<std::size_t>(qa)]);
    for (Index i = 0; i < m_; ++i)
      if (rpos_[i] < 0) check(n_ + i, alpha_p_[i]);

    const double range = up_[enter] - lo_[enter];
    Step step;
    if (cands.empty()) {
      if (std::isfinite(range)) {
        step.kind = StepKind::Flip;
        step.t = range;
      }
      return step;
    }
    if (has_twins_ && !phase1 && !bland) return long_step(enter, dir, range);
    // Harris pass 1: largest step keeping every candidate within tolerance.
    double tmax = kInf;
    for (const auto& c : cands) {
      const double bound = c.to_upper ? up_[c.var] : lo_[c.var];
      tmax = std::min(tmax, (std::max(c.dist, 0.0) + ftol(bound)) / std::abs(c.delta));
    }
    if (std::isfinite(range) && range <= tmax) {
      step.kind = StepKind::Flip;
      step.t = range;
      return step;
    }
    const Cand* chosen = nullptr;
    if (bland) {
      double tmin = kInf;
      for (const auto& c : cands) tmin = std::min(tmin, std::max(c.dist, 0.0) / std::abs(c.delta));
      for (const auto& c : cands) {
        const double t = std::max(c.dist, 0.0) / std::abs(c.delta);
        if (t <= tmin + 1e-12 && (chosen == nullptr || c.var < chosen->var)) chosen = &c;
      }
    } else {
      for (const auto& c : cands) {
        const double t = std::max(c.dist, 0.0) / std::abs(c.delta);
        if (t > tmax) continue;
        if (chosen == nullptr || std::abs(c.delta) > std::abs(chosen->delta)) chosen = &c;
      }
    }
    step.kind = StepKind::Pivot;
    step.t = std::max(chosen->dist, 0.0) / std::abs(chosen->delta);
    step.leave = chosen->var;
    step.leave_to_upper = chosen->to_upper;
    return step;
  }

  /// Ratio test that walks the breakpoints in order and carries a basic
  /// split variable through zero onto its twin while the objective keeps
  /// decreasing; the slope rises by |delta| (c_j + c_twin) at each crossing.
  Step long_step(Index enter, double dir, double range) {
    auto ratio = [](const Cand& c) { return std::max(c.dist, 0.0) / std::abs(c.delta); };
    // Min-heap on the breakpoint; most walks stop after a few entries.
    auto later = [&](const Cand& a, const Cand& b) {
      const double ta = ratio(a), tb = ratio(b);
      return ta > tb || (ta == tb && a.var > b.var);
    };
    std::make_heap(cands_.begin(), cands_.end(), later);
    double slope = d_[enter] * dir;
    passed_.clear();
    Step step;
    for (auto end = cands_.end(); end != cands_.begin(); --end) {
      std::pop_heap(cands_.begin(), end, later);
      const Cand c = *(end - 1);
      const double t = ratio(c);
      if (std::isfinite(range) && range <= t) break;
      const Index tw = c.var < n_ ? twin_[static_cast<std::size_t>(c.var)] : -1;
      if (tw >= 0 && tw != enter && !c.to_upper) {
        const double next = slope + std::abs(c.delta) * (c_[c.var] + c_[tw]);
        if (next < -opt_.tol_cost) {
          slope = next;
          passed_.push_back(c.var);
          continue;
        }
      }
      step.kind = StepKind::Pivot;
      step.t = t;
      step.leave = c.var;
      step.leave_to_upper = c.to_upper;
      return step;
    }
    if (std::isfinite(range)) {
      step.kind = StepKind::Flip;
      step.t = range;
    }
    return step;
  }

  /// Replaces each passed basic variable by its twin in the same basis slot;
  /// the column changes sign, so the matching kernel-inverse row does too.
  void swap_passed_twins() {
    for (Index v : passed_) {
      const Index tw = twin_[static_cast<std::size_t>(v)];
      const Index qa = qpos_[v];
      x_[tw] = -x_[v];
      x_[v] = 0.0;
      st_[v] = VarStatus::AtLower;
      st_[tw] = VarStatus::Basic;
      qpos_[v] = -1;
      qpos_[tw] = qa;
      q_[qa] = tw;
      double* kr = kinv_.data() + qa * cap_;
      for (Index b = 0; b < k(); ++b) kr[b] = -kr[b];
      alpha_q_[static_cast<std::size_t>(qa)] = -alpha_q_[static_cast<std::size_t>(qa)];
    }
    passed_.clear();
  }

  void apply_step(Index enter, double dir, const Step& step) {
    const double t = step.t;
    if (t != 0.0) {
      x_[enter] += dir * t;
      for (Index qa = 0; qa < k(); ++qa) x_[q_[qa]] -= dir * t * alpha_q_[static_cast<std::size_t>(qa)];
      for (Index i = 0; i < m_; ++i)
        if (rpos_[i] < 0) x_[n_ + i] -= dir * t * alpha_p_[i];
    }
    swap_passed_twins();
    if (step.kind == StepKind::Flip) {
      st_[enter] = dir > 0 ? VarStatus::AtUpper : VarStatus::AtLower;
      x_[enter] = dir > 0 ? up_[enter] : lo_[enter];
      return;
    }
    const Index leave = step.leave;
    pivot(enter, leave);
    st_[enter] = VarStatus::Basic;
    st_[leave] = step.leave_to_upper ? VarStatus::AtUpper : VarStatus::AtLower;
    x_[leave] = step.leave_to_upper ? up_[leave] : lo_[leave];
    ++updates_;
  }

  /// g_b = sum_a A[row, Q[a]] * Kinv(a, b)
  std::vector<double> row_times_kinv(Index row) const {
    const Index kk = k();
    std::vector<double> g(static_cast<std::size_t>(kk), 0.0);
    const double* arow = a_ + row * n_;
    for (Index qa = 0; qa < kk; ++qa) {
      const double v = arow[q_[qa]];
      if (v == 0.0) continue;
      const double* kr = kinv_.data() + qa * cap_;
      for (Index b = 0; b < kk; ++b) g[static_cast<std::size_t>(b)] += v * kr[b];
    }
    return g;
  }

  void pivot(Index enter, Index leave) {
    const bool enter_struct = enter < n_;
    const bool leave_struct = leave < n_;
    const Index kk = k();
    if (enter_struct && !leave_struct) {
      // Kernel grows by row `i` and column `enter`.
      const Index i = leave - n_;
      const auto zrow = row_times_kinv(i);
      const double s = -alpha_p_[i];
      ensure_capacity(kk + 1);
      for (Index qa = 0; qa < kk; ++qa) {
        const double wa = alpha_q_[static_cast<std::size_t>(qa)] / s;
        double* kr = kinv_.data() + qa * cap_;
        for (Index b = 0; b < kk; ++b) kr[b] += wa * zrow[static_cast<std::size_t>(b)];
        kr[kk] = -wa;
      }
      double* last = kinv_.data() + kk * cap_;
      for (Index b = 0; b < kk; ++b) last[b] = -zrow[static_cast<std::size_t>(b)] / s;
      last[kk] = 1.0 / s;
      qpos_[enter] = kk;
      q_.push_back(enter);
      rpos_[i] = kk;
      r_.push_back(i);
    } else if (enter_struct && leave_struct) {
      const Index a0 = qpos_[leave];
      const double piv = alpha_q_[static_cast<std::size_t>(a0)];
      double* r0 = kinv_.data() + a0 * cap_;
      for (Index b = 0; b < kk; ++b) r0[b] /= piv;
      for (Index qa = 0; qa < kk; ++qa) {
        if (qa == a0) continue;
        const double w = alpha_q_[static_cast<std::size_t>(qa)];
        if (w == 0.0) continue;
        double* kr = kinv_.data() + qa * cap_;
        for (Index b = 0; b < kk; ++b) kr[b] -= w * r0[b];
      }
      qpos_[leave] = -1;
      qpos_[enter] = a0;
      q_[a0] = enter;
    } else if (!enter_struct && leave_struct) {
      // Kernel loses row `enter - n_` and column `leave`.
      const Index r = enter - n_;
      const Index b0 = rpos_[r];
      const Index a0 = qpos_[leave];
      const double h = kinv(a0, b0);
      const double* g = kinv_.data() + a0 * cap_;
      for (Index qa = 0; qa < kk; ++qa) {
        if (qa == a0) continue;
        double* kr = kinv_.data() + qa * cap_;
        const double f = kr[b0] / h;
        if (f == 0.0) continue;
        for (Index b = 0; b < kk; ++b) kr[b] -= f * g[b];
      }
      const Index last = kk - 1;
      // Move the last column position into b0 and the last row position into a0.
      for (Index qa = 0; qa < kk; ++qa) kinv(qa, b0) = kinv(qa, last);
      for (Index b = 0; b < kk; ++b) kinv(a0, b) = kinv(last, b);
      const Index moved_row = r_[last];
      r_[b0] = moved_row;
      rpos_[moved_row] = b0;
      r_.pop_back();
      rpos_[r] = -1;
      const Index moved_var = q_[last];
      q_[a0] = moved_var;
      qpos_[moved_var] = a0;
      q_.pop_back();
      qpos_[leave] = -1;
    } else {
      // Row replacement inside the kernel.
      const Index r = enter - n_;
      const Index i = leave - n_;
      const Index b0 = rpos_[r];
      const auto g = row_times_kinv(i);
      const double g0 = g[static_cast<std::size_t>(b0)];
      for (Index qa = 0; qa < kk; ++qa) {
        double* kr = kinv_.data() + qa * cap_;
        const double cval = kr[b0] / g0;
        for (Index b = 0; b < kk; ++b)
          if (b != b0) kr[b] -= cval * g[static_cast<std::size_t>(b)];
        kr[b0] = cval;
      }
      r_[b0] = i;
      rpos_[i] = b0;
      rpos_[r] = -1;
    }
  }

  void finish(LpSolution& sol, Status status, Index iter) {
    recompute_basics();
    sol.status = status;
    sol.iterations = iter;
    sol.x.resize(n_);
    for (Index j = 0; j < n_; ++j) {
      double v = x_[j];
      if (status == Status::Optimal) v = std::clamp(v, lo_[j], up_[j]);
      sol.x[j] = v;
    }
    const double flip = prob_.sense() == Sense::Maximize ? -1.0 : 1.0;
    sol.objective = prob_.cost().dot(sol.x);
    sol.row_activity.resize(m_);
    for (Index i = 0; i < m_; ++i) {
      const double* row = a_ + i * n_;
      double s = 0.0;
      for (Index j = 0; j < n_; ++j)
        if (sol.x[j] != 0.0) s += row[j] * sol.x[j];
      sol.row_activity[i] = s;
    }
    // Duals of the true objective at the final basis.
    for (Index j = 0; j < n_ + m_; ++j) work_cost_[j] = j < n_ ? c_[j] : 0.0;
    btran(work_cost_);
    sol.row_duals.resize(m_);
    for (Index i = 0; i < m_; ++i) sol.row_duals[i] = flip * y_[i];
    sol.reduced_costs.resize(n_);
    row_combination(y_, acc_);
    for (Index j = 0; j < n_; ++j) sol.reduced_costs[j] = flip * (c_[j] - acc_[j]);
    sol.basis.structural.assign(st_.begin(), st_.begin() + n_);
    sol.basis.logical.assign(st_.begin() + n_, st_.end());
  }

  const LpProblem& prob_;
  SolverOptions opt_;
  Index m_, n_;
  const double* a_;
  std::vector<double> c_, lo_, up_, x_;
  std::vector<VarStatus> st_;
  std::vector<Index> q_, qpos_, r_, rpos_;
  std::vector<double> kinv_;
  Index cap_ = 0;
  Index updates_ = 0;
  std::vector<double> y_, d_, acc_, alpha_q_, alpha_p_, work_cost_;
  std::vector<Index> sparse_yp_;
  std::vector<Cand> cands_;
  std::vector<Index> twin_, passed_;
  bool has_twins_ = false;
  std::vector<Index> row_start_, nz_col_;
  std::vector<double> nz_val_, weight_, rho_;
  // Column-major copy of the constraint matrix.
  std::vector<double> acol_;
};

}  // namespace detail

/// Solves the LP; `warm` (optional) is a basis from an earlier solve of a
/// problem with the same shape. A warm basis that is malformed or singular
/// falls back to the all-logical basis.
inline LpSolution solve_bounded_lp(const LpProblem& problem, const SolverOptions& options = {},
                                   const Basis* warm = nullptr) {
  problem.validate();
  if (!(options.tol_feas > 0.0) || !(options.tol_cost > 0.0))
    throw std::invalid_argument("solve_bounded_lp: tolerances must be positive");
  detail::BoundedSimplex simplex(problem, options);
  return simplex.run(warm);
}

/// Owns a problem together with its factorized basis, so that a sequence of
/// cost changes re-enters the simplex from the previous optimum instead of
/// refactoring from a stored basis.
class Resolver {
 public:
  explicit Resolver(LpProblem problem, const SolverOptions& options = {})
      : prob_(std::make_unique<LpProblem>(std::move(problem))), opt_(options) {
    prob_->validate();
    if (!(opt_.tol_feas > 0.0) || !(opt_.tol_cost > 0.0))
      throw std::invalid_argument("Resolver: tolerances must be positive");
  }

  const LpProblem& problem() const { return *prob_; }

  void set_cost(Index j, double c) {
    if (!std::isfinite(c)) throw std::invalid_argument("Resolver: non-finite cost");
    prob_->cost()[j] = c;
    if (simplex_) simplex_->set_cost(j, c);
  }

  /// The first call starts from `warm` (or the all-logical basis); later
  /// calls ignore `warm` and continue from the current basis.
  LpSolution solve(const Basis* warm = nullptr) {
    if (!simplex_) {
      simplex_ = std::make_unique<detail::BoundedSimplex>(*prob_, opt_);
      return simplex_->run(warm);
    }
    return simplex_->resume();
  }

 private:
  std::unique_ptr<LpProblem> prob_;
  SolverOptions opt_;
  std::unique_ptr<detail::BoundedSimplex> simplex_;
};

/// Objective of the Lagrangian dual implied by the row duals and reduced
/// costs: each multiplier is paired with the bound its sign selects. Equal to
/// the primal objective at an optimal basis.
inline double dual_objective(const LpProblem& problem, const LpSolution& sol) {
  const double flip = problem.sense() == Sense::Maximize ? -1.0 : 1.0;
  auto pick = [flip](double mult, double lo, double up, double at) {
    const double mm = flip * mult;
    if (mm > 0.0) return std::isfinite(lo) ? mult * lo : (mult * at);
    if (mm < 0.0) return std::isfinite(up) ? mult * up : (mult * at);
    return 0.0;
  };
  double total = 0.0;
  for (Index i = 0; i < problem.num_rows(); ++i)
    total += pick(sol.row_duals[i], problem.row_lower(i), problem.row_upper(i), sol.row_activity[i]);
  for (Index j = 0; j < problem.num_vars(); ++j)
    total += pick(sol.reduced_costs[j], problem.bound(j).lower, problem.bound(j).upper, sol.x[j]);
  return total;
}

/// Largest violation of any row or variable bound by `x`.
inline double max_violation(const LpProblem& problem, const Eigen::VectorXd& x) {
  double worst = 0.0;
  for (Index j = 0; j < problem.num_vars(); ++j) {
    worst = std::max(worst, problem.bound(j).lower - x[j]);
    worst = std::max(worst, x[j] - problem.bound(j).upper);
  }
  for (Index i = 0; i < problem.num_rows(); ++i) {
    const auto row = problem.row(i);
    double act = 0.0;
    for (Index j = 0; j < problem.num_vars(); ++j) act += row[static_cast<std::size_t>(j)] * x[j];
    worst = std::max(worst, problem.row_lower(i) - act);
    worst = std::max(worst, act - problem.row_upper(i));
  }
  return worst;
}

}  // namespace hdqr::lp
