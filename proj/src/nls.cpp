#include "linode/nls.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <type_traits>
#include <deque>
#include <sstream>

#include "linode/error.hpp"

namespace linode {

namespace {

void require_compatible(const ThetaVec& theta, const ObservationSet& obs) {
  if (theta.dim() != obs.dim()) {
    std::ostringstream os;
    os << "parameter dimension " << theta.dim() << " does not match observation dimension " << obs.dim();
    throw Error(ErrorCode::Dimension, os.str());
  }
}

template <typename Scalar>
Scalar divided_difference_any(Scalar lp, Scalar lq, Scalar ep, Scalar eq, double t) {
  const Scalar gap = lp - lq;
  if (std::abs(gap * t) > 0.1) return (ep - eq) / gap;
  // e_q t (e^{gap t} - 1) / (gap t) by its Taylor series
  const Scalar z = gap * t;
  Scalar term(1.0), series(1.0);
  for (int m = 2; m <= 12; ++m) {
    term *= z / static_cast<double>(m);
    series += term;
  }
  return eq * t * series;
}

double real_part(double v) { return v; }
double real_part(const std::complex<double>& v) { return v.real(); }

// Works for a real eigenbasis and for a complex one of a real matrix; every
// transpose is the plain (bilinear) one, so the imaginary parts cancel.
template <typename Scalar>
ObjectiveEval evaluate_eigenbasis(const SystemParams& p, const Eigen::Matrix<Scalar, -1, -1>& q,
                                  const Eigen::Matrix<Scalar, -1, 1>& lambdas,
                                  const Eigen::Matrix<Scalar, -1, -1>& q_inv, const ObservationSet& obs,
                                  bool with_gradient) {
  using Mat = Eigen::Matrix<Scalar, -1, -1>;
  using Vec = Eigen::Matrix<Scalar, -1, 1>;
  const int d = p.dim();
  const int n = obs.size();
  const Vec x_hat = q_inv * p.x0.cast<Scalar>();
  const Matrix& y = obs.values();
  const Mat q_t = q.transpose();
  const Scalar* lam = lambdas.data();

  double sum = 0.0;
  Mat m_acc = Mat::Zero(d, d);
  Vec gx_acc = Vec::Zero(d);
  Vec growth(d), w_hat(d);
  Vector resid(d);
  for (int i = 0; i < n; ++i) {
    const double t = obs.time(i);
    for (int a = 0; a < d; ++a) growth(a) = std::exp(lam[a] * t);
    for (int r = 0; r < d; ++r) {
      Scalar fitted(0.0);
      for (int a = 0; a < d; ++a) fitted += q(r, a) * growth(a) * x_hat(a);
      resid(r) = y(r, i) - real_part(fitted);
    }
    sum += resid.squaredNorm();
    if (!with_gradient) continue;
    // w_i = -2 r_i / n, expressed in the eigenbasis
    w_hat.noalias() = q_t * resid.cast<Scalar>();
    w_hat *= -2.0 / n;
    gx_acc += growth.cwiseProduct(w_hat);
    for (int b = 0; b < d; ++b) {
      for (int a = 0; a < d; ++a) {
        Scalar u;
        if (a == b) {
          u = t * growth(a);
        } else if constexpr (std::is_same_v<Scalar, double>) {
          u = divided_difference(lam[a], lam[b], growth(a), growth(b), t);
        } else {
          u = divided_difference_any(lam[a], lam[b], growth(a), growth(b), t);
        }
        m_acc(a, b) += w_hat(a) * x_hat(b) * u;
      }
    }
  }

  ObjectiveEval out;
  out.value = sum / n;
  if (with_gradient) {
    out.grad.resize(d + d * d);
    const Vec gx = q_inv.transpose() * gx_acc;
    const Mat ga = q_inv.transpose() * m_acc * q_t;
    for (int j = 0; j < d; ++j) {
      out.grad(j) = real_part(gx(j));
      for (int k = 0; k < d; ++k) out.grad(ThetaVec::index_of(d, j, k)) = real_part(ga(j, k));
    }
  }
  return out;
}

// Complex diagonalization of A, or nothing when the eigenbasis is close to
// defective.
struct ComplexDecomp {
  Eigen::MatrixXcd Q, Q_inv;
  Eigen::VectorXcd lambdas;
};

std::optional<ComplexDecomp> eig_complex(const Matrix& a) {
  Eigen::EigenSolver<Matrix> solver(a, true);
  if (solver.info() != Eigen::Success) return std::nullopt;
  ComplexDecomp out;
  out.lambdas = solver.eigenvalues();
  const double scale = std::max(1.0, out.lambdas.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < out.lambdas.size(); ++i)
    for (Eigen::Index j = i + 1; j < out.lambdas.size(); ++j)
      if (std::abs(out.lambdas(i) - out.lambdas(j)) < kDefaultSeparationTol * scale) return std::nullopt;
  out.Q = solver.eigenvectors();
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(out.Q);
  out.Q_inv = lu.inverse();
  if (!out.Q_inv.allFinite() || out.Q.norm() * out.Q_inv.norm() >= Propagator::kMaxBasisCondition)
    return std::nullopt;
  return out;
}

// Gradient w.r.t. A of <W, e^{At}> is t L(A^T t, W); one 2d x 2d expm per time.
ObjectiveEval evaluate_general(const SystemParams& p, const ObservationSet& obs, bool with_gradient) {
  const int d = p.dim();
  const int n = obs.size();
  const Matrix& y = obs.values();
  double sum = 0.0;
  Matrix ga = Matrix::Zero(d, d);
  Vector gx = Vector::Zero(d);
  Matrix block = Matrix::Zero(2 * d, 2 * d);
  for (int i = 0; i < n; ++i) {
    const double t = obs.time(i);
    const Matrix prop = expm(p.A * t);
    const Vector resid = y.col(i) - prop * p.x0;
    sum += resid.squaredNorm();
    if (with_gradient && t != 0.0) {
      const Vector w = resid * (-2.0 / n);
      gx += prop.transpose() * w;
      block.topLeftCorner(d, d) = p.A.transpose() * t;
      block.bottomRightCorner(d, d) = p.A.transpose() * t;
      block.topRightCorner(d, d) = (w * p.x0.transpose()) * t;
      ga += expm(block).topRightCorner(d, d);
    } else if (with_gradient) {
      gx += resid * (-2.0 / n);
    }
  }
  ObjectiveEval out;
  out.value = sum / n;
  if (with_gradient) {
    out.grad.resize(d + d * d);
    out.grad.head(d) = gx;
    for (int j = 0; j < d; ++j)
      for (int k = 0; k < d; ++k) out.grad(ThetaVec::index_of(d, j, k)) = ga(j, k);
  }
  return out;
}

}  // namespace

ObjectiveEval evaluate_objective(const ThetaVec& theta, const ObservationSet& obs, bool with_gradient) {
  require_compatible(theta, obs);
  const SystemParams p = theta.unpack();
  const Propagator prop(p.A);
  if (const EigenDecomp* eig = prop.spectral())
    return evaluate_eigenbasis<double>(p, eig->Q, eig->lambdas, eig->Q_inv, obs, with_gradient);
  if (const auto cd = eig_complex(p.A))
    return evaluate_eigenbasis<std::complex<double>>(p, cd->Q, cd->lambdas, cd->Q_inv, obs, with_gradient);
  return evaluate_general(p, obs, with_gradient);
}

double objective(const ThetaVec& theta, const ObservationSet& obs) {
  return evaluate_objective(theta, obs, false).value;
}

ThetaVec gradient(const ThetaVec& theta, const ObservationSet& obs) {
  return ThetaVec(evaluate_objective(theta, obs, true).grad);
}

Matrix dexpm_da_spectral(const EigenDecomp& eig, double t, int j, int k) {
  const Matrix inner = eig.Q_inv.col(j) * eig.Q.row(k);
  const Matrix u = divided_difference_matrix(eig.lambdas, t);
  return eig.Q * inner.cwiseProduct(u) * eig.Q_inv;
}

Matrix dexpm_da_block(const Matrix& A, double t, int j, int k) {
  require_square(A, "dexpm_da");
  Matrix e = Matrix::Zero(A.rows(), A.cols());
  e(j, k) = t;
  return expm_frechet(A * t, e);
}

Matrix dexpm_da(const Matrix& A, double t, int j, int k) {
  require_square(A, "dexpm_da");
  if (j < 0 || k < 0 || j >= A.rows() || k >= A.rows()) throw Error(ErrorCode::Dimension, "dexpm_da: index");
  const Propagator prop(A);
  if (const EigenDecomp* eig = prop.spectral()) return dexpm_da_spectral(*eig, t, j, k);
  return dexpm_da_block(A, t, j, k);
}

FitOptions FitOptions::around(const ThetaVec& center, double halfwidth, double offset) {
  FitOptions o;
  o.lower = center.values().array() - halfwidth;
  o.upper = center.values().array() + halfwidth;
  Vector init = center.values().array() - offset;
  o.init = ThetaVec(init.cwiseMax(o.lower).cwiseMin(o.upper));
  return o;
}

FitOptions FitOptions::with_default_bounds(const ThetaVec& init) {
  FitOptions o;
  o.lower = init.values().array() - 10.0;
  o.upper = init.values().array() + 10.0;
  o.init = init;
  return o;
}

void FitOptions::validate() const {
  const auto m = init.size();
  if (m == 0 || lower.size() != m || upper.size() != m)
    throw Error(ErrorCode::Dimension, "FitOptions: bounds and init must have matching lengths");
  if ((lower.array() > init.values().array()).any() || (init.values().array() > upper.array()).any())
    throw Error(ErrorCode::Domain, "FitOptions: need lower <= init <= upper");
  if (!(grad_tol > 0.0) || !(step_tol > 0.0) || max_iters < 0 || memory < 1)
    throw Error(ErrorCode::Domain, "FitOptions: tolerances must be positive");
}

namespace {

std::string describe(const Vector& x) {
  std::ostringstream os;
  os << "[";
  for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x(i);
  os << "]";
  return os.str();
}

// The search runs in u = (theta - lower) / width, so the unit box [0, ub] is
// the same for any positive diagonal rescaling of theta that maps the box.
class Scaled {
 public:
  Scaled(const ObservationSet& obs, const FitOptions& opts) : obs_(obs), lower_(opts.lower), upper_(opts.upper) {
    width_ = (upper_ - lower_).unaryExpr([](double w) { return w > 0.0 ? w : 1.0; });
    ub_ = (upper_ - lower_).cwiseQuotient(width_);
  }

  Vector to_u(const Vector& theta) const { return (theta - lower_).cwiseQuotient(width_); }
  Vector to_theta(const Vector& u) const {
    Vector theta = lower_ + width_.cwiseProduct(u);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (u(i) <= 0.0) theta(i) = lower_(i);
      if (u(i) >= ub_(i)) theta(i) = upper_(i);
    }
    return theta;
  }
  Vector project(const Vector& u) const { return u.cwiseMax(0.0).cwiseMin(ub_); }
  Vector projected_gradient(const Vector& u, const Vector& g) const { return project(u - g) - u; }
  bool pinned(const Vector& u, const Vector& g, Eigen::Index i) const {
    return (u(i) <= 0.0 && g(i) > 0.0) || (u(i) >= ub_(i) && g(i) < 0.0);
  }
  bool on_bound(const Vector& u, Eigen::Index i) const { return u(i) <= 0.0 || u(i) >= ub_(i); }

  ObjectiveEval eval(const Vector& u) const {
    ObjectiveEval e = evaluate_objective(ThetaVec(to_theta(u)), obs_, true);
    e.grad = e.grad.cwiseProduct(width_);
    return e;
  }
  ObjectiveEval checked_eval(const Vector& u) const {
    ObjectiveEval e = eval(u);
    if (!std::isfinite(e.value) || !e.grad.allFinite())
      throw Error(ErrorCode::NonFinite, "objective or gradient is not finite at theta = " + describe(to_theta(u)));
    return e;
  }

 private:
  const ObservationSet& obs_;
  Vector lower_, upper_, width_, ub_;
};

Vector scaled_steepest(const Vector& g) {
  return -g * std::min(1.0, 1.0 / std::max(g.lpNorm<Eigen::Infinity>(), 1e-300));
}

}  // namespace

EstimationResult fit(const ObservationSet& obs, const FitOptions& opts) {
  opts.validate();
  require_compatible(opts.init, obs);
  const Scaled box(obs, opts);
  const Eigen::Index m = opts.init.size();

  Vector x = box.project(box.to_u(opts.init.values()));
  ObjectiveEval cur = box.checked_eval(x);

  EstimationResult res;
  res.history.push_back(cur.value);
  std::deque<std::pair<Vector, Vector>> pairs;  // (s, y), newest last

  auto finish = [&](bool converged) {
    res.theta_hat = ThetaVec(box.to_theta(x));
    res.objective = cur.value;
    res.grad_norm = box.projected_gradient(x, cur.grad).lpNorm<Eigen::Infinity>();
    res.converged = converged;
    for (Eigen::Index i = 0; i < m; ++i)
      if (box.on_bound(x, i)) res.active_bounds.push_back(i);
    return res;
  };

  bool steepest_retry = false;
  for (int iter = 0;; ++iter) {
    const double pg_norm = box.projected_gradient(x, cur.grad).lpNorm<Eigen::Infinity>();
    if (pg_norm <= opts.grad_tol) return finish(true);
    if (iter >= opts.max_iters) return finish(false);

    Vector free_mask = Vector::Ones(m);
    for (Eigen::Index i = 0; i < m; ++i)
      if (box.pinned(x, cur.grad, i)) free_mask(i) = 0.0;

    // Two-loop recursion on the free coordinates.
    Vector q = cur.grad.cwiseProduct(free_mask);
    Vector dir;
    if (pairs.empty()) {
      dir = scaled_steepest(q);
    } else {
      std::vector<double> alpha(pairs.size());
      for (std::size_t idx = pairs.size(); idx-- > 0;) {
        const auto& [s, y] = pairs[idx];
        alpha[idx] = s.dot(q) / y.dot(s);
        q -= alpha[idx] * y;
      }
      const auto& [s_last, y_last] = pairs.back();
      q *= s_last.dot(y_last) / y_last.squaredNorm();
      for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
        const auto& [s, y] = pairs[idx];
        const double beta = y.dot(q) / y.dot(s);
        q += (alpha[idx] - beta) * s;
      }
      dir = -q.cwiseProduct(free_mask);
      if (!(cur.grad.dot(dir) < 0.0)) {
        pairs.clear();
        dir = scaled_steepest(cur.grad.cwiseProduct(free_mask));
      }
    }

    // Backtracking along the projection arc.
    const double step_floor = opts.step_tol * (1.0 + x.lpNorm<Eigen::Infinity>());
    double step = 1.0;
    bool accepted = false;
    Vector x_new;
    ObjectiveEval next;
    for (int ls = 0; ls < 80; ++ls, step *= 0.5) {
      x_new = box.project(x + step * dir);
      const Vector delta = x_new - x;
      if (delta.lpNorm<Eigen::Infinity>() <= step_floor) break;
      next = box.eval(x_new);
      if (!std::isfinite(next.value) || !next.grad.allFinite()) continue;
      if (next.value <= cur.value + 1e-4 * cur.grad.dot(delta)) {
        accepted = true;
        break;
      }
    }

    if (!accepted) {
      if (!pairs.empty() && !steepest_retry) {
        // Discard curvature memory and retry from steepest descent.
        pairs.clear();
        steepest_retry = true;
        --iter;
        continue;
      }
      // No resolvable decrease at steps above step_tol.
      return finish(true);
    }
    steepest_retry = false;

    Vector s = x_new - x;
    Vector y = next.grad - cur.grad;
    const double sy = s.dot(y);
    const double s_norm = s.lpNorm<Eigen::Infinity>();
    x = std::move(x_new);
    cur = std::move(next);
    res.history.push_back(cur.value);
    res.iterations = iter + 1;

    if (sy > 1e-12 * y.squaredNorm()) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(pairs.size()) > opts.memory) pairs.pop_front();
    }
    if (s_norm <= step_floor) return finish(true);
  }
}

}  // namespace linode
