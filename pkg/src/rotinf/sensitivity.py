"""Plan sensitivities and limit-law covariances.

The regularized plan, viewed as a function of the reduced marginal vector
(r, s minus its last entry), is differentiable with gradient

    grad_phi = H^{-1} A^T [A H^{-1} A^T]^{-1},

where H is the (diagonal) penalty Hessian at the solved plan and A the
reduced marginal operator. Every covariance here is a congruence of the
multinomial covariance through blocks of this gradient; the covariance of the
plan itself is exposed both as a dense matrix (small instances) and as a
matrix action that samples and multiplies without materializing anything of
size N^2 x N^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import regularizers as rg
from ._util import readonly_array
from .exceptions import NumericalError, ReductionRequiredError
from .solver import TransportPlan, _reduced_gram
from .space import ConstraintOperator, CostVector, Prob

# Largest plan dimension for which N^2 x N^2 covariances are materialized
DENSE_COV_MAX_ENTRIES = 64 * 64

MODES = ("one_sample", "two_sample")


def multinomial_cov(r) -> np.ndarray:
    """Covariance of the multinomial empirical process: diag(r) - r r^T."""
    w = r.weights if isinstance(r, Prob) else np.asarray(r, dtype=float)
    return np.diag(w) - np.outer(w, w)


def _multinomial_quad(w, z) -> float:
    """z^T (diag(w) - w w^T) z without forming the matrix."""
    return float(np.sum(w * z * z) - np.sum(w * z) ** 2)


def _multinomial_factor_apply(w, sqrt_w, Z) -> np.ndarray:
    """Map standard normal rows Z to rows with covariance diag(w) - w w^T."""
    return Z * sqrt_w - np.outer(Z @ sqrt_w, w)


@dataclass(frozen=True)
class SensitivityResult:
    """Gradient of the plan with respect to the reduced marginals."""

    grad_phi: np.ndarray  # (n_rows*n_cols, n_rows+n_cols-1)
    n_rows: int
    n_cols: int

    def __post_init__(self):
        object.__setattr__(self, "grad_phi", readonly_array(self.grad_phi))

    @property
    def grad_phi_r(self) -> np.ndarray:
        """Columns differentiating with respect to the first marginal."""
        return self.grad_phi[:, : self.n_rows]


def _plan_weights(reg: rg.Regularizer, plan: TransportPlan) -> np.ndarray:
    """Inverse Hessian diagonal of the penalty at the plan."""
    if reg.kind == "entropy":
        return np.asarray(plan.entries)
    return 1.0 / rg.hess_diag(reg, plan.entries)


def _gram_factor(reg, plan):
    w = _plan_weights(reg, plan)
    M = _reduced_gram(w.reshape(plan.n_rows, plan.n_cols))
    try:
        return w, cho_factor(M)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"reduced marginal system is numerically singular: {err}") from err


def _apply_adjoint(op: ConstraintOperator, X: np.ndarray) -> np.ndarray:
    """A^T applied to each column of X, shape (n_rows*n_cols, X.shape[1])."""
    Xr = X[: op.n_rows]
    Xc = np.vstack([X[op.n_rows :], np.zeros((1, X.shape[1]))])
    return (Xr[:, None, :] + Xc[None, :, :]).reshape(-1, X.shape[1])


def plan_gradient(reg: rg.Regularizer, plan: TransportPlan) -> SensitivityResult:
    """Gradient of the solved plan with respect to the reduced marginals.

    The reduced system is solved by a symmetric positive-definite
    factorization against the identity; the entropy penalty uses the plan
    entries themselves as the inverse Hessian diagonal.
    """
    n1, n2 = plan.n_rows, plan.n_cols
    w, chol = _gram_factor(reg, plan)
    op = ConstraintOperator(n1, n2)
    X = cho_solve(chol, np.eye(n1 + n2 - 1))
    grad = w[:, None] * _apply_adjoint(op, X)
    return SensitivityResult(grad_phi=grad, n_rows=n1, n_cols=n2)


def entropy_block_schur(plan: TransportPlan) -> np.ndarray:
    """First n_rows columns of the inverse reduced Gram matrix, entropy case.

    The Gram matrix of an entropy plan has blocks [diag(row sums), Pi;
    Pi^T, diag(col sums minus last)] with Pi the plan matrix less its last
    column, so a Schur complement in the row block inverts it directly. The
    blocks are taken from the plan's own marginal sums, which coincide with
    (r, s) up to the solver residual.
    """
    if plan.reg.kind != "entropy":
        raise ValueError("the block-Schur path applies to entropy plans only")
    P = plan.matrix
    rows = P.sum(axis=1)
    cols = P.sum(axis=0)
    s_star = cols[:-1]
    if (s_star <= 0).any():
        raise ReductionRequiredError("column marginal has zero entries; reduce the support first")
    Pi = P[:, :-1]
    K = np.diag(rows) - Pi @ (Pi / s_star).T
    try:
        chol = cho_factor(K)
    except np.linalg.LinAlgError as err:
        raise NumericalError(f"Schur complement is numerically singular: {err}") from err
    top = cho_solve(chol, np.eye(plan.n_rows))
    bottom = -(Pi / s_star[None, :]).T @ top
    return np.vstack([top, bottom])


class PlanCovarianceAction:
    """Matrix action of the plan limit covariance.

    Exposes matrix-vector products, quadratic forms, and Gaussian sampling
    for Sigma = J B J^T with J the relevant gradient block and B the
    (reduced) multinomial covariance, without ever materializing the
    N^2 x N^2 matrix. ``dense()`` builds it explicitly on small instances.
    """

    def __init__(self, reg: rg.Regularizer, plan: TransportPlan,
                 mode: str = "one_sample", delta: float | None = None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "two_sample":
            if delta is None or not 0.0 < delta < 1.0:
                raise ValueError("two-sample mode needs delta strictly inside (0, 1)")
        self.mode = mode
        self.delta = float(delta) if delta is not None else None
        self.n_rows = plan.n_rows
        self.n_cols = plan.n_cols
        self.dim = self.n_rows * self.n_cols
        self._op = ConstraintOperator(self.n_rows, self.n_cols)
        self._w, self._chol = _gram_factor(reg, plan)
        self._r = np.asarray(plan.r.weights)
        self._s = np.asarray(plan.s.weights)
        self._sqrt_r = np.sqrt(self._r)
        self._sqrt_s = np.sqrt(self._s)

    def _j_transpose(self, v) -> np.ndarray:
        """J_full^T v, length n_rows + n_cols - 1."""
        t = self._op.apply_reduced(self._w * np.asarray(v, dtype=float).ravel())
        return cho_solve(self._chol, t)

    def _j_apply(self, z) -> np.ndarray:
        """J_full z for z of length n_rows + n_cols - 1."""
        x = cho_solve(self._chol, np.asarray(z, dtype=float).ravel())
        return self._w * self._op.apply_transpose_reduced(x)

    def _b_apply(self, t) -> np.ndarray:
        n1 = self.n_rows
        out = np.zeros_like(t)
        if self.mode == "one_sample":
            tr = t[:n1]
            out[:n1] = self._r * tr - self._r * np.sum(self._r * tr)
            return out
        tr = t[:n1]
        ts = t[n1:]
        s_star = self._s[:-1]
        out[:n1] = self.delta * (self._r * tr - self._r * np.sum(self._r * tr))
        out[n1:] = (1.0 - self.delta) * (s_star * ts - s_star * np.sum(s_star * ts))
        return out

    def matvec(self, v) -> np.ndarray:
        """Sigma v for a flat plan-space vector v."""
        return self._j_apply(self._b_apply(self._j_transpose(v)))

    def quad_form(self, v) -> float:
        """v^T Sigma v."""
        t = self._j_transpose(v)
        n1 = self.n_rows
        if self.mode == "one_sample":
            return _multinomial_quad(self._r, t[:n1])
        return (self.delta * _multinomial_quad(self._r, t[:n1])
                + (1.0 - self.delta) * _multinomial_quad(self._s[:-1], t[n1:]))

    def sample(self, M: int, rng) -> np.ndarray:
        """M Gaussian draws with covariance Sigma, shape (M, dim).

        Sampling factors the small multinomial covariance instead of Sigma:
        a standard normal vector is pushed through the multinomial factor and
        then through the gradient block.
        """
        M = int(M)
        n1, n2 = self.n_rows, self.n_cols
        if self.mode == "one_sample":
            Z = rng.standard_normal((M, n1))
            U = _multinomial_factor_apply(self._r, self._sqrt_r, Z)
            T = np.hstack([U, np.zeros((M, n2 - 1))])
        else:
            Zr = rng.standard_normal((M, n1))
            Zs = rng.standard_normal((M, n2))
            Ur = _multinomial_factor_apply(self._r, self._sqrt_r, Zr)
            Us = _multinomial_factor_apply(self._s, self._sqrt_s, Zs)[:, :-1]
            T = np.hstack([np.sqrt(self.delta) * Ur, np.sqrt(1.0 - self.delta) * Us])
        X = cho_solve(self._chol, T.T).T
        Xr = X[:, :n1]
        Xc = np.hstack([X[:, n1:], np.zeros((M, 1))])
        out = (Xr[:, :, None] + Xc[:, None, :]).reshape(M, self.dim)
        out *= self._w
        return out

    def dense(self) -> np.ndarray:
        """Materialized Sigma; refused beyond small instances."""
        if self.dim > DENSE_COV_MAX_ENTRIES:
            raise ValueError(
                f"refusing to materialize a {self.dim} x {self.dim} covariance; "
                "use the matrix action instead")
        n1, n2 = self.n_rows, self.n_cols
        X = cho_solve(self._chol, np.eye(n1 + n2 - 1))
        J = self._w[:, None] * _apply_adjoint(self._op, X)
        if self.mode == "one_sample":
            Jr = J[:, :n1]
            return Jr @ multinomial_cov(self._r) @ Jr.T
        B = np.zeros((n1 + n2 - 1, n1 + n2 - 1))
        B[:n1, :n1] = self.delta * multinomial_cov(self._r)
        B[n1:, n1:] = (1.0 - self.delta) * multinomial_cov(self._s)[:-1, :-1]
        return J @ B @ J.T


@dataclass(frozen=True)
class CovarianceResult:
    """Materialized plan covariance with its mode and, once computed, the
    scalar divergence variance."""

    sigma_plan: np.ndarray
    mode: str
    delta: float | None = None
    sigma_divergence: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "sigma_plan", readonly_array(self.sigma_plan))


def plan_covariance_action(reg: rg.Regularizer, plan: TransportPlan,
                           mode: str = "one_sample",
                           delta: float | None = None) -> PlanCovarianceAction:
    """Matrix action of the plan limit covariance at the solved plan."""
    return PlanCovarianceAction(reg, plan, mode=mode, delta=delta)


def plan_covariance(reg: rg.Regularizer, plan: TransportPlan,
                    mode: str = "one_sample",
                    delta: float | None = None) -> CovarianceResult:
    """Materialized plan limit covariance (small instances only)."""
    action = PlanCovarianceAction(reg, plan, mode=mode, delta=delta)
    return CovarianceResult(sigma_plan=action.dense(), mode=mode, delta=action.delta)


def divergence_gradient(c, plan: TransportPlan, p: float | None = None) -> np.ndarray:
    """Gradient of pi -> <c, pi>**(1/p) at the plan."""
    entries = c.entries if isinstance(c, CostVector) else np.asarray(c, dtype=float).ravel()
    if p is None:
        p = c.p if isinstance(c, CostVector) else plan.p
    if p == 1.0:
        return entries
    ip = float(entries @ plan.entries)
    if ip <= 0.0:
        raise NumericalError("the p-th root is not differentiable at zero transport cost")
    return (1.0 / p) * ip ** (1.0 / p - 1.0) * entries


def divergence_variance(plan: TransportPlan, c, sigma) -> float:
    """Scalar limit variance gamma^T Sigma gamma of the transport distance.

    ``sigma`` may be a CovarianceResult, a dense matrix, or a
    PlanCovarianceAction.
    """
    gamma = divergence_gradient(c, plan)
    if isinstance(sigma, PlanCovarianceAction):
        return sigma.quad_form(gamma)
    if isinstance(sigma, CovarianceResult):
        sigma = sigma.sigma_plan
    sigma = np.asarray(sigma, dtype=float)
    return float(gamma @ sigma @ gamma)


def objective_variance(alpha, r) -> float:
    """Limit variance of the regularized objective value: alpha^T Sigma(r) alpha."""
    a = getattr(alpha, "alpha", alpha)
    a = np.asarray(a, dtype=float).ravel()
    w = r.weights if isinstance(r, Prob) else np.asarray(r, dtype=float)
    return _multinomial_quad(w, a)
