"""Local transfer geometry on synthetic receiver objectives.

Under a positive-definite quadratic model of the receiver's
post-quantization objective,

    g(delta) = g0 + 0.5 * (delta - rho_r)^T H (delta - rho_r),

the best scaled patch along a donor direction rho_d has the closed-form
coefficient

    lambda* = (rho_d^T H rho_r) / (rho_d^T H rho_d),

and the fraction of the receiver's own attainable gain recovered at
lambda* equals the squared H-weighted cosine between rho_d and rho_r.
This module evaluates both sides of that identity independently (direct
objective evaluation vs. inner products), provides a golden-section line
search as a closed-form-free oracle for lambda*, and adds a cubic
perturbation with a known Hessian-Lipschitz constant to measure how fast
the identity degrades away from the exact quadratic regime.

Everything here runs in float64: the identities under test hold to
1e-9..1e-12 and need the headroom. Checkpoint arithmetic elsewhere stays
float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

GOLDEN_RATIO_STEP = (math.sqrt(5.0) - 1.0) / 2.0  # 1/phi


def _vec(x, d: int | None = None, what: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValidationError(f"{what} must be one-dimensional, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise ValidationError(f"{what} has dimension {v.shape[0]}, model expects {d}")
    return v


@dataclass(frozen=True)
class QuadraticModel:
    """SPD quadratic receiver objective centered at the receiver's own vector."""

    H: np.ndarray
    rho_r: np.ndarray
    g0: float = 0.0

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValidationError(f"H must be square, got shape {H.shape}")
        if not np.allclose(H, H.T, rtol=0.0, atol=1e-12):
            raise ValidationError("H must be symmetric within 1e-12")
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("H must be positive definite") from exc
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "rho_r", _vec(self.rho_r, H.shape[0], "rho_r"))
        object.__setattr__(self, "g0", float(self.g0))

    @property
    def dim(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class CubicModel:
    """Quadratic base plus a cubic perturbation with Hessian-Lipschitz constant <= L.

    The perturbation is (L/6) * sum_k c_k * (u_k . (delta - rho_r))**3 with
    unit directions u_k and sum |c_k| = 1, which vanishes (with gradient and
    Hessian) at rho_r and whose Hessian has Lipschitz constant at most L.
    At L = 0 the model evaluates identically to its base.
    """

    base: QuadraticModel
    L: float = 0.0
    directions: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.L < 0:
            raise ValidationError(f"Lipschitz constant must be >= 0, got {self.L}")
        U = np.asarray(self.directions, dtype=np.float64)
        c = np.asarray(self.coefficients, dtype=np.float64)
        if U.size == 0:
            U = np.zeros((0, self.base.dim))
            c = np.zeros(0)
        if U.ndim != 2 or U.shape[1] != self.base.dim or c.shape != (U.shape[0],):
            raise ValidationError("directions must be (k, dim) with k coefficients")
        if U.shape[0]:
            norms = np.linalg.norm(U, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-12):
                raise ValidationError("perturbation directions must be unit vectors")
            total = np.sum(np.abs(c))
            if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-12):
                raise ValidationError("perturbation coefficients must satisfy sum|c| = 1")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "directions", U)
        object.__setattr__(self, "coefficients", c)


def quadratic_objective(m: QuadraticModel, delta) -> float:
    """g0 + 0.5 * (delta - rho_r)^T H (delta - rho_r)."""
    e = _vec(delta, m.dim, "delta") - m.rho_r
    return m.g0 + 0.5 * float(e @ m.H @ e)


def cubic_objective(m: CubicModel, delta) -> float:
    """Base quadratic plus the centered cubic perturbation."""
    value = quadratic_objective(m.base, delta)
    if m.L == 0.0 or m.directions.shape[0] == 0:
        return value
    e = _vec(delta, m.base.dim, "delta") - m.base.rho_r
    proj = m.directions @ e
    return value + (m.L / 6.0) * float(np.dot(m.coefficients, proj**3))


def optimal_lambda(m: QuadraticModel, rho_d) -> float:
    """Closed-form best patch scale along rho_d: projection coefficient of rho_r."""
    rho_d = _vec(rho_d, m.dim, "rho_d")
    denom = float(rho_d @ m.H @ rho_d)
    if denom == 0.0:
        raise ValidationError("donor vector must be nonzero")
    return float(rho_d @ m.H @ m.rho_r) / denom


def h_cos_sq(m: QuadraticModel, rho_d) -> float:
    """Squared H-weighted cosine between the donor direction and rho_r."""
    rho_d = _vec(rho_d, m.dim, "rho_d")
    dd = float(rho_d @ m.H @ rho_d)
    rr = float(m.rho_r @ m.H @ m.rho_r)
    if dd == 0.0 or rr == 0.0:
        raise ValidationError("h_cos_sq undefined for zero vectors")
    dr = float(rho_d @ m.H @ m.rho_r)
    return (dr * dr) / (dd * rr)


def recovered_fraction(m: QuadraticModel, rho_d) -> float:
    """Gain at the best donor patch over the receiver's own attainable gain.

    Evaluated directly from objective values (never via the cosine
    shortcut) so it can serve as one side of the identity test against
    h_cos_sq.
    """
    rho_d = _vec(rho_d, m.dim, "rho_d")
    if not np.any(rho_d):
        raise ValidationError("donor vector must be nonzero")
    if not np.any(m.rho_r):
        raise ValidationError("receiver vector must be nonzero")
    zero = np.zeros(m.dim)
    g_unpatched = quadratic_objective(m, zero)
    g_own = quadratic_objective(m, m.rho_r)
    denom = g_unpatched - g_own
    if denom == 0.0:
        raise ValidationError("degenerate model: no attainable gain to recover")
    lam = optimal_lambda(m, rho_d)
    g_best = quadratic_objective(m, lam * rho_d)
    return (g_unpatched - g_best) / denom


@dataclass(frozen=True)
class LineSearchResult:
    argmin: float
    interior: bool  # False when the minimum sits on a bracket endpoint


def line_search_lambda(objective, bracket: tuple[float, float], tol: float = 1e-8) -> LineSearchResult:
    """Golden-section minimizer of a unimodal scalar function on a bracket.

    Independent of any closed form: only function evaluations are used.
    If the minimizer lands on (within tol of) a bracket endpoint, that
    endpoint is returned with interior=False.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValidationError(f"bracket must satisfy lo < hi, got {bracket}")
    a, b = lo, hi
    x1 = b - GOLDEN_RATIO_STEP * (b - a)
    x2 = a + GOLDEN_RATIO_STEP * (b - a)
    f1, f2 = objective(x1), objective(x2)
    while b - a > tol:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN_RATIO_STEP * (b - a)
            f1 = objective(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN_RATIO_STEP * (b - a)
            f2 = objective(x2)
    x = 0.5 * (a + b)
    if x - lo <= tol:
        return LineSearchResult(argmin=lo, interior=False)
    if hi - x <= tol:
        return LineSearchResult(argmin=hi, interior=False)
    return LineSearchResult(argmin=x, interior=True)


def second_order_deviation(m: CubicModel, rho_d) -> tuple[float, float]:
    """Deviation of the cosine-squared recovery law on the cubic model.

    Returns (epsilon, bound):
      epsilon = [g(0) - g(lambda* rho_d)] - cos2 * [g(0) - g(rho_r)]
                with g the cubic objective, lambda* and cos2 from the base
                quadratic;
      bound   = (L/6) * (||rho_r||^3 + ||lambda* rho_d - rho_r||^3)
                in Euclidean norms.
    """
    base = m.base
    rho_d = _vec(rho_d, base.dim, "rho_d")
    if not np.any(rho_d) or not np.any(base.rho_r):
        raise ValidationError("donor and receiver vectors must be nonzero")
    lam = optimal_lambda(base, rho_d)
    cos2 = h_cos_sq(base, rho_d)
    zero = np.zeros(base.dim)
    g_unpatched = cubic_objective(m, zero)
    g_best = cubic_objective(m, lam * rho_d)
    g_own = cubic_objective(m, base.rho_r)
    epsilon = (g_unpatched - g_best) - cos2 * (g_unpatched - g_own)
    bound = (m.L / 6.0) * (
        float(np.linalg.norm(base.rho_r)) ** 3
        + float(np.linalg.norm(lam * rho_d - base.rho_r)) ** 3
    )
    return epsilon, bound


# ---------------------------------------------------------------------------
# Seeded instance sampling and the verification harness
# ---------------------------------------------------------------------------


def sample_spd_matrix(rng: np.random.Generator, d: int, cond_cap: float = 1e4) -> np.ndarray:
    """Random SPD matrix with condition number <= cond_cap and unit spectral norm.

    Built as A^T A + eps*I (A standard normal, eps = 1e-3*d), then
    eigenvalue-clipped to enforce the condition cap and rescaled so the
    largest eigenvalue is 1, which keeps objective values O(1) and the
    line-search oracle well conditioned.
    """
    A = rng.standard_normal((d, d))
    H = A.T @ A + (1e-3 * d) * np.eye(d)
    evals, evecs = np.linalg.eigh(H)
    top = evals[-1]
    evals = np.clip(evals, top / cond_cap, top) / top
    H = (evecs * evals) @ evecs.T
    return 0.5 * (H + H.T)


def _unit(rng: np.random.Generator, d: int) -> np.ndarray:
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def sample_quadratic_instance(
    rng: np.random.Generator, d: int, cond_cap: float = 1e4
) -> tuple[QuadraticModel, np.ndarray]:
    """Generic instance: random SPD H, unit receiver and donor vectors."""
    H = sample_spd_matrix(rng, d, cond_cap)
    model = QuadraticModel(H=H, rho_r=_unit(rng, d), g0=float(rng.uniform(-1.0, 1.0)))
    return model, _unit(rng, d)


def make_collinear_instance(
    rng: np.random.Generator, d: int, cond_cap: float = 1e4
) -> tuple[QuadraticModel, np.ndarray]:
    """Donor is a nonzero scalar multiple of the receiver vector."""
    model, _ = sample_quadratic_instance(rng, d, cond_cap)
    scale = rng.uniform(0.2, 5.0) * rng.choice([-1.0, 1.0])
    return model, scale * model.rho_r


def make_h_orthogonal_instance(
    rng: np.random.Generator, d: int, cond_cap: float = 1e4
) -> tuple[QuadraticModel, np.ndarray]:
    """Donor is H-orthogonal to the receiver vector (d >= 2)."""
    if d < 2:
        raise ValidationError("H-orthogonal instances need dimension >= 2")
    model, _ = sample_quadratic_instance(rng, d, cond_cap)
    v = _unit(rng, d)
    h_rr = float(model.rho_r @ model.H @ model.rho_r)
    for _ in range(2):  # second pass scrubs rounding residue after normalization
        v = v - (float(v @ model.H @ model.rho_r) / h_rr) * model.rho_r
        n = np.linalg.norm(v)
        if n == 0.0:  # v happened to be parallel; deterministic fallback
            return make_h_orthogonal_instance(rng, d, cond_cap)
        v = v / n
    return model, v


def sample_cubic_instance(
    rng: np.random.Generator,
    d: int,
    cond_cap: float = 1e4,
    L: float | None = None,
    n_directions: int = 3,
) -> tuple[CubicModel, np.ndarray]:
    """Cubic instance with a known Hessian-Lipschitz budget (L drawn if None)."""
    base, rho_d = sample_quadratic_instance(rng, d, cond_cap)
    if L is None:
        L = float(rng.uniform(0.0, 2.0))
    U = np.stack([_unit(rng, d) for _ in range(n_directions)])
    c = rng.standard_normal(n_directions)
    c = c / np.sum(np.abs(c))
    return CubicModel(base=base, L=L, directions=U, coefficients=c), rho_d


def cauchy_schwarz_bracket(m: QuadraticModel, rho_d: np.ndarray, margin: float = 1.0) -> tuple[float, float]:
    """Bracket guaranteed to contain lambda*, derived from H-norms only."""
    rr = float(m.rho_r @ m.H @ m.rho_r)
    dd = float(rho_d @ m.H @ rho_d)
    bound = math.sqrt(rr / dd) + margin
    return (-bound, bound)


def verify_geometry_instances(
    n_instances: int,
    dims: tuple[int, ...] = (2, 8, 32),
    seed: int = 7,
    cond_cap: float = 1e4,
    identity_tol: float = 1e-9,
    lambda_tol: float = 1e-6,
) -> list[dict]:
    """Per-instance records for the recovery-law and remainder-bound checks.

    Each record carries the closed-form quantities, the line-search oracle
    value, the cubic-model deviation and its bound, and a pass flag. Every
    eighth instance is collinear, every eighth H-orthogonal, and every
    fourth has L = 0 so the degenerate contracts stay covered.
    """
    rng = np.random.default_rng(seed)
    records: list[dict] = []
    for i in range(n_instances):
        d = dims[i % len(dims)]
        kind = "generic"
        L: float | None = None
        if i % 8 == 5 and d >= 2:
            kind = "collinear"
        elif i % 8 == 1 and d >= 2:
            kind = "h_orthogonal"
        if i % 4 == 2:
            L = 0.0

        if kind == "collinear":
            base, rho_d = make_collinear_instance(rng, d, cond_cap)
        elif kind == "h_orthogonal":
            base, rho_d = make_h_orthogonal_instance(rng, d, cond_cap)
        else:
            base, rho_d = sample_quadratic_instance(rng, d, cond_cap)
        cubic, _ = sample_cubic_instance(rng, d, cond_cap, L=L)
        cubic = CubicModel(
            base=base, L=cubic.L, directions=cubic.directions, coefficients=cubic.coefficients
        )

        lam = optimal_lambda(base, rho_d)
        cos2 = h_cos_sq(base, rho_d)
        frac = recovered_fraction(base, rho_d)
        oracle = line_search_lambda(
            lambda t: quadratic_objective(base, t * rho_d),
            cauchy_schwarz_bracket(base, rho_d),
        )
        eps, bound = second_order_deviation(cubic, rho_d)

        ok = (
            abs(frac - cos2) <= identity_tol
            and abs(lam - oracle.argmin) <= lambda_tol
            and -1e-12 <= cos2 <= 1.0 + 1e-12
            and abs(eps) <= bound + 1e-10
        )
        if kind == "collinear":
            ok = ok and abs(frac - 1.0) <= 1e-10
        if kind == "h_orthogonal":
            ok = ok and frac <= 1e-10
        records.append(
            {
                "index": i,
                "dim": d,
                "kind": kind,
                "lipschitz": cubic.L,
                "lambda_star": lam,
                "lambda_oracle": oracle.argmin,
                "cos_sq": cos2,
                "fraction": frac,
                "epsilon": eps,
                "bound": bound,
                "pass": ok,
            }
        )
    return records


def displacement_scaling_slope(
    seed: int = 7,
    d: int = 8,
    scales: tuple[float, ...] = (0.1, 0.05, 0.025),
) -> float:
    """Log-log slope of |epsilon| against the receiver displacement scale.

    The deviation must shrink at least cubically as the local displacement
    shrinks; the slope is fit by least squares over the given scales,
    averaged over a few seeded instances to avoid sign-cancellation flukes.
    """
    rng = np.random.default_rng(seed)
    slopes = []
    for _ in range(5):
        base, rho_d = sample_quadratic_instance(rng, d)
        cubic, _ = sample_cubic_instance(rng, d, L=1.0)
        eps_values = []
        for t in scales:
            scaled_base = QuadraticModel(H=base.H, rho_r=t * base.rho_r, g0=0.0)
            model = CubicModel(
                base=scaled_base,
                L=cubic.L,
                directions=cubic.directions,
                coefficients=cubic.coefficients,
            )
            eps, _ = second_order_deviation(model, rho_d)
            eps_values.append(abs(eps))
        if min(eps_values) <= 1e-14:
            continue  # deviation vanished; no scaling information
        slope = np.polyfit(np.log(np.asarray(scales)), np.log(np.asarray(eps_values)), 1)[0]
        slopes.append(slope)
    if not slopes:
        raise ValidationError("all scaling instances degenerated to zero deviation")
    return float(np.mean(slopes))
