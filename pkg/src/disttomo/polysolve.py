"""All-roots solving of the path polynomial systems.

Total-degree homotopy continuation: start from the system
prod_i (x_i^{deg_i} - 1) whose roots are products of roots of unity, blend
into the target system with a random complex gamma, and track every
Bezout path with an Euler predictor plus a short Newton corrector.
Endpoints are Newton-polished against the target system and deduplicated.
Systems here are small (a handful of variables, Bezout counts in the tens),
so no projective endgame is used; paths collapsing near the end are counted
as failures and the generically-nonsingular solutions survive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .epsbuild import EpsSystem

__all__ = [
    "SolveConfig",
    "SolutionSet",
    "solve_system",
    "newton_refine",
    "NewtonResult",
    "reduce_first_components",
    "solve_univariate",
]


@dataclass(frozen=True)
class SolveConfig:
    seed: int = 0
    max_step: float = 0.1
    min_step: float = 1e-6
    corrector_steps: int = 3
    corrector_tol: float = 1e-10
    refine_tol: float = 1e-10
    refine_max_iter: int = 50
    dedup_tol: float = 1e-6
    near_real_tol: float = 1e-6
    blowup: float = 1e8
    failure_warn_frac: float = 0.05


@dataclass(frozen=True)
class SolutionSet:
    """Deduplicated roots of one system plus their first-block reduction."""

    roots: tuple[np.ndarray, ...]
    residuals: tuple[float, ...]
    reduced: tuple[np.ndarray, ...]
    n_path_failures: int
    n_paths: int
    dedup_tol: float

    @property
    def n_roots(self) -> int:
        return len(self.roots)

    def real_roots(self, tol: float) -> list[np.ndarray]:
        """Roots whose imaginary parts are below ``tol``, projected to real."""
        return [r.real.copy() for r in self.roots if np.abs(r.imag).max() < tol]


class _SystemEvaluator:
    """Joint value/Jacobian evaluation of E(x) - u via one monomial table."""

    def __init__(self, system: EpsSystem):
        self.n = len(system.polynomials)
        self.nvars = system.nvars
        self.rhs = np.asarray(system.rhs, dtype=complex)
        mono_index: dict[tuple[int, ...], int] = {}
        rows = []  # (row, exps, coeff) over F rows then Jacobian rows
        for i, p in enumerate(system.polynomials):
            for exps, c in p.terms.items():
                rows.append((i, exps, complex(c)))
            for v in range(self.nvars):
                dp = p.derivative(v)
                for exps, c in dp.terms.items():
                    rows.append((self.n + i * self.nvars + v, exps, complex(c)))
        for _, exps, _ in rows:
            if exps not in mono_index:
                mono_index[exps] = len(mono_index)
        self.expmat = np.array(sorted(mono_index, key=mono_index.get), dtype=np.int64)
        ncols = len(mono_index)
        self.cmat = np.zeros((self.n * (1 + self.nvars), ncols), dtype=complex)
        for row, exps, c in rows:
            self.cmat[row, mono_index[exps]] += c

    def __call__(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        mono = np.prod(x[None, :] ** self.expmat, axis=1)
        out = self.cmat @ mono
        f = out[: self.n] - self.rhs
        jac = out[self.n:].reshape(self.n, self.nvars)
        return f, jac


def _start_points(degrees: tuple[int, ...]):
    """All combinations of roots of unity for the start system x_i^{d_i} = 1."""
    axes = [
        np.exp(2j * np.pi * np.arange(deg) / deg) for deg in degrees
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _track_path(ev, degrees, gamma, x0, cfg: SolveConfig):
    """Track one path of the blended homotopy from s=0 to s=1.

    Returns ("root", x), ("infinity", None) for a path escaping to infinity
    (expected whenever the root count is below the Bezout bound), or
    ("failed", None) for a genuine tracking failure (step collapse).
    """
    degs = np.asarray(degrees, dtype=float)
    x = x0.astype(complex)
    s = 0.0
    step = cfg.max_step

    def g_parts(xv):
        gval = xv ** degs - 1.0
        gjac = np.diag(degs * xv ** (degs - 1.0))
        return gval, gjac

    while s < 1.0:
        ds = min(step, 1.0 - s)
        fval, fjac = ev(x)
        gval, gjac = g_parts(x)
        jac = gamma * (1.0 - s) * gjac + s * fjac
        try:
            dx = np.linalg.solve(jac, -(fval - gamma * gval))
        except np.linalg.LinAlgError:
            step *= 0.5
            if step < cfg.min_step:
                return "failed", None
            continue
        xc = x + dx * ds
        s_new = s + ds
        ok = False
        for it in range(cfg.corrector_steps):
            fval, fjac = ev(xc)
            gval, gjac = g_parts(xc)
            hval = gamma * (1.0 - s_new) * gval + s_new * fval
            jac = gamma * (1.0 - s_new) * gjac + s_new * fjac
            try:
                delta = np.linalg.solve(jac, -hval)
            except np.linalg.LinAlgError:
                break
            xc = xc + delta
            if np.linalg.norm(delta) < 1e-9 * (1.0 + np.linalg.norm(xc)):
                ok = True
                break
        if ok:
            x, s = xc, s_new
            if it == 0:
                step = min(step * 2.0, cfg.max_step)
            if np.linalg.norm(x) > cfg.blowup:
                return "infinity", None
        else:
            step *= 0.5
            if step < cfg.min_step:
                # Step collapse near the end usually means the path escapes
                # to infinity as s -> 1; treat it as failure only away from
                # the endpoint.
                return ("infinity", None) if s > 0.99 else ("failed", None)
    return "root", x


@dataclass(frozen=True)
class NewtonResult:
    point: np.ndarray
    residual: float
    converged: bool
    suspect: bool
    iterations: int


def newton_refine(
    system: EpsSystem,
    x0,
    tol: float = 1e-10,
    max_iter: int = 30,
    singular_cond: float = 1e12,
) -> NewtonResult:
    """Newton-polish a candidate root of E(x) = u.

    Returns a diverged (non-converged) result when the iteration cap is hit
    or the iterate blows up; flags the root as suspect when the Jacobian is
    numerically singular near it.
    """
    ev = _SystemEvaluator(system)
    x = np.asarray(x0, dtype=complex).copy()
    suspect = False
    for it in range(max_iter):
        fval, jac = ev(x)
        res = float(np.linalg.norm(fval))
        if res < tol:
            if np.linalg.cond(jac) > singular_cond:
                suspect = True
            return NewtonResult(x, res, True, suspect, it)
        try:
            if np.linalg.cond(jac) > singular_cond:
                suspect = True
                break
            delta = np.linalg.solve(jac, -fval)
        except np.linalg.LinAlgError:
            suspect = True
            break
        x = x + delta
        if np.linalg.norm(x) > 1e12:
            break
    fval, _ = ev(x)
    return NewtonResult(x, float(np.linalg.norm(fval)), False, suspect, max_iter)


def _dedup(points: list[np.ndarray], tol: float) -> list[np.ndarray]:
    """Merge near-coincident points; order is made deterministic by sorting."""
    if not points:
        return []
    order = sorted(
        range(len(points)),
        key=lambda i: tuple(np.round(points[i], 9).view(float)),
    )
    kept: list[np.ndarray] = []
    for i in order:
        p = points[i]
        if all(np.linalg.norm(p - q) >= tol for q in kept):
            kept.append(p)
    return kept


def solve_system(system: EpsSystem, config: SolveConfig | None = None) -> SolutionSet:
    """Find all isolated roots of E(x) = u by total-degree continuation."""
    cfg = config or SolveConfig()
    ev = _SystemEvaluator(system)
    degrees = system.degrees()
    if any(deg < 1 for deg in degrees):
        raise ValueError("every polynomial must have degree >= 1")
    rng = np.random.default_rng(cfg.seed)
    gamma = np.exp(2j * np.pi * rng.random())
    starts = _start_points(degrees)
    endpoints = []
    failures = 0
    diverged = 0
    for x0 in starts:
        tag, x_end = _track_path(ev, degrees, gamma, x0, cfg)
        if tag == "infinity":
            diverged += 1
            continue
        if tag == "failed":
            failures += 1
            continue
        ref = newton_refine(system, x_end, tol=cfg.refine_tol, max_iter=cfg.refine_max_iter)
        if ref.converged and not ref.suspect:
            endpoints.append((ref.point, ref.residual))
        elif ref.converged and ref.suspect:
            warnings.warn(
                "root with near-singular Jacobian flagged suspect and kept",
                stacklevel=2,
            )
            endpoints.append((ref.point, ref.residual))
        else:
            failures += 1
    if not endpoints:
        raise RuntimeError("all continuation paths failed; system may be degenerate")
    # Paths diverging to infinity are expected whenever the root count is
    # below the Bezout bound, so only finite-path losses are diagnosed.
    if failures > cfg.failure_warn_frac * len(starts):
        warnings.warn(
            f"{failures}/{len(starts)} continuation paths failed "
            f"({diverged} diverged to infinity)",
            stacklevel=2,
        )
    pts = _dedup([p for p, _ in endpoints], cfg.dedup_tol)
    roots = []
    residuals = []
    for p in pts:
        res = float(np.linalg.norm(ev(p)[0]))
        roots.append(p)
        residuals.append(res)
    reduced = reduce_first_components(
        roots, system.d, dedup_tol=cfg.dedup_tol, near_real_tol=cfg.near_real_tol
    )
    return SolutionSet(
        roots=tuple(roots),
        residuals=tuple(residuals),
        reduced=tuple(reduced),
        n_path_failures=failures,
        n_paths=len(starts),
        dedup_tol=cfg.dedup_tol,
    )


def reduce_first_components(
    roots,
    d: int,
    dedup_tol: float = 1e-6,
    near_real_tol: float = 1e-6,
) -> list[np.ndarray]:
    """Distinct first-block components of the roots, near-real ones only.

    True weight vectors are real, so blocks with any imaginary part at or
    above ``near_real_tol`` are dropped; the rest are projected to real.
    """
    firsts = []
    for r in roots:
        alpha = np.asarray(r)[:d]
        if np.abs(alpha.imag).max() < near_real_tol:
            firsts.append(alpha.real.copy())
    return _dedup(firsts, dedup_tol)


def solve_univariate(coeffs, refine_tol: float = 1e-12) -> np.ndarray:
    """All complex roots of a univariate polynomial, highest degree first.

    Companion-matrix eigenvalues (numpy.roots) polished by a few Newton
    steps to residual below ``refine_tol`` relative to the leading scale.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    if coeffs.ndim != 1 or len(coeffs) < 2:
        raise ValueError("need a polynomial of degree >= 1")
    if coeffs[0] == 0:
        raise ValueError("leading coefficient must be nonzero")
    roots = np.roots(coeffs)
    deriv = np.polyder(coeffs)
    scale = np.abs(coeffs).max()
    for _ in range(20):
        vals = np.polyval(coeffs, roots)
        if np.abs(vals).max() <= refine_tol * scale * (1 + np.abs(roots).max() ** (len(coeffs) - 1)):
            break
        dvals = np.polyval(deriv, roots)
        safe = np.abs(dvals) > 1e-300
        roots[safe] = roots[safe] - vals[safe] / dvals[safe]
    return roots
