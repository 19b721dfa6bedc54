"""Per-link exponential-mean estimation from path delay samples.

When every link delay is exponential, the reciprocal of a path's MGF is a
polynomial whose coefficients are the elementary symmetric polynomials of
the link means.  Solving a Vandermonde system for those coefficients and
rooting the corresponding monic polynomial (Vieta) recovers the means of
the links on the path; cross-path matching then pins each mean to its
link.  The multivariate formulation has exactly the permutations of the
mean vector as its solution set, so the univariate reduction is lossless.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from itertools import combinations, permutations

import numpy as np

from .epsbuild import EpsSystem, SparsePoly
from .match import MatchConfig, PathSolutions, run_matching
from .mgfest import empirical_mgf
from .model import RoutingMatrix

__all__ = [
    "MeanSystem",
    "build_mean_system",
    "solve_means",
    "match_means",
    "elementary_symmetric_polys",
    "mean_system_as_eps",
]

_IMAG_TOL = 1e-8


@dataclass(frozen=True)
class MeanSystem:
    """Vandermonde-solved elementary symmetric values of one path's means."""

    tau: tuple[float, ...]
    vandermonde: np.ndarray
    c_vec: tuple[float, ...]
    esp: tuple[float, ...]

    @property
    def n_links(self) -> int:
        return len(self.esp)


def build_mean_system(
    tau,
    n_i: int,
    samples=None,
    mgf_values=None,
    exact_mgf=None,
) -> MeanSystem:
    """Invert the path MGF at the probe points and solve for the symmetric
    functions of the link means.

    Exactly one of ``samples``, ``mgf_values`` or ``exact_mgf`` must be
    given.  Raises when an MGF value is zero (reciprocal blow-up; choose a
    smaller probe point).
    """
    tau = tuple(float(t) for t in tau)
    if len(tau) != n_i or len(set(tau)) != n_i or any(t <= 0 for t in tau):
        raise ValueError(f"need {n_i} distinct strictly positive probe points")
    sources = [samples is not None, mgf_values is not None, exact_mgf is not None]
    if sum(sources) != 1:
        raise ValueError("give exactly one of samples, mgf_values, exact_mgf")
    if samples is not None:
        mgf = [empirical_mgf(samples, t) for t in tau]
    elif mgf_values is not None:
        mgf = [float(v) for v in mgf_values]
    else:
        mgf = [float(exact_mgf(t)) for t in tau]
    if any(not (0.0 < v <= 1.0 + 1e-12) for v in mgf):
        raise ValueError(
            "MGF estimate outside (0, 1]; reciprocal undefined, use smaller probe points"
        )
    c = [1.0 / v for v in mgf]
    vand = np.array([[t ** k for k in range(1, n_i + 1)] for t in tau])
    esp = np.linalg.solve(vand, np.asarray(c) - 1.0)
    return MeanSystem(
        tau=tau, vandermonde=vand, c_vec=tuple(c), esp=tuple(float(e) for e in esp)
    )


def solve_means(system: MeanSystem, imag_tol: float = _IMAG_TOL):
    """Recover the path's link means as roots of the monic Vieta polynomial.

    Returns (means, degenerate_flag); complex root pairs beyond the
    imaginary tolerance flag noisy data and only real parts are returned.
    Near-coincident means are flagged degenerate (the model assumes all
    link means distinct).
    """
    n = system.n_links
    coeffs = np.empty(n + 1)
    coeffs[0] = 1.0
    for k in range(1, n + 1):
        coeffs[k] = (-1.0) ** k * system.esp[k - 1]
    roots = np.roots(coeffs)
    flagged = bool(np.abs(roots.imag).max(initial=0.0) > imag_tol)
    if flagged:
        warnings.warn(
            "complex mean estimates truncated to real parts; data too noisy "
            "or probe points ill-chosen",
            stacklevel=2,
        )
    means = np.sort(roots.real)
    # A coincident pair splits by ~sqrt(machine eps) under rounding of the
    # polynomial coefficients, so the gap test must be looser than that.
    if n > 1 and np.min(np.diff(means)) < 1e-6 * max(1.0, np.abs(means).max()):
        flagged = True
        warnings.warn(
            "nearly coincident link means on one path; the model assumes "
            "distinct means and the solve is degenerate here",
            stacklevel=2,
        )
    return means, flagged


def elementary_symmetric_polys(n: int) -> list[SparsePoly]:
    """The n elementary symmetric polynomials e_1..e_n in n variables."""
    polys = []
    for k in range(1, n + 1):
        p = SparsePoly(n)
        for subset in combinations(range(n), k):
            exps = [0] * n
            for v in subset:
                exps[v] = 1
            p.add_term(tuple(exps), 1)
        polys.append(p)
    return polys


def mean_system_as_eps(system: MeanSystem) -> EpsSystem:
    """The multivariate formulation of the same solve, for cross-checking."""
    n = system.n_links
    return EpsSystem(
        polynomials=tuple(elementary_symmetric_polys(n)),
        t_matrix=system.vandermonde,
        rhs=np.asarray(system.esp, dtype=float),
        n_i=n,
        d=1,
    )


def match_means(
    a: RoutingMatrix,
    path_means: dict[int, np.ndarray],
    config: MatchConfig | None = None,
    ground_truth=None,
):
    """Assign one mean per link by the same intersection rule as the
    weight-vector case, clustering scalar means across paths.

    ``path_means`` maps path index to the solved means of that path.
    Returns (means array of length N, MatchResult).
    """
    path_solutions = {}
    for i, means in path_means.items():
        links = tuple(sorted(a.path_links(i)))
        if len(means) != len(links):
            raise ValueError(
                f"path {i}: {len(means)} means for {len(links)} links"
            )
        vectors = tuple(np.array([m], dtype=float) for m in means)
        # The multivariate solution set is exactly the permutation orbit of
        # the mean vector, so the full root list can be reconstituted.
        roots = tuple(
            tuple(np.array([m], dtype=float) for m in perm)
            for perm in sorted(set(permutations(means)))
        )
        path_solutions[i] = PathSolutions(
            path_id=i, links=links, reduced=vectors, root_blocks=roots
        )
    result = run_matching(a, path_solutions, d=1, config=config, ground_truth=None)
    means = result.weights[:, 0].copy()
    if ground_truth is not None:
        error_norm = float(
            np.linalg.norm(means - np.asarray(ground_truth, dtype=float))
        )
        result = replace(result, error_norm=error_norm)
    return means, result
