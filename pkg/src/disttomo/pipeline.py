"""End-to-end estimation pipelines wiring the per-path stages together.

Each path is processed independently (probe selection, MGF estimation,
system construction, all-roots solve) and the per-path solution clouds are
then matched across paths to produce one estimate per link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
from scipy.optimize import least_squares, minimize

from . import epsbuild, expmeans, match, mgfest, model, polysolve

__all__ = ["EstimateOptions", "estimate_gh", "estimate_exp", "PathDiagnostics"]


@dataclass(frozen=True)
class EstimateOptions:
    """Knobs of one estimation run."""

    tau: dict[int, tuple[float, ...]] | None = None  # per-path probe points
    tau_seed: int = 0
    solver_seed: int = 0
    delta: float | None = None  # None -> automatic clustering radius
    cond_limit: float = epsbuild.DEFAULT_COND_LIMIT
    # None picks 1e-6 for the exact-MGF mode and 0.35 for sampled data:
    # sampling noise can collide a close pair of real roots into a complex
    # conjugate pair whose real part still estimates the pair well.
    near_real_tol: float | None = None
    solve_config: polysolve.SolveConfig | None = None
    # Joint refinement: after matching, fit every link's weights at once to
    # all paths' empirical MGF curves.  A single path determines the split
    # between its links' vectors poorly (the per-path system has a sloppy
    # direction), but the paths jointly pin it down.  None enables the stage
    # for sampled data and disables it in the exact-MGF mode.
    refine: bool | None = None
    refine_starts: int = 8
    refine_grid: int = 30
    refine_spread: float = 0.3
    polish_bins: int = 1000
    polish_starts: int = 16


@dataclass(frozen=True)
class PathDiagnostics:
    path_id: int
    tau: tuple[float, ...]
    n_roots: int
    n_reduced: int
    n_path_failures: int


def _blocks(root: np.ndarray, n_i: int, d: int) -> tuple[np.ndarray, ...]:
    return tuple(root[j * d:(j + 1) * d] for j in range(n_i))


def _joint_refine(
    a: model.RoutingMatrix,
    lambdas,
    samples,
    inits: list[np.ndarray],
    seed: int,
    n_grid: int,
    n_starts: int,
    spread: float,
) -> tuple[np.ndarray, float]:
    """Fit all links' free weights at once to the empirical path MGF curves.

    ``inits`` are (N, d) starting points (the matched estimate plus a
    uniform-weights fallback); each is perturbed into a small multistart and
    the best-cost fit wins.  Returns the refined (N, d) matrix and the cost.
    """
    lam = np.asarray(lambdas, dtype=float)
    d = lam.size - 1
    n = a.n_links
    t_grid = np.geomspace(0.05 * lam.min(), 4.0 * lam.max(), n_grid)
    basis = lam[None, :] / (lam[None, :] + t_grid[:, None])  # (grid, d+1)
    emp = [
        np.array([mgfest.empirical_mgf(samples[i], t) for t in t_grid])
        for i in range(a.n_paths)
    ]
    rows = [np.array(sorted(a.path_links(i)), dtype=int) for i in range(a.n_paths)]

    def residual(x):
        w_free = x.reshape(n, d)
        w_full = np.column_stack([w_free, 1.0 - w_free.sum(axis=1)])
        link_mgf = basis @ w_full.T  # (grid, N)
        return np.concatenate(
            [np.prod(link_mgf[:, r], axis=1) - emp[i] for i, r in enumerate(rows)]
        )

    rng = np.random.default_rng(seed)
    starts = [np.asarray(base, dtype=float) for base in inits]
    while len(starts) < n_starts:
        base = inits[len(starts) % len(inits)]
        starts.append(np.asarray(base, dtype=float) + rng.normal(0.0, spread, (n, d)))
    best_x, best_cost = None, np.inf
    for x0 in starts:
        try:
            fit = least_squares(
                residual, x0.ravel(), method="lm", xtol=1e-14, ftol=1e-14
            )
        except Exception:
            continue
        if fit.cost < best_cost:
            best_x, best_cost = fit.x, fit.cost
    if best_x is None:
        raise RuntimeError("joint refinement failed from every starting point")
    return best_x.reshape(n, d), float(best_cost)


def _likelihood_polish(
    a: model.RoutingMatrix,
    lambdas,
    samples,
    inits: list[np.ndarray],
    n_bins: int,
    seed: int = 0,
    n_starts: int = 0,
) -> np.ndarray:
    """Binned maximum-likelihood polish of the (N, d) free-weight matrix.

    Each path's delay is a mixture over stage assignments of hypoexponential
    distributions, so the probability of every quantile bin is a multilinear
    form in the link weight vectors; the bin-count log likelihood is then
    maximized jointly over all links, starting from each candidate in
    ``inits`` plus ``n_starts`` Dirichlet draws, and the best-likelihood fit
    is returned.  This squeezes the full per-sample information out of the
    data, unlike the handful of MGF evaluations the polynomial stage
    consumes.  The random restarts matter: the MGF-curve fit can park all
    the candidates in a spurious basin that the likelihood ranks below the
    genuine one, and only a fresh start escapes it.

    Bin probabilities are floored at 1e-12 (with the gradient masked there)
    so a handful of tail outliers the rate model cannot explain contribute
    a flat penalty instead of dragging the whole fit; the floor never
    activates when the model matches the data.  A quadratic penalty keeps
    every link's density nonnegative on a grid: signed weight vectors that
    are not valid distributions can otherwise chase model mismatch to
    arbitrarily wild fits.
    """
    lam = np.asarray(lambdas, dtype=float)
    d = lam.size - 1
    n = a.n_links
    u_grid = np.geomspace(1e-3 / lam.max(), 20.0 / lam.min(), 60)
    dens_basis = lam[:, None] * np.exp(-np.outer(lam, u_grid))  # (d+1, grid)
    penalty_coeff = 1e8
    paths = []
    for i in range(a.n_paths):
        links = sorted(a.path_links(i))
        y = np.asarray(samples[i], dtype=float)
        edges = np.unique(np.quantile(y, np.linspace(0.0, 1.0, n_bins + 1))[:-1])
        edges[0] = 0.0
        counts, _ = np.histogram(y, bins=np.append(edges, np.inf))
        shape = (d + 1,) * len(links)
        table = np.empty(shape + (len(edges),))
        for assign in product(range(d + 1), repeat=len(links)):
            cdf = model.hypoexp_cdf([lam[s] for s in assign], edges)
            table[assign] = np.diff(np.append(cdf, 1.0))
        paths.append((links, counts.astype(float), table))

    def nll_and_grad(x):
        w_free = x.reshape(n, d)
        w_full = np.column_stack([w_free, 1.0 - w_free.sum(axis=1)])
        total = 0.0
        grad = np.zeros((n, d + 1))
        for links, counts, table in paths:
            contracted = table
            for j in links:
                contracted = np.tensordot(w_full[j], contracted, axes=(0, 0))
            floor = 1e-12
            clamped = np.maximum(contracted, floor)
            total -= counts @ np.log(clamped)
            ratio = np.where(contracted > floor, counts / clamped, 0.0)
            for pos, j in enumerate(links):
                partial = table
                for q, jq in enumerate(links):
                    if q == pos:
                        continue
                    # link axes are consumed front to back; the kept axis
                    # (position pos) stays in front once reached
                    partial = np.tensordot(
                        w_full[jq], partial, axes=(0, 0 if q < pos else 1)
                    )
                grad[j] -= partial @ ratio
        dens = w_full @ dens_basis  # (N, grid)
        neg = np.minimum(dens, 0.0)
        total += penalty_coeff * float((neg * neg).sum())
        grad += 2.0 * penalty_coeff * (neg @ dens_basis.T)
        g_free = grad[:, :d] - grad[:, d:]
        return total, g_free.ravel()

    rng = np.random.default_rng(seed)
    starts = list(inits) + [
        rng.dirichlet(np.ones(d + 1), size=n)[:, :d] for _ in range(n_starts)
    ]
    best_x, best_val = None, np.inf
    for base in starts:
        fit = minimize(
            nll_and_grad,
            np.asarray(base, dtype=float).ravel(),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": 800, "ftol": 1e-15, "gtol": 1e-10},
        )
        if fit.fun < best_val:
            best_x, best_val = fit.x, fit.fun
    if best_x is None:
        raise RuntimeError("likelihood polish failed from every starting point")
    return best_x.reshape(n, d)


def estimate_gh(
    a: model.RoutingMatrix,
    lambdas,
    *,
    samples=None,
    exact_mixes: list[model.GhMix] | None = None,
    options: EstimateOptions | None = None,
    match_config: match.MatchConfig | None = None,
    ground_truth=None,
):
    """Estimate every link's weight vector over the shared rates ``lambdas``.

    Either per-path ``samples`` (sequence indexed by path) or
    ``exact_mixes`` (ground-truth mixtures enabling the noise-free analytic
    MGF mode) must be given.  Returns (MatchResult, diagnostics).
    """
    opts = options or EstimateOptions()
    d = len(lambdas) - 1
    if samples is None and exact_mixes is None:
        raise ValueError("need either samples or exact_mixes")
    path_solutions: dict[int, match.PathSolutions] = {}
    diagnostics: list[PathDiagnostics] = []
    eps_cache: dict[int, list[epsbuild.SparsePoly]] = {}
    near_real = opts.near_real_tol
    if near_real is None:
        near_real = 1e-6 if exact_mixes is not None else 0.35
    solve_cfg = opts.solve_config or polysolve.SolveConfig(
        seed=opts.solver_seed, near_real_tol=near_real
    )
    for i in range(a.n_paths):
        links = tuple(sorted(a.path_links(i)))
        n_i = len(links)
        if opts.tau is not None and i in opts.tau:
            tau = tuple(opts.tau[i])
            epsbuild.build_t_tau(tau, n_i, d, lambdas, cond_limit=opts.cond_limit)
        else:
            tau = mgfest.choose_tau(
                n_i, d, lambdas,
                seed=opts.tau_seed + 7919 * i,
                cond_limit=opts.cond_limit,
            )
        if exact_mixes is not None:
            path_mixes = [exact_mixes[j] for j in links]

            def exact(t, _mixes=path_mixes):
                return math.prod(model.gh_mgf(mx, t) for mx in _mixes)

            probe = mgfest.assemble_constants(None, tau, n_i, lambdas, exact_mgf=exact)
        else:
            probe = mgfest.assemble_constants(samples[i], tau, n_i, lambdas)
        if n_i not in eps_cache:
            eps_cache[n_i] = epsbuild.build_eps(n_i, d, lambdas)
        t_tau = epsbuild.build_t_tau(tau, n_i, d, lambdas, cond_limit=opts.cond_limit)
        system = epsbuild.assemble_system(
            eps_cache[n_i], t_tau, probe.c_hat,
            n_i=n_i, d=d, lambdas=lambdas, path_id=i,
        )
        sol = polysolve.solve_system(system, solve_cfg)
        real_roots = sol.real_roots(solve_cfg.near_real_tol)
        path_solutions[i] = match.PathSolutions(
            path_id=i,
            links=links,
            reduced=sol.reduced,
            root_blocks=tuple(_blocks(r, n_i, d) for r in real_roots),
        )
        diagnostics.append(
            PathDiagnostics(
                path_id=i,
                tau=tau,
                n_roots=sol.n_roots,
                n_reduced=len(sol.reduced),
                n_path_failures=sol.n_path_failures,
            )
        )
    cfg = match_config or match.MatchConfig(delta=opts.delta)
    refine = opts.refine
    if refine is None:
        refine = exact_mixes is None
    try:
        result = match.run_matching(
            a, path_solutions, d, config=cfg, ground_truth=ground_truth
        )
    except match.AmbiguityError:
        if not refine:
            raise
        result = None
    if not refine:
        return result, diagnostics
    inits = []
    if result is not None:
        inits.append(result.weights[:, :d])
    inits.append(np.full((a.n_links, d), 1.0 / (d + 1)))
    w_free, cost = _joint_refine(
        a, lambdas, samples, inits,
        seed=opts.solver_seed,
        n_grid=opts.refine_grid,
        n_starts=opts.refine_starts,
        spread=opts.refine_spread,
    )
    w_free = _likelihood_polish(
        a, lambdas, samples,
        [w_free, np.full((a.n_links, d), 1.0 / (d + 1))],
        n_bins=opts.polish_bins,
        seed=opts.solver_seed,
        n_starts=opts.polish_starts,
    )
    weights = np.column_stack([w_free, 1.0 - w_free.sum(axis=1)])
    if result is None:
        sets = a.sets
        provenance = tuple(
            {"link": j, "paths": sorted(sets.link_paths[j]), "refined": True}
            for j in range(a.n_links)
        )
        result = match.MatchResult(
            weights=weights,
            provenance=provenance,
            unmatched=(),
            delta=float("nan"),
        )
    else:
        provenance = tuple(
            dict(p, refined=True) for p in result.provenance
        )
        result = replace(result, weights=weights, provenance=provenance)
    if ground_truth is not None:
        truth = np.asarray(ground_truth, dtype=float)
        result = replace(
            result, error_norm=float(np.linalg.norm((weights - truth).ravel()))
        )
    return result, diagnostics


def _default_mean_tau(n_i: int, mean_scale: float) -> tuple[float, ...]:
    """Probe points keeping t * E[Y] moderate so 1/MGF stays well estimated."""
    if n_i == 1:
        return (1.0 / mean_scale,)
    return tuple(np.geomspace(0.2 / mean_scale, 2.0 / mean_scale, n_i))


def estimate_exp(
    a: model.RoutingMatrix,
    *,
    samples=None,
    exact_means=None,
    options: EstimateOptions | None = None,
    match_config: match.MatchConfig | None = None,
    ground_truth=None,
):
    """Estimate per-link exponential means.

    ``samples`` is a per-path sequence of delay arrays; ``exact_means`` a
    vector of true link means enabling the analytic-MGF mode.  Returns
    (means array, MatchResult, per-path diagnostics).
    """
    opts = options or EstimateOptions()
    if samples is None and exact_means is None:
        raise ValueError("need either samples or exact_means")
    path_means: dict[int, np.ndarray] = {}
    diagnostics = []
    for i in range(a.n_paths):
        links = tuple(sorted(a.path_links(i)))
        n_i = len(links)
        if exact_means is not None:
            scale = float(sum(exact_means[j] for j in links))
        else:
            scale = float(np.mean(samples[i]))
        if opts.tau is not None and i in opts.tau:
            tau = tuple(opts.tau[i])
        else:
            tau = _default_mean_tau(n_i, scale)
        if exact_means is not None:
            path_m = [float(exact_means[j]) for j in links]

            def exact(t, _m=path_m):
                return math.prod(1.0 / (1.0 + t * mj) for mj in _m)

            system = expmeans.build_mean_system(tau, n_i, exact_mgf=exact)
        else:
            system = expmeans.build_mean_system(tau, n_i, samples=samples[i])
        means, flagged = expmeans.solve_means(system)
        path_means[i] = means
        diagnostics.append(
            PathDiagnostics(
                path_id=i, tau=tau, n_roots=len(means),
                n_reduced=len(means), n_path_failures=int(flagged),
            )
        )
    cfg = match_config or match.MatchConfig(delta=opts.delta)
    means, result = expmeans.match_means(
        a, path_means, config=cfg, ground_truth=ground_truth
    )
    return means, result, diagnostics
