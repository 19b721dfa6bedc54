"""Command-line entry point: topology checks, simulation, estimation and
benchmark replication.

Exit codes: 0 on success, 2 on input/validation failures, 3 on pipeline or
matching failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments, match, mgfest, pipeline
from .model import GhMix, RoutingMatrix, is_one_identifiable
from .simulate import sample_paths

__all__ = ["main", "cmd_check", "cmd_simulate", "cmd_estimate", "cmd_experiment"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PIPELINE = 3


class ValidationError(ValueError):
    """Bad input files or arguments; maps to exit code 2."""


def _load_topology(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read topology file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"topology file {path} is not valid JSON (line {exc.lineno}, "
            f"column {exc.colno}): {exc.msg}"
        ) from exc
    if "matrix" not in raw:
        raise ValidationError(f"topology file {path} lacks the 'matrix' field")
    try:
        raw["routing"] = RoutingMatrix.from_array(raw["matrix"])
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"invalid routing matrix in {path}: {exc}") from exc
    return raw


def _ground_truth_mixes(topo: dict) -> list[GhMix]:
    if "rates" not in topo or "links" not in topo:
        raise ValidationError(
            "topology file needs 'rates' and 'links' (per-link weight arrays)"
        )
    rates = tuple(float(r) for r in topo["rates"])
    a = topo["routing"]
    links = topo["links"]
    if len(links) != a.n_links:
        raise ValidationError(
            f"'links' lists {len(links)} weight vectors for {a.n_links} links"
        )
    try:
        return [GhMix(rates, tuple(float(w) for w in row)) for row in links]
    except ValueError as exc:
        raise ValidationError(f"invalid link distribution: {exc}") from exc


def _ground_truth_means(topo: dict) -> list[float]:
    if "means" not in topo:
        raise ValidationError(
            "topology file needs 'means' (per-link exponential means) for --model exp"
        )
    a = topo["routing"]
    means = [float(m) for m in topo["means"]]
    if len(means) != a.n_links:
        raise ValidationError(
            f"'means' lists {len(means)} values for {a.n_links} links"
        )
    if any(m <= 0 for m in means):
        raise ValidationError("link means must be strictly positive")
    return means


def _write_csv(path: Path, samples) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "sample_index", "value"])
        for path_id, values in enumerate(samples):
            for idx, value in enumerate(values):
                writer.writerow([path_id, idx, f"{value:.17g}"])


def _read_csv(path: str, n_paths: int):
    per_path: dict[int, list[float]] = {}
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["path_id", "sample_index", "value"]:
                raise ValidationError(
                    f"samples file {path} must have header path_id,sample_index,value"
                )
            for row in reader:
                per_path.setdefault(int(row["path_id"]), []).append(
                    float(row["value"])
                )
    except OSError as exc:
        raise ValidationError(f"cannot read samples file {path}: {exc}") from exc
    missing = [i for i in range(n_paths) if i not in per_path]
    if missing:
        raise ValidationError(
            f"samples file {path} covers no samples for path(s) {missing}"
        )
    return [np.asarray(per_path[i]) for i in range(n_paths)]


def _parse_tau(text: str | None, a: RoutingMatrix, d: int):
    """A comma list is applied to every path; 'auto' (default) selects per path."""
    if text is None or text == "auto":
        return None
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"--tau must be 'auto' or a comma list: {exc}") from exc
    tau = {}
    for i in range(a.n_paths):
        need = d * len(a.path_links(i))
        if len(values) != need:
            raise ValidationError(
                f"--tau lists {len(values)} probe points but path {i} needs {need}"
            )
        tau[i] = values
    return tau


def _parse_delta(text: str | None):
    if text is None or text == "auto":
        return None
    try:
        delta = float(text)
    except ValueError as exc:
        raise ValidationError(f"--delta must be 'auto' or a real: {exc}") from exc
    if delta <= 0:
        raise ValidationError("--delta must be positive")
    return delta


def cmd_check(args) -> int:
    topo = _load_topology(args.topology)
    a = topo["routing"]
    sets = a.sets
    verdict = is_one_identifiable(a)
    if verdict:
        print("1-identifiable: yes")
    else:
        arr = a.to_array()
        cols = [tuple(arr[:, j]) for j in range(a.n_links)]
        reasons = []
        for j, c in enumerate(cols):
            if not any(c):
                reasons.append(f"column {j + 1} is all-zero")
        for j1 in range(len(cols)):
            for j2 in range(j1 + 1, len(cols)):
                if cols[j1] == cols[j2]:
                    reasons.append(f"columns {j1 + 1} and {j2 + 1} are identical")
        print(f"1-identifiable: no ({'; '.join(reasons)})")
    shared = "{" + ",".join(str(j + 1) for j in sorted(sets.shared)) + "}"
    print(f"S={shared}")
    for j in range(a.n_links):
        paths = "{" + ",".join(str(i + 1) for i in sorted(sets.link_paths[j])) + "}"
        print(f"link {j + 1}: G={paths}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    topo = _load_topology(args.topology)
    a = topo["routing"]
    if args.L < 1:
        raise ValidationError("--L must be >= 1")
    if args.model == "gh":
        mixes = _ground_truth_mixes(topo)
    else:
        mixes = [GhMix((1.0 / m,), (1.0,)) for m in _ground_truth_means(topo)]
    sample_set = sample_paths(a, mixes, args.L, seed=args.seed)
    out = Path(args.out or "samples.csv")
    _write_csv(out, sample_set.samples)
    manifest = {
        "topology": str(args.topology),
        "model": args.model,
        "L": args.L,
        "seed": args.seed,
        "paths": a.n_paths,
        "links": a.n_links,
        "samples_file": str(out),
    }
    manifest_path = out.with_suffix(out.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {out} ({a.n_paths} paths x {args.L} samples) and {manifest_path}")
    return EXIT_OK


def _gh_report(result, diags, args):
    report = {
        "model": "gh",
        "seed": args.seed,
        "delta": result.delta,
        "tau": {str(dg.path_id): list(dg.tau) for dg in diags},
        "links": [
            {
                "link_id": j,
                "weights": result.weights[j].tolist(),
                "provenance": result.provenance[j],
            }
            for j in range(result.weights.shape[0])
        ],
        "unmatched": list(result.unmatched),
    }
    if result.error_norm is not None:
        report["error_norm"] = result.error_norm
    return report


def cmd_estimate(args) -> int:
    topo = _load_topology(args.topology)
    a = topo["routing"]
    if args.model == "gh" and "rates" not in topo:
        raise ValidationError("topology file needs 'rates' for --model gh")
    exact = bool(args.exact_mgf)
    samples = None
    if not exact:
        if not args.samples:
            raise ValidationError("--samples is required unless --exact-mgf is set")
        samples = _read_csv(args.samples, a.n_paths)
    if args.model == "gh":
        rates = tuple(float(r) for r in topo["rates"])
        d = len(rates) - 1
        opts = pipeline.EstimateOptions(
            tau=_parse_tau(args.tau, a, d),
            tau_seed=args.seed,
            solver_seed=args.seed,
            delta=_parse_delta(args.delta),
        )
        truth = None
        exact_mixes = None
        if "links" in topo:
            exact_mixes = _ground_truth_mixes(topo)
            truth = np.array([m.weights for m in exact_mixes])
        if exact and exact_mixes is None:
            raise ValidationError("--exact-mgf needs ground-truth 'links' in the topology")
        result, diags = pipeline.estimate_gh(
            a,
            rates,
            samples=samples,
            exact_mixes=exact_mixes if exact else None,
            options=opts,
            ground_truth=truth,
        )
        report = _gh_report(result, diags, args)
        report["L"] = None if exact else int(samples[0].size)
        report["exact_mgf"] = exact
    else:
        opts = pipeline.EstimateOptions(
            tau=_parse_tau(args.tau, a, 1),
            tau_seed=args.seed,
            solver_seed=args.seed,
            delta=_parse_delta(args.delta),
        )
        truth_means = _ground_truth_means(topo) if "means" in topo else None
        if exact and truth_means is None:
            raise ValidationError("--exact-mgf needs ground-truth 'means' in the topology")
        means, result, diags = pipeline.estimate_exp(
            a,
            samples=samples,
            exact_means=truth_means if exact else None,
            options=opts,
            ground_truth=truth_means,
        )
        report = {
            "model": "exp",
            "seed": args.seed,
            "delta": result.delta,
            "tau": {str(dg.path_id): list(dg.tau) for dg in diags},
            "links": [
                {
                    "link_id": j,
                    "mean": float(means[j]),
                    "provenance": result.provenance[j],
                }
                for j in range(len(means))
            ],
            "unmatched": list(result.unmatched),
            "L": None if exact else int(samples[0].size),
            "exact_mgf": exact,
        }
        if result.error_norm is not None:
            report["error_norm"] = result.error_norm
    text = json.dumps(report, indent=2, default=str) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_experiment(args) -> int:
    report = experiments.run_experiment(
        args.name, seed=args.seed, n_samples=args.L, exact=args.exact_mgf
    )
    actual = np.asarray(report["actual"])
    estimated = np.asarray(report["estimated"])
    stages = actual.shape[1]
    header = (
        "link | " + "  ".join(f"w{k + 1}" for k in range(stages))
        + " | " + "  ".join(f"w{k + 1}^" for k in range(stages))
    )
    print(header)
    for j in range(actual.shape[0]):
        left = "  ".join(f"{v:.2f}" for v in actual[j])
        right = "  ".join(f"{v:.2f}" for v in estimated[j])
        print(f"{j + 1:4d} | {left} | {right}")
    print(f"error norm: {report['error_norm']:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="disttomo",
        description="Per-link delay distribution estimation from path delay samples",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_check = sub.add_parser("check", help="validate a topology and report identifiability")
    p_check.add_argument("--topology", required=True)
    p_check.set_defaults(func=cmd_check)

    p_sim = sub.add_parser("simulate", help="generate per-path delay samples")
    p_sim.add_argument("--topology", required=True)
    p_sim.add_argument("--model", choices=("gh", "exp"), default="gh")
    p_sim.add_argument("--L", type=int, default=10**6)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate per-link distributions")
    p_est.add_argument("--topology", required=True)
    p_est.add_argument("--samples", default=None)
    p_est.add_argument("--model", choices=("gh", "exp"), default="gh")
    p_est.add_argument("--tau", default="auto")
    p_est.add_argument("--delta", default="auto")
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--exact-mgf", action="store_true")
    p_est.add_argument("--out", default=None)
    p_est.set_defaults(func=cmd_estimate)

    p_exp = sub.add_parser("experiment", help="replicate a bundled benchmark")
    p_exp.add_argument("name", choices=sorted(experiments.EXPERIMENTS))
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--L", type=int, default=10**6)
    p_exp.add_argument("--exact-mgf", action="store_true")
    p_exp.add_argument("--out", default=None)
    p_exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (
        match.AmbiguityError,
        match.MatchingError,
        match.ClusteringError,
        mgfest.TauSelectionError,
        np.linalg.LinAlgError,
        RuntimeError,
    ) as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
