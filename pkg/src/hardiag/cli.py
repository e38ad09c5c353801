"""Command-line front end.

Every output embeds a run manifest. CSV files carry it as leading ``#``
comment lines and JSON documents under the ``manifest`` key. Floats are
written with 17 significant digits so that they round-trip exactly.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import shlex
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .covmodel import InvalidModel, parse_grid
from .design import DesignProblem, InvalidDesign, parse_design
from .diagnostics import (
    PreconditionError,
    SizeOneRefusal,
    critical_value_search,
    exact_available,
    figure1_table,
    poly_lower_bound,
    power_degeneracy,
    size_control_verdict,
    size_curve,
)
from .estimators import (
    AndrewsMonahan,
    BVDataDriven,
    BVFixed,
    Eicker,
    Estimator,
    InvalidEstimator,
    KernelLRV,
    Vogelsang,
    check_assumption5,
    check_assumption7,
    higher_trends,
    kernel_weight_matrix,
)
from .numerics import McConfig, NumericalFailure

EXIT_OK, EXIT_REFUSED, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(fmt(v))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# manifest


@dataclass
class RunManifest:
    command: str
    design_hash: Optional[str] = None
    estimator: Optional[str] = None
    grid: Optional[str] = None
    master_seed: Optional[int] = None
    replications: Optional[int] = None
    version: str = __version__
    started: str = ""
    finished: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "extra" and v is not None}
        d.update(self.extra)
        return d


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the stamp so repeated runs produce identical files
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else time.time()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def design_hash(dp: DesignProblem) -> str:
    h = hashlib.sha256()
    for a in (dp.X, dp.R, dp.r):
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        h.update(str(a.shape).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# parsing


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _load_matrix(ref: str) -> np.ndarray:
    path = ref[1:] if ref.startswith("@") else ref
    try:
        M = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read matrix file {path!r}: {exc}") from exc
    return M


def _kv(parts) -> dict:
    out = {}
    for part in parts:
        for item in part.split(","):
            if not item:
                continue
            if "=" not in item:
                out[item] = True
                continue
            k, v = item.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _U_from(kv: dict, dp: DesignProblem) -> Optional[np.ndarray]:
    if "U" in kv:
        return _load_matrix(kv["U"])
    if "m" in kv:
        start = dp.k_F if dp.k_F is not None else dp.k
        return higher_trends(dp.n, start, int(kv["m"]))
    return None


def parse_estimator(text: str, dp: DesignProblem) -> Estimator:
    """Build an estimator from a shorthand.

    Grammar::

        kernel:<name>:M=<bandwidth>
        eicker:identity | eicker:@weights.csv
        am
        vogelsang:c=<c>,i=<1|2>,V=<A|I>[,U=@file.csv | ,m=<count>]
        bvfixed:<kernel>:M=<bandwidth>:c=<c>[:U=@file.csv | :m=<count>]
        bvdd:@params.json
    """
    head, _, rest = text.partition(":")
    parts = rest.split(":") if rest else []
    try:
        if head == "kernel":
            if len(parts) < 2:
                raise InputError("kernel estimator needs kernel:<name>:M=<bandwidth>")
            kv = _kv(parts[1:])
            return KernelLRV.from_kernel(dp, parts[0], float(kv["M"]))
        if head == "eicker":
            if not parts or parts[0] == "identity":
                return Eicker(dp)
            return Eicker(dp, _load_matrix(parts[0]), label=parts[0])
        if head == "am":
            return AndrewsMonahan(dp)
        if head == "vogelsang":
            kv = _kv(parts)
            return Vogelsang(dp, c=float(kv.get("c", 1.0)), U=_U_from(kv, dp),
                             i=int(kv.get("i", 1)), V=str(kv.get("V", "A")))
        if head == "bvfixed":
            if len(parts) < 2:
                raise InputError("bvfixed needs bvfixed:<kernel>:M=<bandwidth>:c=<c>")
            kv = _kv(parts[1:])
            M = float(kv["M"])
            W = kernel_weight_matrix(parts[0], M, dp.n)
            return BVFixed(dp, W, c=float(kv.get("c", 1.0)), U=_U_from(kv, dp),
                           label=f"{parts[0]}:M={M!r}")
        if head == "bvdd":
            if not parts or not parts[0].startswith("@"):
                raise InputError("bvdd needs bvdd:@params.json")
            with open(parts[0][1:]) as fh:
                prm = json.load(fh)
            kv = {k: v for k, v in prm.items() if k in ("U", "m")}
            return BVDataDriven(dp, a=prm["a"], abar=prm["abar"], h=prm["h"], p=prm["p"], U=_U_from(kv, dp))
    except KeyError as exc:
        raise InputError(f"estimator {text!r} is missing parameter {exc}") from exc
    raise InputError(f"unknown estimator {text!r}")


def _design(args) -> DesignProblem:
    R = None if args.R is None else np.atleast_2d(
        np.array([_floats(row) for row in args.R.split(";")], dtype=float))
    r = None if args.r is None else _floats(args.r)
    if args.design is None:
        raise InputError("--design is required")
    return parse_design(args.design, R, r)


def _cfg(args, required: bool) -> Optional[McConfig]:
    if args.seed is None:
        if required:
            raise InputError("this computation is stochastic: pass --seed")
        return None
    return McConfig(int(args.reps), int(args.seed))


# ---------------------------------------------------------------------------
# emission


def _write(args, text: str) -> None:
    if args.out and args.out != "-":
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def emit_json(args, manifest: RunManifest, payload: dict) -> None:
    manifest.finished = _timestamp()
    doc = dict(_jsonable(payload), manifest=manifest.to_dict())
    _write(args, json.dumps(doc, indent=2, sort_keys=False) + "\n")


def emit_csv(args, manifest: RunManifest, header: list[str], rows) -> None:
    manifest.finished = _timestamp()
    buf = io.StringIO()
    for k, v in manifest.to_dict().items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])
    _write(args, buf.getvalue())


def _emit_table(args, manifest, header, rows):
    if args.format == "json":
        emit_json(args, manifest, {"rows": [dict(zip(header, r)) for r in rows]})
    else:
        emit_csv(args, manifest, header, rows)


def _manifest(args, dp=None, est=None, grid=None) -> RunManifest:
    return RunManifest(
        command=" ".join(shlex.quote(a) for a in (["hardiag"] + list(args._argv))),
        design_hash=None if dp is None else design_hash(dp),
        estimator=getattr(args, "est", None) if est is not None else None,
        grid=grid,
        master_seed=args.seed,
        replications=args.reps if args.seed is not None else None,
        started=_timestamp(),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_diagnose(args) -> int:
    dp = _design(args)
    est = parse_estimator(args.est, dp)
    man = _manifest(args, dp, est)
    v = size_control_verdict(dp, est, _cfg(args, False))
    emit_json(args, man, v.to_dict())
    return EXIT_OK


def cmd_figure1(args) -> int:
    ks = _int_range(args.k)
    lo, hi, step = (float(x) for x in args.b.split(":"))
    count = int(round((hi - lo) / step)) + 1
    bs = [float(format(lo + i * step, ".12g")) for i in range(count)]
    man = _manifest(args)
    man.extra = {"n": args.n, "kernel": args.kernel, "b_grid": args.b}
    rows = figure1_table(args.n, ks, bs, args.kernel, tol=args.tol)
    _emit_table(args, man, ["k", "b", "prob_nonneg"], rows)
    return EXIT_OK


def _int_range(text: str) -> list[int]:
    if "-" in text:
        a, b = text.split("-")
        return list(range(int(a), int(b) + 1))
    return [int(t) for t in text.split(",")]


def _critical(args):
    if args.critical is None:
        raise InputError("--critical is required")
    if args.critical == "data-driven":
        return "data-driven"
    return float(args.critical)


def cmd_size_curve(args) -> int:
    dp = _design(args)
    est = parse_estimator(args.est, dp)
    grid = parse_grid(args.grid or "ar1-boundary")
    C = _critical(args)
    method = args.method
    if method == "auto":
        method = "exact" if exact_available(dp, est) and C != "data-driven" else "mc"
    cfg = _cfg(args, method == "mc")
    man = _manifest(args, dp, est, grid.label)
    man.extra = {"method": method}
    rows = size_curve(dp, est, grid, C, method=method, cfg=cfg)
    _emit_table(args, man, ["model", "probability", "se"],
                [(r.label, r.probability, r.se) for r in rows])
    return EXIT_OK


def cmd_power(args) -> int:
    dp = _design(args)
    est = parse_estimator(args.est, dp)
    man = _manifest(args, dp, est)
    rep = power_degeneracy(dp, est, float(_critical(args)))
    emit_json(args, man, rep.to_dict())
    return EXIT_OK


def cmd_bound(args) -> int:
    dp = _design(args)
    est = parse_estimator(args.est, dp)
    cfg = _cfg(args, False)
    man = _manifest(args, dp, est)
    if dp.k_F is not None and np.any(dp.R[:, : dp.k_F] != 0):
        b = poly_lower_bound(dp, est, cfg)
        emit_json(args, man, {"rule": "size_bound_polynomial", "value": b.value,
                              "se": b.se, "method": b.method})
        return EXIT_OK
    v = size_control_verdict(dp, est, cfg)
    emit_json(args, man, v.to_dict())
    return EXIT_OK


def cmd_critical(args) -> int:
    dp = _design(args)
    est = parse_estimator(args.est, dp)
    grid = parse_grid(args.grid or "white")
    cfg = _cfg(args, not exact_available(dp, est))
    man = _manifest(args, dp, est, grid.label)
    lo, hi = (float(x) for x in args.bracket.split(":"))
    try:
        C = critical_value_search(dp, est, grid, float(args.alpha), (lo, hi), cfg)
    except SizeOneRefusal as exc:
        emit_json(args, man, {"outcome": "refused", "reason": str(exc),
                              "verdict": exc.verdict.to_dict()})
        return EXIT_REFUSED
    emit_json(args, man, {"critical_value": C, "alpha": float(args.alpha),
                          "valid_for": f"grid {grid.label} only"})
    return EXIT_OK


def cmd_check(args) -> int:
    dp = _design(args)
    est = parse_estimator(args.est, dp)
    man = _manifest(args, dp, est)
    r5 = check_assumption5(est, trials=args.trials, seed=args.seed or 0)
    r7 = check_assumption7(est, trials=args.trials, seed=args.seed or 0)
    emit_json(args, man, {"estimator": est.describe(), "assumption5": r5.to_dict(),
                          "assumption7": r7.to_dict(), "passed": r5.passed and r7.passed})
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--design", help="JSON file or shorthand (poly:n=50,kF=2, cyc:..., gauss:...)")
    common.add_argument("--R", help="restriction rows, ';'-separated, entries by space or comma")
    common.add_argument("--r", help="restriction right-hand side")
    common.add_argument("--est", help="estimator shorthand, e.g. kernel:bartlett:M=10")
    common.add_argument("--grid", help="covariance grid: ar1-boundary, file.json or ';'-separated models")
    common.add_argument("--critical", help="critical value or 'data-driven'")
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--seed", type=int)
    common.add_argument("--reps", type=int, default=10_000)
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--format", choices=["csv", "json"], default="csv")

    p = argparse.ArgumentParser(prog="hardiag", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("diagnose", parents=[common], help="size-one / size-controllability verdict")
    f = sub.add_parser("figure1", parents=[common], help="P(omega_hat >= 0) over k and b")
    f.add_argument("--n", type=int, default=150)
    f.add_argument("--k", default="2-10")
    f.add_argument("--b", default="0.001:1:0.001", help="lo:hi:step")
    f.add_argument("--kernel", default="rectangular")
    f.add_argument("--tol", type=float, default=1e-4)
    s = sub.add_parser("size-curve", parents=[common], help="null rejection probabilities over a grid")
    s.add_argument("--method", choices=["auto", "exact", "mc"], default="auto")
    sub.add_parser("power", parents=[common], help="classify C against the boundary constants")
    sub.add_parser("bound", parents=[common], help="lower bound on size")
    c = sub.add_parser("critical", parents=[common], help="critical value search over a grid")
    c.add_argument("--bracket", default="0:100")
    k = sub.add_parser("check", parents=[common], help="run the estimator property checks")
    k.add_argument("--trials", type=int, default=100)
    return p


COMMANDS = {
    "diagnose": cmd_diagnose,
    "figure1": cmd_figure1,
    "size-curve": cmd_size_curve,
    "power": cmd_power,
    "bound": cmd_bound,
    "critical": cmd_critical,
    "check": cmd_check,
}


def main(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    args._argv = argv
    try:
        return COMMANDS[args.command](args)
    except (InputError, InvalidDesign, InvalidModel, InvalidEstimator, PreconditionError,
            KeyError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"hardiag: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalFailure as exc:
        print(f"hardiag: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
