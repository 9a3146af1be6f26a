"""``gaussvol`` command-line entry point.

Every file written with ``--out`` gets a sibling ``<out>.manifest.json``
recording the subcommand, arguments, input hashes, seed and tool version.
Exit codes: 0 success, 1 validation or domain error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
import warnings
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .calibrate import (
    FitWindow,
    FouMode,
    HurstTable,
    IvSlice,
    SteinSteinMode,
    build_hurst_table,
    calibrate_end_to_end,
)
from .chaos import ChaosConstants, chaos_constants, sample_integrated_variance
from .exceptions import CalibrationError, GaussvolError, NumericalError, ValidationError
from .experiments import EXPERIMENTS, run_experiment
from .model import ModelSpec
from .pricing import PricedPoint, SimConfig, price
from .smile import evaluate_wing, wing_expansion
from .spectrum import DEFAULT_GRIDS, Spectrum, model_spectrum

SCHEME_NAMES = {"euler": "euler_path", "mixture": "kl_mixture"}
# options whose values may start with '-' (negative grids and windows)
RANGE_OPTIONS = ("--k-grid", "--window", "--H-grid")


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    argv: list[str]
    inputs: dict[str, str]
    seed: int | None
    threads: int | None
    version: str
    wall_clock_s: float
    outputs: list[str]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def file_hash(path: str | Path) -> str:
    return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_path(out: str | Path) -> Path:
    return Path(str(out) + ".manifest.json")


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------


def parse_grid(text: str) -> np.ndarray:
    """``a:b:step`` inclusive of ``b`` (up to rounding)."""
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ValidationError(f"grid must look like 'a:b:step', got {text!r}") from None
    if step <= 0 or b < a:
        raise ValidationError("grid needs step > 0 and a <= b")
    n = int(np.floor((b - a) / step + 1e-9))
    return a + step * np.arange(n + 1)


def parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from None


def read_strikes(path: str, spec: ModelSpec) -> np.ndarray:
    """CSV with header ``strike`` or ``k``; log-moneyness is converted to strikes."""
    rows = list(csv.reader(io.StringIO(Path(path).read_text())))
    if not rows:
        raise ValidationError("empty strikes file")
    header = [h.strip().lower() for h in rows[0]]
    try:
        if "strike" in header:
            i = header.index("strike")
            return np.array([float(r[i]) for r in rows[1:] if r])
        if "k" in header:
            i = header.index("k")
            k = np.array([float(r[i]) for r in rows[1:] if r])
            return spec.s0 * np.exp(k + spec.r * spec.T)
    except ValueError as exc:
        raise ValidationError(f"non-numeric strike entry: {exc}") from None
    raise ValidationError("strikes header must contain 'strike' or 'k'")


def points_csv(points: Sequence[PricedPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "strike", "price", "std_err", "iv"])
    for p in points:
        w.writerow([repr(p.k), repr(p.strike), repr(p.price), repr(p.std_err), "" if p.iv is None else repr(p.iv)])
    return buf.getvalue()


def parse_points_csv(text: str) -> list[PricedPoint]:
    rows = list(csv.DictReader(io.StringIO(text)))
    return [
        PricedPoint(float(r["k"]), float(r["strike"]), float(r["price"]), float(r["std_err"]), float(r["iv"]) if r["iv"] else None)
        for r in rows
    ]


def curve_csv(k: np.ndarray, iv: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "iv_asymptotic"])
    for a, b in zip(k, iv):
        w.writerow([repr(float(a)), repr(float(b))])
    return buf.getvalue()


def _json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Subcommands; each returns (output bytes, input files)
# ---------------------------------------------------------------------------


def _load_model(path: str) -> ModelSpec:
    try:
        return ModelSpec.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file is not valid JSON: {exc}") from None


def cmd_spectrum(args: argparse.Namespace) -> tuple[bytes, list[str]]:
    spec = _load_model(args.model)
    spectrum = model_spectrum(spec, count=args.modes, grid_sizes=parse_ints(args.grids))
    return _json(spectrum.to_dict()).encode(), [args.model]


def cmd_chaos(args: argparse.Namespace) -> tuple[bytes, list[str]]:
    spectrum = Spectrum.load(args.spectrum)
    if args.sample:
        seed = 0 if args.seed is None else args.seed
        draws = sample_integrated_variance(spectrum, args.sample, seed, threads=args.threads)
        return draws.astype("<f8").tobytes(), [args.spectrum]
    return _json(chaos_constants(spectrum).to_dict()).encode(), [args.spectrum]


def cmd_smile(args: argparse.Namespace) -> tuple[bytes, list[str]]:
    constants = ChaosConstants.from_dict(json.loads(Path(args.chaos).read_text()))
    direction = "small_strike" if args.direction == "small" else "large_strike"
    expansion = wing_expansion(constants, direction=direction)
    k = parse_grid(args.k_grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        iv = evaluate_wing(expansion, k)
    return curve_csv(k, np.atleast_1d(iv)).encode(), [args.chaos]


def cmd_price(args: argparse.Namespace) -> tuple[bytes, list[str]]:
    spec = _load_model(args.model)
    strikes = read_strikes(args.strikes_file, spec)
    config = SimConfig(
        n_paths=args.paths, n_steps=args.steps, seed=0 if args.seed is None else args.seed,
        scheme=SCHEME_NAMES[args.scheme], conditional=args.conditional, antithetic=args.antithetic,
        threads=args.threads, modes=args.modes,
    )
    return points_csv(price(spec, strikes, config)).encode(), [args.model, args.strikes_file]


def cmd_calibrate(args: argparse.Namespace) -> tuple[bytes, list[str]]:
    slice_ = IvSlice.from_csv(Path(args.slice).read_text(), args.T, args.s0, args.r)
    window = FitWindow.parse(args.window) if args.window else None
    inputs = [args.slice]
    if args.mode == "stein-stein":
        mode: SteinSteinMode | FouMode = SteinSteinMode(args.q, args.start)
    else:
        if args.sigma is None:
            raise ValidationError("--sigma is required for --mode fou")
        table = HurstTable.load(args.table) if args.table else None
        if args.table:
            inputs.append(args.table)
        mode = FouMode(args.q, args.sigma, table)
    report = calibrate_end_to_end(slice_, window, mode)
    return _json(report.to_dict()).encode(), inputs


def cmd_table(args: argparse.Namespace) -> tuple[bytes, list[str]]:
    H = parse_grid(args.H_grid)
    table = build_hurst_table(args.q, args.sigma, args.T, np.round(H, 10), parse_ints(args.grids), args.threads)
    return _json(table.to_dict()).encode(), []


def cmd_reproduce(args: argparse.Namespace) -> tuple[bytes, list[str]]:
    names = EXPERIMENTS if args.experiment == "all" else (args.experiment,)
    seed = 42 if args.seed is None else args.seed
    results = [run_experiment(n, seed, n_paths=args.paths, n_steps=args.steps, threads=args.threads) for n in names]
    return _json({"seed": seed, "results": results}).encode(), []


# ---------------------------------------------------------------------------
# Parser and driver
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: $GAUSSVOL_THREADS or 1)")
    common.add_argument("--out", default=None, help="output file (default: stdout)")

    parser = argparse.ArgumentParser(prog="gaussvol", description=__doc__.splitlines()[0], parents=[common])
    parser.add_argument("--version", action="version", version=f"gaussvol {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    grids = ",".join(map(str, DEFAULT_GRIDS))

    p = sub.add_parser("spectrum", parents=[common], help="Karhunen-Loeve spectrum of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--grids", default=grids)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("chaos", parents=[common], help="tail constants, or samples of the integrated variance")
    p.add_argument("--spectrum", required=True)
    p.add_argument("--sample", type=int, default=0, help="write N little-endian float64 draws instead")
    p.set_defaults(func=cmd_chaos)

    p = sub.add_parser("smile", parents=[common], help="asymptotic wing curve as CSV")
    p.add_argument("--chaos", required=True)
    p.add_argument("--direction", choices=("small", "large"), default="small")
    p.add_argument("--k-grid", required=True, help="a:b:step")
    p.set_defaults(func=cmd_smile)

    p = sub.add_parser("price", parents=[common], help="Monte Carlo call prices")
    p.add_argument("--model", required=True)
    p.add_argument("--scheme", choices=tuple(SCHEME_NAMES), default="euler")
    p.add_argument("--strikes-file", required=True)
    p.add_argument("--paths", type=int, default=1_000_000)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--modes", type=int, default=200)
    p.add_argument("--conditional", action="store_true", help="integrate W out given each volatility path")
    p.add_argument("--antithetic", action="store_true")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("calibrate", parents=[common], help="recover sigma or H from a smile slice")
    p.add_argument("--slice", required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--s0", type=float, default=1.0)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--window", default=None, help="k_lo:k_hi (default: automatic)")
    p.add_argument("--mode", choices=("stein-stein", "fou"), required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--start", choices=("stationary", "deterministic"), default="stationary")
    p.add_argument("--table", default=None, help="Hurst table JSON (fou mode)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("table", parents=[common], help="lambda_1 against H for the stationary fOU kernel")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--H-grid", default="0.5:0.99:0.01")
    p.add_argument("--grids", default=grids)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("reproduce", parents=[common], help="run the reference experiments")
    p.add_argument("--experiment", choices=("all", *EXPERIMENTS), default="all")
    p.add_argument("--paths", type=int, default=1_000_000)
    p.add_argument("--steps", type=int, default=1000)
    p.set_defaults(func=cmd_reproduce)
    return parser


def _exit_code(exc: BaseException) -> int:
    while isinstance(exc, CalibrationError) and exc.__cause__ is not None:
        exc = exc.__cause__
    return 2 if isinstance(exc, NumericalError) else 1


def _join_range_values(argv: list[str]) -> list[str]:
    out: list[str] = []
    it = iter(argv)
    for token in it:
        if token in RANGE_OPTIONS:
            value = next(it, None)
            out.append(token if value is None else f"{token}={value}")
        else:
            out.append(token)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(_join_range_values(argv))
    start = time.perf_counter()
    try:
        payload, inputs = args.func(args)
    except GaussvolError as exc:
        label = "" if isinstance(exc, CalibrationError) else f"[{args.command}] "
        print(f"gaussvol: error: {label}{exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"gaussvol: error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    if args.out is None:
        sys.stdout.buffer.write(payload)
        sys.stdout.flush()
        return 0
    Path(args.out).write_bytes(payload)
    manifest = RunManifest(
        subcommand=args.command,
        argv=argv,
        inputs={p: file_hash(p) for p in inputs},
        seed=args.seed,
        threads=args.threads,
        version=__version__,
        wall_clock_s=round(time.perf_counter() - start, 3),
        outputs=[args.out],
    )
    manifest_path(args.out).write_text(manifest.to_json())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
