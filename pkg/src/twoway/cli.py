"""Command-line front end: scheme design, Monte Carlo runs, SNR sweeps.

Exit codes are scriptable: 0 success, 2 infeasible power budget, 64 bad
usage, 65 unreadable or malformed input data. All commands are
deterministic for a fixed seed, so repeated runs append byte-identical
result rows.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

from . import __version__
from .channel import ChannelConfig
from .designer import InfeasibleDesignError, SearchConfig, design_sum_error
from .harness import (
    SimResult,
    append_csv_rows,
    format_csv_row,
    simulate_linear,
    simulate_repetition,
)
from .pam import Constellation
from .scheme import design_from_json, design_to_json

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_USAGE = 64
EXIT_DATA = 65

SCHEME_NAMES = ("linear", "repetition")


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the contract reserves 2
    # for infeasible designs and wants 64 for usage errors.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _add_channel_flags(p: argparse.ArgumentParser, with_snr2: bool = True) -> None:
    p.add_argument("--snr1-db", type=float, required=True, help="channel SNR seen by user 2, dB")
    if with_snr2:
        p.add_argument("--snr2-db", type=float, required=True, help="channel SNR seen by user 1, dB")
    p.add_argument("--n", type=int, required=True, help="channel uses per block")
    p.add_argument("--k1", type=int, required=True, help="user-1 bits per block")
    p.add_argument("--k2", type=int, required=True, help="user-2 bits per block")


def _add_search_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta2-grid", type=int, default=40, help="grid points for the user-2 SNR sweep")
    p.add_argument(
        "--metric",
        choices=("bler", "ber"),
        default="bler",
        help="error metric the design search minimizes",
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="twoway", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{design,simulate,sweep}")

    d = sub.add_parser("design", help="search for a sum-error-optimal linear scheme")
    _add_channel_flags(d)
    d.add_argument("--out", required=True, help="path for the design JSON document")
    d.add_argument("--seed", type=int, default=0)
    _add_search_flags(d)
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="Monte Carlo run of a stored design")
    s.add_argument("--design", required=True, help="design JSON produced by the design command")
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True, help="CSV file to append the result row to")
    s.add_argument("--label", default="linear", help="scheme column value for the CSV row")
    s.add_argument("--zero-noise", action="store_true", help="disable channel noise (sanity runs)")
    s.add_argument(
        "--stop-after-block-errors",
        type=int,
        default=1000,
        help="early-stop threshold per user; 0 runs every trial",
    )
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="row per (scheme, snr2) point at fixed snr1")
    _add_channel_flags(w, with_snr2=False)
    w.add_argument("--snr2-db-start", type=float, required=True)
    w.add_argument("--snr2-db-stop", type=float, required=True)
    w.add_argument("--snr2-db-step", type=float, default=1.0)
    w.add_argument(
        "--schemes",
        default="linear",
        help="comma-separated subset of: " + ", ".join(SCHEME_NAMES),
    )
    w.add_argument("--trials", type=int, required=True)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", required=True, help="CSV file to append result rows to")
    w.add_argument(
        "--emit-curves",
        metavar="PREFIX",
        help="also write PREFIX_<scheme>.dat two-column x/y files",
    )
    _add_search_flags(w)
    w.set_defaults(func=cmd_sweep)
    return parser


def cmd_design(args: argparse.Namespace) -> int:
    """Run the sum-error search and store the winning scheme as JSON."""
    cfg = ChannelConfig.from_snr_db(args.snr1_db, args.snr2_db, n=args.n, k1=args.k1, k2=args.k2)
    search = SearchConfig(eta2_grid_size=args.eta2_grid, error_metric=args.metric.upper())
    try:
        sol = design_sum_error(cfg, search=search, seed=args.seed)
    except InfeasibleDesignError as exc:
        print(f"design infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(design_to_json(sol))
        fh.write("\n")
    summary = {
        "eta1": sol.eta1,
        "eta2": sol.eta2,
        "alpha": sol.alpha,
        "power1": sol.power1,
        "power2": sol.power2,
        "predicted_sum_bler": sol.predicted_bler1 + sol.predicted_bler2,
    }
    print(json.dumps(summary))
    return EXIT_OK


def _load_design(path: str):
    with open(path, encoding="utf-8") as fh:
        sol = design_from_json(fh.read())
    if sol.cfg.k1 is None or sol.cfg.k2 is None:
        raise ValueError("design document lacks the message sizes k1/k2")
    return sol


def cmd_simulate(args: argparse.Namespace) -> int:
    """Append one Monte Carlo result row for a stored design."""
    try:
        sol = _load_design(args.design)
    except (OSError, ValueError) as exc:
        print(f"cannot load design: {exc}", file=sys.stderr)
        return EXIT_DATA
    stop = args.stop_after_block_errors if args.stop_after_block_errors > 0 else None
    res = simulate_linear(
        sol,
        Constellation.for_bits(sol.cfg.k1),
        Constellation.for_bits(sol.cfg.k2),
        trials=args.trials,
        seed=args.seed,
        noise_scale=0.0 if args.zero_noise else 1.0,
        early_stop_block_errors=stop,
    )
    append_csv_rows(args.out, [format_csv_row(args.label, res)])
    return EXIT_OK


def _sweep_points(start: float, stop: float, step: float) -> list[float]:
    if step <= 0:
        raise ValueError("snr2-db-step must be positive")
    count = math.floor((stop - start) / step + 1e-9) + 1
    if count < 1:
        raise ValueError("empty snr2 range: start exceeds stop")
    return [start + i * step for i in range(count)]


def _parse_schemes(spec: str) -> list[str]:
    names = [s.strip() for s in spec.split(",") if s.strip()]
    if not names:
        raise ValueError("no schemes requested")
    for name in names:
        if name not in SCHEME_NAMES:
            raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEME_NAMES)}")
    return names


def _sum_metric(res: SimResult, metric: str) -> float:
    return res.bler1 + res.bler2 if metric == "bler" else res.ber1 + res.ber2


def _write_curve(path: str, points: list[tuple[float, float]]) -> None:
    lines = [f"# tool_version={__version__}"]
    lines += [f"{x:.6g} {y:.5E}" for x, y in points]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_sweep(args: argparse.Namespace) -> int:
    """Design/simulate every requested scheme across an snr2 range."""
    points = _sweep_points(args.snr2_db_start, args.snr2_db_stop, args.snr2_db_step)
    names = _parse_schemes(args.schemes)
    if "repetition" in names:
        if args.k1 != args.k2:
            raise ValueError("repetition baseline needs k1 == k2")
        if args.k1 <= 0 or args.n % args.k1:
            raise ValueError("repetition baseline needs k1 to divide n")
    search = SearchConfig(eta2_grid_size=args.eta2_grid, error_metric=args.metric.upper())

    rows: list[str] = []
    curves: dict[str, list[tuple[float, float]]] = {name: [] for name in names}
    for snr2 in points:
        cfg = ChannelConfig.from_snr_db(args.snr1_db, snr2, n=args.n, k1=args.k1, k2=args.k2)
        for name in names:
            if name == "linear":
                try:
                    sol = design_sum_error(cfg, search=search, seed=args.seed)
                except InfeasibleDesignError as exc:
                    print(f"design infeasible at snr2={snr2:g} dB: {exc}", file=sys.stderr)
                    return EXIT_INFEASIBLE
                res = simulate_linear(
                    sol,
                    Constellation.for_bits(args.k1),
                    Constellation.for_bits(args.k2),
                    trials=args.trials,
                    seed=args.seed,
                )
            else:
                res = simulate_repetition(
                    cfg, l_bits=args.k1, reps=args.n // args.k1, trials=args.trials, seed=args.seed
                )
            rows.append(format_csv_row(name, res))
            curves[name].append((snr2, _sum_metric(res, args.metric)))
            print(f"[sweep] {name} snr2={snr2:g} dB done", file=sys.stderr)

    append_csv_rows(args.out, rows)
    if args.emit_curves:
        for name in names:
            _write_curve(f"{args.emit_curves}_{name}.dat", curves[name])
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help exits 0 here; _Parser.error arrives as 64.
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"twoway {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"twoway {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
