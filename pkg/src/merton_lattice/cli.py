"""Command-line front end.

Exit codes: 0 success, 1 selftest failure, 2 configuration error, 3 engine error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, RunConfig, load_config
from .convergence import run_study
from .errors import EngineError, ModelError
from .lattice import build_xi, prepare_jumps
from .model import Payoff, validate_model
from .montecarlo import MCConfig
from .pricer import price_american, price_european
from .selftest import corrupted_xi, run_checks

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ENGINE = 0, 1, 2, 3


def _fmt(x, precision: int = 12) -> str:
    return f"{x:.{precision}g}"


def _build(cfg: RunConfig):
    try:
        model = validate_model(cfg.model)
        payoff = Payoff(cfg.payoff["family"], cfg.payoff["strike"], tuple(cfg.payoff["weights"]))
    except (ModelError, ValueError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc
    if payoff.d != model.d:
        raise ConfigError(f"payoff.weights: length {payoff.d} does not match {model.d} assets")
    return model, payoff


def _mc_config(cfg: RunConfig) -> Optional[MCConfig]:
    if cfg.mc is None:
        return None
    return MCConfig(cfg.mc.paths, cfg.mc.steps, cfg.mc.seed, cfg.mc.basis_degree)


def _jumps(model, cfg: RunConfig, n: int):
    return prepare_jumps(model, n, cfg.engine.jump_mode, tail_samples=cfg.engine.tail_samples)


def cmd_price(cfg: RunConfig, out=None, timing: bool = True) -> int:
    out = out or sys.stdout
    model, payoff = _build(cfg)
    n = cfg.engine.n
    if n is None:
        if not cfg.engine.n_list:
            raise ConfigError("engine.n: required by the price command")
        n = max(cfg.engine.n_list)
    pricer = price_american if cfg.engine.style == "american" else price_european
    res = pricer(model, payoff, n, _jumps(model, cfg, n), state_budget=cfg.engine.state_budget)
    prec = cfg.output.precision
    seconds = res.seconds if timing else 0.0
    print(f"value {_fmt(res.value, prec)}", file=out)
    print(f"n {res.n}", file=out)
    print(f"style {res.style}", file=out)
    print(f"states final={res.states_per_step[-1]} max={res.max_states} total={res.total_states}", file=out)
    if res.root_exercise is not None:
        print(f"root_exercise {'yes' if res.root_exercise else 'no'}", file=out)
    print(f"seconds {seconds:.6f}", file=out)
    if cfg.output.csv:
        with open(cfg.output.csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "value", "style", "states_final", "states_total", "seconds"])
            w.writerow([n, _fmt(res.value, prec), res.style, res.states_per_step[-1], res.total_states, _fmt(seconds, 6)])
    return EXIT_OK


def convergence_csv(report, precision: int = 12, timing: bool = True) -> str:
    """CSV text: one row per ladder entry, then fitted_C / fitted_beta / residual footers."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "value", "error", "ref", "ref_kind", "seconds"])
    for row in report.rows:
        w.writerow([
            row.n,
            _fmt(row.value, precision),
            _fmt(row.error, precision),
            _fmt(report.reference, precision),
            report.ref_kind,
            _fmt(row.seconds if timing else 0.0, 6),
        ])
    fit = report.fit
    nan = float("nan")
    for name, val in (
        ("fitted_C", fit.C if fit else nan),
        ("fitted_beta", fit.beta if fit else nan),
        ("residual", fit.residual if fit else nan),
    ):
        w.writerow([name, _fmt(val, precision), "", "", "", ""])
    return buf.getvalue()


def cmd_converge(cfg: RunConfig, out=None, err=None, threads: int = 1, timing: bool = True) -> int:
    out, err = out or sys.stdout, err or sys.stderr
    model, payoff = _build(cfg)
    if not cfg.engine.n_list:
        raise ConfigError("engine.n_list: required by the converge command")
    mc_cfg = _mc_config(cfg)
    if cfg.engine.reference == "mc" and mc_cfg is None:
        mc_cfg = MCConfig()
    try:
        report = run_study(
            model,
            payoff,
            cfg.engine.n_list,
            style=cfg.engine.style,
            reference=cfg.engine.reference,
            mc_cfg=mc_cfg,
            jump_mode=cfg.engine.jump_mode,
            state_budget=cfg.engine.state_budget,
            threads=threads,
            order=cfg.engine.order,
        )
    except ModelError as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from exc
    text = convergence_csv(report, cfg.output.precision, timing)
    if cfg.output.csv:
        Path(cfg.output.csv).write_text(text)
    else:
        out.write(text)
    if mc_cfg is not None:
        print(f"seed {mc_cfg.seed}", file=err)
    print(f"error_inversions {report.inversions}", file=err)
    print(f"max_scaled_error {_fmt(report.max_scaled_error)}", file=err)
    if report.note:
        print(report.note, file=err)
    if report.lsmc is not None:
        print(
            f"lsmc {_fmt(report.lsmc.mean)} +/- {_fmt(report.lsmc.half_width)} (99%)",
            file=err,
        )
    return EXIT_OK


def cmd_selftest(out=None, corrupt_xi: bool = False) -> int:
    out = out or sys.stdout
    results = run_checks(corrupted_xi if corrupt_xi else build_xi)
    failed = 0
    for name, ok, detail in results:
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=out)
    print(f"{len(results)} checks, {failed} failed", file=out)
    return EXIT_OK if failed == 0 else EXIT_FAIL


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="merton-lattice",
        description="American option prices in the multidimensional Merton model on multinomial lattices.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("price", "price one lattice"), ("converge", "run a convergence ladder")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, metavar="PATH")
        p.add_argument("--n", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="PATH")
        p.add_argument("--jump-mode", choices=["native", "discretized"])
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
        p.add_argument("--no-timing", action="store_true", help="write 0 for wall-clock columns")
    st = sub.add_parser("selftest", help="run embedded invariant checks")
    st.add_argument("--corrupt-xi", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "selftest":
        return cmd_selftest(corrupt_xi=args.corrupt_xi)
    try:
        cfg = load_config(args.config).with_overrides(
            n=args.n, seed=args.seed, out=args.out, jump_mode=args.jump_mode
        )
        if args.command == "price":
            return cmd_price(cfg, timing=not args.no_timing)
        return cmd_converge(cfg, threads=max(1, args.threads), timing=not args.no_timing)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EngineError as exc:
        print(f"engine error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
