"""``aflf`` command-line interface.

Every sub-command writes CSV to ``--output`` (stdout by default). Options can
also come from a flat ``key = value`` file given with ``--config``; keys are the
long option names (``-`` or ``_`` both accepted) and flags on the command line
override the file.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 unsupported
channel or hypothesis pair.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import math
import os
import sys
import warnings
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .code_sim import CodeConfig, monte_carlo_code, run_flf_baseline, select_parameters
from .dmc import Channel, capacity, is_symmetric
from .exponents import (
    AflfParams,
    UnsupportedChannelError,
    aflf_lower_bound,
    burnashev_exponent,
    haroutunian_exponent,
    random_coding_exponent,
    sphere_packing_exponent,
)
from .ht import HtPair, afl_region, chernoff_exponent, fl_region_boundary, seq_region
from .ht_sim import (
    TwoPhaseTestConfig,
    empirical_exponent,
    exact_binary_oracle,
    monte_carlo_ht,
)

DEFAULT_SEED = 20240601

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_UNSUPPORTED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------- formatting


def fmt(value) -> str:
    """CSV cell: ints verbatim, floats with 12 significant digits, ``inf``."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.11e}"
    return str(value)


class _Csv:
    def __init__(self, stream, columns: Sequence[str]):
        self.w = csv.writer(stream, lineterminator="\n")
        self.w.writerow(columns)
        self.columns = list(columns)

    def row(self, **cells):
        unknown = set(cells) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown CSV columns {sorted(unknown)}")
        self.w.writerow([fmt(cells.get(c)) for c in self.columns])


# ---------------------------------------------------------------- arguments


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from exc
    if not vals:
        raise UsageError("empty list")
    return vals


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise UsageError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


# option name -> (default, converter)
OPTIONS = {
    "channel": ("bsc:0.2", str),
    "pair": ("0.9,0.2", str),
    "gammas": ("0", str),
    "gamma": ("0.2", float),
    "k": (None, int),
    "rates": ("101", str),
    "grid": (512, int),
    "n": ("10", str),
    "lambda": ("dstar", str),
    "trials": (None, int),
    "seed": (DEFAULT_SEED, int),
    "rate": (0.05, float),
    "ells": ("20,40,60,80", str),
    "alpha": (None, float),
    "baseline": (False, None),
    "haroutunian": (False, None),
    "criteria": ("", str),
    "inject_failure": (False, None),
    "output": ("-", str),
}

COMMAND_DEFAULTS = {
    "exponents": {"k": 9, "gammas": "0,0.01,0.05"},
    "ht-region": {"k": 4, "gammas": "0,0.1,0.3,dstar"},
    "ht-sim": {"k": 2, "trials": 0},
    "code-sim": {"k": 9, "trials": 10000, "gamma": 0.05},
    "verify": {},
}


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _add(p: argparse.ArgumentParser, *names: str):
    for name in names:
        flag = "--" + name.replace("_", "-")
        default, conv = OPTIONS[name]
        if conv is None:
            p.add_argument(flag, dest=name, action="store_const", const=True, default=None)
        else:
            p.add_argument(flag, dest=name, default=None)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aflf", description="Error exponents and two-phase simulations for "
                "almost-fixed-length feedback codes and hypothesis tests.")
    p.add_argument("--version", action="version", version=f"aflf {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    common = ("output",)
    s = sub.add_parser("exponents", help="exponent curves over a rate grid")
    _add(s, "channel", "gammas", "k", "rates", "haroutunian", *common)
    s = sub.add_parser("ht-region", help="exponent-region boundaries of hypothesis tests")
    _add(s, "pair", "gammas", "k", "grid", *common)
    s = sub.add_parser("ht-sim", help="exact and Monte Carlo two-phase test probabilities")
    _add(s, "pair", "gamma", "k", "n", "lambda", "trials", "seed", *common)
    s = sub.add_parser("code-sim", help="Monte Carlo simulation of the two-phase code")
    _add(s, "channel", "rate", "ells", "gamma", "k", "alpha", "lambda", "trials", "seed",
         "baseline", *common)
    s = sub.add_parser("verify", help="run the acceptance checks")
    _add(s, "criteria", "inject_failure", *common)
    for sp in sub.choices.values():
        sp.add_argument("--config", dest="config", default=None, help="key = value file")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the config file and explicit flags, in that order."""
    file_vals = read_config(args.config) if args.config else {}
    out = {}
    known = {k for k in vars(args) if k not in ("command", "config")}
    for key in file_vals:
        if key not in known and key != "command":
            raise UsageError(f"unknown config key {key!r} for {args.command}")
    for key in known:
        default, conv = OPTIONS[key]
        default = COMMAND_DEFAULTS[args.command].get(key, default)
        val = getattr(args, key)
        if val is None and key in file_vals:
            val = file_vals[key]
            if conv is None:
                val = val.lower() in ("1", "true", "yes", "on")
        if val is None:
            val = default
        if conv is not None and val is not None:
            try:
                val = conv(val)
            except ValueError as exc:
                raise UsageError(f"bad value for --{key}: {val!r}") from exc
        out[key] = val
    return out


# ----------------------------------------------------------------- commands


def _rate_grid(spec: str, c: float) -> list[float]:
    """An integer N gives N evenly spaced rates on [0, C]; a list is used as is."""
    s = spec.strip()
    if "," not in s:
        try:
            n = int(s)
        except ValueError:
            n = 0
        if n >= 2:
            return [float(r) for r in np.linspace(0.0, c, n)]
    rates = _floats(s)
    if any(r < 0 or r > c + 1e-12 for r in rates):
        raise UsageError(f"rates must lie in [0, C={c:.6g}]")
    return sorted(min(r, c) for r in rates)


def _gamma_list(spec: str, d_star: Optional[float] = None) -> list[float]:
    out = []
    for tok in str(spec).split(","):
        tok = tok.strip().lower()
        if not tok:
            continue
        if tok in ("dstar", "d*"):
            if d_star is None:
                raise UsageError("'dstar' only applies to hypothesis pairs")
            out.append(d_star)
        else:
            try:
                out.append(float(tok))
            except ValueError as exc:
                raise UsageError(f"bad gamma {tok!r}") from exc
    if not out or any(g < 0 for g in out):
        raise UsageError("gammas must be a non-empty list of non-negative values")
    return out


def _channel(spec: str) -> Channel:
    try:
        return Channel.from_spec(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _pair(spec: str) -> HtPair:
    try:
        return HtPair.from_spec(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _check_k(k: int):
    if k is None or k < 2:
        raise UsageError("k must be an integer >= 2")


def cmd_exponents(o: dict, out) -> int:
    ch = _channel(o["channel"])
    _check_k(o["k"])
    c = capacity(ch)
    rates = _rate_grid(o["rates"], c)
    gammas = _gamma_list(o["gammas"])
    w = _Csv(out, ["rate", "bound", "exponent", "gamma", "k"])
    harout = o["haroutunian"] and is_symmetric(ch)
    if o["haroutunian"] and not harout:
        w.row(bound="warning:haroutunian_unavailable_for_asymmetric_channel")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for r in rates:
            w.row(rate=r, bound="random_coding", exponent=random_coding_exponent(ch, r))
            esp = sphere_packing_exponent(ch, r) if r > 0 else math.inf
            w.row(rate=r, bound="sphere_packing", exponent=esp)
            if harout:
                w.row(rate=r, bound="haroutunian",
                      exponent=haroutunian_exponent(ch, r) if r > 0 else math.inf)
            w.row(rate=r, bound="burnashev", exponent=burnashev_exponent(ch, r))
            for g in gammas:
                val = aflf_lower_bound(ch, r, AflfParams(g, o["k"]))
                w.row(rate=r, bound="aflf_lower", exponent=val, gamma=g, k=o["k"])
    return EXIT_OK


def cmd_ht_region(o: dict, out) -> int:
    pair = _pair(o["pair"])
    _check_k(o["k"])
    if o["grid"] < 2:
        raise UsageError("grid must be at least 2")
    d_star = chernoff_exponent(pair).d_star
    gammas = _gamma_list(o["gammas"], d_star)
    w = _Csv(out, ["e1", "e2", "region", "gamma", "k"])
    for e1, e2 in fl_region_boundary(pair, o["grid"]).boundary:
        w.row(e1=e1, e2=e2, region="fixed_length")
    for e1, e2 in seq_region(pair).boundary:
        w.row(e1=e1, e2=e2, region="sequential")
    for g in gammas:
        for e1, e2 in afl_region(pair, g, o["k"], o["grid"]).boundary:
            w.row(e1=e1, e2=e2, region="afl", gamma=g, k=o["k"])
    return EXIT_OK


HT_COLUMNS = ["hypothesis", "n", "k", "gamma", "lambda", "trials", "err_count", "err_freq",
              "exact_err", "p_continue", "exact_continue", "mean_tau", "agree", "seed"]


def cmd_ht_sim(o: dict, out) -> int:
    pair = _pair(o["pair"])
    _check_k(o["k"])
    ns = _ints(o["n"])
    if any(n < 1 for n in ns):
        raise UsageError("n values must be positive")
    trials = o["trials"]
    if trials < 0:
        raise UsageError("trials must be >= 0")
    lam_tok = str(o["lambda"]).strip().lower()
    lam = None if lam_tok in ("dstar", "d*", "") else float(lam_tok)
    binary = pair.p1.size == 2
    if trials == 0 and not binary:
        raise UsageError("exact-only mode needs a binary pair; set --trials")
    w = _Csv(out, HT_COLUMNS)
    series = {1: [], 2: []}
    for n in ns:
        try:
            cfg = TwoPhaseTestConfig(pair, o["gamma"], o["k"], n, lam)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        exact = exact_binary_oracle(cfg) if binary else None
        rep = monte_carlo_ht(cfg, trials, o["seed"]) if trials else None
        agree = rep.agrees_with(exact) if (rep and exact) else None
        for h in (1, 2):
            row = dict(hypothesis=h, n=n, k=cfg.k, gamma=cfg.gamma, **{"lambda": cfg.lambda_phase2},
                       trials=trials, seed=o["seed"])
            if exact is not None:
                pe, pc = getattr(exact, f"p{h}_err"), getattr(exact, f"p{h}_continue")
                row.update(exact_err=pe, exact_continue=pc)
                series[h].append((n, exact.log2(f"p{h}_err"), exact.log2(f"p{h}_continue")))
            if rep is not None:
                cnt = rep.err_type1_count if h == 1 else rep.err_type2_count
                row.update(err_count=cnt, err_freq=cnt / trials,
                           p_continue=rep.p_tau_exceeds_n[h - 1], mean_tau=rep.mean_tau(h))
                if agree is not None:
                    row["agree"] = agree[f"p{h}_err"] and agree[f"p{h}_continue"]
            else:
                row.update(p_continue=pc, mean_tau=n + (cfg.k - 1) * n * pc)
            w.row(**row)
    if len(ns) >= 3 and binary:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for h in (1, 2):
                pts = series[h]
                err_slope = _safe_slope([(n, e) for n, e, _ in pts])
                cont_slope = _safe_slope([(n, c) for n, _, c in pts])
                w.row(hypothesis=f"slope{h}", k=o["k"], gamma=o["gamma"],
                      **{"lambda": cfg.lambda_phase2}, trials=trials,
                      exact_err=err_slope, exact_continue=cont_slope, seed=o["seed"])
    return EXIT_OK


def _safe_slope(points) -> Optional[float]:
    try:
        return empirical_exponent(points, log2_input=True)
    except ValueError:
        return None


CODE_COLUMNS = ["scheme", "ell", "rate", "alpha", "lambda", "gamma", "k", "trials", "err_freq",
                "retransmit_freq", "mean_tau", "seed"]


def cmd_code_sim(o: dict, out) -> int:
    ch = _channel(o["channel"])
    _check_k(o["k"])
    ells = _ints(o["ells"])
    trials = o["trials"]
    if trials < 1:
        raise UsageError("trials must be >= 1")
    rate, gamma = o["rate"], o["gamma"]
    c = capacity(ch)
    if not 0 < rate < c:
        raise UsageError(f"rate must lie in (0, C={c:.6g})")
    alpha, lam = select_parameters(ch, rate, gamma)
    if o["alpha"] is not None:
        alpha = o["alpha"]
    lam_tok = str(o["lambda"]).strip().lower()
    if lam_tok not in ("dstar", "d*", ""):
        lam = float(lam_tok)
    w = _Csv(out, CODE_COLUMNS)
    two, base = [], []
    for ell in ells:
        try:
            cfg = CodeConfig(ch, rate, ell, alpha, lam, o["k"], seed=o["seed"])
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        rep = monte_carlo_code(cfg, trials)
        two.append((ell, rep.err_freq))
        w.row(scheme="two_phase", ell=ell, rate=rate, alpha=alpha, **{"lambda": lam}, gamma=gamma,
              k=o["k"], trials=trials, err_freq=rep.err_freq,
              retransmit_freq=rep.retransmit_freq, mean_tau=rep.mean_tau, seed=o["seed"])
        if o["baseline"]:
            b = run_flf_baseline(ch, rate, ell, None, trials, o["seed"])
            base.append((ell, b.err_freq))
            w.row(scheme="fixed_length", ell=ell, rate=rate, k=1, trials=trials,
                  err_freq=b.err_freq, retransmit_freq=0.0, mean_tau=b.mean_tau, seed=o["seed"])
    if len(ells) >= 3:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for name, pts in (("slope:two_phase", two), ("slope:fixed_length", base)):
                if not pts:
                    continue
                try:
                    s = empirical_exponent(pts)
                except ValueError:
                    s = None
                w.row(scheme=name, rate=rate, alpha=alpha if "two" in name else None,
                      gamma=gamma if "two" in name else None, k=o["k"] if "two" in name else 1,
                      trials=trials, err_freq=s, seed=o["seed"])
    return EXIT_OK


def cmd_verify(o: dict, out) -> int:
    from .verification import run_all

    selected = set(_ints(o["criteria"])) if o["criteria"] else None
    slack = -1.0 if o["inject_failure"] else 1.0
    results = run_all(selected, slack=slack, stream=out)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_VERIFY if failed else EXIT_OK


COMMANDS = {
    "exponents": cmd_exponents,
    "ht-region": cmd_ht_region,
    "ht-sim": cmd_ht_sim,
    "code-sim": cmd_code_sim,
    "verify": cmd_verify,
}


def _dispatch(argv: Sequence[str], stdout) -> int:
    args = build_parser().parse_args(list(argv))
    if not args.command:
        raise UsageError("a command is required: " + ", ".join(COMMANDS))
    opts = resolve(args)
    to_stdout = opts["output"] in ("-", "", None)
    if args.command == "verify" and to_stdout:
        return COMMANDS[args.command](opts, stdout)
    # buffer so that a failing command leaves no partial CSV behind
    buf = io.StringIO()
    code = COMMANDS[args.command](opts, buf)
    if to_stdout:
        stdout.write(buf.getvalue())
    else:
        with open(opts["output"], "w", encoding="utf-8", newline="") as fh:
            fh.write(buf.getvalue())
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        return _dispatch(argv, sys.stdout)
    except UsageError as exc:
        print(f"aflf: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UnsupportedChannelError as exc:
        print(f"aflf: unsupported: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        sys.stdout = open(os.devnull, "w")
        return EXIT_OK
    except OSError as exc:
        print(f"aflf: {exc}", file=sys.stderr)
        return EXIT_USAGE


def run_to_string(argv: Sequence[str]) -> str:
    """Run a command in-process and return what it would print."""
    buf = io.StringIO()
    with contextlib.redirect_stderr(io.StringIO()):
        code = _dispatch(list(argv), buf)
    if code != EXIT_OK:
        raise RuntimeError(f"command {argv!r} exited with {code}")
    return buf.getvalue()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
