"""Command-line driver: JSON experiment configs in, JSON result records and CSV plot data out.

Exit codes:
    0  optimal (sweeps: finished, whatever the status of individual entries)
    1  configuration error
    2  command-line usage error
    3  infeasible problem
    4  unbounded problem
    5  numerical failure
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Optional

import jsonschema

from . import __version__
from .bounds import CallQuote, epsilon_sweep, lower_bound, pinning_quotes, transaction_cost_bound, upper_bound
from .errors import ConfigError, NumericalFailure
from .instruments import (
    TradableOption,
    abs_increment,
    asian_call,
    black_scholes_rule,
    call_option,
    constant,
    explicit_rule,
    lookback_max,
    no_arbitrage_rule,
    terminal_call,
    tighten,
    unrestricted_rule,
)
from .marginals import DiscreteMarginal, MarginalSystem, lognormal_system, read_marginals
from .nnpenalty import TrainConfig, train

log = logging.getLogger("robustbounds")

EXIT_OK, EXIT_CONFIG, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_UNBOUNDED, EXIT_NUMERICAL = 0, 1, 2, 3, 4, 5
STATUS_EXIT = {"optimal": EXIT_OK, "infeasible": EXIT_INFEASIBLE, "unbounded": EXIT_UNBOUNDED}
TASKS = ("bound", "sweep", "nn", "tcost")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int1 = {"type": "integer", "minimum": 1}
_nums = {"type": "array", "items": _num}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_kinded = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}

SCHEMA = _obj(
    {
        "seed": {"type": "integer"},
        "problem": _obj({"periods": _int1, "s0": _pos, "marginals": _kinded}, ["periods", "s0", "marginals"]),
        "instruments": {
            "type": "array",
            "items": _obj({"maturity": _int1, "strike": _nonneg, "label": _int1}, ["maturity", "strike"]),
        },
        "rule": _kinded,
        "payoff": _obj({"name": {"type": "string"}, "strike": _nonneg, "first": {"type": "integer"},
                        "last": {"type": "integer"}, "value": _num}, ["name"]),
        "task": _kinded,
        "output": _obj({"record": {"type": "string"}, "csv": {"type": "string"}, "history": {"type": "string"}}),
    },
    ["problem", "payoff", "task"],
)

_triple = {"type": "array", "items": _int1, "minItems": 3, "maxItems": 3}
_tighten = {"type": "array", "items": _nonneg, "minItems": 2, "maxItems": 2}
_rule_common = {"kind": {"type": "string"}, "dates": {"type": "array", "items": _int1}, "tighten": _tighten}

SUB_SCHEMAS = {
    "marginals": {
        "lognormal": _obj({"kind": {}, "sigma": _pos, "times": {"type": "array", "items": _pos}, "points": _int1},
                          ["sigma", "times", "points"]),
        "explicit": _obj({"kind": {}, "marginals": {"type": "array", "minItems": 1, "items": _obj(
            {"points": _nums, "weights": _nums}, ["points", "weights"])}}, ["marginals"]),
        "file": _obj({"kind": {}, "path": {"type": "string"}}, ["path"]),
    },
    "rule": {
        "no_arbitrage": _obj(_rule_common),
        "unrestricted": _obj({"kind": {}}),
        "black_scholes": _obj({**_rule_common, "sigma_hat": _pos, "eps_vol": _nonneg, "times": _nums},
                              ["sigma_hat", "eps_vol", "times"]),
        "explicit_bands": _obj({**_rule_common, "bands": {"type": "array", "items": _obj(
            {"triple": _triple, "lower": _num, "upper": _num}, ["triple", "lower", "upper"])}}, ["bands"]),
    },
    "task": {
        "bound": _obj({"kind": {}, "side": {"enum": ["upper", "lower"]}}),
        "sweep": _obj({"kind": {}, "eps1": {"type": "array", "items": _nonneg, "minItems": 1},
                       "eps2": {"type": "array", "items": _nonneg, "minItems": 1}}, ["eps1", "eps2"]),
        "nn": _obj({"kind": {}, "batch_size": _int1, "iterations": _int1, "gamma": _pos,
                    "hidden": {"type": "array", "items": _int1}, "window": _pos, "runs": _int1, "lr": _pos}),
        "tcost": _obj({"kind": {}, "eps_stock": {"anyOf": [_nonneg, {"type": "array", "items": _nonneg}]},
                       "eps_option": {"anyOf": [_nonneg, {"type": "array", "items": _nonneg}]},
                       "quotes": {"anyOf": [{"const": "pinning"}, {"type": "array", "items": _obj(
                           {"date": _int1, "strike": _nonneg, "bid": _num, "ask": _num},
                           ["date", "strike", "bid", "ask"])}]},
                       "supports": {"type": "array", "items": _nums}}),
    },
}

PAYOFFS = {
    "asian_call": (("strike",), lambda p: asian_call(p["strike"])),
    "terminal_call": (("strike",), lambda p: terminal_call(p["strike"])),
    "terminal_price": ((), lambda p: terminal_call(0.0)),
    "lookback_max": ((), lambda p: lookback_max()),
    "abs_increment": ((), lambda p: abs_increment(p.get("first", -2), p.get("last", -1))),
    "constant": (("value",), lambda p: constant(p["value"])),
}


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _schema_errors(instance, schema, prefix=()) -> List[tuple]:
    v = jsonschema.Draft202012Validator(schema)
    return [(_path(list(prefix) + list(e.absolute_path)), e.message) for e in sorted(v.iter_errors(instance), key=str)]


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path
    ms: MarginalSystem
    options: List[TradableOption]
    rule: Any
    phi: Any
    task: dict
    seed: int

    @property
    def kind(self) -> str:
        return self.task["kind"]


def _marginals(entry, s0, n, base_dir, errors):
    kind = entry["kind"]
    try:
        if kind == "lognormal":
            if len(entry["times"]) != n:
                errors.append(("problem.marginals.times", f"expected {n} times, got {len(entry['times'])}"))
                return None
            return lognormal_system(s0, entry["sigma"], entry["times"], entry["points"])
        if kind == "explicit":
            margs = [DiscreteMarginal(m["points"], m["weights"]) for m in entry["marginals"]]
        else:
            margs = read_marginals(base_dir / entry["path"])
    except (ValueError, OSError) as exc:
        errors.append(("problem.marginals", str(exc)))
        return None
    if len(margs) != n:
        errors.append(("problem.marginals", f"expected {n} marginals, got {len(margs)}"))
        return None
    try:
        return MarginalSystem(s0, margs)
    except ValueError as exc:
        errors.append(("problem.marginals", str(exc)))
        return None


def _rule(entry, options, n, errors):
    kind = entry["kind"]
    try:
        if kind == "unrestricted":
            return unrestricted_rule()
        if kind == "no_arbitrage":
            rule = no_arbitrage_rule(options, n)
        elif kind == "black_scholes":
            if len(entry["times"]) != n + 1:
                errors.append(("rule.times", f"expected t_0..t_{n}, {n + 1} values, got {len(entry['times'])}"))
                return None
            rule = black_scholes_rule(entry["sigma_hat"], entry["eps_vol"], options, entry["times"])
        else:
            keys = {(o.maturity, o.label) for o in options}
            for idx, b in enumerate(entry["bands"]):
                i, j, k = b["triple"]
                if not (i < j <= n and (j, k) in keys):
                    errors.append((f"rule.bands[{idx}].triple", f"{b['triple']} is not an active triple of the instruments"))
            if errors:
                return None
            rule = explicit_rule({tuple(b["triple"]): (b["lower"], b["upper"]) for b in entry["bands"]})
        if "dates" in entry:
            dates = set(entry["dates"])
            rule = rule.only(lambda t: t[0] in dates)
        if "tighten" in entry:
            rule = tighten(rule, *entry["tighten"])
        return rule
    except ValueError as exc:
        errors.append(("rule", str(exc)))
        return None


def parse_config(path, seed: Optional[int] = None) -> ExperimentConfig:
    """Load and validate a JSON experiment config; raises :class:`ConfigError` listing every problem found."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError([("<file>", str(exc))]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"invalid JSON: {exc}")]) from exc
    errors = _schema_errors(raw, SCHEMA)
    if errors:
        raise ConfigError(errors)
    for block, table in SUB_SCHEMAS.items():
        entry = raw["problem"]["marginals"] if block == "marginals" else raw.get(block, {"kind": "unrestricted"})
        where = ("problem", "marginals") if block == "marginals" else (block,)
        if entry["kind"] not in table:
            errors.append((_path(where + ("kind",)), f"unknown kind {entry['kind']!r}; expected one of {sorted(table)}"))
        else:
            errors += _schema_errors(entry, table[entry["kind"]], where)
    pay = raw["payoff"]
    if pay["name"] not in PAYOFFS:
        errors.append(("payoff.name", f"unknown payoff {pay['name']!r}; expected one of {sorted(PAYOFFS)}"))
    else:
        for key in PAYOFFS[pay["name"]][0]:
            if key not in pay:
                errors.append((f"payoff.{key}", f"required by payoff {pay['name']}"))
    if errors:
        raise ConfigError(errors)

    prob = raw["problem"]
    n = prob["periods"]
    options = []
    seen = set()
    for idx, o in enumerate(raw.get("instruments", [])):
        if o["maturity"] > n:
            errors.append((f"instruments[{idx}].maturity", f"maturity index {o['maturity']} outside 1..{n}"))
            continue
        key = (o["maturity"], o.get("label", 1))
        if key in seen:
            errors.append((f"instruments[{idx}]", f"duplicate (maturity, label) {key}"))
            continue
        seen.add(key)
        options.append(call_option(o["maturity"], o["strike"], o.get("label", 1)))
    ms = _marginals(prob["marginals"], prob["s0"], n, path.parent, errors)
    rule = _rule(raw.get("rule", {"kind": "unrestricted"}), options, n, errors) if not errors else None
    task = raw["task"]
    if task["kind"] == "sweep" and rule is not None and rule.unrestricted:
        errors.append(("rule.kind", "a sweep needs an interval rule"))
    if task["kind"] == "tcost":
        for key in ("eps_stock", "eps_option"):
            if isinstance(task.get(key), list) and len(task[key]) != n:
                errors.append((f"task.{key}", f"expected {n} per-period values"))
        if isinstance(task.get("quotes"), list):
            for idx, q in enumerate(task["quotes"]):
                if q["date"] > n:
                    errors.append((f"task.quotes[{idx}].date", f"date {q['date']} outside 1..{n}"))
                if q["bid"] > q["ask"]:
                    errors.append((f"task.quotes[{idx}]", "bid above ask"))
        if "supports" in task and len(task["supports"]) != n:
            errors.append(("task.supports", f"expected {n} support lists"))
    if errors:
        raise ConfigError(errors)
    payoff = PAYOFFS[pay["name"]][1](pay)
    return ExperimentConfig(raw, path.parent, ms, options, rule, payoff, task, raw.get("seed", 0) if seed is None else seed)


# -- running ------------------------------------------------------------------------


def _finite(x):
    return x if isinstance(x, float) and math.isfinite(x) else None


def run(cfg: ExperimentConfig, threads: int = 1):
    """Execute the configured task; returns ``(record, extra files {name: text}, exit code)``."""
    t0 = time.perf_counter()
    kind = cfg.kind
    record = {"tool": "robustbounds", "version": __version__, "task": kind, "seed": cfg.seed, "config": cfg.raw}
    files = {}
    out = cfg.raw.get("output", {})
    if kind == "bound":
        fn = lower_bound if cfg.task.get("side", "upper") == "lower" else upper_bound
        rep = fn(cfg.ms, cfg.options, cfg.rule, cfg.phi)
        status = rep.status
        if status == "optimal":
            record["values"] = {"primal": rep.primal, "dual": rep.dual, "gap": rep.gap, "mot_baseline": rep.mot_baseline}
        elif rep.witness is not None:
            w = rep.witness
            record["witness"] = {"triple": list(w.triple), "prefix": [float(x) for x in w.prefix],
                                 "lower": float(w.lower), "upper": float(w.upper)}
        record["solver"] = {"iterations": rep.iterations, "scenarios": rep.grid.n_scenarios if rep.grid else None}
    elif kind == "sweep":
        sw = epsilon_sweep(cfg.ms, cfg.options, cfg.rule, cfg.task["eps1"], cfg.task["eps2"], cfg.phi, threads=threads)
        status = "optimal"
        record["values"] = {
            "mot_baseline": sw.mot_baseline,
            "rows": [{"eps1": e.eps1, "eps2": e.eps2, "bound": _finite(e.bound), "status": e.status} for e in sw.entries],
            "monotonicity_violation": sw.monotonicity_violation(),
        }
        files[out.get("csv", "sweep.csv")] = sw.to_csv()
    elif kind == "nn":
        params = {k: v for k, v in cfg.task.items() if k != "kind"}
        if "hidden" in params:
            params["hidden"] = tuple(params["hidden"])
        tc = TrainConfig(seed=cfg.seed, **params)
        res = train(cfg.ms, cfg.options, cfg.rule, cfg.phi, tc, threads=threads)
        status = "optimal"
        rec = res.record()
        record["values"] = {"estimate": rec["estimate"], "run_estimates": rec["run_estimates"],
                            "stderr": _finite(rec["stderr"]), "seeds": rec["seeds"]}
        record["train_config"] = {**rec["config"], "hidden": list(rec["config"]["hidden"])}
        files[out.get("history", "loss_history.csv")] = res.history_csv()
    else:
        supports = cfg.task.get("supports") or [list(map(float, x)) for x in cfg.ms.supports]
        q = cfg.task.get("quotes", "pinning")
        quotes = pinning_quotes(cfg.ms) if q == "pinning" else [CallQuote(d["date"], d["strike"], d["bid"], d["ask"]) for d in q]
        rep = transaction_cost_bound(supports, cfg.ms.s0, cfg.options, cfg.rule, cfg.phi,
                                     cfg.task.get("eps_stock", 0.0), cfg.task.get("eps_option", 0.0), quotes)
        status = rep.status
        if status == "optimal":
            record["values"] = {"primal": rep.primal, "dual": rep.dual, "gap": rep.gap}
        record["solver"] = {"iterations": rep.iterations}
    record["status"] = status
    record["timings"] = {"seconds": time.perf_counter() - t0}
    return record, files, STATUS_EXIT.get(status, EXIT_NUMERICAL)


def write_atomic(path: Path, text: str) -> None:
    """Write through a temporary file in the target directory and rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="robustbounds", description="Robust price bounds with dynamically traded options.")
    ap.add_argument("command", choices=TASKS + ("validate",))
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for sweeps and seeded nn runs")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        cfg = parse_config(args.config, seed=args.seed)
        if args.command != "validate" and cfg.kind != args.command:
            raise ConfigError([("task.kind", f"config task is {cfg.kind!r} but the {args.command!r} command was given")])
    except ConfigError as exc:
        for where, msg in exc.errors:
            print(f"config error at {where}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print(f"{args.config}: ok ({cfg.kind} task, {cfg.ms.n} periods, {len(cfg.options)} options)")
        return EXIT_OK

    try:
        record, files, code = run(cfg, threads=max(1, args.threads))
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out = Path(args.out)
    for name, text in files.items():
        write_atomic(out / name, text)
    name = cfg.raw.get("output", {}).get("record", "result.json")
    write_atomic(out / name, json.dumps(record, indent=2, allow_nan=True) + "\n")
    print(f"{record['task']}: {record['status']} -> {out / name}")
    return code


if __name__ == "__main__":
    sys.exit(main())
