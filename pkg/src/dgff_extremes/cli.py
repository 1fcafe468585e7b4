"""Command-line experiment runner.

Subcommands ``green``, ``sample``, ``extremes``, ``bounds``, ``verify`` and
``all`` write ``<out>/report.json``, data files under ``<out>/data/`` and an
``<out>/index.json`` listing every artifact with its SHA-256.

Exit codes: 0 when every hard test passes, 1 on a hard failure or an I/O
error, 2 on a configuration error.

Config files are flat ``key = value`` text; ``#`` starts a comment, keys are
the long flag names (``radius-rule`` or ``radius_rule``), lists are comma
separated and level sets are written ``x:y`` pairs, e.g. ``levels = 0:inf, -1:0``.
Command-line flags override the environment, which overrides the file. The
only environment variable read is ``DGFF_THREADS`` (worker threads).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .extremes import Rectangle, normalizing_constants
from .green import (GreenTable, SolverSpec, bulk_gap, zero_boundary_variances)
from .lattice import LatticeBox
from .normal import interval_prob, upper_tail
from .rng import TAG_FIELD, TAG_WALK, RngSpec
from .sampler import FACTOR_CAP, INFINITE, ZERO, FieldPlan, SamplerError
from .steinchen import stein_chen_report
from .verify import (EXACT, FAIL, LIMIT, PASS, avoidance_test, empirical_tv, gumbel_test,
                     batch_size, gumbel_trend, markov_property_test, poisson_count_test, replicate,
                     seeds_record, TestReport)
from .walks import green0_coordinate_mc

THREADS_ENV = "DGFF_THREADS"
SUBCOMMANDS = ("green", "sample", "extremes", "bounds", "verify", "all")
BATCH = 100


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    dim: int = 3
    n: tuple = (16,)
    field: str = "infinite"             # zero | infinite
    method: str = "factor"              # factor | spectral | enlarged:<factor>
    delta: float = 0.25
    epsilon: float = 0.1
    radius_rule: str = "paper"          # paper | paper_bulk | fixed:<r>
    reps: int = 1000
    seed: int = 20240601
    threads: int = 1
    out: str = "dgff_out"
    levels: tuple = ((0.0, math.inf), (-1.0, 0.0))
    z: float = 0.0
    b3_used: str = "zero"               # zero | tail_bound
    markov_radius: int = 3
    markov_reps: int = 0                # 0 means "same as reps"
    dense_cap: int = 4096
    c_d: float = 1.0
    dump: int = 2
    green_check: bool = True
    mc_samples: int = 40_000

    def numeric(self) -> dict:
        """Everything that can influence a reported number (excludes threads and out)."""
        d = asdict(self)
        d.pop("threads")
        d.pop("out")
        d["n"] = list(self.n)
        d["levels"] = [[_fmt_level(x), _fmt_level(y)] for x, y in self.levels]
        return d

    def hash(self) -> str:
        text = json.dumps(self.numeric(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    # derived settings

    @property
    def kind(self) -> str:
        return ZERO if self.field == "zero" else INFINITE

    def sampler_method(self) -> tuple[str, float]:
        if self.method.startswith("enlarged"):
            return "enlarged", float(self.method.split(":", 1)[1])
        if self.method == "factor":
            return ("factorization" if self.kind == ZERO else "exact"), 0.0
        return self.method, 0.0

    def radius(self) -> tuple[str, float | None]:
        if self.radius_rule.startswith("fixed:"):
            return "fixed", float(self.radius_rule.split(":", 1)[1])
        return self.radius_rule, None

    @property
    def markov_m(self) -> int:
        return self.markov_reps or self.reps

    def plan(self, n: int) -> FieldPlan:
        method, margin = self.sampler_method()
        kwargs = {"dense_cap": self.dense_cap, "C_d": self.c_d}
        if method == "enlarged":
            kwargs["margin_factor"] = margin
        return FieldPlan(LatticeBox(n, self.dim, self.delta), self.kind, method, **kwargs)


def _fmt_level(v: float) -> str:
    return "inf" if v == math.inf else ("-inf" if v == -math.inf else repr(float(v)))


def _parse_levels(text: str):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            raise ValueError(f"level {item!r} is not of the form x:y")
        x, y = (float(p) for p in parts)
        if not x < y:
            raise ValueError(f"level {item!r} needs x < y")
        out.append((x, y))
    if not out:
        raise ValueError("no levels given")
    return tuple(out)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS = {
    "dim": int, "n": lambda s: tuple(int(v) for v in s.split(",") if v.strip()),
    "field": str.strip, "method": str.strip, "delta": float, "epsilon": float,
    "radius_rule": str.strip, "reps": int, "seed": int, "threads": int, "out": str.strip,
    "levels": _parse_levels, "z": float, "b3_used": str.strip, "markov_radius": int,
    "markov_reps": int, "dense_cap": int, "c_d": float, "dump": int,
    "green_check": _parse_bool, "mc_samples": int,
}
assert set(_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def parse_value(key: str, text: str):
    if key not in _PARSERS:
        raise ConfigError(key, "unknown key")
    try:
        return _PARSERS[key](text)
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file into typed values."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = parse_value(key, val)
    return values


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    """Check every field before any computation; raises :class:`ConfigError`."""
    if cfg.dim < 3:
        raise ConfigError("dim", "must be >= 3")
    if not cfg.n or any(v < 2 for v in cfg.n):
        raise ConfigError("n", "every side must be >= 2")
    if cfg.field not in ("zero", "infinite"):
        raise ConfigError("field", "must be 'zero' or 'infinite'")
    m = cfg.method
    if m.startswith("enlarged"):
        if cfg.field != "infinite":
            raise ConfigError("method", "enlarged-box sampling applies to the infinite field")
        try:
            factor = float(m.split(":", 1)[1])
        except (IndexError, ValueError):
            raise ConfigError("method", "expected enlarged:<factor>") from None
        if factor < 2:
            raise ConfigError("method", "enlarged factor must be >= 2")
    elif m == "spectral":
        if cfg.field != "zero":
            raise ConfigError("method", "spectral sampling applies to the zero-boundary field")
    elif m != "factor":
        raise ConfigError("method", "must be factor, spectral or enlarged:<factor>")
    for n in cfg.n:
        N = n ** cfg.dim
        if m == "factor" and cfg.field == "infinite" and N > cfg.dense_cap:
            raise ConfigError("method", f"n={n} exceeds dense_cap={cfg.dense_cap}; use enlarged:<factor>")
        if m == "factor" and cfg.field == "zero" and N > FACTOR_CAP:
            raise ConfigError("method", f"n={n} exceeds the factorization cap; use spectral")
        if N <= 2:
            raise ConfigError("n", "need N >= 3")
    if not 0 < cfg.delta < 0.5:
        raise ConfigError("delta", "must lie in (0, 1/2)")
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon", "must be positive")
    rule = cfg.radius_rule
    if rule.startswith("fixed:"):
        try:
            r = float(rule.split(":", 1)[1])
        except ValueError:
            raise ConfigError("radius_rule", "expected fixed:<r>") from None
        if r < 0:
            raise ConfigError("radius_rule", "radius must be >= 0")
    elif rule not in ("paper", "paper_bulk"):
        raise ConfigError("radius_rule", "must be paper, paper_bulk or fixed:<r>")
    if cfg.reps < 1000:
        raise ConfigError("reps", "need at least 1000 replications")
    if cfg.markov_reps and cfg.markov_reps < 1000:
        raise ConfigError("markov_reps", "need at least 1000 replications")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed", "must fit in 64 bits")
    if cfg.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    if not math.isfinite(cfg.z):
        raise ConfigError("z", "must be finite")
    if cfg.b3_used not in ("zero", "tail_bound"):
        raise ConfigError("b3_used", "must be zero or tail_bound")
    if cfg.markov_radius < 1:
        raise ConfigError("markov_radius", "must be >= 1")
    if cfg.dump < 0:
        raise ConfigError("dump", "must be >= 0")
    if cfg.mc_samples < 2:
        raise ConfigError("mc_samples", "must be >= 2")
    try:
        for x, y in cfg.levels:
            Rectangle.full(cfg.dim, [(x, y)])
    except ValueError as exc:
        raise ConfigError("levels", str(exc)) from None
    return cfg


# --------------------------------------------------------------------------
# output


class Emitter:
    """Writes artifacts under ``out`` and records them for the index."""

    def __init__(self, out):
        self.root = Path(out)
        self.paths: list[str] = []

    def _write(self, rel: str, text: str) -> str:
        path = self.root / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        except OSError as exc:
            raise IOError(f"cannot write {path}: {exc.strerror}") from None
        if rel not in self.paths:
            self.paths.append(rel)
        return rel

    def data(self, name: str, text: str) -> str:
        return self._write(f"data/{name}", text)

    def report(self, payload: dict) -> str:
        return self._write("report.json", json.dumps(payload, indent=1, sort_keys=True) + "\n")

    def index(self) -> dict:
        def entry(rel):
            blob = (self.root / rel).read_bytes()
            return {"path": rel, "sha256": hashlib.sha256(blob).hexdigest(), "bytes": len(blob)}

        # data artifacts are listed; the report is recorded on its own
        entries = [entry(rel) for rel in sorted(self.paths) if rel != "report.json"]
        payload = {"schema_version": 1, "toolkit_version": __version__, "artifacts": entries,
                   "report": entry("report.json") if "report.json" in self.paths else None}
        try:
            (self.root / "index.json").write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
        except OSError as exc:
            raise IOError(f"cannot write {self.root / 'index.json'}: {exc.strerror}") from None
        return payload


def emit_report(results: dict, tests: list, cfg: ExperimentConfig, em: Emitter,
                subcommand: str) -> dict:
    """Write ``report.json`` and ``index.json``; returns the report payload."""
    hard = [t for t in tests if t.hard]
    payload = {
        "schema_version": 1,
        "toolkit_version": __version__,
        "subcommand": subcommand,
        "config": cfg.numeric(),
        "config_hash": cfg.hash(),
        "rng": RngSpec(cfg.seed).algorithm,
        "results": results,
        "tests": [t.to_dict() for t in tests],
        "hard_tests": len(hard),
        "hard_failures": sorted(t.test for t in hard if t.verdict == FAIL),
        "verdict": FAIL if any(t.verdict == FAIL for t in hard) else PASS,
    }
    em.report(payload)
    em.index()
    return payload


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# --------------------------------------------------------------------------
# shared state


class Context:
    """Per-run caches so ``all`` samples each box once."""

    def __init__(self, cfg: ExperimentConfig, em: Emitter):
        self.cfg = cfg
        self.em = em
        self.rng = RngSpec(cfg.seed)
        self.table = GreenTable(d=cfg.dim)
        self._stats = {}
        self._sigma = {}
        self._sc = {}

    def consts(self, n: int):
        return normalizing_constants(n ** self.cfg.dim, self.table.g0)

    def sigma(self, n: int) -> np.ndarray:
        """Per-site standard deviation of the law actually sampled."""
        if n not in self._sigma:
            plan = self.cfg.plan(n)
            box = plan.box
            if plan.kind == INFINITE and plan.method == "exact":
                var = np.full(box.N, self.table.g0)
            elif plan.kind == ZERO:
                var = zero_boundary_variances(box)
            else:
                inner = plan.inner
                full = zero_boundary_variances(inner).reshape(inner.shape)
                sl = (slice(plan.offset, plan.offset + n),) * self.cfg.dim
                var = full[sl].ravel()
            self._sigma[n] = np.sqrt(var)
        return self._sigma[n]

    def stats(self, n: int) -> np.ndarray:
        """``(M, L + 2)``: counts per level, exceedances of ``(z, inf]``, max height."""
        if n not in self._stats:
            cfg = self.cfg
            consts = self.consts(n)
            plan = cfg.plan(n)
            levels = list(cfg.levels)

            def reduce(values):
                h = (values - consts.b_N) / consts.a_N
                cols = [((h > x) & (h <= y)).sum(axis=1) for x, y in levels]
                cols.append((h > cfg.z).sum(axis=1))
                cols.append(h.max(axis=1))
                return np.column_stack(cols).astype(np.float64)

            self._stats[n] = replicate(plan, self.rng, cfg.reps, reduce, threads=cfg.threads,
                                       batch=batch_size(plan, BATCH))
        return self._stats[n]

    def steinchen(self, n: int):
        if n not in self._sc:
            cfg = self.cfg
            rule, radius = cfg.radius()
            box = LatticeBox(n, cfg.dim, cfg.delta)
            rect = Rectangle.full(cfg.dim, [(cfg.z, math.inf)])
            self._sc[n] = stein_chen_report(box, [rect], cfg.epsilon, self.table, self.consts(n),
                                            z=cfg.z, rule=rule, radius=radius,
                                            b3_used=cfg.b3_used,
                                            finite_volume=(cfg.kind == ZERO))
        return self._sc[n]


# --------------------------------------------------------------------------
# subcommands


def _green_oracle_test(ctx: Context) -> TestReport:
    """``g(0)`` by quadrature against the conditional Monte Carlo walk oracle."""
    cfg, table = ctx.cfg, ctx.table
    mc = green0_coordinate_mc(cfg.dim, samples=cfg.mc_samples, rng=ctx.rng)
    diff = abs(mc.estimate - table.g0)
    return TestReport(
        test="green_g0_oracle", mode=EXACT, statistic=mc.estimate, reference=table.g0,
        verdict=PASS if diff <= 4 * mc.stderr else FAIL, M=mc.samples,
        tolerance="|MC - quadrature| <= 4 SE", stderr=mc.stderr,
        seeds=seeds_record(ctx.rng, TAG_WALK, 0, 1), details=dict(mc.details))


def cmd_green(ctx: Context):
    cfg, table = ctx.cfg, ctx.table
    rmax = min(max(cfg.n) - 1, 12)
    offsets = table.offsets_up_to(rmax)
    table.ensure(map(tuple, offsets))
    rows = [list(map(int, o)) + [table.value(o)] for o in offsets]
    ctx.em.data("green_table.csv", _csv([f"o{j + 1}" for j in range(cfg.dim)] + ["g"], rows))
    results = {"g0": table.g0, "kappa": table.kappa, "table_radius": rmax,
               "quadrature_tol": table.quad_spec.tol, "bulk": []}
    tests = [_green_oracle_test(ctx)] if cfg.green_check else []
    spec = SolverSpec()
    for n in cfg.n:
        if n ** cfg.dim > 40 ** 3:
            continue
        res = bulk_gap(LatticeBox(n, cfg.dim), cfg.delta, table, spec)
        results["bulk"].append(asdict(res))
        tests.append(TestReport(
            test=f"bulk_sandwich_n{n}", mode=EXACT, statistic=res.max_violation, reference=0.0,
            verdict=PASS if res.max_violation <= 1e3 * spec.tol else FAIL, M=1,
            tolerance="max(g_N - g) over bulk pairs <= solver tolerance",
            details={"max_gap": res.max_gap, "scaled_gap": res.scaled_gap}))
    if results["bulk"]:
        results["calibrated_C_d"] = max(b["scaled_gap"] for b in results["bulk"])
    return results, tests


def cmd_sample(ctx: Context):
    cfg = ctx.cfg
    results = {}
    for n in cfg.n:
        plan = cfg.plan(n)
        dumped = []
        for i in range(cfg.dump):
            s = plan.sample(ctx.rng, i)
            dumped.append(ctx.em.data(f"field_n{n}_r{i}.csv", s.to_csv()))
            ctx.em.data(f"field_n{n}_r{i}.json", json.dumps(s.envelope(), indent=1, sort_keys=True))
        results[str(n)] = {"method": plan.label, "kind": plan.kind, "bias_bound": plan.bias_bound,
                           "files": dumped}
    return results, []


def _count_tests(ctx: Context, n: int):
    cfg = ctx.cfg
    consts = ctx.consts(n)
    st = ctx.stats(n)
    sigma = ctx.sigma(n)
    seeds = seeds_record(ctx.rng, TAG_FIELD, 0, cfg.reps)
    tests = []
    oracles = []
    for j, (x, y) in enumerate(cfg.levels):
        rect = Rectangle.full(cfg.dim, [(x, y)])
        oracle = float(np.sum(interval_prob(consts.threshold(x), consts.threshold(y), sigma)))
        oracles.append(oracle)
        counts = st[:, j].astype(np.int64)
        tag = f"n{n}_level{j}"
        t = poisson_count_test(counts, rect, EXACT, oracle, name=f"count_exact_{tag}", seeds=seeds)
        t.details["limit_relative_gap"] = abs(oracle - rect.intensity()) / rect.intensity()
        tests.append(t)
        tests.append(poisson_count_test(counts, rect, LIMIT, name=f"count_limit_{tag}", seeds=seeds))
    return tests, oracles


def _write_counts(ctx: Context, n: int) -> str:
    cfg = ctx.cfg
    st = ctx.stats(n)
    header = ["rep"] + [f"count_{_fmt_level(x)}_{_fmt_level(y)}" for x, y in cfg.levels] \
        + ["exceed_z", "max_rescaled"]
    rows = [[i] + [int(v) for v in r[:-1]] + [float(r[-1])] for i, r in enumerate(st)]
    return ctx.em.data(f"counts_n{n}.csv", _csv(header, rows))


def cmd_extremes(ctx: Context):
    cfg = ctx.cfg
    results, tests = {}, []
    for n in cfg.n:
        consts = ctx.consts(n)
        st = ctx.stats(n)
        counts_path = _write_counts(ctx, n)
        plan = cfg.plan(n)
        box = plan.box
        coords = box.coords() / n
        for i in range(min(cfg.dump, cfg.reps)):
            values = plan.sample_values(ctx.rng, [i])[0]
            h = (values - consts.b_N) / consts.a_N
            keep = h > cfg.z
            prow = [list(c) + [hh] for c, hh in zip(coords[keep], h[keep])]
            ctx.em.data(f"points_n{n}_r{i}.csv",
                        _csv([f"x{j + 1}" for j in range(cfg.dim)] + ["height"], prow))
        t, oracles = _count_tests(ctx, n)
        for x in t:
            x.artifacts.append(counts_path)
        tests.extend(t)
        results[str(n)] = {"consts": consts.to_dict(), "mean_counts": st[:, :-2].mean(axis=0).tolist(),
                           "oracle_means": oracles, "method": plan.label,
                           "bias_bound": plan.bias_bound}
    return results, tests


def cmd_bounds(ctx: Context):
    cfg = ctx.cfg
    results, rows = {}, []
    for n in cfg.n:
        rep = ctx.steinchen(n)
        results[str(n)] = rep.to_dict()
        c = rep.b3_certificate
        rows.append([n, rep.b1, rep.b2_numeric, rep.b2_analytic, c.sup_green, c.var_bound,
                     c.tail_bound, rep.b3_used, rep.lambda_min, rep.tv_bound])
    ctx.em.data("steinchen.csv", _csv(["n", "b1", "b2_numeric", "b2_analytic", "sup_green",
                                       "var_bound", "tail_bound", "b3_used", "lambda_min",
                                       "tv_bound"], rows))
    return results, []


def cmd_verify(ctx: Context):
    cfg = ctx.cfg
    results, tests = {}, []
    ks = {}
    for n in cfg.n:
        consts = ctx.consts(n)
        st = ctx.stats(n)
        sigma = ctx.sigma(n)
        seeds = seeds_record(ctx.rng, TAG_FIELD, 0, cfg.reps)
        counts_path = _write_counts(ctx, n)
        ct, oracles = _count_tests(ctx, n)
        tests.extend(ct)
        sc = ctx.steinchen(n)
        u = consts.threshold(cfg.z)
        p = upper_tail(u / sigma)
        bern = float(np.exp(np.sum(np.log1p(-p))))
        rect = Rectangle.full(cfg.dim, [(cfg.z, math.inf)])
        zero = st[:, -2] == 0
        tests.append(avoidance_test(None, [rect], bernoulli_reference=bern, tv_bound=sc.tv_bound,
                                    zero_flags=zero, name=f"avoidance_exact_n{n}", seeds=seeds))
        tests.append(avoidance_test(None, [rect], zero_flags=zero, name=f"avoidance_limit_n{n}",
                                    seeds=seeds))
        g = gumbel_test(st[:, -1], name=f"gumbel_n{n}", seeds=seeds)
        for t in tests[-(len(ct) + 2):]:
            t.artifacts.append(counts_path)
        g.artifacts.append(counts_path)
        ks[n] = g.statistic
        tests.append(g)
        lam = float(np.sum(p))
        if lam <= 10:
            tests.append(empirical_tv(st[:, -2].astype(np.int64), [lam], tv_bound=sc.tv_bound,
                                      name=f"empirical_tv_n{n}", seeds=seeds))
        results[str(n)] = {"consts": consts.to_dict(), "oracle_means": oracles,
                           "bernoulli_avoidance": bern, "lambda": lam,
                           "steinchen": sc.to_dict(), "method": cfg.plan(n).label}
    ns = sorted(ks)
    if len(ns) > 1:
        results["gumbel_trend"] = {f"{a}->{b}": gumbel_trend(ks[a], ks[b])
                                   for a, b in zip(ns, ns[1:])}
    r = cfg.markov_radius
    eligible = [n for n in cfg.n if n >= 2 * r + 1 and n ** cfg.dim <= FACTOR_CAP]
    if eligible:
        n = eligible[0]
        box = LatticeBox(n, cfg.dim)
        tests.append(markov_property_test(box, box.center(), r, cfg.markov_m, rng=ctx.rng,
                                          threads=cfg.threads, name=f"markov_n{n}"))
    if cfg.green_check:
        tests.append(_green_oracle_test(ctx))
    return results, tests


def replace_ctx(ctx: Context, **changes) -> Context:
    """A context sharing caches but with some config fields changed."""
    new = Context.__new__(Context)
    new.__dict__.update(ctx.__dict__)
    new.cfg = replace(ctx.cfg, **changes)
    return new


def cmd_all(ctx: Context):
    results, tests = {}, []
    for name, fn in (("green", cmd_green), ("sample", cmd_sample), ("extremes", cmd_extremes),
                     ("bounds", cmd_bounds)):
        r, t = fn(ctx)
        results[name] = r
        tests.extend(t)
    r, t = cmd_verify(replace_ctx(ctx, green_check=False))
    results["verify"] = r
    tests.extend(t)
    return results, tests


COMMANDS = {"green": cmd_green, "sample": cmd_sample, "extremes": cmd_extremes,
            "bounds": cmd_bounds, "verify": cmd_verify, "all": cmd_all}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--dim", help="lattice dimension d >= 3")
    common.add_argument("--n", help="box side(s), comma separated")
    common.add_argument("--delta", help="bulk parameter in (0, 1/2)")
    common.add_argument("--epsilon", help="neighbourhood exponent > 0")
    common.add_argument("--radius-rule", dest="radius_rule", help="paper | paper_bulk | fixed:<r>")
    common.add_argument("--field", choices=("zero", "infinite"))
    common.add_argument("--method", help="factor | spectral | enlarged:<factor>")
    common.add_argument("--reps", help="replications M")
    common.add_argument("--seed", help="master seed")
    common.add_argument("--threads", help=f"worker threads (env {THREADS_ENV})")
    common.add_argument("--out", help="output directory")
    common.add_argument("--levels", help="level sets x:y, comma separated")
    common.add_argument("--z", help="exceedance level for bounds and avoidance")
    common.add_argument("--b3-used", dest="b3_used", help="zero | tail_bound")
    common.add_argument("--markov-radius", dest="markov_radius")
    common.add_argument("--markov-reps", dest="markov_reps")
    common.add_argument("--dense-cap", dest="dense_cap")
    common.add_argument("--c-d", dest="c_d")
    common.add_argument("--dump", help="fields/patterns written per n")
    common.add_argument("--green-check", dest="green_check")
    common.add_argument("--mc-samples", dest="mc_samples")
    parser = argparse.ArgumentParser(prog="dgff-extremes", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def load_config(args: argparse.Namespace, environ=None) -> ExperimentConfig:
    environ = os.environ if environ is None else environ
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    if environ.get(THREADS_ENV):
        values["threads"] = parse_value("threads", environ[THREADS_ENV])
    for key in _PARSERS:
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = parse_value(key, str(raw))
    return validate(ExperimentConfig(**values))


def run(command: str, cfg: ExperimentConfig) -> tuple[int, dict]:
    em = Emitter(cfg.out)
    ctx = Context(cfg, em)
    results, tests = COMMANDS[command](ctx)
    payload = emit_report(results, tests, cfg, em, command)
    return (0 if payload["verdict"] == PASS else 1), payload


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)      # exits with status 2 on unknown flags
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        code, payload = run(args.command, cfg)
    except SamplerError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    print(f"{args.command}: {payload['verdict']} ({payload['hard_tests']} hard tests, "
          f"failures: {', '.join(payload['hard_failures']) or 'none'}) -> {cfg.out}/report.json")
    return code


if __name__ == "__main__":
    sys.exit(main())
