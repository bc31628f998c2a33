"""Experiment configuration, the claim registry and report emission."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
import re
import sys as _sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import plotting
from .chain import (AttractorLimitError, BoxCover, approximate_by_periodic_orbit, attractors,
                    attractors_json, build_transition_graph, chain_recurrent_set, check_conley_identity,
                    check_transitive_iff_no_proper_attractor, isolated_part)
from .flow import SmoothSystem, StepControl, divergence, flow_map_variational, integrate
from .hyperbolicity import (bump_family, check_index_constancy, check_sectional_expansion,
                            detect_intersection, estimate_splitting, find_critical_orbits, local_manifold,
                            morse_index, orbits_json, sampled_strong_homogeneity, verify_disk_points)
from .periodic import toral_periodic_orbits
from .pseudo_orbit import (gap_profile, generate_noisy, generate_noisy_many, is_asymptotic_average_pseudo,
                           is_average_pseudo, is_delta_pseudo, is_limit_pseudo, linear_pseudo_orbit,
                           orbit_samples)
from .shadowing import (limit_shadowing_falsifier, linear_shadow_oracle, search_shadowing_orbit,
                        shadow_report)
from .systems import DEFAULTS, SystemSpec, build_system, default_region, pendulum_energy, suspension_period

if _sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SUITES = ("shadowing", "average_shadowing", "limit_shadowing", "asymptotic_shadowing",
          "chain_dynamics", "hyperbolicity", "manifolds", "full")

STATUSES = ("pass", "fail", "inconclusive")


class ConfigError(ValueError):
    """Unreadable or invalid experiment configuration."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None,
                 field_path: Optional[str] = None):
        where = []
        if line is not None:
            where.append(f"line {line}, column {column}")
        if field_path:
            where.append(f"field {field_path!r}")
        super().__init__(f"{message} ({'; '.join(where)})" if where else message)
        self.line = line
        self.column = column
        self.field_path = field_path


class SuiteParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    delta: float = Field(1e-3, gt=0)
    segments: int = Field(200, ge=8)
    orbits: int = Field(10, ge=1)
    candidate_seeds: int = Field(2, ge=0)
    shadow_tol: float = Field(0.05, gt=0)
    average_delta: float = Field(1e-2, gt=0)
    average_tol: float = Field(0.02, gt=0)
    spike_scale: float = Field(100.0, gt=0)
    spike_every: int = Field(25, ge=2)
    limit_delta: float = Field(1e-2, gt=0)
    asymptotic_tol: float = Field(0.01, gt=0)
    asymptotic_spike_radius: int = Field(5, ge=1)
    depth: Optional[int] = Field(None, ge=1, le=10)
    max_period: int = Field(8, ge=1, le=12)
    span: float = Field(20.0, ge=10)
    planes: int = Field(20, ge=1)
    perturbations: int = Field(5, ge=1)
    eta: float = Field(1e-3, gt=0)
    eps: float = Field(0.5, gt=0)
    horizon: float = Field(10.0, gt=0)
    manifold_samples: int = Field(50, ge=2)
    intersection_tol: float = Field(1e-4, gt=0)
    divergence_points: int = Field(1000, ge=1)
    det_horizon: float = Field(10.0, gt=0)


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    system: SystemSpec
    suite: Literal["shadowing", "average_shadowing", "limit_shadowing", "asymptotic_shadowing",
                   "chain_dynamics", "hyperbolicity", "manifolds", "full"]
    params: SuiteParams = SuiteParams()
    seed: int
    output_dir: str = "shadowlab-out"

    def config_hash(self) -> str:
        """Hash of everything that affects results (the output directory does not)."""
        blob = json.dumps(self.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True,
                          separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


_POS = re.compile(r"line (\d+), column (\d+)")
_AT = re.compile(r"\s*\(at line \d+, column \d+\)")


def parse_experiment(text: str, fmt: str) -> ExperimentSpec:
    if fmt == "json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"JSON parse error: {err.msg}", err.lineno, err.colno) from err
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as err:
            m = _POS.search(str(err))
            line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
            raise ConfigError(f"TOML parse error: {_AT.sub('', str(err))}", line, col) from err
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table/object")
    try:
        return ExperimentSpec.model_validate(data)
    except ValidationError as err:
        first = err.errors()[0]
        path = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{first['msg']}", field_path=path) from err


def load_experiment(path) -> ExperimentSpec:
    """Read a TOML or JSON experiment file (chosen by suffix; ``.json`` is JSON, anything else TOML)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from err
    return parse_experiment(text, "json" if path.suffix.lower() == ".json" else "toml")


def dump_experiment(spec: ExperimentSpec, path) -> None:
    """Write ``spec`` as JSON, with every default filled in."""
    Path(path).write_text(json.dumps(spec.model_dump(mode="json", exclude_none=True), indent=2,
                                     sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# verdicts and reports
# --------------------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


@dataclass(frozen=True)
class Verdict:
    claim: str
    status: str
    statistic: Optional[float] = None
    threshold: Optional[float] = None
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.claim not in REGISTRY:
            raise ValueError(f"unknown claim {self.claim!r}")

    def to_dict(self) -> dict:
        return _clean({"claim": self.claim, "status": self.status, "statistic": self.statistic,
                       "threshold": self.threshold, "detail": self.detail})


@dataclass(frozen=True)
class Report:
    system: dict
    suite: str
    params: dict
    verdicts: list
    artifacts: list          # [{"path", "sha256", "bytes"}]
    provenance: dict

    @property
    def exit_code(self) -> int:
        statuses = {v.status for v in self.verdicts}
        if "fail" in statuses:
            return 1
        if "inconclusive" in statuses or not self.verdicts:
            return 2
        return 0

    def to_dict(self) -> dict:
        return {"system": self.system, "suite": self.suite, "params": self.params,
                "verdicts": [v.to_dict() for v in self.verdicts], "artifacts": self.artifacts,
                "provenance": self.provenance, "exit_code": self.exit_code}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _versions() -> dict:
    from importlib.metadata import PackageNotFoundError, version

    out = {"python": platform.python_version()}
    for name, dist in (("shadowlab", "artifact"), ("numpy", "numpy"), ("scipy", "scipy"),
                       ("matplotlib", "matplotlib")):
        try:
            out[name] = version(dist)
        except PackageNotFoundError:
            out[name] = "unknown"
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def emit_report(report: Report, output_dir, formats=("json", "csv")) -> list:
    """Write ``report.json`` (always) and ``verdicts.csv`` (with ``"csv"``); returns the paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json"]
    paths[0].write_text(report.to_json())
    if "csv" in formats:
        p = out / "verdicts.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["claim", "status", "statistic", "threshold"])
            for v in report.verdicts:
                d = v.to_dict()
                w.writerow([d["claim"], d["status"], _cell(d["statistic"]), _cell(d["threshold"])])
        paths.append(p)
    return paths


def _cell(v) -> str:
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


# --------------------------------------------------------------------------
# claim registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Claim:
    id: str
    title: str
    statement: str
    source: str                       # module.operation the verdict rests on
    suites: tuple
    applies: Callable[[SystemSpec], bool]
    run: Callable

    def to_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "statement": self.statement, "source": self.source,
                "suites": list(self.suites)}


REGISTRY: dict = {}


def claim(id: str, title: str, statement: str, source: str, suites, applies):
    def deco(fn):
        REGISTRY[id] = Claim(id, title, statement, source, tuple(suites), applies, fn)
        return fn
    return deco


def claims() -> list:
    return [REGISTRY[k] for k in sorted(REGISTRY)]


def _params(spec: SystemSpec) -> dict:
    p = dict(DEFAULTS[spec.kind])
    p.update(spec.params)
    return p


def _linear_eigs(spec: SystemSpec):
    if spec.kind != "linear":
        return None
    try:
        M = np.asarray(_params(spec)["matrix"], dtype=float)
        w = np.linalg.eigvals(M)
    except (ValueError, np.linalg.LinAlgError):
        return None
    if np.any(np.abs(w.imag) > 1e-12):
        return None
    return np.sort(w.real)[::-1]


def _linear_hyperbolic(spec) -> bool:
    w = _linear_eigs(spec)
    return w is not None and bool(np.all(np.abs(w) > 1e-9))


def _linear_saddle(spec) -> bool:
    w = _linear_eigs(spec)
    return _linear_hyperbolic(spec) and len(w) == 2 and w[0] > 0 > w[1]


def _kinds(*names):
    return lambda spec: spec.kind in names


def _any(*preds):
    return lambda spec: any(p(spec) for p in preds)


_hyperbolic = _any(_kinds("suspended_toral_automorphism"), _linear_hyperbolic)


class _Context:
    def __init__(self, spec: ExperimentSpec, sys: SmoothSystem, out: Path):
        self.spec = spec
        self.sys = sys
        self.p = spec.params
        self.seed = spec.seed
        self.out = out
        self.files: list = []
        self.cache: dict = {}

    @property
    def kind(self) -> str:
        return self.spec.system.kind

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text if text.endswith("\n") else text + "\n")

    def cached(self, key, make):
        if key not in self.cache:
            self.cache[key] = make()
        return self.cache[key]

    def base_point(self) -> np.ndarray:
        n = self.sys.dimension
        return np.linspace(0.3, 0.6, n) if n > 1 else np.array([0.3])


def _status(ok: Optional[bool]) -> str:
    return "inconclusive" if ok is None else ("pass" if ok else "fail")


# ---- pseudo-orbit builders shared by the shadowing claims -----------------


def _window(ctx):
    half = ctx.p.segments // 2
    return -half, 2 * half


def _noisy(ctx, delta, scale, tag, seed):
    """Pseudo-orbit on the symmetric window with per-step noise radii ``delta * scale``."""
    i_min, segs = _window(ctx)
    if ctx.kind == "linear":
        A = _params(ctx.spec.system)["matrix"]
        return linear_pseudo_orbit(A, segs, delta, seed=seed, i_min=i_min, noise_scale=scale,
                                   class_tag=tag)
    return generate_noisy(ctx.sys, ctx.base_point(), segs, delta, seed=seed, i_min=i_min,
                          noise_scale=scale, class_tag=tag)


def _indices(ctx):
    i_min, segs = _window(ctx)
    return np.arange(i_min, i_min + segs)


def _plain_family(ctx):
    i_min, segs = _window(ctx)
    p = ctx.p
    seeds = [ctx.seed * 10_000 + j for j in range(p.orbits)]
    if ctx.kind == "linear":
        A = _params(ctx.spec.system)["matrix"]
        return [linear_pseudo_orbit(A, segs, p.delta, seed=s, i_min=i_min) for s in seeds]
    X0 = np.random.default_rng(ctx.seed).random((p.orbits, ctx.sys.dimension))
    return generate_noisy_many(ctx.sys, X0, segs, p.delta, seeds=seeds, i_min=i_min)


def _shadow_family(ctx):
    def make():
        out = []
        for j, po in enumerate(_plain_family(ctx)):
            prof = gap_profile(ctx.sys, po)
            res = search_shadowing_orbit(ctx.sys, po, candidate_seeds=ctx.p.candidate_seeds, kind="sup",
                                         seed=ctx.seed + j)
            out.append((po, prof, res))
        return out
    return ctx.cached("plain-family", make)


def _segment_plot(ctx, name, rep, title, threshold=None, logy=True):
    y = np.maximum(rep.segment_sup, 1e-300)
    plotting.line_plot(ctx.path(name), {"segment sup": (rep.indices, y)}, title=title, xlabel="i",
                       ylabel="distance", logy=logy,
                       hlines=None if threshold is None else {"threshold": threshold})


@claim("SH-01", "delta-pseudo orbits are shadowed",
       "Seeded delta-pseudo orbits of a hyperbolic flow are followed by a true orbit within the sup tolerance.",
       "shadowing.search_shadowing_orbit", ("shadowing", "full"), _hyperbolic)
def _sh01(ctx):
    fam = _shadow_family(ctx)
    valid = all(is_delta_pseudo(prof, ctx.p.delta) for _, prof, _ in fam)
    sups = np.array([res.report.value for _, _, res in fam])
    ctx.write_csv("SH-01_orbits.csv", ["orbit", "sup", "max_gap", "winner"],
                  [(j, float(res.report.value), float(prof.max),
                    next(lab for lab, _, r in res.candidates if r is res.report))
                   for j, (_, prof, res) in enumerate(fam)])
    worst = int(np.argmax(sups))
    rep = fam[worst][2].report
    rep.to_csv(ctx.path("SH-01_worst_segments.csv"))
    _segment_plot(ctx, "SH-01_worst_segments.png", rep, f"worst of {len(fam)} orbits", ctx.p.shadow_tol)
    stat = float(sups.max())
    if not valid:
        return Verdict("SH-01", "inconclusive", stat, ctx.p.shadow_tol,
                       {"reason": "generated sequence is not a delta-pseudo orbit"})
    return Verdict("SH-01", _status(stat < ctx.p.shadow_tol), stat, ctx.p.shadow_tol,
                   {"orbits": len(fam), "median": float(np.median(sups))})


@claim("SH-02", "linear shadowing constant",
       "On a hyperbolic linear flow the shadowing distance stays below 10 delta kappa, kappa from the exact bounded solution.",
       "shadowing.linear_shadow_oracle", ("shadowing", "full"), _linear_hyperbolic)
def _sh02(ctx):
    A = _params(ctx.spec.system)["matrix"]
    rows, ratio, kappa = [], [], None
    for j, (po, prof, res) in enumerate(_shadow_family(ctx)):
        y, kappa = linear_shadow_oracle(A, po)
        oracle = float(np.max(np.linalg.norm(y - po.points, axis=1)))
        rows.append((j, float(res.report.value), oracle, kappa))
        ratio.append(res.report.value)
    thr = 10 * ctx.p.delta * kappa
    ctx.write_csv("SH-02_oracle.csv", ["orbit", "sup", "oracle_sup", "kappa"], rows)
    stat = float(max(ratio))
    return Verdict("SH-02", _status(stat < thr), stat, thr, {"kappa": kappa})


@claim("SH-03", "exact orbits shadow themselves",
       "For an exact orbit sampling and the identity time change all four statistics are at integrator accuracy.",
       "shadowing.shadow_report", ("shadowing", "full"), lambda spec: True)
def _sh03(ctx):
    half = 4 if ctx.kind == "lorenz" else 8
    x0 = {"pendulum": [0.5, 0.3], "gradient_morse_smale": [1.0, 2.0],
          "lorenz": [-7.7, -9.8, 22.4]}.get(ctx.kind)
    x0 = ctx.base_point() if x0 is None else np.array(x0)
    if ctx.kind == "linear":
        x0 = 1e-3 * ctx.base_point()
    po = orbit_samples(ctx.sys, x0, -half, half)
    vals = {}
    for kind in ("sup", "average", "limit_tail", "asymptotic_average"):
        rep = shadow_report(kind, ctx.sys, po, x0)
        vals[kind] = float(rep.value)
    stat = max(vals.values())
    ctx.write_json("SH-03_statistics.json", vals)
    return Verdict("SH-03", _status(stat < 1e-5), stat, 1e-5, {"window": [-half, half]})


def _spiked(ctx):
    idx = _indices(ctx)
    scale = np.where(idx % ctx.p.spike_every == 0, ctx.p.spike_scale, 1.0)
    return ctx.cached("average-po", lambda: _noisy(ctx, ctx.p.delta, scale, "average", ctx.seed + 1))


@claim("AV-01", "spiked pseudo orbits are average-pseudo",
       "Sparse large jumps on a delta-noisy sequence give an average-pseudo orbit that is not a delta-pseudo orbit.",
       "pseudo_orbit.is_average_pseudo", ("average_shadowing", "full"), _hyperbolic)
def _av01(ctx):
    po = _spiked(ctx)
    prof = gap_profile(ctx.sys, po)
    av = is_average_pseudo(prof, ctx.p.average_delta)
    plain = is_delta_pseudo(prof, ctx.p.delta)
    prof.to_csv(ctx.path("AV-01_gaps.csv"))
    ok = av.ok and not plain
    return Verdict("AV-01", _status(ok), av.N, len(prof.gaps) // 2,
                   {"average_ok": av.ok, "delta_pseudo": plain, "max_gap": prof.max})


@claim("AV-02", "average-pseudo orbits are average-shadowed",
       "The spiked average-pseudo orbit is shadowed in average below the tolerance.",
       "shadowing.average_statistic", ("average_shadowing", "full"), _hyperbolic)
def _av02(ctx):
    po = _spiked(ctx)
    res = search_shadowing_orbit(ctx.sys, po, candidate_seeds=ctx.p.candidate_seeds, kind="average",
                                 seed=ctx.seed)
    rep = res.report
    rep.to_csv(ctx.path("AV-02_segments.csv"))
    series = {f"{side} averages": (np.arange(1, len(v) + 1), v)
              for side, v in sorted(rep.tail.items()) if side.endswith("_averages")}
    plotting.line_plot(ctx.path("AV-02_averages.png"), series, title="Cesaro averages", xlabel="n",
                       ylabel="average integral", hlines={"tolerance": ctx.p.average_tol})
    return Verdict("AV-02", _status(rep.value < ctx.p.average_tol), rep.value, ctx.p.average_tol,
                   {"candidates": len(res.candidates)})


def _limit_schedule(ctx):
    c = 10 * ctx.p.limit_delta
    return lambda a: c / (1.0 + np.asarray(a, dtype=float))


def _decaying(ctx):
    idx = _indices(ctx)
    scale = 1.0 / (1.0 + np.abs(idx))
    return ctx.cached("limit-po", lambda: _noisy(ctx, ctx.p.limit_delta, scale, "limit", ctx.seed + 2))


@claim("LS-01", "decaying noise gives limit-pseudo orbits",
       "Gaps bounded by delta/(1+|i|) pass the limit-pseudo test against the schedule 10 delta/(1+|i|).",
       "pseudo_orbit.is_limit_pseudo", ("limit_shadowing", "full"), _hyperbolic)
def _ls01(ctx):
    po = _decaying(ctx)
    prof = gap_profile(ctx.sys, po)
    prof.to_csv(ctx.path("LS-01_gaps.csv"))
    sched = _limit_schedule(ctx)
    ratio = float(np.max(prof.gaps / sched(np.abs(prof.indices))))
    return Verdict("LS-01", _status(is_limit_pseudo(prof, sched)), ratio, 1.0, {"max_gap": prof.max})


@claim("LS-02", "limit-pseudo orbits are limit-shadowed",
       "Segment integrals of the best shadowing orbit over the outer quarter stay below the schedule.",
       "shadowing.limit_statistic", ("limit_shadowing", "full"), _hyperbolic)
def _ls02(ctx):
    po = _decaying(ctx)
    sched = _limit_schedule(ctx)
    res = search_shadowing_orbit(ctx.sys, po, candidate_seeds=ctx.p.candidate_seeds, kind="limit_tail",
                                 seed=ctx.seed, schedule=sched)
    rep = res.report
    rep.tail_csv(ctx.path("LS-02_tail.csv"))
    ratio = 0.0
    series = {}
    for side in ("forward", "backward"):
        if f"{side}_index" in rep.tail:
            i = np.abs(np.asarray(rep.tail[f"{side}_index"]))
            v = np.asarray(rep.tail[f"{side}_values"])
            ratio = max(ratio, float(np.max(v / sched(i))))
            series[side] = (i, np.maximum(v, 1e-300))
    a = np.arange(1, np.abs(rep.indices).max() + 1)
    series["schedule"] = (a, sched(a))
    plotting.line_plot(ctx.path("LS-02_tail.png"), series, title="tail segment integrals", xlabel="|i|",
                       ylabel="integral", logy=True)
    return Verdict("LS-02", _status(bool(rep.passed)), ratio, 1.0, {"floor": rep.tail["floor"]})


@claim("LS-03", "attractor crossing is not limit-shadowed",
       "Joining the orbit of a sink to an orbit outside its basin gives a limit-pseudo orbit whose every candidate "
       "shadow keeps tail integrals at least eps0/2 > 0.01.",
       "shadowing.limit_shadowing_falsifier", ("limit_shadowing", "full"), _kinds("gradient_morse_smale"))
def _ls03(ctx):
    sink = np.array([math.pi, math.pi])
    other = np.array([math.pi / 2, 0.0])
    if float(_params(ctx.spec.system)["strength"]) < 0:
        sink = np.zeros(2)
        other = np.array([math.pi / 2, math.pi])
    half = ctx.p.segments // 2
    fal = limit_shadowing_falsifier(ctx.sys, sink, other, back_len=min(half, 40), fwd_len=min(half, 40),
                                    candidate_seeds=ctx.p.candidate_seeds, seed=ctx.seed)
    ctx.write_json("LS-03_falsifier.json", fal.to_dict())
    fal.search.report.tail_csv(ctx.path("LS-03_tail.csv"))
    thr = fal.eps0 / 2
    floor = min(fal.floors.values())
    ok = fal.falsified and thr > 0.01
    return Verdict("LS-03", _status(ok), floor, thr, {"eps0": fal.eps0, "candidates": len(fal.floors)})


def _asym(ctx):
    idx = _indices(ctx)
    scale = np.where(np.abs(idx) < ctx.p.asymptotic_spike_radius, ctx.p.spike_scale, 0.0)
    return ctx.cached("asym-po", lambda: _noisy(ctx, ctx.p.delta, scale, "asymptotic", ctx.seed + 3))


@claim("AA-01", "central jumps give asymptotic average-pseudo orbits",
       "A sequence with large jumps only near i = 0 has symmetric Cesaro gap averages decaying below the tolerance.",
       "pseudo_orbit.is_asymptotic_average_pseudo", ("asymptotic_shadowing", "full"), _hyperbolic)
def _aa01(ctx):
    prof = gap_profile(ctx.sys, _asym(ctx))
    prof.to_csv(ctx.path("AA-01_gaps.csv"))
    ok = is_asymptotic_average_pseudo(prof, ctx.p.asymptotic_tol)
    return Verdict("AA-01", _status(ok), prof.max, None, {"tol": ctx.p.asymptotic_tol})


@claim("AA-02", "asymptotic average-pseudo orbits are asymptotically shadowed",
       "Symmetric Cesaro averages of segment integrals fall below the tolerance with non-increasing trend.",
       "shadowing.asymptotic_statistic", ("asymptotic_shadowing", "full"), _hyperbolic)
def _aa02(ctx):
    res = search_shadowing_orbit(ctx.sys, _asym(ctx), candidate_seeds=ctx.p.candidate_seeds,
                                 kind="asymptotic_average", seed=ctx.seed, tol=ctx.p.asymptotic_tol)
    rep = res.report
    rep.to_csv(ctx.path("AA-02_segments.csv"))
    series = {f"{side} averages": (np.arange(1, len(v) + 1), v)
              for side, v in sorted(rep.tail.items()) if side.endswith("_averages")}
    plotting.line_plot(ctx.path("AA-02_averages.png"), series, title="symmetric Cesaro averages", xlabel="n",
                       ylabel="average integral", hlines={"tolerance": ctx.p.asymptotic_tol})
    return Verdict("AA-02", _status(bool(rep.passed)), rep.value, ctx.p.asymptotic_tol, {})


# ---- chain dynamics -------------------------------------------------------


def _graph(ctx):
    def make():
        lo, hi = default_region(ctx.kind, ctx.sys.dimension)
        depth = ctx.p.depth or (7 if ctx.sys.dimension <= 2 else 4)
        cover = BoxCover.for_system(ctx.sys, lo, hi, depth)
        g = build_transition_graph(ctx.sys, cover, seed=ctx.seed)
        g.edges_csv(ctx.path("CD_graph_edges.csv"))
        ctx.write_text("CD_boxes.json", g.boxes_json())
        cr = chain_recurrent_set(g.graph)
        inv = isolated_part(g.graph)
        c = g.centers()
        plotting.scatter_plot(ctx.path("CD_chain_recurrent.png"),
                              {"boxes": c, "chain recurrent": c[cr]}, title=f"depth {depth}", size=1.0)
        return g, cr, inv
    return ctx.cached("graph", make)


@claim("CD-01", "Conley identity on the transition graph",
       "On the invariant part of the non-escaping boxes, the chain recurrent set equals the intersection of "
       "A union A* over all attractors A.",
       "chain.check_conley_identity", ("chain_dynamics", "full"), lambda spec: True)
def _cd01(ctx):
    g, _, inv = _graph(ctx)
    if len(inv) == 0:
        return Verdict("CD-01", "inconclusive", 0, None, {"reason": "no invariant boxes"})
    chk = check_conley_identity(g.graph, inv)
    try:
        ctx.write_text("CD-01_attractors.json", attractors_json(attractors(g.graph, inv), g))
    except AttractorLimitError:
        pass
    detail = {"invariant_boxes": len(inv), "chain_recurrent": len(chk.chain_recurrent),
              "attractors": chk.attractor_count}
    if chk.note:
        detail["note"] = chk.note
    if chk.witness is not None:
        detail["witness_box"] = int(g.nodes[chk.witness])
    return Verdict("CD-01", _status(chk.holds), len(chk.chain_recurrent), None, detail)


@claim("CD-02", "chain transitive iff no proper attractor",
       "On the invariant part of the non-escaping boxes, the graph is chain transitive exactly when it has no "
       "proper attractor.",
       "chain.check_transitive_iff_no_proper_attractor", ("chain_dynamics", "full"), lambda spec: True)
def _cd02(ctx):
    g, _, inv = _graph(ctx)
    if len(inv) == 0:
        return Verdict("CD-02", "inconclusive", 0, None, {"reason": "no invariant boxes"})
    chk = check_transitive_iff_no_proper_attractor(g.graph, inv)
    return Verdict("CD-02", _status(chk.consistent), len(inv), None,
                   {"chain_transitive": chk.chain_transitive, "proper_attractor": chk.has_proper_attractor})


@claim("CD-03", "gradient chain recurrence sits at the critical points",
       "Every chain recurrent box of the torus gradient flow lies within 2 box diameters of one of its 4 critical points, "
       "and each critical point has a chain recurrent box nearby.",
       "chain.chain_recurrent_set", ("chain_dynamics", "full"), _kinds("gradient_morse_smale"))
def _cd03(ctx):
    g, cr, _ = _graph(ctx)
    crit = np.array([[0.0, 0.0], [math.pi, 0.0], [0.0, math.pi], [math.pi, math.pi]])
    c = g.centers(cr)
    d = np.stack([ctx.sys.chart.distance(c, p) for p in crit], axis=1)
    diam = g.cover.diameter
    stat = float(d.min(axis=1).max() / diam) if len(c) else float("inf")
    covered = bool(np.all(d.min(axis=0) <= 2 * diam)) if len(c) else False
    return Verdict("CD-03", _status(stat <= 2.0 and covered), stat, 2.0,
                   {"chain_recurrent_boxes": len(cr), "every_point_covered": covered})


def _annulus(g, level=0.8):
    return np.nonzero(np.abs(pendulum_energy(g.centers())) < level)[0]


@claim("CD-04", "libration annulus has no proper attractor",
       "Inside the pendulum's libration annulus |H| < 0.8 the graph is chain transitive with no proper attractor.",
       "chain.check_transitive_iff_no_proper_attractor", ("chain_dynamics", "full"), _kinds("pendulum"))
def _cd04(ctx):
    g, _, _ = _graph(ctx)
    ann = _annulus(g)
    chk = check_transitive_iff_no_proper_attractor(g.graph, ann)
    ok = chk.chain_transitive and not chk.has_proper_attractor
    return Verdict("CD-04", _status(ok), len(ann), None,
                   {"chain_transitive": chk.chain_transitive, "proper_attractor": chk.has_proper_attractor})


@claim("CD-05", "periodic orbit approximates a libration band",
       "A closed orbit found from the boxes meeting the level H = 0 lies within 2 box diameters (Hausdorff) of them.",
       "chain.approximate_by_periodic_orbit", ("chain_dynamics", "full"), _kinds("pendulum"))
def _cd05(ctx):
    g, _, _ = _graph(ctx)
    c = g.centers()
    H = pendulum_energy(c)
    grad = np.hypot(np.sin(c[:, 0]), c[:, 1])
    band = np.nonzero(np.abs(H) < grad * g.cover.diameter / 2)[0]
    res = approximate_by_periodic_orbit(ctx.sys, g, band)
    if res.orbit is None:
        return Verdict("CD-05", "fail", None, 2.0, {"diagnostics": res.diagnostics})
    stat = res.dH / g.cover.diameter
    plotting.scatter_plot(ctx.path("CD-05_band.png"), {"band boxes": c[band], "periodic orbit": res.orbit.points},
                          title=f"period {res.period:.4f}")
    return Verdict("CD-05", _status(stat < 2.0), stat, 2.0, {"period": res.period, "band_boxes": len(band)})


# ---- hyperbolicity --------------------------------------------------------


def _suspension_seeds(ctx, max_k):
    A = _params(ctx.spec.system)["matrix"]
    tau = suspension_period(A)
    orbs = toral_periodic_orbits(A, max_k)
    return [(np.append(u, 0.5), k * tau) for k, u in orbs], orbs


def _critical(ctx):
    def make():
        region = default_region(ctx.kind, ctx.sys.dimension)
        if ctx.kind == "suspended_toral_automorphism":
            seeds, _ = _suspension_seeds(ctx, 2)
            return find_critical_orbits(ctx.sys, region, grid=0, periodic_seeds=seeds)
        grid = 6 if ctx.sys.dimension > 2 else 8
        res = find_critical_orbits(ctx.sys, region, grid=grid)
        return res
    return ctx.cached("critical", make)


@claim("HY-01", "Morse index reverses with time",
       "For every hyperbolic critical orbit found, the index under the reversed field is n - index (singularity) "
       "or n - 1 - index (periodic).",
       "hyperbolicity.morse_index", ("hyperbolicity", "full"), lambda spec: True)
def _hy01(ctx):
    orbits = [o for o in _critical(ctx).orbits if o.hyperbolic]
    n = ctx.sys.dimension
    bad = 0
    for o in orbits:
        expect = n - morse_index(o) - (1 if o.kind == "periodic" else 0)
        bad += morse_index(o.reversed()) != expect
    ctx.write_text("HY-01_orbits.json", orbits_json(_critical(ctx).orbits))
    if not orbits:
        return Verdict("HY-01", "inconclusive", 0, 0, {"reason": "no hyperbolic critical orbit found"})
    return Verdict("HY-01", _status(bad == 0), bad, 0, {"orbits": len(orbits)})


@claim("HY-02", "constant index on periodic orbits",
       "All periodic orbits of the suspended automorphism up to the maximal period are found and share index 1.",
       "hyperbolicity.check_index_constancy", ("hyperbolicity", "full"),
       _kinds("suspended_toral_automorphism"))
def _hy02(ctx):
    seeds, orbs = _suspension_seeds(ctx, ctx.p.max_period)
    region = default_region(ctx.kind, ctx.sys.dimension)
    res = find_critical_orbits(ctx.sys, region, grid=0, periodic_seeds=seeds, merge=0.0)
    found = [o for o in res.orbits if o.kind == "periodic"]
    rep = check_index_constancy(found)
    ctx.write_json("HY-02_indices.json", {"expected_orbits": len(orbs), "found": len(found), **rep.to_dict()})
    ok = rep.constant and set(rep.indices) == {1} and len(found) == len(orbs)
    return Verdict("HY-02", _status(ok), len(found), len(orbs), rep.to_dict())


def _lorenz_start(ctx):
    return integrate(ctx.sys, [1.0, 1.0, 20.0], 20.0).final


@claim("HY-03", "contraction and domination rates",
       "Linear flows: fitted rates match the closed-form eigenvalue gaps within 5%. Lorenz: contraction is "
       "positive with fit quality above 0.9.",
       "hyperbolicity.estimate_splitting", ("hyperbolicity", "full"),
       _any(_kinds("lorenz"), lambda s: _linear_hyperbolic(s) and 0 < int(np.sum(_linear_eigs(s) < 0)) < len(_linear_eigs(s))))
def _hy03(ctx):
    if ctx.kind == "lorenz":
        est = estimate_splitting(ctx.sys, (_lorenz_start(ctx), ctx.p.span), 1, seed=ctx.seed)
        ctx.write_text("HY-03_splitting.json", est.to_json())
        if not est.conclusive:
            return Verdict("HY-03", "inconclusive", None, None, {"slopes": est.slopes, "r2": est.r2})
        ok = est.lambda_contract > 0 and est.r2["contract"] > 0.9
        return Verdict("HY-03", _status(ok), est.lambda_contract, 0.0, {"r2": est.r2})
    w = _linear_eigs(ctx.spec.system)
    s_dim = int(np.sum(w < 0))
    est = estimate_splitting(ctx.sys, (ctx.base_point(), ctx.p.span), s_dim, seed=ctx.seed)
    ctx.write_text("HY-03_splitting.json", est.to_json())
    if not est.conclusive:
        return Verdict("HY-03", "inconclusive", None, 0.05, {"slopes": est.slopes, "r2": est.r2})
    stable_top = w[w < 0].max()
    expect_c = -stable_top
    expect_d = w[w > 0].min() - stable_top if np.any(w > 0) else w[w < 0][w[w < 0] > stable_top].min()
    err = max(abs(est.lambda_contract - expect_c) / abs(expect_c), abs(est.lambda_dom - expect_d) / abs(expect_d))
    return Verdict("HY-03", _status(err <= 0.05), err, 0.05,
                   {"lambda_contract": est.lambda_contract, "lambda_dom": est.lambda_dom,
                    "expected_contract": expect_c, "expected_dom": expect_d})


@claim("HY-04", "sectional area growth",
       "Linear flows: area growth on planes of the top two eigendirections equals their eigenvalue sum within 5%. "
       "Lorenz: the worst sampled plane still expands area.",
       "hyperbolicity.check_sectional_expansion", ("hyperbolicity", "full"),
       _any(_kinds("lorenz"), lambda s: _linear_hyperbolic(s) and len(_linear_eigs(s)) >= 2))
def _hy04(ctx):
    if ctx.kind == "lorenz":
        rec = check_sectional_expansion(ctx.sys, (_lorenz_start(ctx), ctx.p.span), np.eye(3), ctx.p.planes,
                                        seed=ctx.seed)
        ctx.write_json("HY-04_sectional.json", {**rec.to_dict(), "rates": list(rec.rates)})
        return Verdict("HY-04", _status(rec.ok), rec.worst_rate, 1e-3, {"planes": rec.planes_tested})
    M = np.asarray(_params(ctx.spec.system)["matrix"], dtype=float)
    vals, vecs = np.linalg.eig(M)
    order = np.argsort(-vals.real)
    C = vecs[:, order[:2]].real
    expect = float(vals.real[order[:2]].sum())
    rec = check_sectional_expansion(ctx.sys, (ctx.base_point(), ctx.p.span), C, ctx.p.planes, seed=ctx.seed)
    ctx.write_json("HY-04_sectional.json", {**rec.to_dict(), "rates": list(rec.rates), "expected": expect})
    err = abs(rec.worst_rate - expect) / abs(expect)
    return Verdict("HY-04", _status(err <= 0.05), err, 0.05, {"worst_rate": rec.worst_rate, "expected": expect})


@claim("HY-05", "sampled strong homogeneity",
       "Across seeded bump perturbations of size eta, every periodic orbit found has index 1.",
       "hyperbolicity.sampled_strong_homogeneity", ("hyperbolicity", "full"),
       _kinds("suspended_toral_automorphism"))
def _hy05(ctx):
    region = default_region(ctx.kind, ctx.sys.dimension)
    seeds, _ = _suspension_seeds(ctx, 3)
    fam = bump_family(ctx.sys, region, ctx.p.perturbations, ctx.p.eta, seed=ctx.seed)
    rep = sampled_strong_homogeneity(fam, region, 1, periodic_seeds=seeds)
    ctx.write_json("HY-05_homogeneity.json", rep.to_dict())
    return Verdict("HY-05", _status(rep.homogeneous), None, None, rep.to_dict())


def _oracle_points(ctx) -> Optional[np.ndarray]:
    if ctx.kind == "pendulum":
        return np.array([[0.0, 0.0], [math.pi, 0.0]])
    if ctx.kind == "gradient_morse_smale":
        return np.array([[0.0, 0.0], [0.0, math.pi], [math.pi, 0.0], [math.pi, math.pi]])
    if ctx.kind == "lorenz":
        p = _params(ctx.spec.system)
        r, b = float(p["rho"]), float(p["beta"])
        if r <= 1:
            return np.zeros((1, 3))
        q = math.sqrt(b * (r - 1))
        return np.array([[0.0, 0.0, 0.0], [q, q, r - 1], [-q, -q, r - 1]])
    if ctx.kind == "linear":
        return np.zeros((1, ctx.sys.dimension))
    return None


@claim("HY-06", "critical points match the analytic zeros",
       "Singularities found by seeded Newton coincide with the closed-form zeros of the field.",
       "hyperbolicity.find_critical_orbits", ("hyperbolicity", "full"),
       _any(_kinds("pendulum", "gradient_morse_smale", "lorenz"), _linear_hyperbolic))
def _hy06(ctx):
    truth = _oracle_points(ctx)
    found = np.array([o.base for o in _critical(ctx).orbits if o.kind == "singularity"])
    if len(found) == 0:
        return Verdict("HY-06", "fail", None, 1e-6, {"found": 0, "expected": len(truth)})
    ch = ctx.sys.chart
    d1 = max(float(ch.distance(found, t).min()) for t in truth)
    d2 = max(float(ch.distance(truth, f).min()) for f in found)
    stat = max(d1, d2)
    return Verdict("HY-06", _status(stat < 1e-6 and len(found) == len(truth)), stat, 1e-6,
                   {"found": len(found), "expected": len(truth)})


@claim("DF-01", "volume preservation",
       "Conservative catalog flows have zero divergence at seeded points and unit Jacobian determinant up to the horizon.",
       "flow.divergence", ("hyperbolicity", "full"), _kinds("pendulum", "suspended_toral_automorphism"))
def _df01(ctx):
    lo, hi = default_region(ctx.kind, ctx.sys.dimension)
    rng = np.random.default_rng(ctx.seed)
    P = lo + (hi - lo) * rng.random((ctx.p.divergence_points, ctx.sys.dimension))
    div = float(np.abs(divergence(ctx.sys, P)).max())
    X = P[:32]
    ts = np.linspace(0.0, ctx.p.det_horizon, 11)[1:]
    worst = 0.0
    rows = []
    for t in ts:
        _, M = flow_map_variational(ctx.sys, X, t, StepControl(tol=1e-10))
        e = float(np.abs(np.linalg.det(M) - 1.0).max())
        rows.append((float(t), e))
        worst = max(worst, e)
    ctx.write_csv("DF-01_determinant.csv", ["t", "max_abs_det_minus_1"], rows)
    ok = div < 1e-10 and worst < 1e-4
    return Verdict("DF-01", _status(ok), worst, 1e-4, {"max_divergence": div})


# ---- manifolds -------------------------------------------------------------


def _saddles(ctx):
    n = ctx.sys.dimension
    out = []
    for o in _critical(ctx).orbits:
        if o.kind == "singularity" and o.hyperbolic and 0 < morse_index(o) < n:
            out.append(o)
    return out


def _disks(ctx, o):
    key = ("disks", tuple(np.round(o.base, 9)))
    return ctx.cached(key, lambda: tuple(
        local_manifold(ctx.sys, o, side, ctx.p.eps, ctx.p.manifold_samples, ctx.p.horizon)
        for side in ("stable", "unstable")))


@claim("MF-01", "local manifolds satisfy their defining inequality",
       "Every sample of a local stable or unstable disk stays within 2 eps of its saddle over twice the horizon.",
       "hyperbolicity.local_manifold", ("manifolds", "full"),
       _any(_kinds("pendulum", "gradient_morse_smale"), _linear_saddle))
def _mf01(ctx):
    saddles = _saddles(ctx)
    if not saddles:
        return Verdict("MF-01", "inconclusive", None, 0, {"reason": "no saddle found"})
    bad = total = 0
    series = {}
    for k, o in enumerate(saddles):
        for disk in _disks(ctx, o):
            ok = verify_disk_points(ctx.sys, o, disk.side, disk.samples, 2 * disk.eps, 2 * disk.horizon)
            bad += int((~ok).sum())
            total += len(ok)
            disk.to_csv(ctx.path(f"MF-01_saddle{k}_{disk.side}.csv"))
            series[f"saddle {k} {disk.side}"] = disk.samples
    plotting.scatter_plot(ctx.path("MF-01_disks.png"), series, title="local manifolds")
    return Verdict("MF-01", _status(bad == 0), bad, 0, {"samples": total, "saddles": len(saddles)})


@claim("MF-02", "stable and unstable manifolds intersect",
       "Pendulum: the saddle's stable and unstable manifolds meet in at least 10 points on the level H = 1. "
       "Linear saddle: they meet only at the origin.",
       "hyperbolicity.detect_intersection", ("manifolds", "full"), _any(_kinds("pendulum"), _linear_saddle))
def _mf02(ctx):
    saddles = _saddles(ctx)
    if ctx.kind == "pendulum":
        saddles = [o for o in saddles if abs(o.base[0] - math.pi) < 1e-6]
    if not saddles:
        return Verdict("MF-02", "inconclusive", None, None, {"reason": "no saddle found"})
    o = saddles[0]
    st, un = _disks(ctx, o)
    tol = ctx.p.intersection_tol
    pts = detect_intersection(ctx.sys, st, un, tol=tol)
    ctx.write_csv("MF-02_points.csv", [f"x{k}" for k in range(ctx.sys.dimension)], [tuple(map(float, p)) for p in pts])
    plotting.scatter_plot(ctx.path("MF-02_intersection.png"),
                          {"stable": st.samples, "unstable": un.samples, "intersection": pts},
                          title=f"{len(pts)} intersection points")
    if ctx.kind == "pendulum":
        if len(pts) == 0:
            return Verdict("MF-02", "fail", None, 1e-4, {"points": 0})
        err = float(np.abs(pendulum_energy(pts) - 1.0).max())
        return Verdict("MF-02", _status(len(pts) >= 10 and err < 1e-4), err, 1e-4, {"points": len(pts)})
    if len(pts) == 0:
        return Verdict("MF-02", "fail", None, tol, {"points": 0})
    err = float(np.linalg.norm(pts, axis=1).max())
    return Verdict("MF-02", _status(err < tol), err, tol, {"points": len(pts)})


# --------------------------------------------------------------------------
# orchestration
# --------------------------------------------------------------------------


def limit_threads() -> Optional[int]:
    """Apply ``SHADOWLAB_THREADS`` to numba's thread pool; returns the cap in force."""
    raw = os.environ.get("SHADOWLAB_THREADS")
    if not raw:
        return None
    try:
        k = max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SHADOWLAB_THREADS must be an integer, got {raw!r}")
    import numba

    k = min(k, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(k)
    return k


def selected_claims(spec: ExperimentSpec) -> list:
    return [c for c in claims() if spec.suite in c.suites and c.applies(spec.system)]


def run_suite(spec: ExperimentSpec, output_dir=None) -> Report:
    """Run every applicable claim of the suite in id order, writing artifacts to ``output_dir``.

    Any exception inside a claim becomes an inconclusive verdict carrying the
    error text.  Claims run one after another so that shared caches and
    random streams are consumed in a fixed order.
    """
    out = Path(output_dir if output_dir is not None else spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    limit_threads()
    sys = build_system(spec.system)
    ctx = _Context(spec, sys, out)
    verdicts = []
    for c in selected_claims(spec):
        try:
            v = c.run(ctx)
        except Exception as err:  # noqa: BLE001 - every failure must surface as a verdict
            v = Verdict(c.id, "inconclusive", None, None, {"error": f"{type(err).__name__}: {err}"})
        verdicts.append(v)
    artifacts = [{"path": name, "sha256": sha256_file(out / name), "bytes": (out / name).stat().st_size}
                 for name in sorted(set(ctx.files))]
    provenance = {"seed": spec.seed, "versions": _versions(), "config_hash": spec.config_hash()}
    return Report(spec.system.model_dump(mode="json"), spec.suite, spec.params.model_dump(mode="json"),
                  verdicts, artifacts, provenance)
