"""Command line: ``hiorder kernel | verify | spectral --config run.yaml``.

Exit status: 0 pass, 1 verdict failure, 2 inconclusive, 3 precondition or
refusal, 4 usage or configuration error.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import platform
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import click
import numpy as np
import scipy
import yaml

from . import __version__
from .errors import ConditioningError, DomainError, HiorderError, PreconditionError, RefusalError
from .harness import exponent_fit, lpq_scaling_check, moment_bound_check, pointwise_report
from .profiles import Profile
from .propagator import EnergySplit, kernel_sweep, write_csv, write_jsonl
from .spectral import (
    OperatorSpec,
    borel_matrix,
    gram_blocks,
    low_energy_scaling_check,
    moment_classify,
    perturbation_matrix,
    spectral_density,
)

EXIT_PASS, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_REFUSED, EXIT_USAGE = 0, 1, 2, 3, 4
VERDICT_EXIT = {"pass": EXIT_PASS, "fail": EXIT_FAIL, "inconclusive": EXIT_INCONCLUSIVE}
SUITES = ("pointwise", "exponents", "lpq", "lowenergy", "moments", "gram")

DEFAULTS = {
    "kernel": {"t": [], "points": [], "lam0": 0.5, "tol": 1e-8},
    "verify": {
        "suite": "pointwise",
        "lam0": 0.5,
        "tol": 1e-8,
        "pointwise": {"t_range": [2.0 ** -6, 2.0 ** 6], "per_shell": 2},
        "exponents": {"t_range": [2.0 ** 6, 2.0 ** 12], "space_t": 2.0 ** -6, "u_range": [5.0, 50.0],
                      "samples": 80, "time_tol": 0.02, "space_tol": 0.05},
        "lpq": {"pairs": [[1, "inf"], [1, 4]], "t_range": [2.0 ** -2, 2.0 ** 6], "ys": [0.0, 8.0, 32.0],
                "u_max": 60.0, "probes": 4, "oracle_L": 40 * math.pi, "oracle_M": 1024},
        "lowenergy": {"lam_range": [1e-3, 1e-2], "samples": 12, "c0": 1e-3},
        "moments": {"checks": [], "x_range": [1.0, 100.0], "samples": 30, "slope_tol": 0.1},
        "gram": {"threshold": 1e-8},
    },
    "spectral": {"lam": {"geomspace": [1e-3, 10.0, 41]}},
    "seed": 0,
    "workers": 1,
    "out": "hiorder-out",
}


class ConfigError(HiorderError):
    """Invalid run configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


# ------------------------------------------------------------------ validation helpers

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_keys(data, allowed, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected a mapping")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown field")


def _int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return value


def _float(value, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    return value


def _range(value, path: str) -> list[float]:
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(path, "expected [low, high]")
    lo, hi = (_float(v, f"{path}[{k}]", positive=True) for k, v in enumerate(value))
    if lo > hi:
        raise ConfigError(path, "low exceeds high")
    return [lo, hi]


def _exponent(value, path: str):
    if isinstance(value, str) and value.strip().lower() == "inf":
        return "inf"
    v = _float(value, path)
    if v < 1:
        raise ConfigError(path, "exponents must be >= 1 or 'inf'")
    return int(v) if v == int(v) else v


def expand_grid(spec, path: str) -> list[float]:
    """A list of numbers, or one of {geomspace|linspace: [a, b, count]}, {dyadic: [lo, hi], per_shell: k}."""
    if isinstance(spec, list):
        return [_float(v, f"{path}[{k}]") for k, v in enumerate(spec)]
    if not isinstance(spec, dict) or not spec:
        raise ConfigError(path, "expected a list or a grid mapping")
    kind = next(iter(spec))
    if kind in ("geomspace", "linspace"):
        _check_keys(spec, (kind,), path)
        args = spec[kind]
        if not isinstance(args, list) or len(args) != 3:
            raise ConfigError(f"{path}.{kind}", "expected [start, stop, count]")
        a = _float(args[0], f"{path}.{kind}[0]", positive=kind == "geomspace")
        b = _float(args[1], f"{path}.{kind}[1]", positive=kind == "geomspace")
        count = _int(args[2], f"{path}.{kind}[2]", minimum=0)
        return [float(v) for v in getattr(np, kind)(a, b, count)]
    if kind == "dyadic":
        _check_keys(spec, ("dyadic", "per_shell"), path)
        lo, hi = _range(spec["dyadic"], f"{path}.dyadic")
        per = _int(spec.get("per_shell", 1), f"{path}.per_shell", minimum=1)
        k0, k1 = math.floor(math.log2(lo) + 1e-9), math.ceil(math.log2(hi) - 1e-9)
        return [2.0 ** (k + j / per) for k in range(k0, k1) for j in range(per)] + [2.0 ** k1]
    raise ConfigError(f"{path}.{kind}", "unknown grid kind (geomspace, linspace, dyadic)")


def _point(value, n: int, path: str):
    if n == 1 and not isinstance(value, list):
        return _float(value, path)
    if not isinstance(value, list) or len(value) != n:
        raise ConfigError(path, f"expected {n} coordinates")
    coords = [_float(v, f"{path}[{k}]") for k, v in enumerate(value)]
    return coords[0] if n == 1 else coords


def expand_points(spec, n: int, path: str) -> list:
    """[[x, y], ...] pairs, or {x: grid, y: grid} for the product (n = 1)."""
    if isinstance(spec, dict):
        _check_keys(spec, ("x", "y"), path)
        if n != 1:
            raise ConfigError(path, "product grids are available for n = 1; list the pairs instead")
        xs = expand_grid(spec.get("x", []), f"{path}.x")
        ys = expand_grid(spec.get("y", []), f"{path}.y")
        return [(x, y) for y in ys for x in xs]
    if not isinstance(spec, list):
        raise ConfigError(path, "expected a list of [x, y] pairs")
    out = []
    for k, pair in enumerate(spec):
        if not isinstance(pair, list) or len(pair) != 2:
            raise ConfigError(f"{path}[{k}]", "expected [x, y]")
        x = _point(pair[0], n, f"{path}[{k}][0]")
        y = _point(pair[1], n, f"{path}[{k}][1]")
        out.append((np.asarray(x, float) if n > 1 else x, np.asarray(y, float) if n > 1 else y))
    return out


def _profile(data, n: int, path: str) -> tuple[Profile, float]:
    _check_keys(data, ("alpha", "normalize", "terms"), path)
    if "terms" not in data:
        raise ConfigError(path, "missing field 'terms'")
    alpha = _float(data.get("alpha", 1.0), f"{path}.alpha", positive=True)
    normalize = data.get("normalize", True)
    if not isinstance(normalize, bool):
        raise ConfigError(f"{path}.normalize", "expected true or false")
    terms = data["terms"]
    if not isinstance(terms, list) or not terms:
        raise ConfigError(f"{path}.terms", "expected a non-empty list")
    for k, term in enumerate(terms):
        tp = f"{path}.terms[{k}]"
        _check_keys(term, ("coeff", "powers", "width", "center"), tp)
        for key in ("coeff", "powers", "width"):
            if key not in term:
                raise ConfigError(tp, f"missing field '{key}'")
        _float(term["coeff"], f"{tp}.coeff")
        _float(term["width"], f"{tp}.width", positive=True)
        powers = term["powers"]
        if not isinstance(powers, list) or len(powers) != n:
            raise ConfigError(f"{tp}.powers", f"expected {n} non-negative integers")
        for j, p in enumerate(powers):
            _int(p, f"{tp}.powers[{j}]", minimum=0)
        center = term.get("center", [0.0] * n)
        if not isinstance(center, list) or len(center) != n:
            raise ConfigError(f"{tp}.center", f"expected a list of {n} coordinates")
        for j, c in enumerate(center):
            _float(c, f"{tp}.center[{j}]")
    try:
        profile = Profile.from_dict(data, normalize=normalize)
    except (DomainError, PreconditionError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None
    return profile, alpha


# ------------------------------------------------------------------ run config

@dataclass
class RunConfig:
    operator: dict
    kernel: dict
    verify: dict
    spectral: dict
    seed: int
    workers: int
    out: str

    @classmethod
    def from_dict(cls, data) -> "RunConfig":
        _check_keys(data, ("operator", "kernel", "verify", "spectral", "seed", "workers", "out"), "")
        if "operator" not in data:
            raise ConfigError("operator", "missing section")
        full = _merge(DEFAULTS, {k: v for k, v in data.items() if v is not None})
        cfg = cls(full["operator"], full["kernel"], full["verify"], full["spectral"],
                  full["seed"], full["workers"], full["out"])
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" (line {mark.line + 1})" if mark is not None else ""
            raise ConfigError("<yaml>", f"cannot parse{where}: {getattr(exc, 'problem', exc)}") from None
        try:
            return cls.from_dict(data if data is not None else {})
        except ConfigError as exc:
            line = locate_line(text, exc.path)
            if line is not None:
                raise ConfigError(exc.path, f"{exc.message} (line {line})") from None
            raise

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    # ---- validation
    def validate(self):
        op = self.operator
        _check_keys(op, ("m", "n", "profiles"), "operator")
        for key in ("m", "n"):
            if key not in op:
                raise ConfigError(f"operator.{key}", "missing field")
        _int(op["m"], "operator.m", minimum=1)
        _int(op["n"], "operator.n", minimum=1)
        if not isinstance(op.get("profiles", []), list):
            raise ConfigError("operator.profiles", "expected a list")
        self.spec()
        n = op["n"]

        k = self.kernel
        _check_keys(k, ("t", "points", "lam0", "tol"), "kernel")
        expand_grid(k["t"], "kernel.t")
        expand_points(k["points"], n, "kernel.points")
        _float(k["lam0"], "kernel.lam0", positive=True)
        _float(k["tol"], "kernel.tol", positive=True)

        v = self.verify
        _check_keys(v, ("suite", "lam0", "tol") + SUITES, "verify")
        if v["suite"] not in SUITES:
            raise ConfigError("verify.suite", f"unknown suite {v['suite']!r}; choose from {', '.join(SUITES)}")
        _float(v["lam0"], "verify.lam0", positive=True)
        _float(v["tol"], "verify.tol", positive=True)
        for suite in SUITES:
            _check_keys(v[suite], DEFAULTS["verify"][suite].keys(), f"verify.{suite}")
        pw, ex, lq = v["pointwise"], v["exponents"], v["lpq"]
        _range(pw["t_range"], "verify.pointwise.t_range")
        _int(pw["per_shell"], "verify.pointwise.per_shell", minimum=1)
        _range(ex["t_range"], "verify.exponents.t_range")
        _range(ex["u_range"], "verify.exponents.u_range")
        _float(ex["space_t"], "verify.exponents.space_t", positive=True)
        _int(ex["samples"], "verify.exponents.samples", minimum=3)
        _float(ex["time_tol"], "verify.exponents.time_tol", positive=True)
        _float(ex["space_tol"], "verify.exponents.space_tol", positive=True)
        if not isinstance(lq["pairs"], list):
            raise ConfigError("verify.lpq.pairs", "expected a list of [p, q]")
        for j, pair in enumerate(lq["pairs"]):
            if not isinstance(pair, list) or len(pair) != 2:
                raise ConfigError(f"verify.lpq.pairs[{j}]", "expected [p, q]")
            _exponent(pair[0], f"verify.lpq.pairs[{j}][0]")
            _exponent(pair[1], f"verify.lpq.pairs[{j}][1]")
        _range(lq["t_range"], "verify.lpq.t_range")
        if not isinstance(lq["ys"], list):
            raise ConfigError("verify.lpq.ys", "expected a list")
        for j, y in enumerate(lq["ys"]):
            _float(y, f"verify.lpq.ys[{j}]")
        _float(lq["u_max"], "verify.lpq.u_max", positive=True)
        _int(lq["probes"], "verify.lpq.probes", minimum=1)
        _float(lq["oracle_L"], "verify.lpq.oracle_L", positive=True)
        _int(lq["oracle_M"], "verify.lpq.oracle_M", minimum=2)
        le = v["lowenergy"]
        _range(le["lam_range"], "verify.lowenergy.lam_range")
        _int(le["samples"], "verify.lowenergy.samples", minimum=3)
        _float(le["c0"], "verify.lowenergy.c0", positive=True)
        mo = v["moments"]
        _range(mo["x_range"], "verify.moments.x_range")
        _int(mo["samples"], "verify.moments.samples", minimum=4)
        _float(mo["slope_tol"], "verify.moments.slope_tol", positive=True)
        if not isinstance(mo["checks"], list):
            raise ConfigError("verify.moments.checks", "expected a list")
        for j, check in enumerate(mo["checks"]):
            self._moment_check(check, f"verify.moments.checks[{j}]")
        _float(v["gram"]["threshold"], "verify.gram.threshold", positive=True)

        sp = self.spectral
        _check_keys(sp, ("lam",), "spectral")
        for j, lam in enumerate(expand_grid(sp["lam"], "spectral.lam")):
            if lam <= 0:
                raise ConfigError(f"spectral.lam[{j}]", "frequencies must be positive")
        _int(self.seed, "seed", minimum=0)
        _int(self.workers, "workers", minimum=1)
        if not isinstance(self.out, str) or not self.out:
            raise ConfigError("out", "expected a directory path")

    def _moment_check(self, check, path: str):
        _check_keys(check, ("profile", "r", "k0"), path)
        for key in ("profile", "r", "k0"):
            if key not in check:
                raise ConfigError(path, f"missing field '{key}'")
        _int(check["r"], f"{path}.r")
        _int(check["k0"], f"{path}.k0")
        ref = check["profile"]
        if isinstance(ref, int) and not isinstance(ref, bool):
            if not 0 <= ref < len(self.operator.get("profiles", [])):
                raise ConfigError(f"{path}.profile", "index out of range")
            return self.spec().profiles[ref]
        if isinstance(ref, dict):
            _check_keys(ref, ("normalize", "terms"), f"{path}.profile")
            n = len(ref["terms"][0]["powers"]) if ref.get("terms") else self.operator["n"]
            return _profile(ref, n, f"{path}.profile")[0]
        raise ConfigError(f"{path}.profile", "expected a profile index or an inline profile")

    # ---- derived objects
    def spec(self) -> OperatorSpec:
        op = self.operator
        n = op["n"]
        pairs = [_profile(p, n, f"operator.profiles[{k}]") for k, p in enumerate(op.get("profiles", []))]
        try:
            return OperatorSpec(op["m"], n, tuple(p for p, _ in pairs), tuple(a for _, a in pairs))
        except (DomainError, PreconditionError) as exc:
            raise ConfigError("operator", str(exc)) from None

    def moment_profiles(self) -> list:
        return [self._moment_check(c, f"verify.moments.checks[{j}]")
                for j, c in enumerate(self.verify["moments"]["checks"])]

    def provenance(self, command: str) -> dict:
        return {
            "command": command,
            "config": self.to_dict(),
            "config_digest": self.digest(),
            "spec_digest": self.spec().digest(),
            "seed": self.seed,
            "versions": {"hiorder": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
        }


def locate_line(text: str, path: str) -> int | None:
    """1-based line of the YAML node named by a dotted path such as ``verify.lpq.pairs[1][0]``."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    if node is None:
        return None
    parts = []
    for chunk in path.split("."):
        name, _, rest = chunk.partition("[")
        if name:
            parts.append(name)
        for idx in filter(None, rest.replace("]", "").split("[")) if rest else ():
            parts.append(int(idx))
    line = node.start_mark.line + 1
    for part in parts:
        if isinstance(node, yaml.MappingNode) and isinstance(part, str):
            match = [(k, v) for k, v in node.value if k.value == part]
            if not match:
                return line
            key, node = match[0]
            line = key.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            return line
    return line


# ------------------------------------------------------------------ commands

def _apply_overrides(cfg: RunConfig, out, workers, tol, seed, suite=None) -> RunConfig:
    data = cfg.to_dict()
    if out is not None:
        data["out"] = str(out)
    if workers is not None:
        data["workers"] = workers
    if tol is not None:
        data["kernel"]["tol"] = tol
        data["verify"]["tol"] = tol
    if seed is not None:
        data["seed"] = seed
    if suite is not None:
        data["verify"]["suite"] = suite
    return RunConfig.from_dict(data)


def run_kernel(cfg: RunConfig) -> Path:
    spec = cfg.spec()
    ts = expand_grid(cfg.kernel["t"], "kernel.t")
    pts = expand_points(cfg.kernel["points"], spec.n, "kernel.points")
    split = EnergySplit(cfg.kernel["lam0"])
    samples = list(kernel_sweep(spec, ts, pts, split, cfg.kernel["tol"], cfg.workers)) if ts and pts else []
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = cfg.provenance("kernel")
    with open(out / "kernel.csv", "w") as fh:
        write_csv(samples, fh, header)
    with open(out / "kernel.jsonl", "w") as fh:
        write_jsonl(samples, fh, header)
    return out


def _suite_reports(cfg: RunConfig, suite: str) -> list[dict]:
    spec = cfg.spec()
    v = cfg.verify
    split = EnergySplit(v["lam0"])
    params = v[suite]
    if suite == "pointwise":
        r = pointwise_report(spec, tuple(params["t_range"]), per_shell=params["per_shell"], split=split,
                             tol=v["tol"], workers=cfg.workers)
        return [r.to_dict()]
    if suite == "exponents":
        r = exponent_fit(spec, tuple(params["t_range"]), params["space_t"], tuple(params["u_range"]),
                         params["samples"], split, v["tol"], cfg.workers, params["time_tol"], params["space_tol"])
        return [r.to_dict()]
    if suite == "lpq":
        out = []
        for p, q in params["pairs"]:
            r = lpq_scaling_check(spec, (p, q), tuple(params["t_range"]), tuple(params["ys"]), split, v["tol"],
                                  cfg.workers, params["u_max"], seed=cfg.seed,
                                  oracle_size=(params["oracle_L"], params["oracle_M"]), probes=params["probes"])
            out.append(r.to_dict())
        return out
    if suite == "lowenergy":
        r = low_energy_scaling_check(spec, tuple(params["lam_range"]), params["samples"], params["c0"])
        return [dict(asdict(r), kind="lowenergy")]
    if suite == "moments":
        out = []
        for check, profile in zip(params["checks"], cfg.moment_profiles()):
            r = moment_bound_check(profile, check["r"], check["k0"], tuple(params["x_range"]),
                                   params["samples"], params["slope_tol"])
            out.append(dict(r.to_dict(), kind="moments"))
        return out
    g = gram_blocks(spec, params["threshold"])
    return [{"kind": "gram", "invertible": g.invertible, "a_gram_min_eig": g.a_gram_min_eig,
             "smallest_singular": g.smallest_singular, "b_full_rank": g.b_full_rank,
             "b_ranks": {str(k): v for k, v in g.b_ranks.items()},
             "verdict": "pass" if g.invertible else "fail"}]


def run_verify(cfg: RunConfig) -> tuple[str, Path]:
    suite = cfg.verify["suite"]
    reports = _suite_reports(cfg, suite)
    verdicts = [r["verdict"] for r in reports]
    verdict = "fail" if "fail" in verdicts else "inconclusive" if "inconclusive" in verdicts or not verdicts \
        else "pass"
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"verify-{suite}.json"
    doc = {"provenance": cfg.provenance("verify"), "suite": suite, "reports": reports, "verdict": verdict}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_plain) + "\n")
    return verdict, path


def _plain(value):
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def spectral_columns(N: int) -> list[str]:
    cols = ["lam"]
    for i in range(N):
        for j in range(i, N):
            cols += [f"re_fplus_{i}{j}", f"im_fplus_{i}{j}", f"re_fminus_{i}{j}", f"im_fminus_{i}{j}",
                     f"density_{i}{j}"]
    return cols + ["re_det_plus", "im_det_plus", "abs_det_plus", "abs_det_minus", "cond_plus", "cond_minus"]


def spectral_rows(spec: OperatorSpec, lams) -> list[list[float]]:
    rows = []
    N = spec.N
    for lam in lams:
        fp, fm = borel_matrix(spec, lam, "+"), borel_matrix(spec, lam, "-")
        row = [lam]
        for i in range(N):
            for j in range(i, N):
                row += [fp[i, j].real, fp[i, j].imag, fm[i, j].real, fm[i, j].imag,
                        spectral_density(spec, i, j, lam)]
        ap, am = perturbation_matrix(spec, lam, "+"), perturbation_matrix(spec, lam, "-")
        dp = complex(np.linalg.det(ap))
        row += [dp.real, dp.imag, abs(dp), abs(np.linalg.det(am)), _cond(ap), _cond(am)]
        rows.append([float(v) for v in row])
    return rows


def _cond(a: np.ndarray) -> float:
    return float(np.linalg.cond(a)) if a.size else 1.0


def spectral_summary(spec: OperatorSpec, rows) -> dict:
    summary = {"moment_classes": [], "gram": None}
    if rows:
        k_dp, k_dm = -4, -3
        mins = [min(r[k_dp], r[k_dm]) for r in rows]
        at = int(np.argmin(mins))
        summary["min_abs_det"] = mins[at]
        summary["min_abs_det_lam"] = rows[at][0]
    for k, p in enumerate(spec.profiles):
        c = moment_classify(p, spec.m, spec.n, k)
        summary["moment_classes"].append({"index": k, "k0": c.k0,
                                          "witness": list(c.witness) if c.witness else None})
    if spec.N:
        try:
            g = gram_blocks(spec)
            summary["gram"] = {"invertible": g.invertible, "a_gram_min_eig": g.a_gram_min_eig,
                               "smallest_singular": g.smallest_singular, "b_full_rank": g.b_full_rank}
        except (DomainError, PreconditionError, ConditioningError) as exc:
            summary["gram"] = {"unavailable": str(exc)}
    return summary


def run_spectral(cfg: RunConfig) -> Path:
    spec = cfg.spec()
    lams = expand_grid(cfg.spectral["lam"], "spectral.lam")
    rows = spectral_rows(spec, lams)
    summary = spectral_summary(spec, rows)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = dict(cfg.provenance("spectral"), summary=summary)
    with open(out / "spectral.csv", "w") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {json.dumps(value, sort_keys=True, default=_plain)}\n")
        fh.write(",".join(spectral_columns(spec.N)) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) for v in row) + "\n")
    (out / "spectral.json").write_text(json.dumps(header, indent=2, sort_keys=True, default=_plain) + "\n")
    return out


# ------------------------------------------------------------------ click surface

def _load(path) -> RunConfig:
    return RunConfig.from_yaml(Path(path).read_text())


_common = [
    click.option("--config", "config", required=True, type=click.Path(exists=True, dir_okay=False),
                 help="YAML run configuration."),
    click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
    click.option("--workers", type=click.IntRange(min=1), default=None, help="Worker threads."),
    click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=None, help="Kernel tolerance."),
    click.option("--seed", type=click.IntRange(min=0), default=None, help="Seed for randomized probes."),
]


def common(fn):
    for option in reversed(_common):
        fn = option(fn)
    return fn


@click.group()
@click.version_option(__version__, prog_name="hiorder")
def cli():
    """Kernels, decay checks and spectral tables for finite-rank perturbations of (-Delta)^m."""


@cli.command()
@common
def kernel(config, out, workers, tol, seed):
    """Tabulate K(t, x, y) over the configured grid (CSV and JSON lines)."""
    cfg = _apply_overrides(_load(config), out, workers, tol, seed)
    path = run_kernel(cfg)
    click.echo(f"wrote {path / 'kernel.csv'} and {path / 'kernel.jsonl'}")
    return EXIT_PASS


@cli.command()
@common
@click.option("--suite", type=click.Choice(SUITES), default=None, help="Harness suite to run.")
def verify(config, out, workers, tol, seed, suite):
    """Run one harness suite; the exit status carries the verdict."""
    cfg = _apply_overrides(_load(config), out, workers, tol, seed, suite)
    verdict, path = run_verify(cfg)
    click.echo(f"{cfg.verify['suite']}: {verdict} ({path})")
    return VERDICT_EXIT[verdict]


@cli.command()
@common
def spectral(config, out, workers, tol, seed):
    """Tabulate F^+-, det(I + F D), conditioning, moment classes and Gram verdicts."""
    cfg = _apply_overrides(_load(config), out, workers, tol, seed)
    path = run_spectral(cfg)
    click.echo(f"wrote {path / 'spectral.csv'}")
    return EXIT_PASS


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="hiorder", standalone_mode=False)
    except click.exceptions.Exit as exc:
        code = exc.exit_code
    except click.ClickException as exc:
        exc.show()
        code = EXIT_USAGE
    except click.exceptions.Abort:
        code = EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        code = EXIT_USAGE
    except (RefusalError, PreconditionError, DomainError, ConditioningError) as exc:
        click.echo(f"refused: {exc}", err=True)
        code = EXIT_REFUSED
    code = EXIT_PASS if code is None else int(code)
    if argv is None:
        sys.exit(code)
    return code
