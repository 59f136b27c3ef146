"""Batch command-line front end.

Usage::

    memhomog COMMAND [--config FILE] [--out DIR] [key=value | --key=value ...]

``COMMAND`` is one of ``case0``, ``quenched``, ``annealed``, ``case3drift``,
``case4``, ``simulate`` or ``sweep``.  Parameters use dotted keys
(``surface.kind``, ``helfrich.kappa_star``, ...) and may come from a plain
``key = value`` config file; command-line values override the file.  A bare
key such as ``A`` or ``mesh`` is accepted when it names a unique field, or
the field of the block the command runs on (``mesh`` means ``fem.mesh`` for
``case0``); ``surface`` and ``command`` abbreviate ``surface.kind`` and
``sweep.command``.  Unknown or ambiguous keys are rejected.

Example::

    memhomog case0 surface=eggcarton A=1 mesh=256 --out runs/egg
    memhomog sweep command=case0 surface=eggcarton A=0.1..4 --out runs/sweep

Outputs go to ``--out`` (default ``./out``): ``result.json`` for single runs,
``sweep.csv`` for sweeps, plus optional CSV series.  Exit status is 0 on
success, 2 for configuration errors and 3 for numerical failures.  On error
a JSON record is written to stderr and no output files are produced.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import case4 as c4
from . import ensemble as en
from . import fem
from . import helfrich as hf
from . import sde_oracle as so
from . import surface as surf

COMMANDS = ("case0", "quenched", "annealed", "case3drift", "case4", "simulate", "sweep")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*opts):
    def conv(s):
        if s not in opts:
            raise ValueError(f"expected one of {opts}, got {s!r}")
        return s
    return conv


def _modes(s):
    """``k1,k2,a,b; k1,k2,a,b; ...``"""
    out = []
    for chunk in str(s).split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 4:
            raise ValueError(f"Fourier mode needs 4 entries k1,k2,a,b: {chunk!r}")
        out.append((int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])))
    return tuple(out)


def _seed(s):
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return v


SCHEMA = {
    "seed": (_seed, 0),
    "surface.kind": (_choice("eggcarton", "mixedmode", "bump", "onedim", "fourier", "flat"),
                     "eggcarton"),
    "surface.A": (float, 1.0),
    "surface.r": (float, 0.45),
    "surface.c1": (float, 0.5),
    "surface.c2": (float, 0.5),
    "surface.modes": (_modes, ()),
    "helfrich.kappa_star": (float, 1.0),
    "helfrich.sigma_star": (float, 0.0),
    "helfrich.cutoff": (float, 8.0),
    "fem.mesh": (int, 256),
    "fem.tol": (float, 1e-10),
    "ensemble.samples": (int, 200),
    "ensemble.mesh": (int, 128),
    "ensemble.grid": (int, 4),
    "ensemble.per_sample_csv": (_bool, False),
    "case3.mesh": (int, 128),
    "case3.eta_points": (int, 17),
    "case3.eta_max": (float, 0.0),
    "case4.mesh_y": (int, 32),
    "case4.mesh_eta": (int, 64),
    "case4.M": (float, 0.0),
    "case4.tol": (float, 1e-10),
    "case4.k1": (int, 1),
    "case4.k2": (int, 1),
    "case4.density_csv": (_bool, False),
    "sim.regime": (_choice(*so.REGIMES), "case0"),
    "sim.epsilon": (float, 0.1),
    "sim.dt": (float, 1e-5),
    "sim.t_final": (float, 1.0),
    "sim.paths": (int, 10_000),
    "sim.positions_csv": (_bool, False),
    "sim.extrapolate": (_bool, True),
    "sweep.command": (_choice(*COMMANDS[:-1]), "case0"),
    "sweep.num": (int, 10),
    "sweep.spacing": (_choice("lin", "log"), "lin"),
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        raw[k.strip()] = v.strip()
    return raw


ALIASES = {"surface": "surface.kind", "command": "sweep.command"}

# block whose fields a bare key refers to, per command
OWNER = {"case0": "fem", "quenched": "ensemble", "annealed": "ensemble",
         "case3drift": "case3", "case4": "case4", "simulate": "sim"}


def resolve_key(key: str, command: str | None = None) -> str:
    """Full dotted name of ``key`` (see the module docstring for the rules)."""
    if key in SCHEMA:
        return key
    if key in ALIASES:
        return ALIASES[key]
    if "." not in key:
        cands = [k for k in SCHEMA if k.rsplit(".", 1)[-1] == key]
        if len(cands) == 1:
            return cands[0]
        owned = [k for k in cands if k.split(".", 1)[0] == OWNER.get(command)]
        if len(owned) == 1:
            return owned[0]
        if cands:
            raise ConfigError(f"ambiguous key {key!r}: one of {cands}")
    raise ConfigError(f"unknown key {key!r}")


def _is_range(v) -> bool:
    return isinstance(v, str) and ".." in v


def validate(raw: dict, allow_range: bool = False, command: str | None = None):
    """Convert raw strings; returns ``(config, ranges)``.

    ``ranges`` maps keys whose value has the form ``lo..hi`` to ``(lo, hi)``
    (only when ``allow_range``).  ``command`` selects the block that bare
    keys refer to; for ``sweep`` it is the swept command.
    """
    cfg = {k: d for k, (_, d) in SCHEMA.items()}
    ranges = {}
    if command == "sweep":
        command = raw.get("sweep.command", raw.get("command", SCHEMA["sweep.command"][1]))
    for key, v in raw.items():
        k = resolve_key(key, command)
        conv = SCHEMA[k][0]
        if allow_range and _is_range(v):
            if conv not in (float, int):
                raise ConfigError(f"key {k!r} cannot be swept")
            lo, hi = v.split("..", 1)
            try:
                ranges[k] = (float(lo), float(hi))
            except ValueError as exc:
                raise ConfigError(f"bad range for {k!r}: {v!r}") from exc
            continue
        try:
            cfg[k] = conv(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k!r}: {exc}") from exc
    return cfg, ranges


def make_surface(cfg):
    kind, A = cfg["surface.kind"], cfg["surface.A"]
    try:
        if kind == "eggcarton":
            return surf.EggCarton(A)
        if kind == "flat":
            return surf.EggCarton(0.0)
        if kind == "mixedmode":
            return surf.MixedMode(A)
        if kind == "onedim":
            return surf.OneDim(A)
        if kind == "bump":
            return surf.Bump(A, cfg["surface.r"], (cfg["surface.c1"], cfg["surface.c2"]))
        return surf.Fourier(cfg["surface.modes"])
    except surf.SurfaceError as exc:
        raise ConfigError(str(exc)) from exc


def make_params(cfg):
    try:
        p = hf.HelfrichParams(cfg["helfrich.kappa_star"], cfg["helfrich.sigma_star"],
                              cfg["helfrich.cutoff"])
        if p.cutoff < 1:
            raise hf.ConfigError("helfrich.cutoff must be >= 1")
        return p
    except hf.ConfigError as exc:
        raise ConfigError(str(exc)) from exc


def _positive(cfg, *keys):
    for k in keys:
        if not cfg[k] > 0:
            raise ConfigError(f"{k} must be positive")


# ---------------------------------------------------------------------------
# commands: each returns (record, {filename: rows-with-header})

def cmd_case0(cfg):
    _positive(cfg, "fem.mesh", "fem.tol")
    if cfg["fem.mesh"] < 2:
        raise ConfigError("fem.mesh must be >= 2")
    spec = make_surface(cfg)
    return fem.effective_tensor(cfg["fem.mesh"], spec, cfg["fem.tol"]).to_record(), {}


def cmd_quenched(cfg):
    _positive(cfg, "ensemble.samples", "ensemble.mesh")
    p = make_params(cfg)
    s = en.quenched_average(p, cfg["ensemble.samples"], cfg["ensemble.mesh"],
                            cfg["fem.tol"], cfg["seed"])
    extra = {}
    if cfg["ensemble.per_sample_csv"]:
        rows = [["seed", "D11", "D12", "D22", "Z"]]
        for r in s.perSample:
            rows.append([int(r[0]), *r[1:]])
        extra["samples.csv"] = rows
    return s.to_record(), extra


def cmd_annealed(cfg):
    _positive(cfg, "ensemble.samples", "ensemble.grid")
    p = make_params(cfg)
    r = en.annealed_tensor(p, cfg["ensemble.samples"], cfg["ensemble.grid"], cfg["seed"])
    return r.to_record(), {}


def cmd_case3drift(cfg):
    p = make_params(cfg)
    g, pi = en.single_mode_coefficients(p, (1, 1))
    eta_max = cfg["case3.eta_max"] or None
    try:
        L = en.case3_drift_estimate(g, pi, cfg["case3.mesh"], cfg["case3.eta_points"],
                                    eta_max, tol=cfg["fem.tol"])
    except hf.ConfigError as exc:
        raise ConfigError(str(exc)) from exc
    return {"L1": float(L[0]), "L2": float(L[1]), "gamma": float(g), "pi": float(pi),
            "mesh_M": int(cfg["case3.mesh"]), "eta_points": int(cfg["case3.eta_points"])}, {}


def _case4_config(cfg):
    p = make_params(cfg)
    try:
        return c4.Case4Config.from_params(
            p, (cfg["case4.k1"], cfg["case4.k2"]), M=cfg["case4.M"] or None,
            meshY=cfg["case4.mesh_y"], meshEta=cfg["case4.mesh_eta"], tol=cfg["case4.tol"])
    except hf.ConfigError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_case4(cfg):
    res = c4.run_case4(_case4_config(cfg))
    extra = {}
    if cfg["case4.density_csv"]:
        mesh = res.generator.mesh
        rows = [["y1", "y2", "eta", "rho"]]
        rows += [[a, b, e, r] for (a, b), e, r in zip(mesh.y, mesh.eta, res.density.rho)]
        extra["density.csv"] = rows
    return res.to_record(), extra


def cmd_simulate(cfg):
    regime = cfg["sim.regime"]
    if regime == "case0":
        source = make_surface(cfg)
    elif regime == "caseIV":
        c = _case4_config(cfg)
        source = (c.gamma, c.pi)
    else:
        source = make_params(cfg)
    sc = so.SimConfig(regime, source, cfg["sim.epsilon"], cfg["sim.dt"], cfg["sim.t_final"],
                      cfg["sim.paths"], cfg["seed"], (cfg["case4.k1"], cfg["case4.k2"]))
    try:
        sc.validate()
    except hf.ConfigError as exc:
        raise ConfigError(str(exc)) from exc
    if sc.nPaths < 100:
        raise ConfigError("sim.paths must be >= 100 for the estimator")
    if cfg["sim.extrapolate"]:
        if round(sc.tFinal / sc.dt) % 2:
            raise ConfigError("sim.extrapolate needs an even number of time steps")
        X, Xc = so.simulate_paths(sc, coarse=True)
    else:
        X, Xc = so.simulate_paths(sc), None
    est = so.estimate_diffusion(X, sc.tFinal, coarse=Xc)
    extra = {}
    if cfg["sim.positions_csv"]:
        rows = [["path", "x1", "x2"]] + [[i, a, b] for i, (a, b) in enumerate(X)]
        extra["positions.csv"] = rows
    rec = est.to_record()
    rec["regime"] = regime
    rec["epsilon"] = float(sc.epsilon)
    rec["dt"] = float(sc.dt)
    rec["extrapolated"] = bool(cfg["sim.extrapolate"])
    return rec, extra


RUNNERS = {
    "case0": cmd_case0,
    "quenched": cmd_quenched,
    "annealed": cmd_annealed,
    "case3drift": cmd_case3drift,
    "case4": cmd_case4,
    "simulate": cmd_simulate,
}

SWEEP_COLUMNS = {
    "case0": ["D11", "D12", "D22", "Z", "Das", "lower11", "lower22", "upper11", "upper22",
              "lambda1", "lambda2", "det_residual"],
    "quenched": ["meanD11", "meanD12", "meanD22", "stdD11", "stdD12", "stdD22",
                 "meanAreaScaling", "delta", "weak_disorder_est"],
    "annealed": ["D", "stderr", "delta", "weak_disorder_est"],
    "case3drift": ["L1", "L2"],
    "case4": ["D11", "D12", "D22", "centering_x", "centering_y", "eig_residual",
              "energy_identity_residual"],
    "simulate": ["D11", "D12", "D22", "stderr11", "stderr12", "stderr22", "drift1", "drift2"],
}


def sweep_values(lo, hi, num, spacing):
    if num < 1 or hi < lo:
        raise ConfigError(f"empty sweep range {lo}..{hi} with {num} points")
    if spacing == "log":
        if lo <= 0:
            raise ConfigError("log sweep needs positive bounds")
        return np.geomspace(lo, hi, num)
    return np.linspace(lo, hi, num)


def cmd_sweep(cfg, ranges):
    if len(ranges) != 1:
        raise ConfigError(f"sweep needs exactly one ranged parameter (got {len(ranges)})")
    (key, (lo, hi)), = ranges.items()
    command = cfg["sweep.command"]
    vals = sweep_values(lo, hi, cfg["sweep.num"], cfg["sweep.spacing"])
    conv = SCHEMA[key][0]
    if conv is int or conv is _seed:
        vals = np.unique(np.round(vals).astype(np.int64))
    cols = SWEEP_COLUMNS[command]
    rows = [[key.split(".")[-1], *cols]]
    for v in vals:
        c = dict(cfg)
        c[key] = conv(v)
        rec, _ = RUNNERS[command](c)
        rows.append([c[key], *[rec[col] for col in cols]])
    return None, {"sweep.csv": rows}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def render_json(record) -> str:
    return json.dumps(record, sort_keys=True, indent=2) + "\n"


def run(command, raw, out_dir):
    """Execute ``command`` and atomically write its artifacts to ``out_dir``."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cfg, ranges = validate(raw, allow_range=(command == "sweep"), command=command)
    if command == "sweep":
        record, extra = cmd_sweep(cfg, ranges)
    else:
        record, extra = RUNNERS[command](cfg)
    files = {}
    if record is not None:
        files["result.json"] = render_json(record)
    for name, rows in extra.items():
        files[name] = render_csv(rows)
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".memhomog-", dir=out.parent))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text, encoding="utf-8")
        out.mkdir(parents=True, exist_ok=True)
        for name in files:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    return record, sorted(files)


def _split_args(argv):
    ap = argparse.ArgumentParser(prog="memhomog", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="key = value config file")
    ap.add_argument("--out", default="out", help="output directory")
    args, rest = ap.parse_known_args(argv)
    raw = {}
    if args.config:
        try:
            raw.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
    for tok in rest:
        t = tok[2:] if tok.startswith("--") else tok
        if "=" not in t:
            raise ConfigError(f"expected key=value, got {tok!r}")
        k, v = t.split("=", 1)
        raw[k.strip()] = v.strip()
    return args.command, raw, args.out


def _error(kind, exc, code):
    rec = {"status": "error", "kind": kind, "type": type(exc).__name__, "message": str(exc)}
    for attr in ("seed", "index", "residual", "iterations"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    sys.stderr.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
    return code


def main(argv=None) -> int:
    try:
        command, raw, out = _split_args(sys.argv[1:] if argv is None else argv)
        run(command, raw, out)
    except SystemExit as exc:           # argparse usage errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    except (ConfigError, hf.ConfigError, surf.SurfaceError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        return _error("numeric", exc, EXIT_NUMERIC)
    return EXIT_OK


if __name__ == "__main__":          # pragma: no cover
    sys.exit(main())
