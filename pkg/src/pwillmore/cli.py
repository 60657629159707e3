"""Batch driver: flow and regularize a mesh, write snapshots and a CSV log.

Config files are flat ``key = value`` text::

    # comment lines and blank lines are ignored
    input = sphere.obj
    p = 2
    steps = 100
    fix_volume = true

Keys (defaults in brackets):

=================  ==========================================================
input              input mesh, OBJ or ASCII PLY (required)
output_dir         snapshot directory [``out``]
p                  power of the energy, integer >= 0 [2]
steps              number of steps ``k_max >= 1`` [10]
tau0               initial step size [1e-4]
scale_s            step growth factor after each accepted step [1.0]
tau_max            upper bound for the step size [tau0]
fix_area           enforce constant area (not allowed for p = 0) [false]
fix_volume         enforce constant enclosed volume [false]
reg_mode           off, linear or nonlinear [nonlinear]
reg_reference      target angles: fan or scaled [fan]
recompute_angles   recompute target angles from the current mesh each step [false]
epsilon            conformal penalty weight [1e-5]
newton_iters       Newton iterations per flow step [2]
quadrature_degree  degree of the triangle quadrature [7]
snapshot_every     write ``step_%06d.obj`` every n steps, 0 = final only [10]
log_path           CSV log [``<output_dir>/log.csv``]
=================  ==========================================================

Booleans accept true/false, yes/no, on/off and 1/0.  Command-line flags with
the same names override file values; ``--fix-area`` style spellings with
dashes work too, a bare boolean flag means true, and ``--scale``, ``--reg``,
``--out`` and ``--log`` are short for ``scale_s``, ``reg_mode``,
``output_dir`` and ``log_path``.

Exit status: 0 on success, 2 for invalid configuration or input mesh, 3 when
a flow step fails after its retry (snapshots and log written so far are kept).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .flow import MCF_AREA_MESSAGE, FlowConfig, StepFailure, flow_step, init_state, replace_mesh
from .geometry import DEFAULT_QUAD_DEGREE, enclosed_volume, p_willmore_energy, surface_area
from .mesh import MeshError, face_quality, load_mesh, save_mesh, validate_mesh
from .regularize import MODES, REFERENCES, RegularizeConfig, regularize, target_angles

logger = logging.getLogger("pwillmore")

#: the header row is the column list below; bump this when it changes
LOG_SCHEMA_VERSION = 1
LOG_COLUMNS = (
    "step",
    "t",
    "tau",
    "energy",
    "area",
    "volume",
    "newton_residual",
    "cd_before",
    "cd_after",
    "min_face_quality",
    "wall_ms",
)

EXIT_OK, EXIT_INVALID, EXIT_STEP_FAILURE = 0, 2, 3

#: per-step relative energy increase tolerated (and logged) with regularization on
REG_ENERGY_SLACK = 5e-3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    input: Path
    output_dir: Path = Path("out")
    p: int = 2
    steps: int = 10
    tau0: float = 1e-4
    scale_s: float = 1.0
    tau_max: float | None = None
    fix_area: bool = False
    fix_volume: bool = False
    reg_mode: str = "nonlinear"
    reg_reference: str = "fan"
    recompute_angles: bool = False
    epsilon: float = 1e-5
    newton_iters: int = 2
    quadrature_degree: int = DEFAULT_QUAD_DEGREE
    snapshot_every: int = 10
    log_path: Path | None = None

    def __post_init__(self):
        if self.tau_max is None:
            object.__setattr__(self, "tau_max", self.tau0)
        if self.log_path is None:
            object.__setattr__(self, "log_path", Path(self.output_dir) / "log.csv")
        if self.steps < 1:
            raise ConfigError("steps (k_max) must be >= 1")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")
        if self.p == 0 and self.fix_area:
            raise ConfigError(MCF_AREA_MESSAGE)
        try:
            self.flow_config()
            self.regularize_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            p=self.p,
            fix_area=self.fix_area,
            fix_volume=self.fix_volume,
            tau0=self.tau0,
            scale_s=self.scale_s,
            tau_max=self.tau_max,
            newton_iters=self.newton_iters,
            quad_degree=self.quadrature_degree,
        )

    def regularize_config(self) -> RegularizeConfig:
        return RegularizeConfig(
            epsilon=self.epsilon, mode=self.reg_mode, reference=self.reg_reference
        )


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _converters():
    conv = {}
    for f in fields(RunConfig):
        kind = str(f.type)
        if "Path" in kind:
            conv[f.name] = Path
        elif "bool" in kind:
            conv[f.name] = _parse_bool
        elif "int" in kind:
            conv[f.name] = int
        elif "float" in kind:
            conv[f.name] = float
        else:
            conv[f.name] = str
    return conv


CONFIG_KEYS = tuple(f.name for f in fields(RunConfig))


def read_config_file(path) -> dict:
    """Raw ``key -> text`` pairs of a flat config file."""
    out = {}
    for num, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{num}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"{path}:{num}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from a file and/or overrides (overrides win).

    Override values may be text (as from the command line) or typed values.
    """
    raw = read_config_file(path) if path is not None else {}
    if path is not None and "input" in raw and not Path(raw["input"]).is_absolute():
        # a relative input in a file is relative to that file
        raw["input"] = str(Path(path).parent / raw["input"])
    for key, value in (overrides or {}).items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        if value is not None:
            raw[key] = value
    if "input" not in raw:
        raise ConfigError("missing required key 'input'")
    conv = _converters()
    kwargs = {}
    for key, value in raw.items():
        try:
            kwargs[key] = conv[key](value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return RunConfig(**kwargs)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _record(step, st, mesh, p, cd0, cd1, wall_ms, qdeg):
    return {
        "step": step,
        "t": st.t,
        "tau": st.dt,
        "energy": p_willmore_energy(mesh, st.Y, p, qdeg),
        "area": surface_area(mesh),
        "volume": enclosed_volume(mesh),
        "newton_residual": st.residual,
        "cd_before": cd0,
        "cd_after": cd1,
        "min_face_quality": float(face_quality(mesh).min()),
        "wall_ms": wall_ms,
    }


def run_flow(cfg: RunConfig) -> int:
    """Flow ``cfg.steps`` steps with regularization after each; return exit status."""
    try:
        mesh = load_mesh(cfg.input)
    except (OSError, MeshError) as exc:
        logger.error("cannot read %s: %s", cfg.input, exc)
        return EXIT_INVALID
    diag = validate_mesh(mesh)
    if not diag.ok:
        for msg in diag.problems():
            logger.error("%s: %s", cfg.input, msg)
        return EXIT_INVALID

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    Path(cfg.log_path).parent.mkdir(parents=True, exist_ok=True)
    fcfg, rcfg = cfg.flow_config(), cfg.regularize_config()
    # connectivity is fixed, so the target angles are computed once
    angles = target_angles(mesh, rcfg.reference)
    state = init_state(mesh, fcfg)
    status = EXIT_OK
    last_energy = p_willmore_energy(mesh, state.Y, cfg.p, cfg.quadrature_degree)

    with open(cfg.log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for k in range(1, cfg.steps + 1):
            t0 = time.perf_counter()
            try:
                state = flow_step(state, fcfg)
            except StepFailure as exc:
                logger.error("%s; diagnostics: %s", exc, exc.diagnostics)
                status = EXIT_STEP_FAILURE
                break
            if rcfg.mode != "off":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    if cfg.recompute_angles:
                        angles = target_angles(state.mesh, rcfg.reference)
                    res = regularize(state.mesh, rcfg, angles)
                if not res.accepted:
                    # distortion already minimal: the flowed mesh is kept
                    logger.info("step %d: regularization rejected", k)
                cd0, cd1 = res.cd_before, res.cd_after
                state = replace_mesh(state, res.mesh, fcfg)
            else:
                cd0 = cd1 = float("nan")
            wall_ms = 1e3 * (time.perf_counter() - t0)
            rec = _record(k, state, state.mesh, cfg.p, cd0, cd1, wall_ms, cfg.quadrature_degree)
            if rcfg.mode == "off":
                rec["cd_before"] = rec["cd_after"] = 0.0
            writer.writerow([_fmt(rec[c]) for c in LOG_COLUMNS])
            fh.flush()
            e = rec["energy"]
            if rcfg.mode != "off" and e > last_energy * (1 + REG_ENERGY_SLACK):
                logger.warning("step %d: energy rose by %.3g%% after regularization", k, 100 * (e / last_energy - 1))
            last_energy = e
            if cfg.snapshot_every and k % cfg.snapshot_every == 0:
                save_mesh(state.mesh, out / f"step_{k:06d}.obj")
    final = out / f"step_{state.step:06d}.obj"
    if not final.exists():
        save_mesh(state.mesh, final)
    return status


def _cmd_run(args) -> int:
    overrides = {k: getattr(args, k) for k in CONFIG_KEYS if getattr(args, k, None) is not None}
    try:
        cfg = parse_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        logger.error("invalid configuration: %s", exc)
        return EXIT_INVALID
    return run_flow(cfg)


def _cmd_regularize(args) -> int:
    try:
        mesh = load_mesh(args.input)
        rcfg = RegularizeConfig(epsilon=args.epsilon, mode=args.mode, reference=args.reference)
    except (OSError, MeshError, ValueError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    res = regularize(mesh, rcfg)
    print(f"cd_before {res.cd_before:.17g}")
    print(f"cd_after {res.cd_after:.17g}")
    print(f"constraint_residual {res.constraint_residual:.3g}")
    print(f"min_face_quality {face_quality(mesh).min():.6g} -> {face_quality(res.mesh).min():.6g}")
    save_mesh(res.mesh, args.output)
    return EXIT_OK


def _cmd_info(args) -> int:
    try:
        mesh = load_mesh(args.input)
    except (OSError, MeshError) as exc:
        logger.error("%s", exc)
        return EXIT_INVALID
    d = validate_mesh(mesh)
    print(f"vertices {mesh.n_vertices}")
    print(f"faces {mesh.n_faces}")
    print(f"closed {d.is_closed}")
    print(f"oriented {d.is_oriented}")
    print(f"genus {d.genus}")
    print(f"min_face_quality {d.min_face_quality:.6g}")
    print(f"area {surface_area(mesh):.17g}")
    if d.is_closed:
        print(f"volume {enclosed_volume(mesh):.17g}")
    for msg in d.problems():
        print(f"problem: {msg}")
    return EXIT_OK if d.ok else EXIT_INVALID


#: extra spellings accepted on the command line
FLAG_ALIASES = {
    "scale_s": ["--scale"],
    "reg_mode": ["--reg"],
    "output_dir": ["--out"],
    "log_path": ["--log"],
}


def _flag_names(key):
    names = [f"--{key}"]
    if "_" in key:
        names.append(f"--{key.replace('_', '-')}")
    return names + FLAG_ALIASES.get(key, [])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pwillmore", description="p-Willmore flow of triangle meshes")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="flow a mesh according to a config file and/or flags")
    run.add_argument("config", nargs="?", help="flat key = value config file")
    run.add_argument("--config", dest="config_opt", metavar="FILE", help="same as the positional")
    conv = _converters()
    for key in CONFIG_KEYS:
        if conv[key] is _parse_bool:
            # a bare --fix-area means true
            run.add_argument(*_flag_names(key), dest=key, nargs="?", const="true", metavar="BOOL")
        else:
            run.add_argument(*_flag_names(key), dest=key, type=str)
    run.set_defaults(func=_cmd_run)

    reg = sub.add_parser("regularize", help="one conformal regularization step")
    reg.add_argument("input", nargs="?")
    reg.add_argument("output", nargs="?")
    reg.add_argument("--input", dest="input_opt", metavar="MESH")
    reg.add_argument("--out", "--output", dest="output_opt", metavar="MESH")
    reg.add_argument("--mode", "--reg", dest="mode", choices=MODES[1:], default="nonlinear")
    reg.add_argument("--epsilon", type=float, default=1e-5)
    reg.add_argument("--reference", choices=REFERENCES, default="fan")
    reg.set_defaults(func=_cmd_regularize)

    info = sub.add_parser("info", help="mesh statistics and validation")
    info.add_argument("input", nargs="?")
    info.add_argument("--input", dest="input_opt", metavar="MESH")
    info.set_defaults(func=_cmd_info)
    return ap


def _merge_positional(ap, args, *pairs):
    for pos, opt in pairs:
        a, b = getattr(args, pos, None), getattr(args, opt, None)
        if a is not None and b is not None and a != b:
            ap.error(f"{pos} given twice")
        setattr(args, pos, a if a is not None else b)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "run":
        _merge_positional(ap, args, ("config", "config_opt"))
    else:
        _merge_positional(ap, args, ("input", "input_opt"), ("output", "output_opt"))
        if args.input is None or (args.command == "regularize" and args.output is None):
            ap.error("input (and output for regularize) required")
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
