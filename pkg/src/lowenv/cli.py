"""Command-line entry point.

::

    lowenv synthesize  --config C --out D
    lowenv reconstruct --config C --measurements M --out D
    lowenv phases      --config C --out D
    lowenv advect      --config C --out D
    lowenv check       --config C --out D

Exit status: 0 on success, 1 for configuration and input errors, 2 for
numerical failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .errors import ConfigError, DataError, LowEnvError, PreconditionError

log = logging.getLogger("lowenv")

COMMANDS = ("synthesize", "reconstruct", "phases", "advect", "check")


class _Parser(argparse.ArgumentParser):
    # argparse would exit with status 2; report through ConfigError instead
    def error(self, message):
        raise ConfigError(message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lowenv", description="Lower envelope method for three-phase EIT")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "synthesize": "synthetic boundary measurements from the ground truth",
        "reconstruct": "shape reconstruction from measurements",
        "phases": "label image, interfaces, tuple points and angles of phi_file",
        "advect": "transport phi_file by a constant velocity for time t0",
        "check": "regularity report for phi_file",
    }
    for name in COMMANDS:
        c = sub.add_parser(name, help=helps[name])
        c.add_argument("--config", type=Path, help="key = value configuration file")
        c.add_argument("--out", type=Path, required=True, help="output directory")
        c.add_argument("--seed", type=int, help="override the RNG seed")
        c.add_argument("--snapshot-every", type=int, help="write a label image every K iterations")
        c.add_argument("--threads", type=int, help="worker thread cap (default 1)")
        c.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        if name == "reconstruct":
            c.add_argument("--measurements", type=Path, required=True, help="directory written by synthesize")
    return p


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.snapshot_every is not None:
        over["snapshot_every"] = args.snapshot_every
    if args.threads is not None:
        over["threads"] = args.threads
    return ExperimentConfig.from_mapping(over, base=cfg) if over else cfg


def _prepare_out(out: Path, force: bool):
    if out.exists():
        if not out.is_dir():
            raise ConfigError(f"--out {out} exists and is not a directory")
        if any(out.iterdir()) and not force:
            raise ConfigError(f"--out {out} is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)


def _load_phi(cfg: ExperimentConfig, config_path: Path | None):
    """``phi_file`` names a directory of ``phi_<k>.csv`` files or ``preset:<name>``."""
    from .presets import PRESETS

    spec = cfg.phi_file.strip()
    if not spec:
        raise ConfigError("this command needs phi_file in the configuration")
    if spec.startswith("preset:"):
        name = spec.split(":", 1)[1]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
        return PRESETS[name](cfg.n)
    path = Path(spec)
    if not path.is_absolute() and config_path is not None:
        path = config_path.parent / path
    return io.read_level_set(path)


# -- commands --------------------------------------------------------------------


def _check_measurements(cfg, meas):
    if meas.n != cfg.n or tuple(meas.currents) != tuple(cfg.currents):
        raise DataError(
            f"measurements (n={meas.n}, currents={meas.currents}) do not match the configuration "
            f"(n={cfg.n}, currents={cfg.currents})"
        )
    return meas


def cmd_synthesize(cfg, args, _):
    from .eit import noise_level, synthesize
    from .fem2d import build_mesh

    meas = synthesize(cfg)
    io.write_measurements(args.out / "measurements", meas, build_mesh(cfg.n))
    lines = [f"currents = {len(meas.currents)}", f"boundary_nodes = {len(meas.nodes)}"]
    if meas.noisy:
        level = noise_level(synthesize(cfg, clean=True), meas)
        lines.append(f"noise_level_pct = {100.0 * level!r}")
        log.info("noise level %.4f%%", 100.0 * level)
    (args.out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_reconstruct(cfg, args, meas):
    from .envelope import extract_phases
    from .eit import reconstruct

    snaps = args.out / "snapshots"

    def snapshot(state):
        k = cfg.snapshot_every
        if k and state.iteration % k == 0:
            snaps.mkdir(exist_ok=True)
            io.write_pgm(snaps / f"iter_{state.iteration:04d}.pgm", extract_phases(state.phi))

    state = reconstruct(cfg, meas, callback=snapshot)
    io.write_history(args.out / "history.csv", state)
    io.write_level_set(args.out / "phi", state.phi)
    io.write_pgm(args.out / "labels.pgm", extract_phases(state.phi))
    lines = [
        f"stop_reason = {state.stop_reason}",
        f"iterations = {state.iteration}",
        f"accepted_steps = {state.accepted_steps}",
        f"final_cost = {state.cost!r}",
        f"final_error_pct = {state.error!r}",
        f"J0 = {state.J0!r}",
        f"max_removed_normal = {max(state.removed_normal, default=0.0)!r}",
    ]
    lines += [f"warning = {w}" for w in state.warnings]
    (args.out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("%s after %d iterations (%.1f s)", state.stop_reason, state.iteration, state.elapsed)


def cmd_phases(cfg, args, phi):
    from .envelope import extract_phases, interface_geometry, triple_angles

    labels = extract_phases(phi)
    io.write_areas(args.out / "areas.csv", labels)
    if phi.grid.dim != 2:
        from .envelope import detect_tuple_points

        pts = detect_tuple_points(phi) if phi.kappa == phi.grid.dim + 1 else np.zeros((0, phi.grid.dim))
        io.write_tuple_points(args.out / "tuple_points.csv", pts)
        return
    io.write_pgm(args.out / "labels.pgm", labels)
    geom = interface_geometry(phi)
    io.write_interfaces(args.out / "interfaces.csv", geom)
    io.write_tuple_points(args.out / "tuple_points.csv", geom.tuple_points)
    if phi.kappa == 3 and phi.pinned_zero:
        angles = [triple_angles(phi, x) for x in geom.tuple_points]
        io.write_angles(args.out / "angles.csv", geom.tuple_points, angles)


def cmd_advect(cfg, args, phi):
    from .transport import TransportParams, VelocityField, advect

    if phi.grid.dim != 2:
        raise PreconditionError("advect is 2D only")
    theta = VelocityField.constant(phi.grid, cfg.velocity)
    out = advect(phi, theta, TransportParams(cfg.cfl, cfg.t0))
    io.write_level_set(args.out, out)
    if theta.removed_normal > 0:
        log.info("boundary normal velocity removed: %r", theta.removed_normal)


def cmd_check(cfg, args, phi):
    from .envelope import check_regularity

    rep = check_regularity(phi)
    text = rep.summary()
    (args.out / "regularity.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


_DISPATCH = {
    "synthesize": cmd_synthesize,
    "reconstruct": cmd_reconstruct,
    "phases": cmd_phases,
    "advect": cmd_advect,
    "check": cmd_check,
}


def run(argv=None) -> int:
    """Execute one command; returns the exit status."""
    if not logging.getLogger().handlers and not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    try:
        args = _parser().parse_args(argv)
        cfg = _load_config(args)
        # read every input before touching the output directory
        if args.command == "reconstruct":
            inputs = _check_measurements(cfg, io.read_measurements(args.measurements))
        elif args.command == "synthesize":
            inputs = None
        else:
            inputs = _load_phi(cfg, args.config)
        _prepare_out(args.out, args.force)
        (args.out / "config.echo").write_text(cfg.echo(), encoding="utf-8")
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            _DISPATCH[args.command](cfg, args, inputs)
    except ConfigError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except LowEnvError as exc:
        sys.stderr.write(f"failed: {type(exc).__name__}: {exc}\n")
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
