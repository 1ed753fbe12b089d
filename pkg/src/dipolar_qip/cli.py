"""Command-line driver: ``dipolar-qip {spectrum,design,run,fit}``.

Exit codes: 0 ok, 2 invalid input, 3 fidelity below floor, 4 degenerate
readout, 5 unstable fit. Every command writes a ``*.manifest.json`` next
to its primary output.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AssignmentUnstable, Degenerate, DipolarQipError, ValidationError
from .expsim import (
    default_plan,
    load_plan,
    prepare_pops,
    run_experiment,
)
from .io import (
    csv_text,
    load_system,
    matrix_from_json,
    read_csv_columns,
    read_json,
    system_to_json,
    write_outputs,
)
from .numerics import SimplexConfig
from .qnge import QngeSpec, compose_qnge, embed_target
from .smp import (
    ParamBounds,
    RobustnessGrid,
    SearchSpec,
    Smp,
    design_staged,
    fidelity_surface,
)
from .spin import (
    eigen_populations,
    eigenbasis,
    build_hamiltonian,
    equilibrium_state,
    find_transition,
    fit_hamiltonian,
    synthesize_spectrum,
    transitions,
)

EXIT_OK, EXIT_INPUT, EXIT_FIDELITY, EXIT_DEGENERATE, EXIT_FIT = 0, 2, 3, 4, 5


def _manifest(args, command: str, inputs: dict, outputs: list, t0: float, seed=None) -> str:
    return json.dumps({
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - t0, 3),
        "outputs": [str(p) for p in outputs],
    }, indent=2)


def fmt_c(c: float | None) -> str:
    return "n/a" if c is None else f"{c:.4f}"


def _sibling(out: Path, suffix: str) -> Path:
    return out.with_name(out.stem + suffix)


def _parse_grid_hz(text: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ValidationError(f"--grid-hz: expected min:max:step, got {text!r}") from None
    if step <= 0 or hi <= lo:
        raise ValidationError("--grid-hz: need max > min and step > 0")
    return np.arange(lo, hi + 0.5 * step, step)


def _grid(text: str) -> RobustnessGrid:
    named = {
        "default": RobustnessGrid.default,
        "single": RobustnessGrid.single,
        "coarse": lambda: RobustnessGrid.uniform([0.90, 0.975, 1.05], [-5.0, 0.0, 5.0]),
    }
    if text in named:
        return named[text]()
    return RobustnessGrid.from_json(read_json(text))


def _labels_pair(eb, text: str) -> tuple[str, str]:
    parts = text.split(",")
    if len(parts) != 2 or any(len(p) != eb.n or set(p) - {"0", "1"} for p in parts):
        raise ValidationError(f"expected two {eb.n}-bit labels separated by a comma, got {text!r}")
    return parts[0], parts[1]


# ---------------------------------------------------------------------------


def cmd_spectrum(args) -> int:
    t0 = time.perf_counter()
    system = load_system(args.system)
    if not 0 < args.theta_deg <= 90:
        raise ValidationError("--theta-deg must be in (0, 90]")
    eb = eigenbasis(build_hamiltonian(system), strict=False)
    trs = transitions(eb)
    if args.state == "equilibrium":
        pops = eigen_populations(equilibrium_state(system), eb)
    else:
        pops = np.zeros(eb.dim)
    spec = synthesize_spectrum(pops, trs, math.radians(args.theta_deg))
    keep = np.abs(spec.amplitudes) > 1e-15
    out = Path(args.output)
    files = {out: csv_text(["freq_hz", "amplitude"],
                           zip(spec.freqs_hz[keep], spec.amplitudes[keep]))}
    if args.grid_hz:
        grid = _parse_grid_hz(args.grid_hz)
        width = args.linewidth_hz
        if width is None and system.linewidths_hz is not None and system.linewidths_hz.size == 1:
            width = float(system.linewidths_hz[0])
        trace = spec.render(grid, width if width is not None else 2.0)
        files[_sibling(out, "_trace.csv")] = csv_text(["freq_hz", "intensity"], zip(grid, trace))
    files[_sibling(out, ".manifest.json")] = _manifest(
        args, "spectrum", {"system": args.system}, list(files), t0)
    write_outputs(files)
    return EXIT_OK


def _design_target(args, system, eb):
    if args.qnge_spec:
        spec = QngeSpec.from_json(read_json(args.qnge_spec))
        return embed_target(compose_qnge(spec), eb)
    m = matrix_from_json(read_json(args.target_file))
    if m.shape != (system.dim, system.dim):
        raise ValidationError(f"target is {m.shape[0]}x{m.shape[1]}, system needs {system.dim}")
    return embed_target(m, eb) if args.target_basis == "eigen" else m


def _warmup(text: str | None) -> list:
    if not text:
        return []
    stages = []
    for part in text.split(","):
        try:
            name, evals = part.split(":")
            stages.append((_grid(name), int(evals)))
        except ValueError:
            raise ValidationError(f"--warmup: expected grid:evals[,grid:evals], got {text!r}") from None
    return stages


def cmd_design(args) -> int:
    t0 = time.perf_counter()
    if args.segments < 1:
        raise ValidationError("--segments must be >= 1")
    if bool(args.qnge_spec) == bool(args.target_file):
        raise ValidationError("give exactly one of --qnge-spec or --target-file")
    system = load_system(args.system)
    eb = eigenbasis(build_hamiltonian(system), strict=args.target_basis == "eigen" or bool(args.qnge_spec))
    target = _design_target(args, system, eb)
    mode = args.mode or ("state" if args.qnge_spec else "gate")
    rho_in = None
    if mode == "state":
        trs = transitions(eb)
        a, b = _labels_pair(eb, args.pops_labels)
        pops = prepare_pops(system, eb, find_transition(trs, eb, a, b), "ideal", trs)
        rho_in = pops.in_zeeman(eb).m
    bounds = ParamBounds(
        tau_s=(1e-6, args.tau_max), amp_hz=(0.0, args.amp_max),
        freq_hz=(-args.freq_max, args.freq_max), delay_s=(0.0, args.delay_max))
    initial = Smp.from_json(read_json(args.init)) if args.init else None
    spec = SearchSpec(
        target=target, system=system, n_segments=args.segments, rho_in=rho_in,
        grid=_grid(args.grid), bounds=bounds,
        simplex=SimplexConfig(max_evals=args.max_evals, restarts=args.restarts,
                              seed=args.seed, initial_step=args.step),
        block_size=args.block_size, block_evals=args.block_evals, sweeps=args.sweeps,
        initial=initial, target_fidelity=args.stop_at)
    res = design_staged(spec, _warmup(args.warmup))
    surface = fidelity_surface(spec, res.smp)

    out = Path(args.output)
    scales = [s for s, _ in spec.grid.rf_scales]
    offsets = [o for o, _ in spec.grid.static_offsets_hz]
    files = {
        out: json.dumps(res.smp.to_json(), indent=2),
        _sibling(out, "_log.csv"): csv_text(
            ["eval_index", "incumbent_fidelity", "restart_index"], res.log),
        _sibling(out, "_surface.csv"): csv_text(
            ["rf_scale"] + [f"offset_{o:g}_hz" for o in offsets],
            [[s] + list(row) for s, row in zip(scales, surface)]),
    }
    files[_sibling(out, ".manifest.json")] = _manifest(
        args, "design",
        {"system": args.system, "qnge_spec": args.qnge_spec, "target_file": args.target_file,
         "grid": args.grid, "init": args.init},
        list(files), t0, args.seed)
    write_outputs(files)
    print(f"achieved fidelity {res.achieved:.6f} after {res.evals} evaluations"
          f"{' (budget exhausted)' if res.budget_exhausted else ''}")
    return EXIT_OK if res.achieved >= args.min_fidelity else EXIT_FIDELITY


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    if args.mode == "full":
        if args.seed is None:
            raise ValidationError("--seed is required in full mode")
        if not args.pulse:
            raise ValidationError("full mode needs --pulse")
    system = load_system(args.system)
    eb = eigenbasis(build_hamiltonian(system))
    trs = transitions(eb)
    spec = QngeSpec.from_json(read_json(args.qnge_spec))
    plan = load_plan(args.plan) if args.plan else default_plan(trs, eb.dim)
    smp = Smp.from_json(read_json(args.pulse)) if args.pulse else None
    a, b = _labels_pair(eb, args.pops_labels)
    k = find_transition(trs, eb, a, b)
    res = run_experiment(system, eb, smp, plan, _grid(args.grid), k, spec=spec,
                         mode=args.mode, seed=args.seed or 0, trs=trs)
    perm = eb.label_permutation()
    eq = eigen_populations(equilibrium_state(system), eb)[perm]
    out = Path(args.output)
    files = {
        out: json.dumps(res.to_json(), indent=2),
        _sibling(out, "_bars.csv"): csv_text(
            ["label", "equilibrium", "pops_theory", "pops_simulated",
             "qnge_theory", "qnge_simulated"],
            zip(res.labels, eq, res.pops_theory, res.pops_diag, res.diag_theory, res.diag)),
    }
    files[_sibling(out, ".manifest.json")] = _manifest(
        args, "run",
        {"system": args.system, "pulse": args.pulse, "qnge_spec": args.qnge_spec,
         "plan": args.plan, "mode": args.mode},
        list(files), t0, args.seed)
    write_outputs(files)
    print(f"gradient {res.gradient} (confidence {res.confidence:.4f}); "
          f"C_pops {res.c_pops:.4f}, C_qnge {fmt_c(res.c_qnge)}")
    return EXIT_OK


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    observed = read_csv_columns(args.observed, ("freq_hz", "amplitude"))
    guess = load_system(args.guess)
    cfg = SimplexConfig(max_evals=args.max_evals, f_tol=1e-14, x_tol=1e-9,
                        seed=args.seed, initial_step=args.step)
    res = fit_hamiltonian(observed, guess, cfg, theta_rad=math.radians(args.theta_deg))
    out = Path(args.output)
    report = {
        "freq_rms_hz": res.freq_rms_hz,
        "intensity_rel_err": res.intensity_rel_err,
        "evaluations": res.nfev,
        "assignment": [
            {"observed_freq_hz": float(f), "observed_amplitude": float(a),
             "calc_index": int(c), "calc_freq_hz": float(res.calc_freqs_hz[c]),
             "calc_amplitude": float(res.calc_amps[c])}
            for (f, a), c in zip(observed, res.assignment)
        ],
    }
    files = {
        out: json.dumps(system_to_json(res.system), indent=2),
        _sibling(out, "_report.json"): json.dumps(report, indent=2),
    }
    files[_sibling(out, ".manifest.json")] = _manifest(
        args, "fit", {"observed": args.observed, "guess": args.guess}, list(files), t0, args.seed)
    write_outputs(files)
    print(f"freq_rms {res.freq_rms_hz:.4g} Hz, intensity error {100 * res.intensity_rel_err:.2f}%")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dipolar-qip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", help="small-angle stick spectrum of a spin system")
    s.add_argument("system")
    s.add_argument("--theta-deg", type=float, default=3.0)
    s.add_argument("--linewidth-hz", type=float)
    s.add_argument("--grid-hz", help="min:max:step for a Lorentzian trace")
    s.add_argument("--state", choices=["equilibrium", "uniform"], default="equilibrium")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_spectrum)

    d = sub.add_parser("design", help="design a strongly modulating pulse")
    d.add_argument("system")
    d.add_argument("--qnge-spec")
    d.add_argument("--target-file", help="JSON {'real': [[..]], 'imag': [[..]]}")
    d.add_argument("--target-basis", choices=["zeeman", "eigen"], default="zeeman")
    d.add_argument("--mode", choices=["gate", "state"])
    d.add_argument("--pops-labels", default="0000,0100")
    d.add_argument("--segments", type=int, required=True)
    d.add_argument("--grid", default="default", help="default, single, coarse, or a JSON file")
    d.add_argument("--warmup", help="e.g. single:60000,coarse:60000")
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--restarts", type=int, default=0)
    d.add_argument("--max-evals", type=int, default=20000)
    d.add_argument("--block-size", type=int)
    d.add_argument("--block-evals", type=int, default=150)
    d.add_argument("--sweeps", type=int, default=100000)
    d.add_argument("--step", type=float, default=0.5)
    d.add_argument("--tau-max", type=float, default=2e-3)
    d.add_argument("--amp-max", type=float, default=2e4)
    d.add_argument("--freq-max", type=float, default=5e3)
    d.add_argument("--delay-max", type=float, default=2e-3)
    d.add_argument("--init", help="pulse JSON to start restart 0 from")
    d.add_argument("--stop-at", type=float, default=1.0)
    d.add_argument("--min-fidelity", type=float, default=0.90)
    d.add_argument("-o", "--output", required=True)
    d.set_defaults(func=cmd_design)

    r = sub.add_parser("run", help="simulate POPS -> QNGE -> tomography")
    r.add_argument("system")
    r.add_argument("--pulse")
    r.add_argument("--qnge-spec", required=True)
    r.add_argument("--plan")
    r.add_argument("--mode", choices=["ideal", "full"], default="ideal")
    r.add_argument("--grid", default="default")
    r.add_argument("--pops-labels", default="0000,0100")
    r.add_argument("--seed", type=int)
    r.add_argument("-o", "--output", required=True)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("fit", help="fit shifts and couplings to an observed line list")
    f.add_argument("observed")
    f.add_argument("guess")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--theta-deg", type=float, default=3.0)
    f.add_argument("--max-evals", type=int, default=4000)
    f.add_argument("--step", type=float, default=0.5)
    f.add_argument("-o", "--output", required=True)
    f.set_defaults(func=cmd_fit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INPUT
    try:
        return args.func(args)
    except AssignmentUnstable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except Degenerate as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (ValidationError, DipolarQipError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
