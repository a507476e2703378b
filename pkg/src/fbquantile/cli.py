"""Batch command-line front end.

Subcommands: simulate, predict, sweep, figure, replay. Every written artifact
gets a sibling manifest recording the resolved configuration, so ``replay``
can regenerate it byte for byte.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import sys
import warnings
from pathlib import Path

from . import __version__, figures, theory
from .harness import DEFAULT_SEED, ExperimentPlan, build_config, run_replication, sweep, sweep_csv
from .protocol import ConfigError, ProtocolEngine, StabilityWarning, feedback_bits

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_VALIDATION = 2
EXIT_IO = 3


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


# -- config assembly ---------------------------------------------------------


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--protocol", choices=("mbf", "obf", "qbf"))
    p.add_argument("--m", type=int)
    p.add_argument("--alpha", help="quantile level, decimal or p/q")
    p.add_argument("--K", help="gain constant, or 'optimal'")
    p.add_argument("--gain", choices=("constant", "decaying"))
    p.add_argument("--n", type=int, help="horizon (number of updates)")
    p.add_argument("--dist", help="source distribution kind:params, e.g. uniform:0,1")
    p.add_argument("--eps", help="BSC crossover probability, decimal or p/q")
    p.add_argument("--adjust-alpha", choices=("on", "off"))
    p.add_argument("--quantizer", help="uniform:L, 1bf, mbf or a JSON file")
    p.add_argument("--theta0", type=float)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc.strerror}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CLIError(f"{path} is not valid JSON: {exc}") from None


def _config_data(args) -> dict:
    data = _read_json(args.config) if args.config else {}
    if not isinstance(data, dict):
        raise CLIError("config file must hold a JSON object")
    for flag, key in (("protocol", "protocol"), ("m", "m"), ("alpha", "alpha"), ("n", "horizon"),
                      ("dist", "dist"), ("eps", "eps"), ("quantizer", "quantizer"), ("theta0", "theta0")):
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    if args.adjust_alpha is not None:
        data["adjust_alpha"] = args.adjust_alpha == "on"
    if args.K is not None or args.gain is not None:
        gain = dict(data.get("gain") or {})
        if args.gain is not None:
            gain["kind"] = args.gain
        if args.K is not None:
            gain["K"] = "optimal" if args.K == "optimal" else _float(args.K, "K")
        data["gain"] = gain
    return data


def _float(text: str, name: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise CLIError(f"{name} must be a number, got {text!r}") from None


def _resolve(data: dict):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", StabilityWarning)
        cfg = build_config(data)
        ProtocolEngine(cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return cfg


def _derived(cfg) -> dict:
    engine = ProtocolEngine(cfg, check_stability=False)
    return {
        "gain_value": cfg.gain_value,
        "effective_alpha": str(cfg.effective_alpha),
        "theta_star": cfg.theta_star,
        "beta": engine.beta_float,
        "feedback_bits": feedback_bits(cfg),
    }


# -- output helpers ----------------------------------------------------------


def _write(path: Path, text: str) -> dict:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise CLIError(f"cannot write {path}: {exc.strerror}", EXIT_IO) from None
    return {"path": str(path), "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()}


def _manifest(path: Path, command: str, record: dict, outputs: list[dict]) -> None:
    manifest = {
        "tool": "fbquantile",
        "version": __version__,
        "command": command,
        **record,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
        "outputs": outputs,
    }
    _write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# -- subcommands -------------------------------------------------------------


def _simulate(cfg, seed: int, rep: int) -> str:
    return run_replication(cfg, seed, rep).to_csv()


def cmd_simulate(args) -> int:
    cfg = _resolve(_config_data(args))
    out = Path(args.out or "trajectory.csv")
    info = _write(out, _simulate(cfg, args.seed, args.rep))
    _manifest(_manifest_path(out), "simulate",
              {"config": cfg.to_dict(), "derived": _derived(cfg), "master_seed": args.seed, "replication": args.rep},
              [info])
    print(f"wrote {out} ({cfg.horizon + 1} theta rows)")
    return EXIT_OK


def _predict_records(cfg) -> list[dict]:
    rec = theory.predict(cfg).to_record()
    return [rec]


def cmd_predict(args) -> int:
    cfg = _resolve(_config_data(args))
    text = json.dumps(_predict_records(cfg), indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        info = _write(out, text)
        _manifest(_manifest_path(out), "predict", {"config": cfg.to_dict()}, [info])
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _plan(args) -> ExperimentPlan:
    data = _read_json(args.plan)
    if not isinstance(data, dict):
        raise CLIError("plan file must hold a JSON object")
    if args.L is not None:
        data["L"] = args.L
    if args.seed is not None:
        data["master_seed"] = args.seed
    if args.window is not None:
        data["window"] = _window(args.window)
    return ExperimentPlan.from_dict(data)


def _window(text: str) -> list[int]:
    lo, sep, hi = text.partition(":")
    try:
        return [int(lo), int(hi)]
    except ValueError:
        raise CLIError(f"--window must look like lo:hi, got {text!r}") from None


def _sweep_text(plan: ExperimentPlan, workers: int | None) -> str:
    return sweep_csv(sweep(plan, workers=workers))


def cmd_sweep(args) -> int:
    plan = _plan(args)
    out = Path(args.out or "sweep.csv")
    info = _write(out, _sweep_text(plan, args.workers))
    _manifest(_manifest_path(out), "sweep", {"plan": plan.to_dict(), "master_seed": plan.master_seed}, [info])
    print(f"wrote {out} ({len(plan.values)} rows)")
    return EXIT_OK


def _figure_files(fig_id: str, outdir: Path, options: dict) -> list[dict]:
    series = figures.figure_series(fig_id, **options)
    infos = [_write(outdir / f"{s.name}.dat", s.to_dat()) for s in series]
    infos.append(_write(outdir / f"README_{fig_id}.txt", figures.readme_text(fig_id, series)))
    return infos


def cmd_figure(args) -> int:
    outdir = Path(args.outdir or args.out or f"figure_{args.id}")
    options = {"seed": args.seed, "L": args.L or 100}
    infos = _figure_files(args.id, outdir, {**options, "workers": args.workers})
    _manifest(outdir / f"manifest_{args.id}.json", "figure", {"figure": args.id, "options": options,
                                                              "master_seed": args.seed}, infos)
    print(f"wrote {len(infos)} files to {outdir}")
    return EXIT_OK


def _regenerate(manifest: dict, workers: int | None) -> list[tuple[Path, str]]:
    command = manifest.get("command")
    outputs = [Path(o["path"]) for o in manifest.get("outputs", [])]
    if command == "simulate":
        cfg = build_config(manifest["config"])
        return [(outputs[0], _simulate(cfg, manifest["master_seed"], manifest.get("replication", 0)))]
    if command == "predict":
        cfg = build_config(manifest["config"])
        return [(outputs[0], json.dumps(_predict_records(cfg), indent=2) + "\n")]
    if command == "sweep":
        return [(outputs[0], _sweep_text(ExperimentPlan.from_dict(manifest["plan"]), workers))]
    if command == "figure":
        series = figures.figure_series(manifest["figure"], **manifest["options"], workers=workers)
        outdir = outputs[0].parent
        files = [(outdir / f"{s.name}.dat", s.to_dat()) for s in series]
        files.append((outdir / f"README_{manifest['figure']}.txt", figures.readme_text(manifest["figure"], series)))
        return files
    raise CLIError(f"manifest has unknown command {command!r}")


def cmd_replay(args) -> int:
    """Re-run a manifest and compare against its recorded digests."""
    manifest = _read_json(args.manifest)
    recorded = {o["path"]: o["sha256"] for o in manifest.get("outputs", [])}
    mismatches = 0
    for path, text in _regenerate(manifest, args.workers):
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        target = Path(args.outdir) / path.name if args.outdir else path
        _write(target, text)
        same = recorded.get(str(path)) == digest
        mismatches += not same
        print(f"{'match' if same else 'MISMATCH'} {target}")
    return EXIT_OK if mismatches == 0 else EXIT_MISMATCH


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbquantile", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one replication and write its trajectory CSV")
    _config_flags(p)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--rep", type=int, default=0, help="replication index")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("predict", help="print variance predictions as JSON")
    _config_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="run a plan file and write the sweep CSV")
    p.add_argument("plan", help="plan JSON file")
    p.add_argument("--L", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--window")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figure", help="write plot-data files for a figure")
    p.add_argument("--id", required=True, choices=figures.FIGURE_IDS)
    p.add_argument("--outdir")
    p.add_argument("--out", help="alias of --outdir")
    p.add_argument("--L", type=int)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("replay", help="re-run a manifest and verify its outputs")
    p.add_argument("manifest")
    p.add_argument("--outdir", help="write regenerated files here instead of their recorded paths")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
