"""Command-line entry point: ``scenechar <subcommand> [flags]``.

Settings resolve as flags > ``--config`` file > defaults.  The config file is a
flat ``key = value`` text file using the flag names.  Every subcommand writes
its resolved settings next to its outputs so a run can be repeated with
``--config``.  Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import data, experiment, synth
from .network import Network

SEED_ENV = "CNN_SCENE_CHAR_SEED"
EFFECTIVE_CONFIG = "effective_config.txt"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    help: str = ""
    required: bool = False
    choices: tuple | None = None

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _seed_default() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


SEED = Opt("seed", int, _seed_default, f"random seed (falls back to ${SEED_ENV}, then 0)")
TRAIN_OPTS = [
    Opt("filter", int, 3, "square kernel size", choices=(3, 5)),
    Opt("stride", int, 1, "convolution stride", choices=(1, 2)),
    Opt("lr", float, 0.005, "SGD learning rate"),
    Opt("arch", str, "B", "A: 2 conv + 1 FC; B: conv+pool twice + 2 FC", choices=("A", "B")),
    Opt("epochs", int, 50, "training epochs"),
    Opt("batch-size", int, 32, "minibatch size"),
    Opt("k1", int, 16, "filters in the first conv layer"),
    Opt("k2", int, 32, "filters in the second conv layer"),
    Opt("fc-hidden", int, 128, "hidden dense width (arch B)"),
    Opt("padding", int, 0, "zero padding of both conv layers"),
]

COMMANDS: dict[str, tuple[str, list[Opt]]] = {
    "prepare": ("build and split a manifest from root/<class>/<image>", [
        Opt("root", str, None, "dataset root directory", required=True),
        Opt("out", str, None, "output directory for manifest.jsonl", required=True),
        Opt("train", int, data.DEFAULT_TRAIN_COUNT, "training records"),
        Opt("test", int, data.DEFAULT_TEST_COUNT, "test records"),
        SEED,
        Opt("per-orientation", _bool, False, "split rotated copies independently (allows leakage)"),
    ]),
    "synth": ("render the synthetic glyph corpus", [
        Opt("out", str, None, "output directory", required=True),
        Opt("classes", int, synth.NUM_GLYPHS, "number of glyph classes"),
        Opt("per-class", int, 20, "base images per class"),
        SEED,
    ]),
    "train": ("train one configuration", [
        Opt("manifest", str, None, "manifest.jsonl with train/test splits", required=True),
        *TRAIN_OPTS,
        SEED,
        Opt("out", str, "runs", "output directory for checkpoint and report"),
    ]),
    "evaluate": ("evaluate a checkpoint on one split", [
        Opt("ckpt", str, None, "checkpoint file", required=True),
        Opt("manifest", str, None, "manifest.jsonl", required=True),
        Opt("split", str, "test", "split to score", choices=("train", "test")),
        Opt("out", str, "", "optional path for the JSON report"),
    ]),
    "sweep": ("run the filter x stride x learning-rate grid", [
        Opt("manifest", str, None, "manifest.jsonl with train/test splits", required=True),
        Opt("grid", str, "default", "grid name", choices=("default",)),
        Opt("arch", str, "B", "architecture for every cell", choices=("A", "B")),
        Opt("seeds", str, "0", "comma-separated seeds; each cell runs once per seed"),
        Opt("epochs", int, 50, "training epochs per cell"),
        Opt("batch-size", int, 32, "minibatch size"),
        Opt("jobs", int, 1, "parallel worker processes"),
        Opt("out", str, None, "runs directory", required=True),
    ]),
    "gradcheck": ("finite-difference check of a reduced network", [
        Opt("arch", str, "B", "architecture", choices=("A", "B")),
        Opt("filter", int, 3, "kernel size of the reduced network"),
        Opt("stride", int, 1, "stride of the reduced network"),
        SEED,
        Opt("tol", float, 1e-4, "maximum allowed relative error"),
        Opt("out", str, "", "optional path for the JSON result"),
    ]),
    "report": ("summarise persisted run reports", [
        Opt("runs-dir", str, None, "directory of per-run JSON reports", required=True),
        Opt("format", str, "csv", "output format", choices=("csv", "json")),
        Opt("out", str, "", "optional output file (stdout otherwise)"),
    ]),
}

# outputs locations are not part of the reproducible settings
_NOT_RECORDED = {"out", "config"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_value(opt: Opt):
    return opt.default() if callable(opt.default) else opt.default


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenechar", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (help_text, opts) in COMMANDS.items():
        sp = subs.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", default=None, help="flat key = value settings file (default: none)")
        for opt in opts:
            shown = "env/0" if callable(opt.default) else opt.default
            extra = " [required]" if opt.required else f" (default: {shown!r})"
            sp.add_argument(f"--{opt.name}", dest=opt.dest, default=None, help=opt.help + extra,
                            metavar=opt.dest.upper())
    return parser


def read_config_file(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    values = {}
    for lineno, line in enumerate(p.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, config file and flags, converting and validating each value."""
    opts = COMMANDS[command][1]
    from_file = read_config_file(ns.config) if ns.config else {}
    known = {o.dest for o in opts}
    unknown = set(from_file) - known - {"command"}
    if unknown:
        raise UsageError(f"unknown setting(s) in {ns.config}: {', '.join(sorted(unknown))}")
    settings = {}
    for opt in opts:
        raw = getattr(ns, opt.dest)
        if raw is None:
            raw = from_file.get(opt.dest)
        if raw is None:
            if opt.required:
                raise UsageError(f"{command}: missing required flag --{opt.name}")
            value = _default_value(opt)
        else:
            try:
                value = opt.type(raw)
            except ValueError:
                raise UsageError(f"{command}: invalid value {raw!r} for --{opt.name}") from None
        if opt.choices and value not in opt.choices:
            raise UsageError(f"{command}: --{opt.name} must be one of {list(opt.choices)}, got {value!r}")
        settings[opt.dest] = value
    return settings


def write_effective_config(command: str, settings: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"command = {command}"]
    lines += [f"{k} = {v}" for k, v in settings.items() if k not in _NOT_RECORDED]
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _config_from(settings: dict) -> experiment.ExperimentConfig:
    return experiment.ExperimentConfig(
        filter_size=settings["filter"], stride=settings["stride"], learning_rate=settings["lr"],
        architecture=settings["arch"], epochs=settings["epochs"], batch_size=settings["batch_size"],
        seed=settings["seed"], k1=settings["k1"], k2=settings["k2"], fc_hidden=settings["fc_hidden"],
        padding=settings["padding"],
    )


def cmd_prepare(s):
    manifest = data.build_manifest(s["root"])
    manifest = data.split_dataset(manifest, s["train"], s["test"], s["seed"],
                                  group_orientations=not s["per_orientation"])
    out = Path(s["out"])
    path = data.write_manifest(manifest, out / "manifest.jsonl")
    write_effective_config("prepare", s, out / EFFECTIVE_CONFIG)
    print(f"{len(manifest.records)} records, {manifest.num_classes} classes -> {path}")
    print(f"train {len(manifest.select('train'))}, test {len(manifest.select('test'))}")


def cmd_synth(s):
    out = Path(s["out"])
    _, info = synth.synth_generate(out, s["classes"], s["per_class"], s["seed"])
    write_effective_config("synth", s, out / EFFECTIVE_CONFIG)
    print(f"{info['num_classes']} classes x {info['base_per_class']} base images -> {out}")
    print(f"train {info['train']}, test {info['test']}, "
          f"nearest-centroid accuracy {info['nearest_centroid_accuracy']:.3f}")


def cmd_train(s):
    cfg = _config_from(s)
    manifest = data.read_manifest(s["manifest"])
    net, rep = experiment.train(cfg, manifest)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    tag = cfg.digest()
    net.save(out / f"{tag}.ckpt")
    (out / f"{tag}.json").write_text(rep.to_json())
    write_effective_config("train", s, out / f"{tag}.config.txt")
    state = "diverged" if rep.diverged else "ok"
    print(f"run {tag}: test error {rep.error_rate:.2f}% (best epoch {rep.best_epoch}, {state}, "
          f"{rep.wall_clock_s:.1f}s) -> {out / (tag + '.ckpt')}")


def cmd_evaluate(s):
    ckpt = Path(s["ckpt"])
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    net = Network.load(ckpt)
    rep = experiment.evaluate(net, data.read_manifest(s["manifest"]), s["split"])
    if s["out"]:
        Path(s["out"]).write_text(rep.to_json())
    total = sum(map(sum, rep.confusion))
    print(f"{s['split']} error {rep.error_rate:.2f}% on {total} samples")


def cmd_sweep(s):
    manifest_path = Path(s["manifest"])
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        seeds = [int(x) for x in s["seeds"].split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"sweep: --seeds must be comma-separated integers, got {s['seeds']!r}") from None
    grid = experiment.default_grid(s["arch"], seeds, epochs=s["epochs"], batch_size=s["batch_size"])
    out = Path(s["out"])
    write_effective_config("sweep", s, out / EFFECTIVE_CONFIG)
    reports = experiment.sweep(grid, manifest_path, out, jobs=s["jobs"])
    print(experiment.summary_csv(reports), end="")
    failed = sum(r.status == "failed" for r in reports)
    print(f"{len(reports)} runs ({failed} failed) -> {out / 'summary.csv'}")


def cmd_gradcheck(s):
    spec = experiment.reduced_spec(s["arch"], f=s["filter"], s=s["stride"])
    res = experiment.gradient_check(spec, seed=s["seed"])
    for layer, err in res.max_rel_error.items():
        print(f"{layer:10s} max relative error {err:.3e}")
    print(f"checked {res.checked}, skipped {res.skipped} at kinks, "
          f"{'PASS' if res.passed(s['tol']) else 'FAIL'} (tol {s['tol']:g})")
    if s["out"]:
        Path(s["out"]).write_text(json.dumps({
            "arch": s["arch"], "max_rel_error": res.max_rel_error, "checked": res.checked,
            "skipped": res.skipped, "finite": res.finite, "passed": res.passed(s["tol"]),
        }, indent=1, sort_keys=True) + "\n")
    if not res.passed(s["tol"]):
        raise RuntimeError("gradient check failed")


def cmd_report(s):
    text = experiment.report(s["runs_dir"], s["format"])
    if s["out"]:
        Path(s["out"]).write_text(text)
    else:
        sys.stdout.write(text)


HANDLERS = {
    "prepare": cmd_prepare, "synth": cmd_synth, "train": cmd_train, "evaluate": cmd_evaluate,
    "sweep": cmd_sweep, "gradcheck": cmd_gradcheck, "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("scenechar: a subcommand is required (see --help)")
        settings = resolve(ns.command, ns)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        HANDLERS[ns.command](settings)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
