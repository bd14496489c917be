"""Command line entry point, ``qdisco <command>`` or ``python -m qdisco``.

Experiments are described by one TOML (or JSON) file. Every command writes
its artifacts plus ``manifest-<command>.json`` holding the config hash, seed,
version and timings. Each artifact also carries the config hash, as a column
in CSV files and a key in JSON and JSONL records, so outputs of different
commands can be cross-checked offline.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import FunctorConfig, ParamStore, build_circuits
from .compiler import compile_circuit
from .interpret import (bias_table, check_axioms, clifford_reference, gate_trajectories,
                        interventions, question_coefficients)
from .noise import NoiseModel, ShotPlan, noise_sweep
from .planner import estimate_resources
from .stats import clopper_pearson
from .story import (SPLITS, TIERS, Dialect, generate_dataset, generate_tier, read_jsonl,
                    split_datasets, stratified_subset)
from .train import TrainConfig, accuracy, init_params, train

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the config file when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.line = line


# -- configuration ------------------------------------------------------------------

_SECTIONS = {
    "": {"dialect", "seed", "output", "data", "train", "noise", "planner", "eval"},
    "data": {"path", "max_width", "tiers"},
    "train": {"learning_rate", "batch_size", "epochs", "seed", "accuracy_log_period",
              "qubits_per_wire", "layers", "follows_order", "stop_valid_accuracy"},
    "noise": {"a", "b", "c", "p0", "s", "shots", "mode"},
    "planner": {"repeats", "kT"},
    "eval": {"max_rows", "count", "widths"},
}


@dataclass(frozen=True)
class ExperimentConfig:
    dialect: Dialect = Dialect.TWO
    seed: int = 0
    output: str = "runs"
    data_path: str | None = None  # JSONL; generated from the seed when absent
    max_width: int = 30
    tiers: tuple[str, ...] = TIERS
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    noise_s: tuple[float, ...] = (1.0, 10.0, 25.0, 50.0)
    shots: int = 50
    shot_mode: str = "expectation"
    planner_repeats: int = 128
    planner_kT: float = 1.0
    max_rows: int | None = 12
    eval_count: int | None = None
    eval_widths: tuple[int, int] | None = None

    def to_json(self) -> dict:
        return {"dialect": self.dialect.value, "seed": self.seed, "output": self.output,
                "data": {"path": self.data_path, "max_width": self.max_width,
                         "tiers": list(self.tiers)},
                "train": self.train.to_json(),
                "noise": {**self.noise.to_json(), "s_list": list(self.noise_s),
                          "shots": self.shots, "mode": self.shot_mode},
                "planner": {"repeats": self.planner_repeats, "kT": self.planner_kT},
                "eval": {"max_rows": self.max_rows, "count": self.eval_count,
                         "widths": list(self.eval_widths) if self.eval_widths else None}}

    @property
    def hash(self) -> str:
        # where results go does not change them
        return config_hash({k: v for k, v in self.to_json().items() if k != "output"})


def config_hash(data) -> str:
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _locate(text: str, section: str, key: str) -> int | None:
    """Line number of ``key`` (inside ``[section]`` for TOML) in the config text."""
    current = ""
    for i, line in enumerate(text.splitlines(), 1):
        head = re.match(r"\s*\[([^\]]+)\]", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and re.match(rf'\s*"?{re.escape(key)}"?\s*[=:]', line):
            return i
    for i, line in enumerate(text.splitlines(), 1):  # JSON or unexpected nesting
        if re.search(rf'"{re.escape(key)}"\s*:', line):
            return i
    return None


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment config; relative paths resolve against
    the config file's directory."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", path)
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, path, exc.lineno) from None
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(str(exc), path, int(m.group(1)) if m else None) from None

    def fail(section, key, message):
        raise ConfigError(message, path, _locate(text, section, key))

    for section, allowed in _SECTIONS.items():
        block = raw if section == "" else raw.get(section, {})
        if not isinstance(block, dict):
            fail("", section, f"[{section}] must be a table")
        for key in block:
            if key not in allowed:
                fail(section, key, f"unknown key {key!r} in [{section or 'top level'}]; "
                                   f"allowed: {', '.join(sorted(allowed))}")

    def get(section, key, default, kind):
        block = raw if section == "" else raw.get(section, {})
        if key not in block:
            return default
        value = block[key]
        try:
            if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
                raise TypeError
            return kind(value)
        except (TypeError, ValueError):
            fail(section, key, f"{key} must be {kind.__name__}, got {value!r}")

    try:
        dialect = Dialect(get("", "dialect", "two", str))
    except ValueError:
        fail("", "dialect", "dialect must be 'two' or 'four'")
    seed = get("", "seed", 0, int)
    data = raw.get("data", {})
    data_path = None
    if "path" in data:
        p = Path(data["path"])
        p = p if p.is_absolute() else path.parent / p
        if not p.exists():
            fail("data", "path", f"dataset {p} does not exist")
        data_path = str(p)
    tiers = tuple(data.get("tiers", TIERS))
    for t in tiers:
        if t not in TIERS:
            fail("data", "tiers", f"unknown tier {t!r}; valid tiers: {', '.join(TIERS)}")
    tr = raw.get("train", {})
    try:
        functor = FunctorConfig(get("train", "qubits_per_wire", 1, int),
                                get("train", "layers", 3, int),
                                follows_order=get("train", "follows_order", "object-first", str))
    except ValueError as exc:
        fail("train", "follows_order" if "follows" in str(exc) else "qubits_per_wire", str(exc))
    try:
        tcfg = TrainConfig(dialect, get("train", "learning_rate", 0.005, float),
                           get("train", "batch_size", 1, int), get("train", "epochs", 200, int),
                           get("train", "seed", seed, int),
                           get("train", "accuracy_log_period", 3, int), functor,
                           stop_valid_accuracy=get("train", "stop_valid_accuracy", None, float))
    except ValueError as exc:
        key = next((k for k in tr if k in str(exc)), "train")
        fail("train", key, str(exc))
    nz = raw.get("noise", {})
    s_list = nz.get("s", [1, 10, 25, 50])
    if not isinstance(s_list, list) or not all(isinstance(v, (int, float)) and v >= 0
                                               for v in s_list):
        fail("noise", "s", "s must be a list of non-negative numbers")
    noise = NoiseModel(get("noise", "a", 1.651, float), get("noise", "b", 0.175, float),
                       get("noise", "c", 1.0, float), get("noise", "p0", 1.38e-3, float))
    mode = get("noise", "mode", "expectation", str)
    if mode not in ("expectation", "shots"):
        fail("noise", "mode", "mode must be 'expectation' or 'shots'")
    shots = get("noise", "shots", 50, int)
    if shots < 1:
        fail("noise", "shots", "shots must be at least 1")
    repeats = get("planner", "repeats", 128, int)
    if repeats < 1:
        fail("planner", "repeats", "repeats must be at least 1")
    widths = raw.get("eval", {}).get("widths")
    if widths is not None:
        try:
            widths = parse_widths(widths if isinstance(widths, str) else f"{widths[0]}..{widths[1]}")
        except (ValueError, TypeError, IndexError, argparse.ArgumentTypeError):
            fail("eval", "widths", "widths must look like '9..14' or [9, 14]")
    output = Path(str(raw.get("output", "runs")))
    output = output if output.is_absolute() else path.parent / output
    return ExperimentConfig(
        dialect, seed, str(output), data_path,
        get("data", "max_width", 30, int), tiers, tcfg, noise,
        tuple(float(v) for v in s_list), shots, mode, repeats,
        get("planner", "kT", 1.0, float), get("eval", "max_rows", 12, int),
        get("eval", "count", None, int), widths)


def parse_widths(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.|-)\s*(\d+)\s*", text) or re.fullmatch(r"\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"widths must look like 2..8, got {text!r}")
    lo = int(m.group(1))
    hi = int(m.group(2)) if m.lastindex == 2 else lo
    if not 2 <= lo <= hi:
        raise argparse.ArgumentTypeError("widths need 2 <= lo <= hi")
    return lo, hi


# -- outputs ------------------------------------------------------------------------

def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


_ACTIVE: list["Outputs"] = []  # writers of the running command


class Outputs:
    """Artifact writer that records every file so a failed command can remove
    its partial outputs."""

    def __init__(self, directory, chash: str):
        self.dir = Path(directory)
        self.hash = chash
        self.written: list[Path] = []
        _ACTIVE.append(self)

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(p)
        return p

    def csv(self, name: str, rows: list[dict]) -> Path:
        p = self.path(name)
        fields: list[str] = []
        for r in rows:
            fields += [k for k in r if k not in fields]
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fields + ["config_hash"], lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({**{k: _cell(v) for k, v in r.items()}, "config_hash": self.hash})
        return p

    def json(self, name: str, data) -> Path:
        p = self.path(name)
        p.write_text(json.dumps({**data, "config_hash": self.hash}, sort_keys=True, indent=1,
                                default=_json_default) + "\n")
        return p

    def jsonl(self, name: str, records) -> Path:
        p = self.path(name)
        with p.open("w") as fh:
            for r in records:
                fh.write(json.dumps({**r, "config_hash": self.hash}, sort_keys=True) + "\n")
        return p

    def cleanup(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)

    def manifest(self, command: str, seed: int, timings: dict, extra: dict | None = None) -> Path:
        data = {"command": command, "config_hash": self.hash, "seed": seed,
                "version": _version(), "timings": timings,
                "artifacts": sorted(str(p.relative_to(self.dir)) for p in self.written)}
        p = self.dir / f"manifest-{command}.json"
        p.write_text(json.dumps({**data, **(extra or {})}, sort_keys=True, indent=1) + "\n")
        return p


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


# -- shared helpers -----------------------------------------------------------------

def _stories(cfg: ExperimentConfig):
    if cfg.data_path:
        return read_jsonl(cfg.data_path)
    return generate_dataset(cfg.dialect, cfg.seed, cfg.max_width, cfg.tiers)


def _split(cfg: ExperimentConfig, name: str):
    return split_datasets(_stories(cfg), cfg.dialect, cfg.seed)[name]


def _select(stories, widths=None, count=None, seed=0):
    if widths:
        stories = [s for s in stories if widths[0] <= s.width <= widths[1]]
    if count is not None:
        stories = stratified_subset(stories, count, seed)
    return list(stories)


def _load_model(args, cfg: ExperimentConfig):
    """(params or fixed model, functor config, label) from --checkpoint or --clifford."""
    if getattr(args, "clifford", False):
        model, functor = clifford_reference(cfg.dialect)
        return model, functor, "clifford"
    if not args.checkpoint:
        raise ConfigError("pass --checkpoint or --clifford")
    path = Path(args.checkpoint)
    if not path.exists():
        raise ConfigError(f"checkpoint {path} does not exist")
    params, meta = ParamStore.from_json(path.read_text())
    functor = FunctorConfig.from_json(meta.get("config", {}).get("functor", {}))
    return params, functor, str(path)


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "dialect", None):
        cfg = ExperimentConfig(**{**cfg.__dict__, "dialect": Dialect(args.dialect),
                                  "train": TrainConfig(**{**cfg.train.__dict__,
                                                          "dialect": Dialect(args.dialect)})})
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    return Path(args.out) if getattr(args, "out", None) else Path(cfg.output)


# -- commands -----------------------------------------------------------------------

def cmd_generate(args) -> dict:
    request = {"dialect": args.dialect, "tier": args.tier, "widths": list(args.widths),
               "count": args.count, "seed": args.seed}
    out = Path(args.out)
    o = Outputs(out.parent, config_hash(request))
    if args.tier == "all":
        stories = [s for s in generate_dataset(args.dialect, args.seed, args.widths[1])
                   if s.width >= args.widths[0]]
    else:
        stories = generate_tier(args.dialect, args.tier, args.widths, args.count, args.seed)
    o.jsonl(out.name, (s.to_json() for s in stories))
    return {"outputs": o, "seed": args.seed, "extra": {"config": request, "stories": len(stories)}}


def cmd_train(args) -> dict:
    cfg = _experiment(args)
    if args.epochs is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__,
                                  "train": TrainConfig(**{**cfg.train.__dict__,
                                                          "epochs": args.epochs})})
    tcfg = TrainConfig(**{**cfg.train.__dict__, "parallelism": args.threads})
    o = Outputs(_out_dir(args, cfg), cfg.hash)
    splits = split_datasets(_stories(cfg), cfg.dialect, cfg.seed)
    o.json("config-resolved.json", cfg.to_json())
    progress = None
    if args.verbose:
        def progress(ck):
            print(f"epoch {ck.epoch} loss {ck.loss:.4f} validA {ck.valid_accuracy:.3f}",
                  file=sys.stderr, flush=True)
    res = train(splits, tcfg, checkpoint_dir=o.dir / "checkpoints", progress=progress)
    o.written += sorted((o.dir / "checkpoints").glob("epoch-*.json"))
    rows = [c.row() for c in res.history]
    o.csv("train_log.csv", rows)
    best = res.best
    meta = {"config": tcfg.to_json(), "epoch": best.epoch if best else 0,
            "valid_accuracy": best.valid_accuracy if best else None,
            "loss": best.loss if best else None, "config_hash": cfg.hash}
    o.path("checkpoint.json").write_text(res.params.to_json(**meta) + "\n")
    return {"outputs": o, "seed": tcfg.seed,
            "extra": {"selected_epoch": meta["epoch"], "valid_accuracy": meta["valid_accuracy"]}}


def cmd_eval(args) -> dict:
    cfg = _experiment(args)
    model, functor, label = _load_model(args, cfg)
    widths = args.widths or cfg.eval_widths
    count = args.count if args.count is not None else cfg.eval_count
    stories = _select(_split(cfg, args.split), widths, count, cfg.seed)
    max_rows = cfg.max_rows if args.max_rows is None else (args.max_rows or None)
    rep = accuracy(model, stories, config=functor, max_rows=max_rows)
    o = Outputs(_out_dir(args, cfg), cfg.hash)
    o.csv(f"accuracy-{args.split}.csv", rep.rows)
    o.csv(f"skipped-{args.split}.csv", rep.skipped)
    lo, hi = rep.interval if rep.records else (None, None)
    trend = rep.trend() if rep.records else None
    o.json(f"accuracy-{args.split}.json", {
        "model": label, "split": args.split, "n": len(rep.records), "skipped": len(rep.skipped),
        "accuracy": rep.overall if rep.records else None, "ci": [lo, hi],
        "trend": None if trend is None else {"slope": trend.slope, "lo": trend.lo,
                                             "hi": trend.hi, "negative": trend.negative}})
    return {"outputs": o, "seed": cfg.seed}


def cmd_noise_sweep(args) -> dict:
    cfg = _experiment(args)
    model, functor, _ = _load_model(args, cfg)
    if not isinstance(model, ParamStore):
        raise ConfigError("noise sweeps need a trained checkpoint")
    s_list = args.s or cfg.noise_s
    plan = ShotPlan(args.shots or cfg.shots, cfg.seed, cfg.shot_mode)
    stories = _select(_split(cfg, args.split), args.widths or cfg.eval_widths,
                      args.count if args.count is not None else cfg.eval_count, cfg.seed)
    max_rows = cfg.max_rows if args.max_rows is None else (args.max_rows or None)
    skipped: list[dict] = []
    rows, records = noise_sweep(stories, model, s_list, plan, cfg.noise, functor,
                                max_rows, skipped)
    o = Outputs(_out_dir(args, cfg), cfg.hash)
    o.csv("noise_sweep.csv", rows)
    o.csv("noise_records.csv", records)
    o.csv("noise_skipped.csv", skipped)
    return {"outputs": o, "seed": cfg.seed}


def cmd_estimate(args) -> dict:
    cfg = _experiment(args)
    stories = read_jsonl(args.dataset) if args.dataset else _stories(cfg)
    stories = _select(stories, args.widths, args.count, cfg.seed)
    rows, table = estimate_resources(stories, None, args.repeats or cfg.planner_repeats,
                                     cfg.planner_kT, cfg.seed, cfg.train.functor, args.cache)
    o = Outputs(_out_dir(args, cfg), cfg.hash)
    o.csv("resources.csv", rows)
    o.csv("resource_table.csv", table)
    return {"outputs": o, "seed": cfg.seed}


def cmd_compile(args) -> dict:
    cfg = _experiment(args)
    stories = read_jsonl(args.dataset) if args.dataset else _stories(cfg)
    stories = _select(stories, args.widths, args.count, cfg.seed)
    if args.checkpoint:
        params, functor, _ = _load_model(args, cfg)
    else:  # widths and depths do not depend on the angles
        functor = cfg.train.functor
        params = init_params(cfg.seed, cfg.dialect, functor)
    rows = []
    for s in stories:
        pos, _ = build_circuits(s, None, functor)
        _, rep = compile_circuit(pos, params, reuse=args.reuse)
        rows.append({"id": s.id, "tier": s.tier, "width": s.width, **rep.as_row(),
                     "fits": rep.qubits_after <= args.target_width})
    o = Outputs(_out_dir(args, cfg), cfg.hash)
    o.csv("compile.csv", rows)
    k = sum(r["fits"] for r in rows)
    lo, hi = clopper_pearson(k, len(rows)) if rows else (None, None)
    o.json("compile.json", {"target_width": args.target_width, "reuse": args.reuse,
                            "n": len(rows), "fits": k, "fraction": k / len(rows) if rows else None,
                            "ci": [lo, hi]})
    return {"outputs": o, "seed": cfg.seed}


def cmd_interpret(args) -> dict:
    cfg = _experiment(args)
    model, functor, label = _load_model(args, cfg)
    o = Outputs(_out_dir(args, cfg), cfg.hash)
    o.csv("axioms.csv", [r.row() for r in check_axioms(model, cfg.dialect, functor)])
    o.csv("question_coefficients.csv", question_coefficients(model, cfg.dialect, functor))
    if functor.qubits_per_wire == 1:
        words = ["turns_around"] if cfg.dialect is Dialect.TWO else ["turns_left", "turns_around"]
        traj = []
        for word in words:
            if word == "turns_around" and cfg.dialect is Dialect.FOUR:
                continue
            for k, refs in gate_trajectories(word, model, functor, (1, 2, 4, 30)).items():
                traj += [{"word": word, "power": k, "reference": name, "x": v.x, "y": v.y,
                          "z": v.z} for name, v in refs.items()]
        o.csv("trajectories.csv", traj)
    if args.split:
        stories = _select(_split(cfg, args.split), args.widths, args.count, cfg.seed)
        pairs, steps = bias_table(model, stories, functor)
        o.csv("bias_pairs.csv", pairs)
        o.csv("bias_steps.csv", steps)
    o.json("interpret.json", {"model": label, "dialect": cfg.dialect.value})
    return {"outputs": o, "seed": cfg.seed}


def cmd_interventions(args) -> dict:
    cfg = _experiment(args)
    model, functor, _ = _load_model(args, cfg)
    stories = _select(_split(cfg, args.split), args.widths, args.count, cfg.seed)
    rows = interventions(model, stories, args.actions, functor)
    o = Outputs(_out_dir(args, cfg), cfg.hash)
    o.csv("interventions.csv", rows)
    return {"outputs": o, "seed": cfg.seed}


# artifact file -> report section title
REPORT_ARTIFACTS = {
    "train_log.csv": "Training log",
    "accuracy-valid-a.csv": "ValidA accuracy by width",
    "accuracy-valid-comp.csv": "Productivity: ValidComp accuracy by width",
    "accuracy-test.csv": "Test accuracy by width",
    "noise_sweep.csv": "Noise sweep",
    "resource_table.csv": "Contraction resources by width",
    "compile.csv": "Qubit reuse",
    "axioms.csv": "Axiom checks",
    "question_coefficients.csv": "Question states",
    "bias_pairs.csv": "Accuracy by final-direction pair",
    "bias_steps.csv": "Accuracy by inference steps",
    "interventions.csv": "Interventions",
}


def _markdown_table(rows: list[dict], limit: int = 40) -> list[str]:
    if not rows:
        return ["(empty)"]
    keys = [k for k in rows[0] if k != "config_hash"]
    out = ["| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
    for r in rows[:limit]:
        cells = []
        for k in keys:
            v = r.get(k, "")
            try:
                f = float(v)
                v = v if f.is_integer() and "." not in v else f"{f:.4g}"
            except (TypeError, ValueError):
                pass
            cells.append(str(v))
        out.append("| " + " | ".join(cells) + " |")
    if len(rows) > limit:
        out.append(f"... {len(rows) - limit} more rows")
    return out


def build_report(directory) -> tuple[str, list[dict]]:
    """Markdown report and summary rows from the artifacts in ``directory``."""
    d = Path(directory)
    lines = ["# Experiment report", ""]
    summary, missing = [], []
    for name, title in REPORT_ARTIFACTS.items():
        path = d / name
        if not path.exists():
            missing.append(name)
            continue
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        if name == "compile.csv":
            fits = sum(r["fits"] == "true" for r in rows)
            rows = [{"n": str(len(rows)), "fits_target": str(fits),
                     "max_width_post": str(max((int(r["width_post"]) for r in rows), default=0))}]
        hashes = sorted({r.get("config_hash", "") for r in rows} - {""})
        lines += [f"## {title}", "", f"source: `{name}`, config hash {', '.join(hashes) or '-'}",
                  ""] + _markdown_table(rows) + [""]
        summary.append({"artifact": name, "section": title, "rows": len(rows),
                        "config_hash": ";".join(hashes)})
    if not summary:
        lines += ["## No artifacts", "", f"No known artifacts were found in `{d}`.", ""]
    if missing:
        lines += ["## Missing artifacts", ""] + [f"- {m}" for m in missing] + [""]
    return "\n".join(lines), summary


def cmd_report(args) -> dict:
    src = Path(args.outputs)
    text, summary = build_report(src)
    out = Path(args.out) if args.out else src / "report"
    o = Outputs(out, config_hash({"report": sorted(r["config_hash"] for r in summary)}))
    o.path("report.md").write_text(text)
    rows = summary or [{"artifact": "", "section": "no artifacts", "rows": 0}]
    with o.path("summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["artifact", "section", "rows", "config_hash"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return {"outputs": o, "seed": 0,
            "extra": {"report_sha256": hashlib.sha256(text.encode()).hexdigest()}}


# -- argument parsing ---------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")
    if any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("noise scales must be non-negative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdisco", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False, split=False, select=True):
        sp.add_argument("--config", help="experiment TOML or JSON file")
        sp.add_argument("--dialect", choices=[d.value for d in Dialect])
        sp.add_argument("--out", help="output directory (default: config output)")
        if model:
            sp.add_argument("--checkpoint")
            sp.add_argument("--clifford", action="store_true",
                            help="use the exact basis-state reference model")
        if split:
            sp.add_argument("--split", choices=SPLITS, default="valid-comp")
        if select:
            sp.add_argument("--widths", type=parse_widths)
            sp.add_argument("--count", type=int, help="stratified subset size")

    g = sub.add_parser("generate", help="write a JSONL story dataset")
    g.add_argument("--dialect", choices=[d.value for d in Dialect], default="two")
    g.add_argument("--tier", choices=TIERS + ("all",), default="simple")
    g.add_argument("--widths", type=parse_widths, default=(2, 8))
    g.add_argument("--count", type=int, default=492)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="JSONL file")

    t = sub.add_parser("train", help="train a model from a config")
    common(t, select=False)
    t.add_argument("--epochs", type=int)
    t.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    t.add_argument("--verbose", action="store_true")

    e = sub.add_parser("eval", help="exact accuracy per width with intervals")
    common(e, model=True, split=True)
    e.add_argument("--max-rows", type=int, help="skip instances needing more live qubits; 0 = no cap")

    n = sub.add_parser("noise-sweep", help="noisy accuracy for several noise scales")
    common(n, model=True, split=True)
    n.add_argument("--s", type=_floats)
    n.add_argument("--shots", type=int)
    n.add_argument("--max-rows", type=int, help="skip instances needing more live qubits; 0 = no cap")

    es = sub.add_parser("estimate", help="tensor network contraction resources")
    common(es)
    es.add_argument("--dataset", help="JSONL file (default: the config's dataset)")
    es.add_argument("--repeats", type=int)
    es.add_argument("--cache", help="directory for cached contraction paths")

    c = sub.add_parser("compile", help="lower and apply qubit reuse")
    common(c)
    c.add_argument("--dataset")
    c.add_argument("--checkpoint", help="bind trained angles (default: seeded random angles)")
    c.add_argument("--reuse", action=argparse.BooleanOptionalAction, default=True)
    c.add_argument("--target-width", type=int, default=20)

    i = sub.add_parser("interpret", help="axioms, question states and bias tables")
    common(i, model=True)
    i.add_argument("--split", choices=SPLITS, help="also tabulate accuracy biases on a split")

    iv = sub.add_parser("interventions", help="append actions and compare answers")
    common(iv, model=True, split=True)
    iv.add_argument("--actions", type=lambda s: s.split(","))

    r = sub.add_parser("report", help="collect artifacts into one report")
    r.add_argument("--outputs", required=True, help="directory holding command artifacts")
    r.add_argument("--out", help="report directory (default: <outputs>/report)")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "noise-sweep": cmd_noise_sweep, "estimate": cmd_estimate, "compile": cmd_compile,
            "interpret": cmd_interpret, "interventions": cmd_interventions,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    _ACTIVE.clear()
    try:
        result = COMMANDS[args.command](args)
    except Exception as exc:
        for o in _ACTIVE:
            o.cleanup()
        if isinstance(exc, ConfigError):
            print(f"qdisco {args.command}: {exc}", file=sys.stderr)
            return 2
        print(f"qdisco {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    o: Outputs = result["outputs"]
    o.manifest(args.command, result["seed"],
               {"seconds": round(time.perf_counter() - start, 3)}, result.get("extra"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
