"""Monte Carlo experiment runner.

Runs seeded episode grids over (template, command, field of view, method)
cells, aggregates success and travel statistics per cell, and writes them
as CSV.  Methods are the three baselines: ``known_map`` plans on the true
world, ``with_language`` is the full system, ``without_language`` runs the
identical pipeline with language withheld from the map filter.

Episodes within a cell are independent and may run in parallel worker
processes (LANGNAV_THREADS caps the pool; 1 disables it).  Aggregation is
serial and sorted by seed, so results are byte-identical for a given
config no matter the worker count.  Wall-clock numbers are deliberately
kept out of the CSV for the same reason; per-cycle grounding times go to
the progress stream instead.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import deep_merge, default_config
from .errors import ParseError, UsageError
from .grammar import parse, tokenize
from .grounding.model import GroundingModel, packaged_model_path
from .policy import PolicyWeights
from .relations import RelationLibrary
from .sim import generate_environment, resolve_template, run_episode

METHODS = ("known_map", "with_language", "without_language")


def packaged_policy_path() -> str:
    from importlib import resources

    return str(resources.files("langnav.data").joinpath("policy_weights.json"))


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment grid; every field is JSON-representable."""

    template: str
    commands: tuple
    fovs: tuple = (5.0,)
    episodes: int = 100
    baselines: tuple = METHODS
    seed: int = 0
    seeds: tuple = ()            # explicit episode seeds; overrides `episodes`
    particles: int | None = None
    policy_path: str | None = None   # None = packaged weights

    def validate(self) -> None:
        resolve_template(self.template)
        if not self.commands:
            raise UsageError("experiment needs at least one command")
        if not self.seed_list():
            raise UsageError("experiment needs at least one episode")
        if any(f <= 0 for f in self.fovs):
            raise UsageError("field-of-view values must be positive")
        bad = [b for b in self.baselines if b not in METHODS]
        if bad or not self.baselines:
            raise UsageError(
                f"baselines must be a non-empty subset of {METHODS}")
        if self.particles is not None and self.particles < 1:
            raise UsageError("particle count must be >= 1")

    def seed_list(self) -> tuple:
        if self.seeds:
            return tuple(int(s) for s in self.seeds)
        return tuple(range(int(self.seed), int(self.seed) + int(self.episodes)))

    def to_json(self) -> dict:
        return {
            "template": self.template,
            "commands": list(self.commands),
            "fovs": [float(f) for f in self.fovs],
            "episodes": int(self.episodes),
            "baselines": list(self.baselines),
            "seed": int(self.seed),
            "seeds": list(self.seeds),
            "particles": self.particles,
            "policy_path": self.policy_path,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ExperimentConfig":
        known = {
            "template": payload.get("template", ""),
            "commands": tuple(payload.get("commands", ())),
            "fovs": tuple(float(f) for f in payload.get("fovs", (5.0,))),
            "episodes": int(payload.get("episodes", 100)),
            "baselines": tuple(payload.get("baselines", METHODS)),
            "seed": int(payload.get("seed", 0)),
            "seeds": tuple(payload.get("seeds", ())),
            "particles": payload.get("particles"),
            "policy_path": payload.get("policy_path"),
        }
        stray = set(payload) - set(known)
        if stray:
            raise UsageError(f"unknown experiment fields: {sorted(stray)}")
        config = cls(**known)
        config.validate()
        return config

    def config_hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ResultRow:
    environment: str
    fov: float
    relation: str
    method: str
    success_pct: float
    distance_mean: float
    distance_sigma: float
    steps_mean: float
    episodes: int
    command: str

    COLUMNS = ("environment", "fov", "relation", "method", "success_pct",
               "distance_mean", "distance_sigma", "steps_mean", "episodes",
               "command")

    def as_csv(self) -> list:
        return [self.environment, f"{self.fov:g}", self.relation,
                self.method, f"{self.success_pct:.1f}",
                f"{self.distance_mean:.3f}", f"{self.distance_sigma:.3f}",
                f"{self.steps_mean:.1f}", str(self.episodes), self.command]


def command_relation(model: GroundingModel, command: str) -> str:
    """Relation label keying a result row: the command's first spatial
    relation, or "null" for a plain go-to."""
    annotations = model.infer_annotations(parse(tokenize(command)))
    for ann in annotations:
        if ann.relation and ann.relation != "unknown":
            return ann.relation
    return "null"


# -- episode execution -------------------------------------------------------

_WORKER: dict = {}


def _worker_model():
    if "model" not in _WORKER:
        cfg = default_config()
        _WORKER["cfg"] = cfg
        _WORKER["model"] = GroundingModel.load(
            packaged_model_path(), RelationLibrary(cfg["relations"]))
    return _WORKER["model"], _WORKER["cfg"]


def _run_one(task: dict) -> dict:
    """One episode; module-level so worker processes can unpickle it."""
    model, base_cfg = _worker_model()
    cfg = base_cfg
    if task["particles"] is not None:
        cfg = deep_merge(cfg, {"filter": {"n_particles": task["particles"]}})
    weights = None
    if task["weights"] is not None:
        weights = PolicyWeights.from_json(task["weights"])
    env = generate_environment(task["template"], task["seed"], cfg["sim"])
    started = time.perf_counter()
    trace = run_episode(
        env, task["command"], model, cfg, task["seed"], weights=weights,
        fov=None if task["method"] == "known_map" else task["fov"],
        mode=task["method"])
    out = dict(trace.outcome)
    out["seed"] = task["seed"]
    out["elapsed"] = time.perf_counter() - started
    out["trace"] = trace.to_json() if task["keep_trace"] else None
    return out


def _pool_size() -> int:
    raw = os.environ.get("LANGNAV_THREADS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError as err:
            raise UsageError(f"LANGNAV_THREADS must be an integer: {raw!r}") \
                from err
        return max(1, n)
    return max(1, os.cpu_count() or 1)


def _run_cell(tasks: list) -> list:
    workers = min(_pool_size(), len(tasks))
    if workers <= 1:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, tasks))


# -- experiment grid ---------------------------------------------------------


def run_experiment(config: ExperimentConfig, out_csv: str | None = None,
                   trace_dir: str | None = None, progress=None) -> list:
    """Run the full grid and return one ResultRow per cell.

    Missing policy weights surface as ModelNotFound before any episode
    runs.  Row order is (command, fov, method) in config order; episode
    aggregation is sorted by seed, so rows are deterministic.
    """
    config.validate()
    model, _ = _worker_model()
    seeds = config.seed_list()

    weights_json = None
    if any(m != "known_map" for m in config.baselines):
        path = config.policy_path or packaged_policy_path()
        weights_json = PolicyWeights.load(path).to_json()

    rows = []
    for command in config.commands:
        relation = command_relation(model, command)
        for fov in config.fovs:
            for method in config.baselines:
                tasks = [{
                    "template": config.template, "command": command,
                    "fov": float(fov), "method": method, "seed": seed,
                    "particles": config.particles,
                    "weights": None if method == "known_map" else weights_json,
                    "keep_trace": trace_dir is not None,
                } for seed in seeds]
                outcomes = sorted(_run_cell(tasks), key=lambda o: o["seed"])
                rows.append(_aggregate(config.template, fov, relation,
                                       method, command, outcomes))
                if trace_dir is not None:
                    _write_traces(trace_dir, config, command, fov, method,
                                  outcomes)
                if progress is not None:
                    wall = sum(o["elapsed"] for o in outcomes)
                    progress(f"{config.template} | {command!r} | fov {fov:g} "
                             f"| {method}: success "
                             f"{rows[-1].success_pct:.1f}% "
                             f"distance {rows[-1].distance_mean:.2f} m "
                             f"({wall:.1f}s)")
    if out_csv is not None:
        write_results_csv(out_csv, config, rows)
    return rows


def _aggregate(template, fov, relation, method, command, outcomes) -> ResultRow:
    dists = np.asarray([o["distance"] for o in outcomes], float)
    return ResultRow(
        environment=template, fov=float(fov), relation=relation,
        method=method,
        success_pct=100.0 * float(np.mean([o["success"] for o in outcomes])),
        distance_mean=float(dists.mean()),
        distance_sigma=float(dists.std()),
        steps_mean=float(np.mean([o["steps"] for o in outcomes])),
        episodes=len(outcomes), command=command)


def _write_traces(trace_dir, config, command, fov, method, outcomes) -> None:
    os.makedirs(trace_dir, exist_ok=True)
    slug = "".join(c if c.isalnum() else "-" for c in command)[:40]
    name = f"{config.template}_{slug}_fov{fov:g}_{method}.jsonl"
    with open(os.path.join(trace_dir, name), "w") as fh:
        for o in outcomes:
            fh.write(json.dumps(o["trace"], sort_keys=True) + "\n")


def compare_relations(config: ExperimentConfig, out_csv: str | None = None,
                      progress=None) -> list:
    """Paired command comparison on identical seeds.

    Requires a null-relation command and at least one relation variant so
    the rows isolate what the relation buys."""
    config.validate()
    model, _ = _worker_model()
    relations = {command_relation(model, c) for c in config.commands}
    if "null" not in relations or relations == {"null"}:
        raise UsageError(
            "compare_relations needs a null command and a relation variant; "
            f"got relations {sorted(relations)}")
    return run_experiment(config, out_csv=out_csv, progress=progress)


# -- CSV ---------------------------------------------------------------------


def write_results_csv(path: str, config: ExperimentConfig, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# langnav {__version__}\n")
        fh.write(f"# seed: {config.seed} episodes: {len(config.seed_list())}\n")
        fh.write(f"# config-hash: {config.config_hash()}\n")
        writer = csv.writer(fh)
        writer.writerow(ResultRow.COLUMNS)
        for row in rows:
            writer.writerow(row.as_csv())


def read_results_csv(path: str) -> tuple:
    """(metadata dict, [row dict]) from a results CSV; raises ParseError
    when the header or body does not match the writer's schema."""
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as err:
        raise ParseError(f"cannot read results CSV: {err}") from err
    meta = {}
    body = []
    for line in raw.splitlines():
        if line.startswith("#"):
            text = line[1:].strip()
            if ":" in text:
                key, _, val = text.partition(":")
                meta[key.strip()] = val.strip()
            else:
                meta.setdefault("version", text)
            continue
        if line.strip():
            body.append(line)
    if not body:
        raise ParseError("results CSV has no header row")
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != ResultRow.COLUMNS:
        raise ParseError(f"unexpected results header: {header}")
    rows = []
    for rec in reader:
        if len(rec) != len(header):
            raise ParseError(f"short CSV record: {rec}")
        row = dict(zip(header, rec))
        try:
            row["fov"] = float(row["fov"])
            row["success_pct"] = float(row["success_pct"])
            row["distance_mean"] = float(row["distance_mean"])
            row["distance_sigma"] = float(row["distance_sigma"])
            row["steps_mean"] = float(row["steps_mean"])
            row["episodes"] = int(row["episodes"])
        except ValueError as err:
            raise ParseError(f"non-numeric field in record {rec}") from err
        rows.append(row)
    if not rows:
        raise ParseError("results CSV has no data rows")
    return meta, rows
