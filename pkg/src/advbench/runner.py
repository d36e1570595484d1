"""Benchmark orchestration: config, zoo building, execution, merging.

A run is a pure function of its config: the config digest covers
everything that affects comparability (zoo, seeds, budget, sample
count, eps caps, framework version), and results from runs with
different digests are never merged into one ranking.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, run_attack
from .errors import (BenchError, IncompatibleRuns, InvalidSpec,
                     MalformedRecordFile)
from .metrics import EnvelopeStore, compute_leaderboards
from .tracking import lp_distance, wrap
from .zoo import (AdvTrainInner, ArchSpec, DatasetSpec, ZooEntry,
                  generate_dataset, load_model, persist_model,
                  train_adversarial, train_standard)

CONFIG_FORMAT_VERSION = 1
INF = float("inf")


@dataclass(frozen=True)
class ModelBuildSpec:
    dataset: DatasetSpec
    arch: ArchSpec
    training: str                 # "standard" | "adversarial"
    epochs: int
    lr: float
    seed: int
    inner: AdvTrainInner | None = None
    identifier: str | None = None

    def to_dict(self) -> dict:
        d = {"dataset": self.dataset.to_dict(), "arch": self.arch.to_dict(),
             "training": self.training, "epochs": self.epochs,
             "lr": self.lr, "seed": self.seed}
        if self.inner is not None:
            d["inner"] = self.inner.to_dict()
        if self.identifier is not None:
            d["identifier"] = self.identifier
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBuildSpec":
        inner = d.get("inner")
        return cls(dataset=DatasetSpec.from_dict(d["dataset"]),
                   arch=ArchSpec.from_dict(d["arch"]),
                   training=d["training"], epochs=int(d["epochs"]),
                   lr=float(d["lr"]), seed=int(d["seed"]),
                   inner=AdvTrainInner(**inner) if inner else None,
                   identifier=d.get("identifier"))


@dataclass
class BenchConfig:
    seed: int = 0
    budget: int = 1000
    samples_per_model: int = 256
    norms: dict[str, float | None] = field(
        default_factory=lambda: {"inf": 0.5, "2": None})
    zoo: list[ModelBuildSpec] = field(default_factory=list)
    model_files: list[str] = field(default_factory=list)
    attacks: list[AttackConfig] = field(default_factory=list)
    output_dir: str = "bench_out"

    def validate(self):
        if self.budget < 1:
            raise InvalidSpec("budget must be >= 1")
        if self.samples_per_model < 1:
            raise InvalidSpec("samples_per_model must be >= 1")
        if not self.zoo and not self.model_files:
            raise InvalidSpec("config declares no models")
        if not self.attacks:
            raise InvalidSpec("config declares no attacks")
        ids = [a.identifier for a in self.attacks]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("attack identifiers must be unique")
        for a in self.attacks:
            if a.norm not in self.norms:
                raise InvalidSpec(
                    f"attack {a.identifier!r} uses norm l{a.norm}, "
                    f"which is not in the configured norm groups")
        for path in self.model_files:
            if not Path(path).exists():
                raise InvalidSpec(f"model file not found: {path}")

    def to_dict(self) -> dict:
        return {"format_version": CONFIG_FORMAT_VERSION, "seed": self.seed,
                "budget": self.budget,
                "samples_per_model": self.samples_per_model,
                "norms": self.norms,
                "zoo": [m.to_dict() for m in self.zoo],
                "model_files": list(self.model_files),
                "attacks": [a.to_dict() for a in self.attacks],
                "output_dir": self.output_dir}

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        version = d.get("format_version", CONFIG_FORMAT_VERSION)
        if version != CONFIG_FORMAT_VERSION:
            raise InvalidSpec(f"unsupported config format_version {version}")
        try:
            return cls(seed=int(d.get("seed", 0)),
                       budget=int(d.get("budget", 1000)),
                       samples_per_model=int(d.get("samples_per_model", 256)),
                       norms={str(k): (None if v is None else float(v))
                              for k, v in d.get("norms", {}).items()},
                       zoo=[ModelBuildSpec.from_dict(m)
                            for m in d.get("zoo", [])],
                       model_files=[str(p) for p in d.get("model_files", [])],
                       attacks=[AttackConfig.from_dict(a)
                                for a in d.get("attacks", [])],
                       output_dir=str(d.get("output_dir", "bench_out")))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSpec(f"malformed config: {exc}") from exc

    @classmethod
    def from_file(cls, path) -> "BenchConfig":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(
                f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc)


def default_eps_max(norm: str, dimension: int) -> float:
    if norm == "inf":
        return 0.5
    if norm == "2":
        return math.sqrt(dimension) / 2.0
    if norm == "1":
        return dimension / 4.0
    return float(dimension)  # l0


def default_config(output_dir: str = "bench_out") -> BenchConfig:
    """The default 4-model zoo (2 dataset kinds x standard/adversarial)
    with one attack per family and norm group."""
    blobs = DatasetSpec(kind="gaussian_blobs", dimension=4, class_count=3,
                        sample_count=600, noise_scale=0.12, seed=11)
    rings = DatasetSpec(kind="concentric_rings", dimension=2, class_count=2,
                        sample_count=600, noise_scale=0.03, seed=12)
    arch = ArchSpec(hidden=(32, 32))
    inner = AdvTrainInner(norm="inf", eps=0.05, pgd_steps=10)
    zoo = []
    for ds in (blobs, rings):
        zoo.append(ModelBuildSpec(dataset=ds, arch=arch, training="standard",
                                  epochs=300, lr=0.5, seed=ds.seed,
                                  identifier=f"{ds.kind}-std"))
        zoo.append(ModelBuildSpec(dataset=ds, arch=arch,
                                  training="adversarial", epochs=300, lr=0.5,
                                  seed=ds.seed, inner=inner,
                                  identifier=f"{ds.kind}-adv"))
    attacks = [
        AttackConfig(identifier="fgsm-inf", name="fgsm", norm="inf",
                     eps=0.3, steps=1),
        AttackConfig(identifier="pgd-inf-50", name="pgd", norm="inf",
                     eps=0.3, steps=50),
        AttackConfig(identifier="pgd-l2-50", name="pgd", norm="2",
                     eps=1.0, steps=50),
        AttackConfig(identifier="ddn-l2", name="ddn", norm="2", steps=100),
        AttackConfig(identifier="fmn-l2", name="fmn", norm="2", steps=100),
        AttackConfig(identifier="fmn-inf", name="fmn", norm="inf", steps=100),
    ]
    return BenchConfig(seed=0, budget=1000, samples_per_model=256,
                       norms={"inf": 0.5, "2": None}, zoo=zoo,
                       attacks=attacks, output_dir=output_dir)


def config_digest(config: BenchConfig, zoo_digests: list[str]) -> str:
    """Digest over everything that affects cross-run comparability."""
    payload = {"framework_version": __version__,
               "seed": config.seed, "budget": config.budget,
               "samples_per_model": config.samples_per_model,
               "norms": config.norms,
               "zoo": sorted(zoo_digests)}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def eval_spec(train_spec: DatasetSpec, master_seed: int,
              n_samples: int) -> DatasetSpec:
    """Evaluation slice: same distribution, disjoint deterministic seed."""
    seed = (train_spec.seed * 1_000_003 + master_seed * 7919 + 12345) % 2**63
    return dataclasses.replace(train_spec, sample_count=n_samples, seed=seed)


def build_zoo(config: BenchConfig) -> list[ZooEntry]:
    entries = []
    for spec in config.zoo:
        data = generate_dataset(spec.dataset)
        if spec.training == "standard":
            entry = train_standard(spec.arch, data, spec.epochs, spec.lr,
                                   spec.seed, identifier=spec.identifier)
        elif spec.training == "adversarial":
            if spec.inner is None:
                raise InvalidSpec("adversarial training needs inner params")
            entry = train_adversarial(spec.arch, data, spec.epochs, spec.lr,
                                      spec.seed, spec.inner,
                                      identifier=spec.identifier)
        else:
            raise InvalidSpec(f"unknown training kind {spec.training!r}")
        entries.append(entry)
    for path in config.model_files:
        entries.append(load_model(path))
    ids = [e.identifier for e in entries]
    if len(set(ids)) != len(ids):
        raise InvalidSpec("zoo identifiers must be unique")
    return entries


@dataclass
class RunResult:
    out_dir: Path
    digest: str
    store: EnvelopeStore
    leaderboards: dict
    eps_max_map: dict
    zoo_models: dict
    records: list[dict]
    perturbations: list[dict]
    diagnostics: list[dict]
    meta: dict


def _eval_samples(entry: ZooEntry, config: BenchConfig):
    ds_spec = DatasetSpec.from_dict(entry.metadata["dataset"])
    data = generate_dataset(eval_spec(ds_spec, config.seed,
                                      config.samples_per_model))
    return [(f"s{i:05d}", data.xs[i], int(data.ys[i]))
            for i in range(data.xs.shape[0])]


def _run_task(attack_cfg, entry, samples, budget):
    """Run one attack over one model; returns results or a diagnostic."""
    tm = wrap(entry.model, samples, attack_cfg.norm, budget)
    try:
        for sid, _, _ in samples:
            run_attack(tm, sid, attack_cfg)
    except BenchError as exc:
        return {"attack": attack_cfg.identifier, "model": entry.identifier,
                "error": f"{type(exc).__name__}: {exc}"}, None
    return None, tm


def run_benchmark(config: BenchConfig, jobs: int = 1,
                  zoo: list[ZooEntry] | None = None) -> RunResult:
    """Execute every (attack, model) pair and score the results.

    Deterministic under the config: records, leaderboards and curves
    are byte-identical across runs and worker counts (results merge in
    canonical attack/model/sample order).
    """
    config.validate()
    started = time.time()
    if zoo is None:
        zoo = build_zoo(config)
    digest = config_digest(config, [e.train_config_digest for e in zoo])
    samples_by_model = {e.identifier: _eval_samples(e, config) for e in zoo}
    eps_max_map = {}
    zoo_models = {}
    for norm, cap in config.norms.items():
        zoo_models[norm] = sorted(e.identifier for e in zoo)
        for e in zoo:
            eps_max_map[(e.identifier, norm)] = (
                cap if cap is not None
                else default_eps_max(norm, e.model.input_dim))

    tasks = sorted(((a, e) for a in config.attacks for e in zoo),
                   key=lambda t: (t[0].identifier, t[1].identifier))

    def execute(task):
        a, e = task
        return task, _run_task(a, e, samples_by_model[e.identifier],
                               config.budget)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(execute, tasks))
    else:
        outcomes = [execute(t) for t in tasks]

    store = EnvelopeStore()
    records, perturbations, diagnostics = [], [], []
    for (a, e), (diag, tm) in outcomes:  # tasks already canonical order
        if diag is not None:
            diagnostics.append(diag)
            continue
        clean = {sid: not tm.clean_misclassified(sid)
                 for sid, _, _ in samples_by_model[e.identifier]}
        store.register_samples(e.identifier, a.norm, clean)
        results = {}
        for rec in tm.best_records():
            results[rec.sample_id] = (rec.best_distance, rec.queries_at_best)
            ledger = tm.ledger(rec.sample_id)
            records.append({
                "digest": digest, "attack": a.identifier,
                "model": e.identifier, "sample_id": rec.sample_id,
                "norm": a.norm,
                "best_distance": (rec.best_distance if rec.succeeded
                                  else None),
                "succeeded": rec.succeeded,
                "queries_at_best": rec.queries_at_best,
                "total_queries": ledger.spent})
            if rec.succeeded:
                perturbations.append({
                    "attack": a.identifier, "model": e.identifier,
                    "sample_id": rec.sample_id, "norm": a.norm,
                    "delta": rec.best_delta.tolist()})
        store.register_attack(e.identifier, a.norm, a.identifier, results)

    # crashed attacks keep partial registrations; the coverage check in
    # compute_leaderboards marks them incomplete and excludes them from
    # ranking without touching any other attack's scores
    leaderboards = compute_leaderboards(store, eps_max_map, zoo_models)
    meta = {
        "digest": digest,
        "framework_version": __version__,
        "started_at": started,
        "finished_at": time.time(),
        "budget": config.budget,
        "samples_per_model": config.samples_per_model,
        "seed": config.seed,
        "eps_max": {f"{m}|{p}": v for (m, p), v in eps_max_map.items()},
        "zoo_models": zoo_models,
        "models": {e.identifier: {
            "file": f"zoo/{e.identifier}.json",
            "clean_accuracy": e.clean_accuracy,
            "training": e.training,
            "eval_spec": eval_spec(
                DatasetSpec.from_dict(e.metadata["dataset"]),
                config.seed, config.samples_per_model).to_dict()}
            for e in zoo},
        "diagnostics": diagnostics,
    }

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "zoo").mkdir(exist_ok=True)
    for e in zoo:
        persist_model(e, out_dir / "zoo" / f"{e.identifier}.json")
    return RunResult(out_dir=out_dir, digest=digest, store=store,
                     leaderboards=leaderboards, eps_max_map=eps_max_map,
                     zoo_models=zoo_models, records=records,
                     perturbations=perturbations, diagnostics=diagnostics,
                     meta=meta)


# ----- record files and import ----------------------------------------------

RECORD_FIELDS = {"digest", "attack", "model", "sample_id", "norm",
                 "best_distance", "succeeded", "queries_at_best",
                 "total_queries"}


def read_records(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordFile(f"{path}:{lineno}: {exc.msg}")
            if not isinstance(row, dict) or not RECORD_FIELDS <= set(row):
                raise MalformedRecordFile(
                    f"{path}:{lineno}: missing record fields")
            rows.append(row)
    return rows


@dataclass
class ImportedRuns:
    store: EnvelopeStore
    digest: str
    eps_max_map: dict
    zoo_models: dict
    records: list[dict]
    meta: dict


def import_results(run_dirs) -> ImportedRuns:
    """Merge record files from previous runs into one envelope store.

    All runs must share the comparability digest (same zoo, budget and
    sample seeds); mismatches raise IncompatibleRuns.
    """
    run_dirs = [Path(p) for p in run_dirs]
    all_rows, metas = [], []
    for d in run_dirs:
        rec_path = d / "records.jsonl"
        meta_path = d / "run_meta.json"
        if not rec_path.exists():
            # an empty directory contributes nothing
            if not any(d.iterdir()):
                continue
            raise MalformedRecordFile(f"{d}: not a run directory")
        if not meta_path.exists():
            raise MalformedRecordFile(f"{d}: missing run_meta.json")
        all_rows.extend(read_records(rec_path))
        with open(meta_path) as fh:
            metas.append(json.load(fh))
    if not metas:
        return ImportedRuns(EnvelopeStore(), "", {}, {}, [], {})
    digests = {m["digest"] for m in metas} | {r["digest"] for r in all_rows}
    if len(digests) > 1:
        raise IncompatibleRuns(
            f"refusing to merge runs with digests {sorted(digests)}")
    if not all_rows:
        return ImportedRuns(EnvelopeStore(), "", {}, {}, [], {})
    meta = metas[0]
    eps_max_map = {tuple(k.split("|")): v for k, v in meta["eps_max"].items()}
    zoo_models = meta["zoo_models"]

    store = EnvelopeStore()
    by_group: dict[tuple[str, str, str], dict] = {}
    clean_by: dict[tuple[str, str], dict] = {}
    for row in sorted(all_rows, key=lambda r: (r["attack"], r["model"],
                                               r["sample_id"])):
        model, norm, attack = row["model"], row["norm"], row["attack"]
        dist = row["best_distance"]
        dist = INF if dist is None else float(dist)
        clean_by.setdefault((model, norm), {})
        sid = row["sample_id"]
        clean_correct = not (row["succeeded"] and dist == 0.0)
        prev = clean_by[(model, norm)].get(sid, True)
        clean_by[(model, norm)][sid] = prev and clean_correct
        group = by_group.setdefault((model, norm, attack), {})
        if sid not in group or dist < group[sid][0]:
            group[sid] = (dist, int(row["queries_at_best"]))
    for (model, norm), clean in sorted(clean_by.items()):
        store.register_samples(model, norm, clean)
    for (model, norm, attack), results in sorted(by_group.items()):
        store.register_attack(model, norm, attack, results)
    return ImportedRuns(store=store, digest=meta["digest"],
                        eps_max_map=eps_max_map, zoo_models=zoo_models,
                        records=all_rows, meta=meta)


def verify_run(run_dir) -> dict:
    """Re-verify every persisted perturbation against the stored models.

    Checks box membership, misclassification on a fresh forward pass,
    and that the recorded distance equals the recomputed norm.
    """
    from .nn import forward  # local import to keep module load light
    run_dir = Path(run_dir)
    meta_path = run_dir / "run_meta.json"
    pert_path = run_dir / "perturbations.jsonl"
    if not meta_path.exists():
        raise MalformedRecordFile(f"{run_dir}: missing run_meta.json")
    with open(meta_path) as fh:
        meta = json.load(fh)
    models = {}
    eval_xy = {}
    for mid, info in meta["models"].items():
        entry = load_model(run_dir / info["file"])
        models[mid] = entry.model
        data = generate_dataset(DatasetSpec.from_dict(info["eval_spec"]))
        eval_xy[mid] = {f"s{i:05d}": (data.xs[i], int(data.ys[i]))
                        for i in range(data.xs.shape[0])}
    checked = failed = 0
    failures = []
    if pert_path.exists():
        with open(pert_path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise MalformedRecordFile(f"{pert_path}:{lineno}: {exc.msg}")
                checked += 1
                model = models[row["model"]]
                x, y = eval_xy[row["model"]][row["sample_id"]]
                delta = np.array(row["delta"], dtype=np.float64)
                adv = x + delta
                ok = (bool(np.all(adv >= 0.0) and np.all(adv <= 1.0))
                      and int(np.argmax(forward(model, adv))) != y)
                if not ok:
                    failed += 1
                    failures.append({"attack": row["attack"],
                                     "model": row["model"],
                                     "sample_id": row["sample_id"]})
    return {"checked": checked, "failed": failed, "failures": failures}


def save_config(config: BenchConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def resolve_output_dir(explicit: str | None, config: BenchConfig) -> str:
    env = os.environ.get("ADVBENCH_OUTPUT_DIR")
    return explicit or env or config.output_dir
