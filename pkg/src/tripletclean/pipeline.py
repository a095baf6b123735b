"""End-to-end orchestration: mine negatives, flag positives, correct labels.

The three stages always execute in the same order; each can be toggled off,
in which case records pass through unchanged.  A run computes everything in
memory first and only then writes its outputs, each file atomically, so a
failed run leaves no partial dataset behind.  Wall-clock timings are kept
out of the report file and written to a separate sidecar, keeping report
bytes reproducible across runs.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

from tripletclean.core import (
    DEFAULT_HEAD_MIN,
    DEFAULT_TAIL_MAX,
    Dataset,
    DatasetError,
    LabelState,
    Part,
    TripletRecord,
    atomic_write_text,
    compose_positive_set,
    dataset_to_text,
    load_dataset,
    record_to_dict,
    save_vocab,
)
from tripletclean.correction import (
    CorrectionConfig,
    CorrectionRecord,
    correct,
    ledger_to_text,
)
from tripletclean.density import (
    DensityConfig,
    DensityReport,
    density_report_to_text,
    detect_noisy_positives,
)
from tripletclean.negatives import (
    ConfidenceModel,
    MinerConfig,
    detect_noisy_negatives,
    save_model,
    train,
)
from tripletclean.synthetic import SynthConfig

logger = logging.getLogger(__name__)

STAGE_NAMES = ("neg_nsd", "pos_nsd", "nsc")

CLEANED_FILE = "cleaned.jsonl"
VOCAB_FILE = "vocab.json"
REPORT_FILE = "report.json"
MINED_FILE = "mined.jsonl"
DENSITY_FILE = "density_report.jsonl"
LEDGER_FILE = "correction_ledger.jsonl"
MODEL_FILE = "model.json"
TIMINGS_FILE = "timings.json"


class PipelineError(Exception):
    """A stage failed; the message names the stage."""


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved settings for one cleaning run."""

    input_path: str | None = None
    vocab_path: str | None = None
    out_dir: str = "out"
    head_min: int = DEFAULT_HEAD_MIN
    tail_max: int = DEFAULT_TAIL_MAX
    seed: int = 0
    enable_neg: bool = True
    enable_pos: bool = True
    enable_nsc: bool = True
    miner: MinerConfig = field(default_factory=MinerConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    corrector: CorrectionConfig = field(default_factory=CorrectionConfig)
    synth: SynthConfig | None = None

    def __post_init__(self):
        if not (self.enable_neg or self.enable_pos or self.enable_nsc):
            logger.warning("all stages disabled; run will re-serialize the input")


def _expect_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise DatasetError(f"unknown keys in {where}: {sorted(unknown)}")


def _part_map(section: dict, where: str, disabled_ok: bool) -> dict[Part, Any]:
    _expect_keys(section, {"head", "body", "tail"}, where)
    out = {}
    for part in Part:
        if part.value not in section:
            raise DatasetError(f"{where} must define {part.value!r}")
        value = section[part.value]
        if disabled_ok and (value is None or value == "disabled"):
            out[part] = None
        else:
            out[part] = float(value)
    return out


def config_from_dict(raw: dict, seed_override: int | None = None) -> PipelineConfig:
    """Build a validated config from nested key-value data."""
    _expect_keys(
        raw,
        {"io", "partition", "seed", "stages", "neg_nsd", "pos_nsd", "nsc", "synth"},
        "config",
    )
    seed = int(seed_override if seed_override is not None else raw.get("seed", 0))

    io = dict(raw.get("io", {}))
    _expect_keys(io, {"input", "vocab", "out_dir"}, "io")
    part_section = dict(raw.get("partition", {}))
    _expect_keys(part_section, {"head_min", "tail_max"}, "partition")
    stages = dict(raw.get("stages", {}))
    _expect_keys(stages, set(STAGE_NAMES), "stages")

    neg = dict(raw.get("neg_nsd", {}))
    _expect_keys(
        neg,
        {
            "thresholds",
            "lambda",
            "hidden_size",
            "epochs",
            "learning_rate",
            "batch_size",
            "seed",
            "threshold_mode",
        },
        "neg_nsd",
    )
    miner_kwargs: dict[str, Any] = {"seed": int(neg.get("seed", seed))}
    if "thresholds" in neg:
        miner_kwargs["thresholds"] = _part_map(
            dict(neg["thresholds"]), "neg_nsd.thresholds", disabled_ok=True
        )
    if "lambda" in neg:
        miner_kwargs["lam"] = float(neg["lambda"])
    for key in ("hidden_size", "epochs", "batch_size"):
        if key in neg:
            miner_kwargs[key] = int(neg[key])
    if "learning_rate" in neg:
        miner_kwargs["learning_rate"] = float(neg["learning_rate"])
    if "threshold_mode" in neg:
        miner_kwargs["threshold_mode"] = str(neg["threshold_mode"])

    pos = dict(raw.get("pos_nsd", {}))
    _expect_keys(
        pos, {"alpha", "n_subsets", "min_class_size", "exclude_self", "seed"}, "pos_nsd"
    )
    density_kwargs: dict[str, Any] = {"seed": int(pos.get("seed", seed))}
    if "alpha" in pos:
        density_kwargs["alpha"] = _part_map(
            dict(pos["alpha"]), "pos_nsd.alpha", disabled_ok=False
        )
    for key in ("n_subsets", "min_class_size"):
        if key in pos:
            density_kwargs[key] = int(pos[key])
    if "exclude_self" in pos:
        density_kwargs["exclude_self"] = bool(pos["exclude_self"])

    nsc = dict(raw.get("nsc", {}))
    _expect_keys(nsc, {"k", "kernel_a", "kernel_b", "kernel_c", "min_neighbors"}, "nsc")
    nsc_kwargs: dict[str, Any] = {}
    for key in ("k", "min_neighbors"):
        if key in nsc:
            nsc_kwargs[key] = int(nsc[key])
    for key in ("kernel_a", "kernel_b"):
        if key in nsc:
            nsc_kwargs[key] = float(nsc[key])
    if "kernel_c" in nsc:
        nsc_kwargs["kernel_c"] = None if nsc["kernel_c"] is None else float(nsc["kernel_c"])

    synth_config = None
    if "synth" in raw:
        synth = dict(raw["synth"])
        _expect_keys(
            synth,
            {
                "n_classes",
                "n_pairs",
                "feature_dim",
                "samples_per_class",
                "imbalance",
                "cluster_spread",
                "class_separation",
                "eta_common",
                "eta_syn",
                "eta_neg",
                "synonym_pairs",
                "coarse_of",
                "n_background",
                "seed",
            },
            "synth",
        )
        synth.setdefault("seed", seed)
        if "synonym_pairs" in synth:
            synth["synonym_pairs"] = tuple(
                (int(a), int(b)) for a, b in synth["synonym_pairs"]
            )
        if "coarse_of" in synth:
            synth["coarse_of"] = {int(k): int(v) for k, v in synth["coarse_of"].items()}
        synth_config = SynthConfig(**synth)

    return PipelineConfig(
        input_path=io.get("input"),
        vocab_path=io.get("vocab"),
        out_dir=io.get("out_dir", "out"),
        head_min=int(part_section.get("head_min", DEFAULT_HEAD_MIN)),
        tail_max=int(part_section.get("tail_max", DEFAULT_TAIL_MAX)),
        seed=seed,
        enable_neg=bool(stages.get("neg_nsd", True)),
        enable_pos=bool(stages.get("pos_nsd", True)),
        enable_nsc=bool(stages.get("nsc", True)),
        miner=MinerConfig(**miner_kwargs),
        density=DensityConfig(**density_kwargs),
        corrector=CorrectionConfig(**nsc_kwargs),
        synth=synth_config,
    )


def load_config(path: str, seed_override: int | None = None) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: malformed config ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise DatasetError(f"{path}: config must be an object")
    return config_from_dict(raw, seed_override)


def config_to_dict(config: PipelineConfig) -> dict:
    """Canonical nested form, also used as the report's config echo."""
    out: dict[str, Any] = {
        "io": {
            "input": config.input_path,
            "vocab": config.vocab_path,
            "out_dir": config.out_dir,
        },
        "partition": {"head_min": config.head_min, "tail_max": config.tail_max},
        "seed": config.seed,
        "stages": {
            "neg_nsd": config.enable_neg,
            "pos_nsd": config.enable_pos,
            "nsc": config.enable_nsc,
        },
        "neg_nsd": {
            "thresholds": {p.value: config.miner.thresholds[p] for p in Part},
            "lambda": config.miner.lam,
            "hidden_size": config.miner.hidden_size,
            "epochs": config.miner.epochs,
            "learning_rate": config.miner.learning_rate,
            "batch_size": config.miner.batch_size,
            "seed": config.miner.seed,
            "threshold_mode": config.miner.threshold_mode,
        },
        "pos_nsd": {
            "alpha": {p.value: config.density.alpha[p] for p in Part},
            "n_subsets": config.density.n_subsets,
            "min_class_size": config.density.min_class_size,
            "exclude_self": config.density.exclude_self,
            "seed": config.density.seed,
        },
        "nsc": {
            "k": config.corrector.k,
            "kernel_a": config.corrector.kernel_a,
            "kernel_b": config.corrector.kernel_b,
            "kernel_c": config.corrector.kernel_c,
            "min_neighbors": config.corrector.min_neighbors,
        },
    }
    if config.synth is not None:
        s = config.synth
        out["synth"] = {
            "n_classes": s.n_classes,
            "n_pairs": s.n_pairs,
            "feature_dim": s.feature_dim,
            "samples_per_class": s.samples_per_class,
            "imbalance": s.imbalance,
            "cluster_spread": s.cluster_spread,
            "class_separation": s.class_separation,
            "eta_common": s.eta_common,
            "eta_syn": s.eta_syn,
            "eta_neg": s.eta_neg,
            "synonym_pairs": [list(p) for p in s.synonym_pairs],
            "coarse_of": {str(k): v for k, v in s.coarse_of.items()},
            "n_background": s.n_background,
            "seed": s.seed,
        }
    return out


@dataclass(frozen=True)
class CleaningReport:
    """Record-count bookkeeping for one run; identities hold by construction."""

    total: int
    positives: int
    negatives: int
    mined_negatives: int
    kept_negatives: int
    composed: int
    flagged: int
    unflagged: int
    relabeled: int
    kept_flagged: int
    config_echo: dict
    artifacts: dict[str, str]

    def validate(self) -> None:
        checks = (
            self.composed == self.positives + self.mined_negatives,
            self.flagged + self.unflagged == self.composed,
            self.relabeled + self.kept_flagged == self.flagged,
            self.total == self.unflagged + self.flagged + self.kept_negatives,
        )
        if not all(checks):
            raise PipelineError(f"report identities violated: {self.counts()}")

    def counts(self) -> dict[str, int]:
        return {
            "total": self.total,
            "positives": self.positives,
            "negatives": self.negatives,
            "mined_negatives": self.mined_negatives,
            "kept_negatives": self.kept_negatives,
            "composed": self.composed,
            "flagged": self.flagged,
            "unflagged": self.unflagged,
            "relabeled": self.relabeled,
            "kept_flagged": self.kept_flagged,
        }

    def to_text(self) -> str:
        payload = {
            "counts": self.counts(),
            "config": self.config_echo,
            "artifacts": self.artifacts,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class RunResult:
    dataset: Dataset
    report: CleaningReport
    model: ConfidenceModel | None
    mined: dict[str, str]
    density: DensityReport
    ledger: tuple[CorrectionRecord, ...]
    timings: dict[str, float]


def run(config: PipelineConfig, dataset: Dataset | None = None) -> RunResult:
    """Execute the enabled stages on the input and report set sizes.

    Nothing touches the filesystem here; use :func:`write_outputs` for
    persistence.  Stage failures surface as PipelineError naming the stage.
    """
    if dataset is None:
        if config.input_path is None:
            raise DatasetError("config has no input path and no dataset was given")
        dataset = load_dataset(
            config.input_path,
            vocab_path=config.vocab_path,
            head_min=config.head_min,
            tail_max=config.tail_max,
        )

    timings: dict[str, float] = {}
    started = time.perf_counter()
    positives = dataset.positives()
    negatives = dataset.negatives()

    model: ConfidenceModel | None = None
    mined: tuple[TripletRecord, ...] = ()
    if config.enable_neg and negatives:
        t0 = time.perf_counter()
        try:
            model = train(positives, len(dataset.vocab), config.miner)
            mined, _ = detect_noisy_negatives(
                model, negatives, config.miner, dataset.partition
            )
        except Exception as exc:
            raise PipelineError(f"neg_nsd: {exc}") from exc
        timings["neg_nsd"] = time.perf_counter() - t0

    working = dataset.with_records({r.id: r for r in mined})
    try:
        composed = compose_positive_set(positives, mined)
    except DatasetError as exc:
        raise PipelineError(f"compose: {exc}") from exc

    if config.enable_pos:
        t0 = time.perf_counter()
        try:
            density = detect_noisy_positives(composed, config.density, working.partition)
        except Exception as exc:
            raise PipelineError(f"pos_nsd: {exc}") from exc
        timings["pos_nsd"] = time.perf_counter() - t0
    else:
        density = DensityReport(
            classes=(), noisy_ids=(), clean_ids=tuple(r.id for r in composed)
        )

    ledger: tuple[CorrectionRecord, ...] = ()
    if config.enable_nsc:
        t0 = time.perf_counter()
        try:
            working, ledger = correct(
                density.noisy_ids, working, density.clean_ids, config.corrector
            )
        except Exception as exc:
            raise PipelineError(f"nsc: {exc}") from exc
        timings["nsc"] = time.perf_counter() - t0
    elif density.noisy_ids:
        by_id = working.by_id()
        working = working.with_records(
            {
                rid: replace(by_id[rid], label_state=LabelState.CLEAN_KEPT)
                for rid in density.noisy_ids
            }
        )

    timings["total"] = time.perf_counter() - started

    relabeled = sum(1 for entry in ledger if entry.changed)
    report = CleaningReport(
        total=len(dataset),
        positives=len(positives),
        negatives=len(negatives),
        mined_negatives=len(mined),
        kept_negatives=len(negatives) - len(mined),
        composed=len(composed),
        flagged=len(density.noisy_ids),
        unflagged=len(density.clean_ids),
        relabeled=relabeled,
        kept_flagged=len(density.noisy_ids) - relabeled,
        config_echo=config_to_dict(config),
        artifacts={
            "cleaned": CLEANED_FILE,
            "vocab": VOCAB_FILE,
            "mined": MINED_FILE,
            "density_report": DENSITY_FILE,
            "correction_ledger": LEDGER_FILE,
            "model": MODEL_FILE if model is not None else "",
            "timings": TIMINGS_FILE,
        },
    )
    report.validate()
    mined_names = {r.id: dataset.vocab.names[r.label] for r in mined}
    return RunResult(
        dataset=working,
        report=report,
        model=model,
        mined=mined_names,
        density=density,
        ledger=ledger,
        timings=timings,
    )


def mined_to_text(result: RunResult) -> str:
    by_id = result.dataset.by_id()
    lines = []
    for rid in sorted(result.mined):
        rec = by_id[rid]
        lines.append(
            json.dumps(
                {
                    "id": rid,
                    "predicate": result.mined[rid],
                    "confidence": rec.confidence,
                }
            )
        )
    return "\n".join(lines) + "\n" if lines else ""


def write_outputs(result: RunResult, out_dir: str) -> None:
    """Persist the run; every file lands atomically, timings separately."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    join = lambda name: os.path.join(out_dir, name)
    atomic_write_text(join(CLEANED_FILE), dataset_to_text(result.dataset))
    save_vocab(result.dataset.vocab.names, join(VOCAB_FILE))
    atomic_write_text(join(REPORT_FILE), result.report.to_text())
    atomic_write_text(join(MINED_FILE), mined_to_text(result))
    atomic_write_text(join(DENSITY_FILE), density_report_to_text(result.density))
    atomic_write_text(join(LEDGER_FILE), ledger_to_text(result.ledger))
    if result.model is not None:
        save_model(result.model, join(MODEL_FILE))
    atomic_write_text(
        join(TIMINGS_FILE), json.dumps(result.timings, sort_keys=True) + "\n"
    )
    logger.info("outputs written to %s", out_dir)


def export_embeddings(dataset: Dataset) -> str:
    """Features plus final labels for external projection tooling."""
    lines = []
    for rec in dataset.records:
        row = record_to_dict(rec, dataset.vocab)
        lines.append(
            json.dumps(
                {"id": row["id"], "label": row["predicate"], "feature": row["feature"]}
            )
        )
    return "\n".join(lines) + "\n" if lines else ""


# ---------------------------------------------------------------------------
# Reading run artifacts back (eval support)
# ---------------------------------------------------------------------------


def load_mined(path: str) -> dict[str, str]:
    mined: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                row = json.loads(line)
                mined[row["id"]] = row["predicate"]
    return mined


def load_flagged(path: str) -> frozenset[str]:
    flagged = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            if row["flagged"]:
                flagged.add(row["id"])
    return frozenset(flagged)


def load_ledger(path: str) -> tuple[CorrectionRecord, ...]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            entries.append(
                CorrectionRecord(
                    id=row["id"],
                    old_label=int(row["old_label"]),
                    new_label=int(row["new_label"]),
                    changed=bool(row["changed"]),
                    neighbor_ids=tuple(row["neighbor_ids"]),
                    weights=tuple(float(w) for w in row["weights"]),
                )
            )
    return tuple(entries)
