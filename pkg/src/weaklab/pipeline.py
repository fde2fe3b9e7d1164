"""Configuration and stage orchestration: label -> aggregate -> train -> eval -> report.

A single JSON config file names the schema, dataset splits, weak sources,
backend, aggregation mode and trainer hyperparameters. Every stage reads
its inputs from the artifacts of the previous stage, so the full pipeline
and the per-stage CLI subcommands produce identical outputs. All artifacts
are deterministic given (config, seed): reruns are byte-identical, and the
seed only reaches the trainer, never the labeling stages.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import aggregate as agg
from .backends import LMBackend, MockBackend, RemoteBackend
from .corpus import (
    ClassLabel,
    CorpusError,
    Dataset,
    LabelSchema,
    load_dataset,
    load_schema,
    normalize_text,
)
from .metrics import EvalReport, macro_f1, rule_baseline_eval
from .prompts import EnsemblePromptSource, PromptSource, load_prompt_specs
from .rules import (
    ClassBindings,
    FillerSource,
    FluentDefaultSource,
    LexiconSource,
    PrecomputedSource,
    RepetitionSource,
    RuleSourceConfig,
    SoundexRepeatSource,
    DEFAULT_FILLERS,
    load_filler_set,
)
from .corpus import load_lexicon
from .trainer import (
    TrainConfig,
    featurize,
    init_train,
    load_checkpoint,
    load_embeddings,
    predict_proba_batch,
    save_checkpoint,
    self_train,
    stack_features,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "StageError",
    "MissingArtifactError",
    "PipelineConfig",
    "ArtifactPaths",
    "run_pipeline",
    "stage_label",
    "stage_aggregate",
    "stage_train",
    "stage_eval",
    "stage_report",
    "STAGES",
]

ENDPOINT_ENV_VAR = "WEAKLAB_BACKEND_ENDPOINT"
STAGES = ("label", "aggregate", "train", "eval", "report")

DISFLUENCY_RULE_NAMES = ("filler", "repetition", "soundex_repeat", "fluent_default")


class ConfigError(ValueError):
    """The pipeline configuration is invalid; nothing has run."""


class StageError(RuntimeError):
    """A stage failed; carries the stage name and the underlying cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class MissingArtifactError(ConfigError):
    """A stage's upstream artifact is absent; names the stage that makes it."""


@dataclass(frozen=True)
class ArtifactPaths:
    """Canonical artifact locations inside one output directory."""

    out_dir: Path

    def votes(self, split: str) -> Path:
        return self.out_dir / f"votes_{split}.jsonl"

    def matrix(self, split: str) -> Path:
        return self.out_dir / f"matrix_{split}.jsonl"

    def source_stats(self, split: str) -> Path:
        return self.out_dir / f"source_stats_{split}.json"

    def train_labels(self) -> Path:
        return self.out_dir / "train_labels.json"

    def checkpoint(self) -> Path:
        return self.out_dir / "checkpoint.npz"

    def train_report(self) -> Path:
        return self.out_dir / "train_report.json"

    def eval(self, split: str) -> Path:
        return self.out_dir / f"eval_{split}.json"

    def summary(self) -> Path:
        return self.out_dir / "summary.txt"

    def run_state(self) -> Path:
        return self.out_dir / "run_state.json"


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what} does not exist: {path}")
    return path


@dataclass
class PipelineConfig:
    """Validated pipeline configuration with resolved paths and loaded schema."""

    schema: LabelSchema
    schema_path: Path
    data_paths: dict[str, Path]
    bindings: ClassBindings
    lexicon_sources: list[dict]
    disfluency_rules: dict | None
    prompt_sources: list[dict]
    precomputed_sources: list[dict]
    backend_spec: dict | None
    aggregation_mode: str
    include_majority_source: bool
    train_config: TrainConfig
    features_spec: dict
    out_dir: Path
    seed: int
    label_max_workers: int
    raw: dict

    @classmethod
    def from_file(
        cls,
        path: str | Path,
        seed_override: int | None = None,
        out_override: str | Path | None = None,
    ) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file does not exist: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        base = path.parent

        if "schema" not in raw:
            raise ConfigError("config needs a 'schema' path")
        schema_path = _require_file(_resolve(base, raw["schema"]), "schema file")
        schema = load_schema(schema_path)

        data = raw.get("data")
        if not isinstance(data, dict) or "train" not in data:
            raise ConfigError("config needs a 'data' object with at least a 'train' split")
        data_paths = {}
        for split, rel in data.items():
            if split not in ("train", "valid", "test"):
                raise ConfigError(f"unknown data split {split!r}")
            data_paths[split] = _require_file(_resolve(base, rel), f"{split} dataset")

        bindings_raw = raw.get("bindings", {})
        if not isinstance(bindings_raw, dict):
            raise ConfigError("'bindings' must map roles to class names")
        try:
            bindings = ClassBindings.from_names(schema, **bindings_raw)
        except (CorpusError, ValueError) as exc:
            raise ConfigError(f"invalid bindings: {exc}") from exc

        sources = raw.get("sources", {})
        if not isinstance(sources, dict):
            raise ConfigError("'sources' must be an object")
        lexicon_sources = []
        for entry in sources.get("lexicons", []):
            if "id" not in entry or "path" not in entry:
                raise ConfigError("each lexicon source needs 'id' and 'path'")
            lexicon_sources.append(
                {
                    "id": entry["id"],
                    "path": _require_file(_resolve(base, entry["path"]), "lexicon file"),
                    "threshold": float(entry.get("threshold", 0.0)),
                }
            )
        disfluency = sources.get("disfluency_rules")
        if disfluency is not None:
            if not isinstance(disfluency, dict):
                raise ConfigError("'disfluency_rules' must be an object")
            include = disfluency.get("include", list(DISFLUENCY_RULE_NAMES))
            unknown = set(include) - set(DISFLUENCY_RULE_NAMES)
            if unknown:
                raise ConfigError(f"unknown disfluency rules {sorted(unknown)}")
            fillers_path = disfluency.get("fillers")
            disfluency = {
                "include": list(include),
                "fillers": (
                    _require_file(_resolve(base, fillers_path), "filler file")
                    if fillers_path
                    else None
                ),
                "n_max": int(disfluency.get("n_max", 2)),
            }
        prompt_sources = []
        for entry in sources.get("prompts", []):
            if "path" not in entry:
                raise ConfigError("each prompt source needs a 'path'")
            spec_path = _require_file(_resolve(base, entry["path"]), "prompt-spec file")
            specs = load_prompt_specs(spec_path)
            for template, _ in specs:
                template.validate_for_schema(schema)
            prompt_sources.append(
                {
                    "path": spec_path,
                    "as_ensemble": bool(entry.get("as_ensemble", False)),
                    "id": entry.get("id"),
                }
            )
        precomputed = []
        for entry in sources.get("precomputed", []):
            if "id" not in entry or "path" not in entry:
                raise ConfigError("each precomputed source needs 'id' and 'path'")
            precomputed.append(
                {
                    "id": entry["id"],
                    "path": _require_file(
                        _resolve(base, entry["path"]), "precomputed votes file"
                    ),
                }
            )
        if not (lexicon_sources or disfluency or prompt_sources or precomputed):
            raise ConfigError("config defines no weak sources")

        backend_spec = raw.get("backend")
        if prompt_sources and backend_spec is None:
            raise ConfigError("prompt sources need a 'backend'")
        if backend_spec is not None:
            kind = backend_spec.get("kind")
            if kind == "mock":
                table = backend_spec.get("keyword_table", {})
                if not isinstance(table, dict):
                    raise ConfigError("mock backend 'keyword_table' must be an object")
            elif kind == "remote":
                if not backend_spec.get("endpoint") and not os.environ.get(ENDPOINT_ENV_VAR):
                    raise ConfigError(
                        f"remote backend needs 'endpoint' (or {ENDPOINT_ENV_VAR})"
                    )
            else:
                raise ConfigError(f"backend kind must be 'mock' or 'remote', got {kind!r}")

        aggregation = raw.get("aggregation", {})
        mode = aggregation.get("mode", "majority")
        if mode not in ("majority", "soft"):
            raise ConfigError(f"aggregation mode must be 'majority' or 'soft', got {mode!r}")

        seed = int(raw.get("seed", 0)) if seed_override is None else int(seed_override)
        trainer_raw = dict(raw.get("trainer", {}))
        trainer_raw.setdefault("seed", seed)
        if seed_override is not None:
            trainer_raw["seed"] = seed
        try:
            train_config = TrainConfig(**trainer_raw)
        except TypeError as exc:
            raise ConfigError(f"invalid trainer config: {exc}") from exc

        features_spec = dict(raw.get("features", {"kind": "hashed"}))
        f_kind = features_spec.get("kind", "hashed")
        if f_kind == "embeddings":
            features_spec["path"] = _require_file(
                _resolve(base, features_spec.get("path", "")), "embedding file"
            )
        elif f_kind != "hashed":
            raise ConfigError(f"features kind must be 'hashed' or 'embeddings', got {f_kind!r}")

        out_dir = Path(out_override) if out_override is not None else _resolve(
            base, raw.get("output_dir", "out")
        )

        return cls(
            schema=schema,
            schema_path=schema_path,
            data_paths=data_paths,
            bindings=bindings,
            lexicon_sources=lexicon_sources,
            disfluency_rules=disfluency,
            prompt_sources=prompt_sources,
            precomputed_sources=precomputed,
            backend_spec=backend_spec,
            aggregation_mode=mode,
            include_majority_source=bool(aggregation.get("include_majority_source", False)),
            train_config=train_config,
            features_spec=features_spec,
            out_dir=out_dir,
            seed=seed,
            label_max_workers=int(raw.get("label_max_workers", 1)),
            raw=raw,
        )

    @property
    def paths(self) -> ArtifactPaths:
        return ArtifactPaths(self.out_dir)

    def splits(self) -> list[str]:
        return [s for s in ("train", "valid", "test") if s in self.data_paths]

    def load_split(self, split: str) -> Dataset:
        return load_dataset(self.data_paths[split], self.schema)

    def build_backend(self) -> LMBackend | None:
        if self.backend_spec is None:
            return None
        kind = self.backend_spec["kind"]
        if kind == "mock":
            vocab = self.backend_spec.get("vocabulary")
            return MockBackend(
                self.backend_spec.get("keyword_table", {}),
                vocabulary=set(vocab) if vocab else None,
            )
        endpoint = os.environ.get(ENDPOINT_ENV_VAR) or self.backend_spec["endpoint"]
        return RemoteBackend(
            endpoint,
            timeout=float(self.backend_spec.get("timeout", 30.0)),
            max_retries=int(self.backend_spec.get("max_retries", 3)),
            backoff=float(self.backend_spec.get("backoff", 0.5)),
        )

    def build_sources(self) -> tuple[list, dict[str, str]]:
        """Instantiate every configured source; returns (sources, source kinds)."""
        sources: list = []
        kinds: dict[str, str] = {}
        for entry in self.lexicon_sources:
            lexicon = load_lexicon(entry["path"])
            source = LexiconSource(
                f"lex:{entry['id']}", lexicon, entry["threshold"], self.bindings
            )
            sources.append(source)
            kinds[source.source_id] = "rule"
        if self.disfluency_rules is not None:
            fillers = (
                load_filler_set(self.disfluency_rules["fillers"])
                if self.disfluency_rules["fillers"]
                else DEFAULT_FILLERS
            )
            n_max = self.disfluency_rules["n_max"]
            rule_cfg = RuleSourceConfig(
                bindings=self.bindings, fillers=fillers, n_max=n_max
            )
            registry = {
                "filler": lambda: FillerSource("filler", fillers, self.bindings),
                "repetition": lambda: RepetitionSource("repetition", n_max, self.bindings),
                "soundex_repeat": lambda: SoundexRepeatSource(
                    "soundex_repeat", self.bindings
                ),
                "fluent_default": lambda: FluentDefaultSource("fluent_default", rule_cfg),
            }
            for name in self.disfluency_rules["include"]:
                source = registry[name]()
                sources.append(source)
                kinds[source.source_id] = "rule"
        for entry in self.precomputed_sources:
            source = PrecomputedSource.from_file(
                f"ext:{entry['id']}", entry["path"], self.schema
            )
            sources.append(source)
            kinds[source.source_id] = "rule"
        if self.prompt_sources:
            backend = self.build_backend()
            for entry in self.prompt_sources:
                specs = load_prompt_specs(entry["path"])
                if entry["as_ensemble"]:
                    templates = [t for t, _ in specs]
                    demos = next((d for _, d in specs if d), [])
                    source = EnsemblePromptSource(
                        templates,
                        self.schema,
                        backend,
                        demos,
                        source_id=entry["id"] or "prompt_ensemble",
                    )
                    sources.append(source)
                    kinds[source.source_id] = "prompt"
                else:
                    for template, demos in specs:
                        source = PromptSource(template, self.schema, backend, demos)
                        sources.append(source)
                        kinds[source.source_id] = "prompt"
        return sources, kinds


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


class _RunState:
    """Tracks stage completion so interrupted runs leave an honest trail."""

    def __init__(self, config: PipelineConfig):
        self.path = config.paths.run_state()
        self.state = {
            "seed": config.seed,
            "trainer_config_hash": config.train_config.config_hash(),
            "stages": {},
            "status": "running",
            "failed_stage": None,
            "stale_artifacts": [],
        }
        if self.path.is_file():
            try:
                previous = _read_json(self.path)
                self.state["stages"] = previous.get("stages", {})
            except (json.JSONDecodeError, OSError):
                pass

    def _flush(self) -> None:
        _write_json(self.path, self.state)

    def stage_done(self, stage: str) -> None:
        self.state["stages"][stage] = "complete"
        self._flush()

    def fail(self, stage: str, config: PipelineConfig) -> None:
        self.state["status"] = "failed"
        self.state["failed_stage"] = stage
        for later in STAGES[STAGES.index(stage):]:
            self.state["stages"][later] = "stale"
        self.state["stale_artifacts"] = sorted(
            str(p) for p in _stage_artifacts(config, STAGES[STAGES.index(stage):])
            if p.exists()
        )
        self._flush()

    def complete(self) -> None:
        self.state["status"] = "complete"
        self.state["stale_artifacts"] = []
        self._flush()


def _stage_artifacts(config: PipelineConfig, stages: Sequence[str]) -> list[Path]:
    paths = config.paths
    out: list[Path] = []
    for stage in stages:
        if stage == "label":
            out += [paths.votes(s) for s in config.splits()]
        elif stage == "aggregate":
            out += [paths.matrix(s) for s in config.splits()]
            out += [paths.source_stats(s) for s in config.splits()]
            out.append(paths.train_labels())
        elif stage == "train":
            out += [paths.checkpoint(), paths.train_report()]
        elif stage == "eval":
            out += [paths.eval(s) for s in config.splits() if s != "train"]
        elif stage == "report":
            out.append(paths.summary())
    return out


def _require_artifact(path: Path, producing_stage: str) -> Path:
    if not path.is_file():
        raise MissingArtifactError(
            f"missing artifact {path.name}: run the {producing_stage!r} stage first"
        )
    return path


def stage_label(config: PipelineConfig) -> dict[str, Path]:
    """Evaluate every weak source on every split; write vote matrices."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    sources, _ = config.build_sources()
    outputs = {}
    for split in config.splits():
        dataset = config.load_split(split)
        matrix = agg.build_matrix(
            dataset, sources, max_workers=config.label_max_workers
        )
        path = config.paths.votes(split)
        agg.write_matrix(matrix, path, config.schema, include_aggregates=False)
        outputs[split] = path
        logger.info("labeled %s: %d samples x %d sources", split, matrix.n_samples, matrix.n_sources)
    return outputs


def stage_aggregate(config: PipelineConfig) -> dict[str, Path]:
    """Aggregate votes into majority/soft labels and per-source statistics."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for split in config.splits():
        votes_path = _require_artifact(config.paths.votes(split), "label")
        matrix = agg.read_matrix(votes_path, config.schema)
        if config.include_majority_source:
            matrix = agg.append_majority_source(matrix, config.schema)
        agg.write_matrix(matrix, config.paths.matrix(split), config.schema)
        dataset = config.load_split(split)
        gold = dataset.gold_labels()
        has_gold = any(g is not None for g in gold)
        stats = agg.source_stats(matrix, gold if has_gold else None, config.schema)
        _write_json(
            config.paths.source_stats(split),
            {
                "split": split,
                "sources": [
                    {
                        "source_id": s.source_id,
                        "coverage": s.coverage,
                        "covered_macro_f1": s.covered_macro_f1,
                        "per_class": s.per_class,
                    }
                    for s in stats
                ],
            },
        )
        if split == "train":
            aggregated = agg.aggregate_labels(matrix, config.schema, config.aggregation_mode)
            _write_json(
                config.paths.train_labels(),
                {
                    "mode": aggregated.mode,
                    "labels": [
                        {
                            "id": sample_id,
                            "hard": hard.name if hard is not None else None,
                            "soft": list(soft) if soft is not None else None,
                        }
                        for sample_id, hard, soft in zip(
                            aggregated.sample_ids, aggregated.hard, aggregated.soft
                        )
                    ],
                },
            )
        outputs[split] = config.paths.matrix(split)
    return outputs


def _split_features(config: PipelineConfig, dataset: Dataset):
    if config.features_spec.get("kind", "hashed") == "hashed":
        feats = [
            featurize(normalize_text(utt.text), config.train_config.dim)
            for utt in dataset
        ]
        return stack_features(feats, config.train_config.dim)
    embeddings, dim = load_embeddings(config.features_spec["path"])
    rows = []
    for utt in dataset:
        if utt.id not in embeddings:
            raise ConfigError(f"embedding file lacks sample {utt.id!r}")
        rows.append(embeddings[utt.id])
    return np.vstack(rows)


def stage_train(config: PipelineConfig) -> dict[str, Path]:
    """Initialize on aggregated weak labels, then run self-training rounds."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    _require_artifact(config.paths.matrix("train"), "aggregate")
    labels_payload = _read_json(_require_artifact(config.paths.train_labels(), "aggregate"))
    dataset = config.load_split("train")
    by_id = {rec["id"]: rec for rec in labels_payload["labels"]}
    missing = [u.id for u in dataset if u.id not in by_id]
    if missing:
        raise ConfigError(f"train labels artifact lacks samples {missing[:3]}")
    X = _split_features(config, dataset)
    mode = labels_payload["mode"]
    covered_idx = []
    hard_targets: list[int] = []
    soft_targets: list[list[float]] = []
    for i, utt in enumerate(dataset):
        rec = by_id[utt.id]
        if rec["hard"] is None:
            continue
        covered_idx.append(i)
        hard_targets.append(config.schema.by_name(rec["hard"]).index)
        soft_targets.append(rec["soft"])
    if not covered_idx:
        raise StageError("train", ValueError("no covered training samples"))
    covered = X[covered_idx] if hasattr(X, "shape") else [X[i] for i in covered_idx]
    targets = (
        np.asarray(soft_targets) if mode == "soft" else np.asarray(hard_targets)
    )
    cfg = config.train_config
    params = init_train(covered, targets, cfg, n_classes=len(config.schema))
    params, report = self_train(params, X, cfg)
    save_checkpoint(params, cfg, config.paths.checkpoint())
    _write_json(
        config.paths.train_report(),
        {
            "config_hash": cfg.config_hash(),
            "seed": cfg.seed,
            "covered_samples": len(covered_idx),
            "total_samples": len(dataset),
            "aggregation_mode": mode,
            "self_train": report.to_dict(),
        },
    )
    return {"checkpoint": config.paths.checkpoint(), "report": config.paths.train_report()}


def stage_eval(config: PipelineConfig) -> dict[str, Path]:
    """Score the trained model and every source on the gold-labeled splits."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = _require_artifact(config.paths.checkpoint(), "train")
    params = load_checkpoint(checkpoint, config.train_config)
    outputs = {}
    for split in config.splits():
        if split == "train":
            continue
        matrix_path = _require_artifact(config.paths.matrix(split), "aggregate")
        matrix = agg.read_matrix(matrix_path, config.schema)
        dataset = config.load_split(split)
        gold = dataset.gold_labels()
        if any(g is None for g in gold):
            logger.warning("split %s lacks full gold labels; skipping eval", split)
            continue
        X = _split_features(config, dataset)
        proba = predict_proba_batch(params, X)
        preds = [config.schema.classes[int(i)] for i in proba.argmax(axis=1)]
        wsm_report = macro_f1(preds, gold, config.schema)
        source_reports = {}
        for source_id in matrix.source_ids:
            column = matrix.column(source_id)
            source_reports[source_id] = rule_baseline_eval(column, gold, config.schema).to_dict()
        majority_labels = [
            agg.majority_vote(row, config.schema) for row in matrix.votes
        ]
        majority_report = rule_baseline_eval(majority_labels, gold, config.schema)
        payload = {
            "split": split,
            "wsm": wsm_report.to_dict(),
            "majority_vote": majority_report.to_dict(),
            "sources": source_reports,
        }
        path = config.paths.eval(split)
        _write_json(path, payload)
        outputs[split] = path
    if not outputs:
        raise StageError("eval", ValueError("no gold-labeled split to evaluate"))
    return outputs


def _format_table(headers: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.4f}"


def stage_report(config: PipelineConfig) -> dict[str, Path]:
    """Render the human-readable summary: source statistics and final results."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    _, kinds = config.build_sources()
    sections = [
        "weaklab run summary",
        f"task: {config.schema.task_name} ({', '.join(config.schema.names)})",
        f"seed: {config.seed}  aggregation: {config.aggregation_mode}",
        "",
    ]
    for split in config.splits():
        stats_path = config.paths.source_stats(split)
        if not stats_path.is_file():
            _require_artifact(stats_path, "aggregate")
        payload = _read_json(stats_path)
        rows = [
            [s["source_id"], _fmt(s["coverage"]), _fmt(s["covered_macro_f1"])]
            for s in payload["sources"]
        ]
        sections.append(f"== source statistics ({split}) ==")
        sections.append(
            _format_table(["source", "coverage", "covered-macro-F1"], rows)
        )
        by_kind: dict[str, list[float]] = {}
        for s in payload["sources"]:
            if s["covered_macro_f1"] is None:
                continue
            kind = kinds.get(s["source_id"], "rule")
            by_kind.setdefault(kind, []).append(s["covered_macro_f1"])
        for kind, values in sorted(by_kind.items()):
            arr = np.asarray(values)
            sections.append(
                f"{kind} sources (n={len(values)}): covered-macro-F1 "
                f"{arr.mean():.4f} +/- {arr.std():.4f} (std across {kind} sources)"
            )
        sections.append("")
    for split in config.splits():
        if split == "train":
            continue
        eval_path = config.paths.eval(split)
        if not eval_path.is_file():
            _require_artifact(eval_path, "eval")
        payload = _read_json(eval_path)
        rows = []
        for source_id, rep in payload["sources"].items():
            rows.append(
                [source_id, _fmt(rep["macro_f1"]), _fmt(rep.get("coverage"))]
            )
        rows.append(
            [
                "majority_vote",
                _fmt(payload["majority_vote"]["macro_f1"]),
                _fmt(payload["majority_vote"].get("coverage")),
            ]
        )
        rows.append(["wsm", _fmt(payload["wsm"]["macro_f1"]), _fmt(1.0)])
        sections.append(f"== final results (Macro-F1, abstain-as-FN for sources; {split}) ==")
        sections.append(_format_table(["source/model", "macro-F1", "coverage"], rows))
        sections.append("")
    text = "\n".join(sections)
    config.paths.summary().write_text(text, encoding="utf-8")
    return {"summary": config.paths.summary()}


_STAGE_FUNCS = {
    "label": stage_label,
    "aggregate": stage_aggregate,
    "train": stage_train,
    "eval": stage_eval,
    "report": stage_report,
}


def run_stage(config: PipelineConfig, stage: str) -> dict[str, Path]:
    if stage not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    return _STAGE_FUNCS[stage](config)


def run_pipeline(config: PipelineConfig) -> dict[str, Path]:
    """Run every stage in order; halt on the first failure, naming the stage."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    state = _RunState(config)
    artifacts: dict[str, Path] = {}
    for stage in STAGES:
        try:
            outputs = _STAGE_FUNCS[stage](config)
        except (MissingArtifactError, ConfigError, Exception) as exc:
            state.fail(stage, config)
            if isinstance(exc, StageError):
                raise
            raise StageError(stage, exc) from exc
        for key, path in outputs.items():
            artifacts[f"{stage}:{key}"] = path
        state.stage_done(stage)
    state.complete()
    return artifacts
