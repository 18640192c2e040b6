"""Experiment configuration: strict JSON parsing and canonical hashing.

Unknown keys anywhere in the document are a hard error (a typo like
"lamda_rob" must not silently fall back to a default). Every section is
optional and falls back to the benchmark defaults. The machine-readable
schema shipped at ``schema/experiment_config.schema.json`` mirrors the
rules enforced here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any

from .metrics import BootstrapConfig
from .model import ModelConfig
from .objectives import AggregationWeights, ObjectiveConfig, Variant
from .robust import DEFAULT_RHO, RobustnessConfig
from .synth import SynthConfig, default_benchmark_config
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    run_name: str
    synth: SynthConfig
    model: ModelConfig
    objective: ObjectiveConfig
    train: TrainConfig
    bootstrap: BootstrapConfig
    output_dir: str | None = None


def _require_keys(section: str, doc: dict, allowed: set[str]) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


def _parse_synth(doc: dict) -> SynthConfig:
    base = default_benchmark_config()
    allowed = {
        "num_groups", "samples_per_group", "grid_size", "blob_center_shift",
        "blob_radius_range", "hard_group", "hard_fraction", "hard_noise_sigma",
        "hard_contrast", "base_noise_sigma", "seed", "center_jitter",
        "group_labels", "attribute_name",
    }
    _require_keys("synth", doc, allowed)
    fields = {k: getattr(base, k) for k in allowed}
    fields.update(doc)
    if "blob_center_shift" in doc:
        fields["blob_center_shift"] = tuple(tuple(v) for v in doc["blob_center_shift"])
    if "blob_radius_range" in doc:
        fields["blob_radius_range"] = tuple(tuple(v) for v in doc["blob_radius_range"])
    for key in ("samples_per_group", "group_labels"):
        if key in doc:
            fields[key] = tuple(doc[key])
    try:
        return SynthConfig(**fields)
    except ValueError as exc:
        raise ConfigError(f"synth: {exc}") from exc


def _parse_model(doc: dict, synth: SynthConfig) -> ModelConfig:
    allowed = {"feature_dim", "num_experts", "top_k", "use_dmoe"}
    _require_keys("model", doc, allowed)
    fields = dict(feature_dim=8, num_experts=4, top_k=2, use_dmoe=True)
    fields.update(doc)
    try:
        return ModelConfig(
            num_groups=synth.num_groups,
            height=synth.grid_size,
            width=synth.grid_size,
            **fields,
        )
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def parse_variant(text: str) -> Variant:
    try:
        return Variant(text.lower())
    except ValueError:
        raise ConfigError(
            f"unknown objective variant {text!r}; expected one of "
            "erm, fairdro, groupdro, fairdro-penalty"
        ) from None


def _parse_objective(doc: dict, synth: SynthConfig) -> ObjectiveConfig:
    allowed = {"variant", "rho", "lambda_rob", "aggregation"}
    _require_keys("objective", doc, allowed)
    variant = parse_variant(doc.get("variant", "fairdro"))
    group_ids = range(synth.num_groups)

    rho_doc = doc.get("rho", DEFAULT_RHO)
    try:
        if isinstance(rho_doc, dict):
            robustness = RobustnessConfig(rho={int(k): float(v) for k, v in rho_doc.items()})
            missing = set(group_ids) - set(robustness.rho)
            if missing:
                raise ConfigError(f"objective.rho missing group(s): {sorted(missing)}")
        else:
            robustness = RobustnessConfig.from_scalar(float(rho_doc), group_ids)
    except ValueError as exc:
        raise ConfigError(f"objective.rho: {exc}") from exc

    agg_doc = doc.get("aggregation", "uniform")
    if agg_doc == "uniform":
        aggregation = AggregationWeights.uniform(group_ids)
    elif agg_doc == "frequency":
        total = sum(synth.samples_per_group)
        aggregation = AggregationWeights(w={g: synth.samples_per_group[g] / total for g in group_ids})
    elif isinstance(agg_doc, dict):
        try:
            aggregation = AggregationWeights(w={int(k): float(v) for k, v in agg_doc.items()})
        except ValueError as exc:
            raise ConfigError(f"objective.aggregation: {exc}") from exc
    else:
        raise ConfigError(f"objective.aggregation must be 'uniform', 'frequency', or a group map, got {agg_doc!r}")

    try:
        return ObjectiveConfig(
            variant=variant,
            robustness=robustness,
            lambda_rob=float(doc.get("lambda_rob", 1.0)),
            aggregation=aggregation,
        )
    except ValueError as exc:
        raise ConfigError(f"objective: {exc}") from exc


def _parse_train(doc: dict) -> TrainConfig:
    allowed = {"epochs", "learning_rate", "momentum", "batch_mode", "seed", "eval_every"}
    _require_keys("train", doc, allowed)
    fields: dict[str, Any] = {}
    fields.update(doc)
    if "batch_mode" in fields and fields["batch_mode"] != "full":
        fields["batch_mode"] = int(fields["batch_mode"])
    try:
        return TrainConfig(**fields)
    except ValueError as exc:
        raise ConfigError(f"train: {exc}") from exc


def _parse_bootstrap(doc: dict) -> BootstrapConfig:
    allowed = {"resamples", "level", "seed"}
    _require_keys("bootstrap", doc, allowed)
    try:
        return BootstrapConfig(**doc)
    except ValueError as exc:
        raise ConfigError(f"bootstrap: {exc}") from exc


def parse_experiment_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("experiment config must be a JSON object")
    allowed = {"run_name", "output_dir", "synth", "model", "objective", "train", "bootstrap"}
    _require_keys("experiment config", doc, allowed)
    for section in ("synth", "model", "objective", "train", "bootstrap"):
        if section in doc and not isinstance(doc[section], dict):
            raise ConfigError(f"{section} must be a JSON object")
    synth = _parse_synth(doc.get("synth", {}))
    return ExperimentConfig(
        run_name=str(doc.get("run_name", "run")),
        output_dir=doc.get("output_dir"),
        synth=synth,
        model=_parse_model(doc.get("model", {}), synth),
        objective=_parse_objective(doc.get("objective", {}), synth),
        train=_parse_train(doc.get("train", {})),
        bootstrap=_parse_bootstrap(doc.get("bootstrap", {})),
    )


def load_experiment_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_experiment_config(doc)


def resolved_config_dict(config: ExperimentConfig) -> dict:
    """Fully-resolved config as a plain dict (for manifests and hashing)."""
    return {
        "run_name": config.run_name,
        "output_dir": config.output_dir,
        "synth": {
            "num_groups": config.synth.num_groups,
            "samples_per_group": list(config.synth.samples_per_group),
            "grid_size": config.synth.grid_size,
            "blob_center_shift": [list(v) for v in config.synth.blob_center_shift],
            "blob_radius_range": [list(v) for v in config.synth.blob_radius_range],
            "hard_group": config.synth.hard_group,
            "hard_fraction": config.synth.hard_fraction,
            "hard_noise_sigma": config.synth.hard_noise_sigma,
            "hard_contrast": config.synth.hard_contrast,
            "base_noise_sigma": config.synth.base_noise_sigma,
            "seed": config.synth.seed,
            "center_jitter": config.synth.center_jitter,
            "group_labels": list(config.synth.group_labels),
            "attribute_name": config.synth.attribute_name,
        },
        "model": {
            "feature_dim": config.model.feature_dim,
            "num_experts": config.model.num_experts,
            "top_k": config.model.top_k,
            "use_dmoe": config.model.use_dmoe,
        },
        "objective": {
            "variant": config.objective.variant.value,
            "rho": {str(g): v for g, v in config.objective.robustness.rho.items()},
            "lambda_rob": config.objective.lambda_rob,
            "aggregation": {str(g): v for g, v in config.objective.aggregation.w.items()},
        },
        "train": {
            "epochs": config.train.epochs,
            "learning_rate": config.train.learning_rate,
            "momentum": config.train.momentum,
            "batch_mode": config.train.batch_mode,
            "seed": config.train.seed,
            "eval_every": config.train.eval_every,
        },
        "bootstrap": {
            "resamples": config.bootstrap.resamples,
            "level": config.bootstrap.level,
            "seed": config.bootstrap.seed,
        },
    }


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(resolved_config_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
