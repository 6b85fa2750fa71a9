"""
Run configuration: one pydantic tree per run, loaded from JSON and dotted
key=value overrides, written back as resolved_config.json.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from base.downstream import FAMILIES, TrainConfig
from base.errors import ConfigError
from base.forest import ForestConfig
from base.lrp import LrpConfig
from base.neural import NET_PRESETS, NetConfig
from base.self_supervised import SamplerConfig
from base.synth import SynthSpec
from base.transforms import TASKS, TransformConfig
from config.settings import BASE_LR, HAR_OUTPUT_DIR, HAR_SEED, PATIENCE

logger = logging.getLogger(__name__)

RESOLVED_CONFIG = "resolved_config.json"
# sections whose own seed follows the run seed unless set explicitly
SEEDED_SECTIONS = ("train", "synth")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IngestSection(_Section):
    paths: Tuple[str, ...] = ()
    rate: float = Field(100.0, gt=0)
    labelled: bool = False
    manifest: Optional[str] = None


class PretrainSection(_Section):
    epochs: int = Field(30, ge=0)
    tasks: Tuple[str, ...] = TASKS
    lr: float = Field(BASE_LR, gt=0)
    patience: int = Field(PATIENCE, ge=1)
    eval_batches: int = Field(2, ge=1)


class ExplainSection(_Section):
    method: str = "lrp-cmp"
    window_index: int = Field(0, ge=0)
    head: str = "aot"
    target: int = Field(1, ge=0)
    ig_steps: int = Field(256, ge=1)
    n_scales: int = Field(48, ge=1)
    render: bool = True


class MaskSection(_Section):
    n_pairs: int = Field(50, ge=1)
    method: str = "lrp-cmp"
    orders: Tuple[str, ...] = ("relevance", "random", "temporal")
    task: str = "aot"
    noise_sigma: Optional[float] = Field(None, gt=0)


class AblateSection(_Section):
    kind: Literal["label", "unlabelled"] = "label"
    subject_counts: Tuple[int, ...] = (1, 2, 4)
    data_ratios: Tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    families: Tuple[str, ...] = ("finetune-all", "scratch", "forest")


class RunConfig(_Section):
    seed: int = HAR_SEED
    out: str = HAR_OUTPUT_DIR
    dataset: str = "synthetic"
    # input paths
    store: Optional[str] = None
    source_store: Optional[str] = None
    unlabelled_store: Optional[str] = None
    checkpoint: Optional[str] = None
    family: str = "finetune-all"
    save_model: bool = True

    net: NetConfig = NetConfig()
    sampler: SamplerConfig = SamplerConfig()
    transforms: TransformConfig = TransformConfig()
    lrp: LrpConfig = LrpConfig()
    train: TrainConfig = TrainConfig()
    forest: ForestConfig = ForestConfig()
    synth: SynthSpec = SynthSpec()
    ingest: IngestSection = IngestSection()
    pretrain: PretrainSection = PretrainSection()
    explain: ExplainSection = ExplainSection()
    mask: MaskSection = MaskSection()
    ablate: AblateSection = AblateSection()

    @model_validator(mode="before")
    @classmethod
    def _presets_and_seeds(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        if isinstance(data.get("net"), str):
            data["net"] = _preset(data["net"])
        seed = data.get("seed", HAR_SEED)
        for section in SEEDED_SECTIONS:
            block = data.get(section)
            if block is None:
                data[section] = {"seed": seed}
            elif isinstance(block, dict) and "seed" not in block:
                data[section] = {**block, "seed": seed}
        return data

    @model_validator(mode="after")
    def _check(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {list(FAMILIES)}, got {self.family!r}")
        unknown = [f for f in self.ablate.families if f not in FAMILIES]
        if unknown:
            raise ValueError(f"ablate.families has unknown families {unknown}")
        return self


def _preset(name: str) -> Dict[str, Any]:
    if name not in NET_PRESETS:
        raise ConfigError(f"Unknown network preset {name!r}. Available: {sorted(NET_PRESETS)}")
    return dict(NET_PRESETS[name])


# =====================================================
# OVERRIDES
# =====================================================
def _decades(start: int, stop: int) -> list:
    """100..100000 -> [100, 1000, 10000, 100000]"""
    if start < 1 or stop < start:
        raise ConfigError(f"Bad range {start}..{stop}")
    values = []
    v = start
    while v <= stop:
        values.append(v)
        v *= 10
    return values


def parse_value(text: str) -> Any:
    """JSON when it parses, a..b as a decade range, comma lists, else the raw string"""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if ".." in text:
        start, _, stop = text.partition("..")
        try:
            return _decades(int(start), int(stop))
        except ValueError:
            raise ConfigError(f"Cannot parse range {text!r}; expected integers like 100..100000")
    if "," in text:
        return [parse_value(part.strip()) for part in text.split(",") if part.strip()]
    return text


def apply_override(data: Dict[str, Any], assignment: str) -> Dict[str, Any]:
    """Apply one dotted key=value assignment to a plain config dict"""
    key, sep, raw = assignment.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"Override {assignment!r} must look like key=value")
    parts = key.strip().split(".")
    node = data
    for i, part in enumerate(parts[:-1]):
        child = node.get(part)
        if isinstance(child, str) and part == "net" and i == 0:
            child = _preset(child)
        elif child is None:
            child = {}
        elif not isinstance(child, dict):
            raise ConfigError(f"Override {assignment!r}: {'.'.join(parts[:i + 1])} is not a section")
        node[part] = child = dict(child)
        node = child
    node[parts[-1]] = parse_value(raw.strip())
    return data


def load_run_config(
    config_path: Optional[str | Path] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    out: Optional[str] = None,
) -> RunConfig:
    """
    Build a RunConfig from an optional JSON file, key=value overrides and the --seed / --out flags.

    Raises:
        ConfigError: If the file is unreadable, an override is malformed or validation fails
    """
    data: Dict[str, Any] = {}
    if config_path is not None:
        try:
            data = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {config_path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config {config_path} must hold a JSON object")
    for assignment in overrides:
        data = apply_override(data, assignment)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out"] = out
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration:\n{e}") from e


def write_resolved_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG
    path.write_text(json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n")
    logger.info(f"Resolved config written to {path}")
    return path
