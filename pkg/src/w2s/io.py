"""File formats: TOML configs, CSV records, JSON results, run manifests.

CSV floats are hex-encoded (float.hex) so emit/parse round trips are bit
exact and identical runs produce byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io as _stdio
import json
import time
from dataclasses import asdict, dataclass, replace

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib
from importlib import resources
from pathlib import Path

from .checks import BoundReport
from .heads import head_from_doc, head_to_doc
from .metrics import EvalRecord
from .nn import mlp_from_doc, mlp_to_doc
from .optim import OptimizerConfig
from .pipeline import ConfigError, ExperimentConfig, ExperimentResult, config_to_doc

RESULT_SCHEMA_VERSION = 1

CSV_COLUMNS = ("experiment_id", "task_id", "weak_model_id", "seed",
               "weak_true_err", "w2s_true_err", "misfit", "gain",
               "epsilon_hat", "n_eval")

# TOML (section, key) -> (ExperimentConfig field, type). The empty section is
# the document top level.
_KEYMAP = {
    ("", "experiment_id"): ("experiment_id", str),
    ("", "master_seed"): ("master_seed", int),
    ("data", "dim"): ("input_dim", int),
    ("data", "sigma"): ("sigma", float),
    ("archs", "rep_dim"): ("rep_dim", int),
    ("archs", "ground_truth_depth"): ("ground_truth_depth", int),
    ("archs", "ground_truth_hidden"): ("ground_truth_hidden", int),
    ("archs", "weak_depth"): ("weak_depth", int),
    ("archs", "weak_hidden"): ("weak_hidden", int),
    ("archs", "strong_depth"): ("strong_depth", int),
    ("archs", "strong_hidden"): ("strong_hidden", int),
    ("archs", "reverse_roles"): ("reverse_roles", bool),
    ("pretrain", "mode"): ("rep_mode", str),
    ("pretrain", "tasks"): ("pretrain_tasks", int),
    ("pretrain", "samples_per_task"): ("pretrain_samples", int),
    ("pretrain", "joint_heads"): ("joint_pretrain_heads", bool),
    ("pretrain", "perturb_std_weak"): ("perturb_std_weak", float),
    ("pretrain", "perturb_std_strong"): ("perturb_std_strong", float),
    ("finetune", "tasks"): ("finetune_tasks", int),
    ("finetune", "samples"): ("finetune_samples", int),
    ("finetune", "method"): ("finetune_method", str),
    ("finetune", "head_kind"): ("head_kind", str),
    ("finetune", "head_bias"): ("head_bias", bool),
    ("finetune", "fresh_weak_inputs"): ("fresh_weak_inputs", bool),
    ("finetune", "weak_model_id"): ("weak_model_id", str),
    ("optimizer", "lr"): ("lr", float),
    ("optimizer", "batch_size"): ("batch_size", int),
    ("optimizer", "epochs"): ("epochs", int),
    ("optimizer", "beta1"): ("beta1", float),
    ("optimizer", "beta2"): ("beta2", float),
    ("optimizer", "eps"): ("eps", float),
    ("eval", "samples"): ("eval_samples", int),
    ("eval", "shared_sample"): ("eval_shared_sample", bool),
    ("eval", "estimate_epsilon"): ("epsilon_enabled", bool),
    ("eval", "fit_samples"): ("epsilon_fit_samples", int),
    ("checks", "bound_tol_sigma"): ("bound_tol_sigma", float),
    ("checks", "skeleton_k1"): ("skeleton_k1", float),
    ("checks", "skeleton_kn"): ("skeleton_kn", float),
}

_OPTIMIZER_FIELDS = ("lr", "batch_size", "epochs", "beta1", "beta2", "eps")


def bundled_config_path(name: str) -> Path | None:
    """Path of a bundled scenario config by bare name, if one exists."""
    ref = resources.files("w2s").joinpath("configs", f"{name}.toml")
    return Path(str(ref)) if ref.is_file() else None


def list_bundled_configs() -> list[str]:
    ref = resources.files("w2s").joinpath("configs")
    return sorted(p.name[:-5] for p in ref.iterdir() if p.name.endswith(".toml"))


def _coerce(value, typ, key: str):
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be a boolean")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    return value


def config_from_doc(doc: dict, *, default_experiment_id: str | None = None) -> ExperimentConfig:
    """Build a config from a nested plain-data document, defaulting the rest."""
    plain: dict = {}
    opt: dict = {}
    for section, content in doc.items():
        if isinstance(content, dict):
            items = [((section, key), value) for key, value in content.items()]
        else:
            items = [(("", section), content)]
        for (sec, key), value in items:
            label = f"{sec}.{key}" if sec else key
            if (sec, key) not in _KEYMAP:
                raise ConfigError(f"unknown config key {label}")
            name, typ = _KEYMAP[(sec, key)]
            value = _coerce(value, typ, label)
            if name in _OPTIMIZER_FIELDS:
                opt[name] = value
            else:
                plain[name] = value
    if plain.get("weak_model_id") == "":
        plain["weak_model_id"] = None
    if "experiment_id" not in plain and default_experiment_id:
        plain["experiment_id"] = default_experiment_id
    config = ExperimentConfig(**plain)
    if opt:
        config.optimizer = OptimizerConfig(**{**asdict(config.optimizer), **opt})
    return config


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment config; unset keys keep protocol defaults."""
    path = Path(path)
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"invalid TOML in {path}: {e}") from None
    return config_from_doc(doc, default_experiment_id=path.stem)


def apply_overrides(config: ExperimentConfig, assignments: list[str]) -> ExperimentConfig:
    """Apply "section.key=value" override strings on top of a config."""
    plain: dict = {}
    opt: dict = {}
    for raw in assignments:
        if "=" not in raw:
            raise ConfigError(f"override {raw!r} is not of the form key=value")
        label, text = raw.split("=", 1)
        label = label.strip()
        sec, _, key = label.rpartition(".")
        if (sec, key) not in _KEYMAP:
            raise ConfigError(f"unknown config key {label}")
        name, typ = _KEYMAP[(sec, key)]
        try:
            if typ is bool:
                if text.strip().lower() not in ("true", "false"):
                    raise ValueError
                value = text.strip().lower() == "true"
            else:
                value = typ(text.strip())
        except ValueError:
            raise ConfigError(f"{label} must be of type {typ.__name__}") from None
        if name in _OPTIMIZER_FIELDS:
            opt[name] = value
        else:
            plain[name] = value
    if plain.get("weak_model_id") == "":
        plain["weak_model_id"] = None
    out = replace(config, **plain) if plain else config
    if opt:
        out = replace(out, optimizer=OptimizerConfig(**{**asdict(out.optimizer), **opt}))
    return out


def _float_cell(v: float) -> str:
    return float(v).hex()


def records_to_csv(experiment_id: str, records: list[EvalRecord]) -> str:
    """Pinned 10-column CSV with hex-float numeric cells."""
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in records:
        writer.writerow([
            experiment_id, r.task_id, r.weak_model_id, r.seed,
            _float_cell(r.weak_true_err), _float_cell(r.w2s_true_err),
            _float_cell(r.misfit), _float_cell(r.gain),
            "" if r.epsilon_hat is None else _float_cell(r.epsilon_hat),
            r.n_eval,
        ])
    return buf.getvalue()


def records_from_csv(text: str):
    """Parse the pinned CSV; returns (experiment_ids, records) row-aligned.

    Standard-error fields are not part of the CSV and come back as None.
    """
    reader = csv.reader(_stdio.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("empty CSV") from None
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {header!r}")
    experiment_ids, records = [], []
    for row in reader:
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise ValueError(f"CSV row has {len(row)} cells, expected {len(CSV_COLUMNS)}")
        experiment_ids.append(row[0])
        records.append(EvalRecord(
            task_id=int(row[1]), weak_model_id=row[2], seed=int(row[3]),
            weak_true_err=float.fromhex(row[4]), w2s_true_err=float.fromhex(row[5]),
            misfit=float.fromhex(row[6]), gain=float.fromhex(row[7]),
            epsilon_hat=None if row[8] == "" else float.fromhex(row[8]),
            n_eval=int(row[9]),
        ))
    return experiment_ids, records


def _record_to_doc(r: EvalRecord) -> dict:
    return asdict(r)


def _record_from_doc(d: dict) -> EvalRecord:
    return EvalRecord(**d)


def _report_to_doc(rep: BoundReport) -> dict:
    return asdict(rep)


def result_to_doc(result: ExperimentResult, *, bound_reports: list[BoundReport] | None = None,
                  embed_models: bool = False) -> dict:
    doc = {
        "schema_version": RESULT_SCHEMA_VERSION,
        "experiment_id": result.config.experiment_id,
        "gt_fingerprint": result.gt_fingerprint,
        "config": config_to_doc(result.config),
        "provenance": result.provenance,
        "wall_seconds": result.wall_seconds,
        "created_unix": result.created_unix,
        "records": [_record_to_doc(r) for r in result.records],
        "heads": {
            "weak": [head_to_doc(h) for h in result.weak_heads],
            "w2s": [head_to_doc(h) for h in result.w2s_heads],
        },
        "bound_reports": [_report_to_doc(b) for b in (bound_reports or [])],
    }
    if embed_models:
        doc["models"] = {
            "h_star": mlp_to_doc(result.h_star),
            "h_w": mlp_to_doc(result.h_w),
            "h_s": mlp_to_doc(result.h_s),
        }
    return doc


class ResultDoc:
    """A result document loaded back from disk, with typed accessors."""

    def __init__(self, doc: dict, base_dir: Path | None = None) -> None:
        if not isinstance(doc, dict) or doc.get("schema_version") != RESULT_SCHEMA_VERSION:
            raise ValueError(f"unsupported result schema (want version {RESULT_SCHEMA_VERSION})")
        self.doc = doc
        self.base_dir = base_dir

    @property
    def experiment_id(self) -> str:
        return self.doc["experiment_id"]

    @property
    def gt_fingerprint(self) -> str:
        return self.doc["gt_fingerprint"]

    def config(self) -> ExperimentConfig:
        return config_from_doc(self.doc["config"])

    def records(self) -> list[EvalRecord]:
        return [_record_from_doc(d) for d in self.doc["records"]]

    def heads(self, role: str):
        return [head_from_doc(d) for d in self.doc["heads"][role]]

    def model(self, name: str):
        """A serialized network, from the document or a sibling models/ dir."""
        models = self.doc.get("models") or {}
        if name in models:
            return mlp_from_doc(models[name])
        if self.base_dir is not None:
            path = self.base_dir / "models" / f"{name}.json"
            if path.is_file():
                with open(path, "r", encoding="utf-8") as fh:
                    return mlp_from_doc(json.load(fh))
        raise FileNotFoundError(
            f"model {name!r} is neither embedded in the result nor at models/{name}.json")


def load_result(path) -> ResultDoc:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return ResultDoc(doc, base_dir=path.parent)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    """What a run consumed and produced, with content hashes for the outputs
    that are deterministic given the config."""

    experiment_id: str
    config_path: str
    config_sha256: str
    gt_fingerprint: str
    records_csv_sha256: str
    files: list[str]
    wall_seconds: float
    created_unix: float

    def to_doc(self) -> dict:
        return asdict(self)


def write_run_outputs(result: ExperimentResult, out_dir, *, config_path: str = "",
                      config_bytes: bytes = b"", bound_reports: list[BoundReport] | None = None,
                      embed_models: bool = False) -> RunManifest:
    """Write records.csv, result.json, models/, and manifest.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "models").mkdir(exist_ok=True)

    csv_text = records_to_csv(result.config.experiment_id, result.records)
    (out / "records.csv").write_bytes(csv_text.encode())

    doc = result_to_doc(result, bound_reports=bound_reports, embed_models=embed_models)
    with open(out / "result.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")

    for name, net in (("h_star", result.h_star), ("h_w", result.h_w), ("h_s", result.h_s)):
        with open(out / "models" / f"{name}.json", "w", encoding="utf-8") as fh:
            json.dump(mlp_to_doc(net), fh)
            fh.write("\n")

    manifest = RunManifest(
        experiment_id=result.config.experiment_id,
        config_path=str(config_path),
        config_sha256=sha256_hex(config_bytes),
        gt_fingerprint=result.gt_fingerprint,
        records_csv_sha256=sha256_hex(csv_text.encode()),
        files=["records.csv", "result.json", "models/h_star.json",
               "models/h_w.json", "models/h_s.json", "manifest.json"],
        wall_seconds=result.wall_seconds,
        created_unix=time.time(),
    )
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest.to_doc(), fh, indent=1)
        fh.write("\n")
    return manifest
