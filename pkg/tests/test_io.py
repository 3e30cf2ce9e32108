"""Config parsing, overrides, CSV/JSON round trips, and run manifests.

The CSV contract matters most: numeric cells are hex floats so that a parse
of an emit is bit-exact and identical runs serialize to identical bytes.
"""

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from w2s.io import (CSV_COLUMNS, ResultDoc, apply_overrides,
                    bundled_config_path, config_from_doc, list_bundled_configs,
                    load_config, load_result, records_from_csv, records_to_csv,
                    result_to_doc, sha256_hex, write_run_outputs)
from w2s.metrics import EvalRecord
from w2s.pipeline import ConfigError, ExperimentConfig, run_w2s_experiment
from w2s.rng import Rng

from test_pipeline import tiny_config


def sample_records(n=3, with_epsilon=True):
    rng = Rng(40, (600,))
    out = []
    for i in range(n):
        w, c = rng.normal(5.0, 1.0), abs(rng.normal(1.0, 0.2))
        out.append(EvalRecord.from_distances(
            i, abs(w), abs(w) * 0.4, c, 2000, weak_model_id="wm-a", seed=42,
            epsilon_hat=(0.01 * i if with_epsilon else None)))
    return out


# --- TOML configs ---------------------------------------------------------------


def test_partial_toml_keeps_protocol_defaults(tmp_path):
    path = tmp_path / "short.toml"
    path.write_text('master_seed = 9\n[finetune]\ntasks = 5\n')
    config = load_config(path)
    assert config.master_seed == 9
    assert config.finetune_tasks == 5
    assert config.sigma == 500.0  # untouched default
    assert config.optimizer.epochs == 1000
    assert config.experiment_id == "short"  # defaults to the file stem


def test_explicit_experiment_id_beats_stem(tmp_path):
    path = tmp_path / "file.toml"
    path.write_text('experiment_id = "named"\n')
    assert load_config(path).experiment_id == "named"


def test_unknown_keys_are_rejected_by_name(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('[archs]\nbogus = 3\n')
    with pytest.raises(ConfigError, match="unknown config key archs.bogus"):
        load_config(path)


def test_type_mismatches_are_rejected(tmp_path):
    path = tmp_path / "types.toml"
    path.write_text('[finetune]\ntasks = "many"\n')
    with pytest.raises(ConfigError, match="finetune.tasks must be an integer"):
        load_config(path)
    path.write_text('[data]\nsigma = true\n')
    with pytest.raises(ConfigError, match="data.sigma must be a number"):
        load_config(path)
    path.write_text('[eval]\nshared_sample = 1\n')
    with pytest.raises(ConfigError, match="eval.shared_sample must be a boolean"):
        load_config(path)


def test_malformed_toml_names_the_file(tmp_path):
    path = tmp_path / "broken.toml"
    path.write_text("[unclosed\n")
    with pytest.raises(ConfigError, match="broken.toml"):
        load_config(path)


def test_config_doc_round_trip():
    from w2s.pipeline import config_to_doc
    config = tiny_config(epsilon_enabled=True, weak_model_id="wm-x")
    assert config_from_doc(config_to_doc(config)) == config


def test_empty_weak_model_id_means_unset():
    assert config_from_doc({"finetune": {"weak_model_id": ""}}).weak_model_id is None


# --- overrides ------------------------------------------------------------------


def test_overrides_replace_fields_without_mutating():
    base = ExperimentConfig()
    out = apply_overrides(base, ["finetune.tasks=7", "data.sigma=2.5",
                                 "optimizer.epochs=3", "archs.reverse_roles=true"])
    assert (out.finetune_tasks, out.sigma) == (7, 2.5)
    assert out.optimizer.epochs == 3 and out.optimizer.lr == 1e-3
    assert out.reverse_roles is True
    assert base.finetune_tasks == 100 and base.optimizer.epochs == 1000


def test_override_validation_messages():
    base = ExperimentConfig()
    with pytest.raises(ConfigError, match="not of the form"):
        apply_overrides(base, ["finetune.tasks"])
    with pytest.raises(ConfigError, match="unknown config key nope.key"):
        apply_overrides(base, ["nope.key=1"])
    with pytest.raises(ConfigError, match="finetune.tasks must be of type int"):
        apply_overrides(base, ["finetune.tasks=soon"])
    with pytest.raises(ConfigError, match="archs.reverse_roles"):
        apply_overrides(base, ["archs.reverse_roles=maybe"])


def test_override_toplevel_and_empty_id():
    out = apply_overrides(ExperimentConfig(), ["master_seed=3",
                                               "finetune.weak_model_id="])
    assert out.master_seed == 3
    assert out.weak_model_id is None


# --- CSV ------------------------------------------------------------------------


def test_csv_round_trip_is_bit_exact():
    records = sample_records()
    text = records_to_csv("exp", records)
    ids, back = records_from_csv(text)
    assert ids == ["exp"] * len(records)
    assert back == records  # EvalRecord equality covers every CSV field
    # standard errors are not CSV columns; record equality ignores nothing,
    # so the fixtures must not carry them in the first place
    assert all(r.se_weak is None for r in back)


def test_csv_header_is_pinned():
    text = records_to_csv("exp", sample_records(1))
    assert text.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert CSV_COLUMNS == ("experiment_id", "task_id", "weak_model_id", "seed",
                           "weak_true_err", "w2s_true_err", "misfit", "gain",
                           "epsilon_hat", "n_eval")


def test_csv_serialization_is_byte_deterministic():
    a = records_to_csv("exp", sample_records())
    b = records_to_csv("exp", sample_records())
    assert a.encode() == b.encode()


def test_csv_cells_are_hex_floats():
    rec = sample_records(1)[0]
    row = records_to_csv("exp", [rec]).splitlines()[1].split(",")
    assert row[4] == rec.weak_true_err.hex()
    assert float.fromhex(row[7]) == rec.gain


def test_missing_epsilon_serializes_as_empty_cell():
    text = records_to_csv("exp", sample_records(1, with_epsilon=False))
    row = text.splitlines()[1].split(",")
    assert row[8] == ""
    _, back = records_from_csv(text)
    assert back[0].epsilon_hat is None


def test_csv_rejects_malformed_input():
    with pytest.raises(ValueError, match="empty CSV"):
        records_from_csv("")
    with pytest.raises(ValueError, match="unexpected CSV header"):
        records_from_csv("a,b,c\n1,2,3\n")
    good = records_to_csv("exp", sample_records(1))
    header, row = good.splitlines()
    with pytest.raises(ValueError, match="cells"):
        records_from_csv(header + "\n" + row + ",extra\n")


# --- result documents -----------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_result():
    return run_w2s_experiment(tiny_config())


def test_result_doc_round_trip(tiny_result):
    doc = json.loads(json.dumps(result_to_doc(tiny_result, embed_models=True)))
    loaded = ResultDoc(doc)
    assert loaded.experiment_id == "tiny"
    assert loaded.gt_fingerprint == tiny_result.gt_fingerprint
    assert loaded.config() == tiny_result.config
    assert loaded.records() == tiny_result.records
    for role, heads in (("weak", tiny_result.weak_heads),
                        ("w2s", tiny_result.w2s_heads)):
        for back, orig in zip(loaded.heads(role), heads):
            assert np.array_equal(back.weights, orig.weights)
            assert back.bias == orig.bias
    assert np.array_equal(loaded.model("h_star").theta, tiny_result.h_star.theta)


def test_result_doc_rejects_other_schema(tiny_result):
    doc = result_to_doc(tiny_result)
    doc["schema_version"] = 99
    with pytest.raises(ValueError, match="schema"):
        ResultDoc(doc)


def test_unembedded_model_requires_sibling_directory(tiny_result):
    doc = json.loads(json.dumps(result_to_doc(tiny_result)))
    with pytest.raises(FileNotFoundError, match="h_star"):
        ResultDoc(doc).model("h_star")


# --- run outputs ----------------------------------------------------------------


def test_write_run_outputs_layout(tmp_path, tiny_result):
    manifest = write_run_outputs(tiny_result, tmp_path, config_path="cfg.toml",
                                 config_bytes=b"x = 1\n")
    for name in manifest.files:
        assert (tmp_path / name).is_file()
    csv_bytes = (tmp_path / "records.csv").read_bytes()
    assert manifest.records_csv_sha256 == sha256_hex(csv_bytes)
    assert manifest.config_sha256 == sha256_hex(b"x = 1\n")
    assert manifest.gt_fingerprint == tiny_result.gt_fingerprint

    on_disk = json.loads((tmp_path / "manifest.json").read_text())
    assert on_disk["records_csv_sha256"] == manifest.records_csv_sha256

    loaded = load_result(tmp_path / "result.json")
    assert loaded.records() == tiny_result.records
    # models were not embedded, but live in the sibling directory
    assert np.array_equal(loaded.model("h_w").theta, tiny_result.h_w.theta)


def test_rerun_writes_identical_records_csv(tmp_path, tiny_result):
    write_run_outputs(tiny_result, tmp_path / "a")
    write_run_outputs(run_w2s_experiment(tiny_config()), tmp_path / "b")
    assert ((tmp_path / "a" / "records.csv").read_bytes()
            == (tmp_path / "b" / "records.csv").read_bytes())


# --- bundled scenarios ----------------------------------------------------------


def test_bundled_scenarios_are_complete_and_loadable():
    names = list_bundled_configs()
    assert names == sorted(["realizable", "pretrain", "perturb",
                            "reversal_pretrain", "reversal_perturb",
                            "lowsample", "nonconvex_sigmoid", "nonconvex_tanh",
                            "nonconvex_relu"])
    for name in names:
        path = bundled_config_path(name)
        assert path is not None
        config = load_config(path)
        config.validate()
        assert config.experiment_id == name
        assert config.master_seed == 42


def test_bundled_lookup_misses_return_none():
    assert bundled_config_path("no_such_scenario") is None
