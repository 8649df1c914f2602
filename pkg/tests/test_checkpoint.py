import numpy as np
import pytest

from conftest import tiny_model_config
from dptrn.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from dptrn.data_loading import Standardizer
from dptrn.errors import ConfigurationError, DataError
from dptrn.layers import EVAL
from dptrn.model import DptrnModel


@pytest.fixture
def trained_model(tiny_batch):
    model = DptrnModel(tiny_model_config(), seed=4)
    model.train()
    model.zero_grad()
    model.loss_and_backward(*tiny_batch)
    model.p_query += 0.25
    return model.eval()


def test_round_trip_reproduces_logits(tmp_path, trained_model, tiny_batch):
    standardizer = Standardizer(mean=np.array([0.5, -1.0, 2.0]), std=np.array([1.0, 2.0, 0.5]))
    path = save_checkpoint(tmp_path / "model.dptrn", trained_model, standardizer, metadata={"selected_epoch": 3})

    loaded = load_checkpoint(path, expected=tiny_model_config())

    assert loaded.model.mode == EVAL
    assert loaded.metadata == {"selected_epoch": 3}
    np.testing.assert_array_equal(loaded.standardizer.mean, standardizer.mean)
    np.testing.assert_array_equal(loaded.standardizer.std, standardizer.std)
    np.testing.assert_array_equal(loaded.model.logits(tiny_batch[0]), trained_model.logits(tiny_batch[0]))
    for name, array in trained_model.state_dict().items():
        np.testing.assert_array_equal(loaded.model.state_dict()[name], array)


def test_saving_twice_gives_identical_bytes(tmp_path, trained_model):
    first = save_checkpoint(tmp_path / "a.dptrn", trained_model, metadata={"seed": 0})
    second = save_checkpoint(tmp_path / "b.dptrn", trained_model, metadata={"seed": 0})
    assert first.read_bytes() == second.read_bytes()
    assert first.read_bytes().startswith(MAGIC)


def test_without_standardizer(tmp_path, trained_model):
    loaded = load_checkpoint(save_checkpoint(tmp_path / "m.dptrn", trained_model))
    assert loaded.standardizer is None


@pytest.mark.parametrize("change", [{"T": 5}, {"M": 2}, {"C": 4}, {"variant": "ablation_a"}, {"relation_hidden": (8, 8)}])
def test_mismatched_config_is_rejected(tmp_path, trained_model, change):
    path = save_checkpoint(tmp_path / "m.dptrn", trained_model)
    with pytest.raises(ConfigurationError):
        load_checkpoint(path, expected=tiny_model_config(**change))


def test_dropout_rate_is_not_compared(tmp_path, trained_model):
    path = save_checkpoint(tmp_path / "m.dptrn", trained_model)
    assert load_checkpoint(path, expected=tiny_model_config(dropout_rate=0.3)).model.config.dropout_rate == 0.0


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.dptrn")


def test_foreign_file(tmp_path):
    path = tmp_path / "notes.txt"
    path.write_text("hello\n")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_truncated_payload(tmp_path, trained_model):
    path = save_checkpoint(tmp_path / "m.dptrn", trained_model)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="ends inside"):
        load_checkpoint(path)


def test_trailing_bytes(tmp_path, trained_model):
    path = save_checkpoint(tmp_path / "m.dptrn", trained_model)
    path.write_bytes(path.read_bytes() + b"\0" * 8)
    with pytest.raises(DataError, match="trailing"):
        load_checkpoint(path)


def test_flatten_baseline_round_trip(tmp_path, tiny_batch):
    model = DptrnModel(tiny_model_config(variant="flatten_mlp"), seed=1).eval()
    loaded = load_checkpoint(save_checkpoint(tmp_path / "f.dptrn", model))
    assert loaded.model.relation is None
    np.testing.assert_array_equal(loaded.model.logits(tiny_batch[0]), model.logits(tiny_batch[0]))
