import pytest

from dcasgd.config import (ConfigError, DcAsgdAdaptive, ExperimentConfig, FixedComputeTime, format_config,
                           parse_config, validate)
from dcasgd.model import ModelSpec


def errors_of(text, overrides=()):
    with pytest.raises(ConfigError) as ei:
        parse_config(text, overrides)
    return dict(ei.value.errors)


def test_defaults_and_round_trip():
    c = parse_config("")
    assert c == ExperimentConfig()
    assert parse_config(format_config(c)) == c


def test_full_round_trip():
    text = """
    optimizer.kind = dc-asgd-a   # comment
    optimizer.lambda0 = 2
    optimizer.m = 0.9
    cluster.workers = 3
    delay.kind = fixed
    delay.times = 1, 2, 3.5
    model.kind = mlp
    model.h = 5
    schedule.decay_epochs = 4,8
    """
    c = parse_config(text)
    assert c.optimizer == DcAsgdAdaptive(2.0, 0.9)
    assert c.delay == FixedComputeTime((1.0, 2.0, 3.5))
    assert c.model == ModelSpec.mlp(20, 5, 10)
    assert parse_config(format_config(c)) == c
    assert validate(c) == c


def test_overrides_win():
    c = parse_config("seed = 1", ["seed=5", "cluster.workers = 4"])
    assert (c.seed, c.M) == (5, 4)


def test_digest_ignores_output_dir():
    c = ExperimentConfig()
    assert c.digest() == c.with_(output_dir="elsewhere").digest() != c.with_(seed=1).digest()


@pytest.mark.parametrize("text, field", [
    ("bogus = 1", "bogus"),
    ("cluster.workers = 0", "cluster.workers"),
    ("cluster.workers = 2.5", "cluster.workers"),
    ("optimizer.kind = adam", "optimizer.kind"),
    ("optimizer.kind = dc-asgd-a\noptimizer.m = 1.0", "optimizer"),
    ("delay.kind = fixed", "delay.times"),
    ("cluster.workers = 2\ndelay.kind = fixed\ndelay.times = 1", "delay.times"),
    ("cluster.workers = 2\ndelay.kind = stochastic\ndelay.means = 1,-1", "delay.means"),
    ("delay.kind = poisson", "delay.kind"),
    ("train.minibatch = -3", "train.minibatch"),
    ("schedule.eta0 = 0", "schedule"),
    ("optimizer.kind = sequential\ncluster.workers = 2", "cluster.workers"),
    ("dataset.kind = csv", "dataset.path"),
    ("dataset.S = 3\ncluster.workers = 4", "cluster.workers"),
    ("model.kind = rnn", "model"),
    ("schedule.eta0 = fast", "schedule.eta0"),
])
def test_field_errors(text, field):
    assert field in errors_of(text)


def test_errors_are_collected_together():
    errs = errors_of("train.epochs = 0\ntrain.minibatch = 0\nnonsense = 1")
    assert {"train.epochs", "train.minibatch", "nonsense"} <= set(errs)


def test_malformed_lines():
    assert "line 1" in errors_of("just words")
    with pytest.raises(ConfigError):
        parse_config("", ["novalue"])
