import logging

import pytest

from inverse_renderer.config import (
    AppConfig,
    RenderConfig,
    TraceConfig,
    TrainConfig,
    apply_overrides,
    setup_logging,
)


def test_defaults():
    trace = TraceConfig()
    assert trace.offset == pytest.approx(5e-3)
    trace.validate()
    TrainConfig().validate()
    assert RenderConfig().boundary_slices == 32


def test_from_env(monkeypatch):
    monkeypatch.setenv("IR_TRACE_THRESHOLD", "0.002")
    monkeypatch.setenv("IR_BOUNDARY_SLICES", "12")
    monkeypatch.setenv("IR_STEPS", "42")
    monkeypatch.setenv("IR_USE_BOUNDARY", "false")
    monkeypatch.setenv("COLORED_OUTPUT", "false")
    monkeypatch.setenv("LOG_FILE", "")

    render = RenderConfig.from_env()
    assert render.trace.threshold == 0.002
    assert render.boundary_slices == 12
    assert render.use_boundary is False
    train = TrainConfig.from_env()
    assert train.steps == 42 and train.use_boundary is False
    app = AppConfig.from_env()
    assert app.colored_output is False and app.log_file is None


@pytest.mark.parametrize(
    "changes, match",
    [
        ({"threshold": 1e-7}, "threshold > refinement_tolerance"),
        ({"max_iterations": 0}, "max_iterations"),
        ({"max_refine_steps": -1}, "max_refine_steps"),
        ({"bound_radius": 0.0}, "bound_radius"),
    ],
)
def test_trace_validation(changes, match):
    with pytest.raises(ValueError, match=match):
        TraceConfig(**changes).validate()


@pytest.mark.parametrize(
    "changes, match",
    [
        ({"lambda_kl": -1.0}, "lambda_kl"),
        ({"rho": 0.0}, "rho"),
        ({"steps": -1}, "steps"),
        ({"batch_rays": 0}, "batch_rays"),
        ({"learning_rate": 0.0}, "learning_rate"),
    ],
)
def test_train_validation(changes, match):
    with pytest.raises(ValueError, match=match):
        TrainConfig(**changes).validate()


def test_apply_overrides():
    render, train = RenderConfig(), TrainConfig()
    apply_overrides(
        {"render": render, "train": train},
        ["render.boundary_slices=4", "trace.threshold=0.01", "train.uniform_weights=yes", "train.checkpoint_path=none", "train.learning_rate=1e-3"],
    )
    assert render.boundary_slices == 4
    assert render.trace.threshold == 0.01
    assert train.uniform_weights is True
    assert train.checkpoint_path is None
    assert train.learning_rate == 1e-3


@pytest.mark.parametrize(
    "override, match",
    [
        ("render.boundary_slices", "section.key=value"),
        ("slices=4", "section.key"),
        ("camera.fov=3", "Unknown config section"),
        ("render.colour=3", "Unknown config key"),
        ("render.trace=3", "Unknown config key"),
        ("render.use_boundary=maybe", "boolean"),
        ("render.boundary_slices=many", "cannot parse"),
    ],
)
def test_apply_overrides_errors(override, match):
    with pytest.raises(ValueError, match=match):
        apply_overrides({"render": RenderConfig()}, [override])


def test_setup_logging_adds_file_handler(tmp_path, monkeypatch):
    root = logging.getLogger()
    monkeypatch.setattr(root, "handlers", [])
    path = tmp_path / "run.log"
    setup_logging(AppConfig(log_level="debug", log_file=str(path)))
    assert root.level == logging.DEBUG
    assert any(isinstance(h, logging.FileHandler) for h in root.handlers)
    for handler in root.handlers:
        handler.close()
