import json

import pytest

from inverse_renderer.scene_file import (
    DEFAULT_LIGHTS,
    NETWORK_DEFAULTS,
    SceneFileError,
    load_scene,
    parse_scene,
    resolve_path,
    save_scene,
    serialize_scene,
)

MINIMAL = {
    "geometry": {"primitives": [{"type": "sphere"}]},
    "cameras": [{"position": [0.0, 0.0, -3.0]}],
}


def _line_containing(text, needle):
    return next(i for i, line in enumerate(text.splitlines(), start=1) if needle in line)


def test_serialized_scene_parses_back_equal(scene):
    assert parse_scene(serialize_scene(scene)) == scene


def test_save_and_load(scene, tmp_path):
    path = tmp_path / "copy.json"
    save_scene(scene, str(path))
    loaded = load_scene(str(path))
    assert loaded == scene
    assert loaded.source_path == str(path)


def test_defaults_fill_missing_sections():
    scene = parse_scene(json.dumps(MINIMAL))
    assert scene.light_count == DEFAULT_LIGHTS
    assert scene.environment["init"] == "constant"
    assert scene.networks == NETWORK_DEFAULTS
    assert scene.materials == []
    camera = scene.cameras[0]
    assert camera["up"] == [0.0, 1.0, 0.0] and camera["width"] == 64 and camera["fov"] == 40.0
    assert scene.geometry["primitives"][0] == {"type": "sphere", "center": [0.0, 0.0, 0.0], "radius": 1.0, "trainable": False}
    assert scene.train_config().steps == 2000


def test_config_sections_reach_the_dataclasses(scene):
    assert scene.render_config().boundary_slices == 8
    assert scene.train_config().batch_rays == 32
    assert scene.trace_config().threshold == 1e-3


def test_unknown_key_names_key_and_line(scene_dict):
    scene_dict["geometry"]["primitives"][1]["colour"] = "red"
    text = json.dumps(scene_dict, indent=2)
    with pytest.raises(SceneFileError) as excinfo:
        parse_scene(text)
    assert excinfo.value.key == "colour"
    assert excinfo.value.line == _line_containing(text, '"colour"')
    assert "line" in str(excinfo.value)


def test_duplicate_key_reports_second_occurrence():
    text = '{\n  "seed": 1,\n  "geometry": {"primitives": [{"type": "sphere"}]},\n  "cameras": [{"position": [0, 0, -3]}],\n  "seed": 2\n}'
    with pytest.raises(SceneFileError, match="Duplicate key") as excinfo:
        parse_scene(text)
    assert excinfo.value.key == "seed" and excinfo.value.line == 5


def test_malformed_json_reports_line():
    with pytest.raises(SceneFileError, match="Malformed JSON") as excinfo:
        parse_scene('{\n  "geometry": {,\n}')
    assert excinfo.value.line == 2


@pytest.mark.parametrize(
    "edit, match",
    [
        (lambda d: d.pop("cameras"), "Missing section"),
        (lambda d: d.update(lighting={}), "Unknown top-level"),
        (lambda d: d["geometry"].update(type="mesh"), "analytic"),
        (lambda d: d["geometry"].update(primitives=[]), "non-empty"),
        (lambda d: d["geometry"]["primitives"][0].update(type="torus"), "Primitive type"),
        (lambda d: d["geometry"]["primitives"][0].update(radius=-1.0), "positive"),
        (lambda d: d.update(environment={"lights": 0}), "Light count"),
        (lambda d: d.update(environment={"init": "pfm"}), "needs a 'path'"),
        (lambda d: d.update(environment={"lights": 2, "init": "values", "amplitude": [[1, 1, 1]]}), "amplitude rows"),
        (lambda d: d["cameras"][0].update(fov=180.0), "fov"),
        (lambda d: d["cameras"][0].pop("position"), "position"),
        (lambda d: d.update(materials=[{"roughness": 0.0}]), "out of range"),
        (lambda d: d.update(networks={"indirect_hidden": [0]}), "layer widths"),
        (lambda d: d.update(train={"steps": "ten"}), "Expected a number"),
        (lambda d: d.update(train={"use_boundary": 1}), "true or false"),
        (lambda d: d.update(train={"rho": 2.0}), "rho"),
        (lambda d: d.update(render={"trace": {}}), "Unknown key"),
        (lambda d: d.update(seed=1.5), "Seed"),
    ],
)
def test_schema_violations(edit, match):
    raw = json.loads(json.dumps(MINIMAL))
    edit(raw)
    with pytest.raises(SceneFileError, match=match):
        parse_scene(json.dumps(raw, indent=2))


def test_values_environment():
    raw = dict(MINIMAL, environment={"lights": 2, "init": "values", "sharpness": [2.0, 3.0], "amplitude": [[1, 0, 0], [0, 1, 0]]})
    env = parse_scene(json.dumps(raw)).environment
    assert env["amplitude"] == [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    assert env["sharpness"] == [2.0, 3.0]


def test_load_scene_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scene(str(tmp_path / "none.json"))


def test_resolve_path_is_relative_to_the_scene_file(scene_path, tmp_path):
    scene = load_scene(str(scene_path))
    assert resolve_path(scene, "env.pfm") == tmp_path / "env.pfm"
    assert resolve_path(scene, str(tmp_path / "abs.pfm")) == tmp_path / "abs.pfm"
    assert resolve_path(parse_scene(json.dumps(MINIMAL)), "env.pfm").name == "env.pfm"
