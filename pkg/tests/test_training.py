import dataclasses
import json

import numpy as np
import pytest

from inverse_renderer import training
from inverse_renderer.autodiff import ParameterStore, Tape
from inverse_renderer.dataset import Dataset, View, synthesize_dataset
from inverse_renderer.illumination import EnvironmentLights, env_map_export
from inverse_renderer.material import MaterialOverride
from inverse_renderer.metrics import env_map_mse, mse, psnr
from inverse_renderer.renderer import Camera, render_image
from inverse_renderer.scene_file import parse_scene, serialize_scene
from inverse_renderer.sg_math import fibonacci_directions
from inverse_renderer.training import (
    CHECKPOINT_MAGIC,
    Batch,
    DivergenceError,
    apply_stage_flags,
    build_bundle,
    edit_material,
    environment_from_image,
    fit,
    load_checkpoint,
    relight,
    save_checkpoint,
    total_loss,
)


def _cameras(scene):
    return [Camera(tuple(c["position"]), tuple(c["look_at"]), tuple(c["up"]), c["fov"], c["width"], c["height"]) for c in scene.cameras]


@pytest.fixture
def dataset(gt_bundle, scene):
    return synthesize_dataset(gt_bundle, _cameras(scene), env_size=(16, 8))


@pytest.fixture
def train_cfg(scene):
    return dataclasses.replace(scene.train_config(), use_boundary=False)


def test_build_bundle_registers_groups(scene):
    bundle = build_bundle(scene)
    names = bundle.store.names()
    assert bundle.geometry_groups == ["geometry.sphere1.radius"]
    assert bundle.env.amplitude_name in names
    assert any(n.startswith("indirect.") for n in names)
    assert any(n.startswith("material.") for n in names)
    assert bundle.env.count == 8


def test_ground_truth_bundle_uses_scene_materials(gt_bundle):
    sample = gt_bundle.materials.forward(np.array([[0.0, 1.0, 0.0]]))
    np.testing.assert_allclose(sample.albedo[0], [0.8, 0.3, 0.2])


def test_total_loss_terms(learned_bundle, camera, train_cfg):
    origins, dirs = camera.generate_rays()
    target = np.zeros((origins.shape[0], 3))
    terms = total_loss(learned_bundle, Batch(origins, dirs, target), train_cfg, Tape())
    assert terms.rec > 0.0
    assert terms.kl >= 0.0 and terms.smooth >= 0.0
    expected = train_cfg.lambda_rec * terms.rec + train_cfg.lambda_kl * terms.kl + train_cfg.lambda_smooth * terms.smooth
    assert float(np.asarray(terms.total.value)) == pytest.approx(expected)


def test_total_loss_rejects_fully_masked_batch(learned_bundle, camera, train_cfg):
    origins, dirs = camera.generate_rays()
    batch = Batch(origins, dirs, np.zeros_like(origins), np.zeros(origins.shape[0], dtype=bool))
    with pytest.raises(ValueError, match="unmasked"):
        total_loss(learned_bundle, batch, train_cfg, Tape())


def test_fit_with_zero_steps_leaves_bundle_untouched(learned_bundle, dataset, train_cfg):
    before = learned_bundle.store.snapshot()
    result = fit(learned_bundle, dataset, dataclasses.replace(train_cfg, steps=0))
    assert result.trace == [] and result.final_loss is None
    for name, values in before.items():
        np.testing.assert_array_equal(learned_bundle.store.value(name), values)


def test_fit_records_a_trace(learned_bundle, dataset, train_cfg, tmp_path):
    seen = []
    path = tmp_path / "fit.ckpt"
    cfg = dataclasses.replace(train_cfg, checkpoint_path=str(path))
    result = fit(learned_bundle, dataset, cfg, callback=seen.append)
    assert [r.step for r in result.trace] == [0, 1, 2]
    assert seen == result.trace
    assert result.final_loss == result.trace[-1].total
    assert set(result.trace[0].to_dict()) == {"step", "rec", "kl", "smooth", "total", "elapsed_ms", "boundary_flips"}
    assert learned_bundle.store.step_count == 3
    assert path.read_bytes().startswith(CHECKPOINT_MAGIC)


def test_fit_rejects_empty_dataset(learned_bundle, train_cfg):
    with pytest.raises(ValueError, match="at least one view"):
        fit(learned_bundle, Dataset(), train_cfg)


def test_fit_with_boundary_term(learned_bundle, dataset, scene):
    result = fit(learned_bundle, dataset, scene.train_config())
    assert len(result.trace) == 3
    assert all(np.isfinite(r.total) for r in result.trace)


def test_fit_raises_on_divergence(learned_bundle, dataset, train_cfg, monkeypatch):
    def explode(store, lr):
        name = learned_bundle.env.amplitude_name
        store.set_value(name, store.value(name) + 50.0)
        store.zero_grad()

    monkeypatch.setattr(training, "adam_step", explode)
    cfg = dataclasses.replace(train_cfg, steps=10, divergence_patience=2)
    with pytest.raises(DivergenceError) as excinfo:
        fit(learned_bundle, dataset, cfg)
    assert len(excinfo.value.trace) == 3


def test_uniform_weights_zero_and_freeze_the_indirect_head(learned_bundle, train_cfg):
    apply_stage_flags(learned_bundle, dataclasses.replace(train_cfg, uniform_weights=True, freeze_env=True))
    store = learned_bundle.store
    for name in learned_bundle.indirect.mlp.layers[-1]:
        assert not np.any(store.value(name))
    assert all(store.groups[n].frozen for n in learned_bundle.indirect.group_names)
    assert all(store.groups[n].frozen for n in learned_bundle.env.group_names)
    assert not any(store.groups[n].frozen for n in learned_bundle.geometry_groups)


@pytest.mark.slow
def test_full_batch_fit_reduces_the_loss(learned_bundle, dataset, train_cfg):
    cfg = dataclasses.replace(train_cfg, steps=30, batch_rays=10_000, learning_rate=0.02)
    result = fit(learned_bundle, dataset, cfg)
    assert result.trace[-1].rec < result.trace[0].rec


def test_checkpoint_round_trip(learned_bundle, camera, tmp_path):
    store = learned_bundle.store
    store.set_value("geometry.sphere1.radius", [0.45])
    store.groups[learned_bundle.env.sharpness_name].frozen = True
    store.step_count = 17
    path = tmp_path / "model.ckpt"
    save_checkpoint(learned_bundle, path)

    loaded = load_checkpoint(path)
    assert loaded.store.names() == store.names()
    for name in store.names():
        np.testing.assert_array_equal(loaded.store.value(name), store.value(name))
    assert loaded.store.groups[learned_bundle.env.sharpness_name].frozen
    assert loaded.store.step_count == 17
    assert serialize_scene(loaded.scene) == serialize_scene(learned_bundle.scene)
    np.testing.assert_allclose(render_image(loaded, camera).image, render_image(learned_bundle, camera).image)


def test_load_checkpoint_errors(learned_bundle, scene_dict, tmp_path):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")

    bogus = tmp_path / "bogus.ckpt"
    bogus.write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(ValueError, match="Not a checkpoint"):
        load_checkpoint(bogus)

    path = tmp_path / "model.ckpt"
    save_checkpoint(learned_bundle, path)
    raw = path.read_bytes()

    future = tmp_path / "future.ckpt"
    future.write_bytes(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(future)

    truncated = tmp_path / "truncated.ckpt"
    truncated.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="Truncated"):
        load_checkpoint(truncated)

    scene_dict["networks"]["indirect_hidden"] = [6]
    mismatched = tmp_path / "mismatched.ckpt"
    save_checkpoint(build_bundle(parse_scene(json.dumps(scene_dict))), mismatched)
    data = mismatched.read_bytes()
    # Same-length edit of the stored scene: the rebuilt network no longer fits the saved groups.
    patched = data.replace(b'"indirect_hidden": [6]', b'"indirect_hidden": [8]')
    assert patched != data
    mismatched.write_bytes(patched)
    with pytest.raises(ValueError, match="values, scene expects"):
        load_checkpoint(mismatched)


def test_relight_swaps_the_environment(learned_bundle, camera):
    base = render_image(learned_bundle, camera)
    brighter = EnvironmentLights.constant(ParameterStore(), learned_bundle.env.directions, 2.0)
    relit = relight(learned_bundle, brighter, camera)
    miss = ~relit.hit_mask
    assert np.mean(relit.image[miss]) > np.mean(base.image[miss])
    np.testing.assert_array_equal(relit.hit_mask, base.hit_mask)


def test_relight_rejects_light_count_mismatch(learned_bundle, camera):
    other = EnvironmentLights.constant(ParameterStore(), fibonacci_directions(4))
    with pytest.raises(ValueError, match="8 lights, got 4"):
        relight(learned_bundle, other, camera)


def test_environment_from_image_keeps_the_axes(learned_bundle):
    env = environment_from_image(learned_bundle, np.full((8, 16, 3), 0.3))
    np.testing.assert_array_equal(env.axes, learned_bundle.env.axes)


def test_edit_material_overrides_decoded_values(learned_bundle, camera):
    result = edit_material(learned_bundle, MaterialOverride(albedo=(0.1, 0.2, 0.3), roughness=0.7), camera)
    hits = result.hit_mask
    np.testing.assert_allclose(result.albedo[hits], np.tile([0.1, 0.2, 0.3], (int(hits.sum()), 1)))
    np.testing.assert_allclose(result.roughness[hits], 0.7)
    with pytest.raises(ValueError):
        edit_material(learned_bundle, MaterialOverride(roughness=2.0), camera)


def test_relight_is_linear_in_light_amplitude(learned_bundle, camera):
    directions = learned_bundle.env.directions
    sharpness, amplitude = learned_bundle.env.values()
    base = relight(learned_bundle, EnvironmentLights.from_values(ParameterStore(), directions, sharpness, amplitude), camera)
    doubled = EnvironmentLights.from_values(ParameterStore(), directions, sharpness, 2.0 * amplitude)
    relit = relight(learned_bundle, doubled, camera)
    hits = base.hit_mask
    assert hits.any()
    np.testing.assert_array_equal(relit.hit_mask, hits)
    np.testing.assert_allclose(relit.image[hits], 2.0 * base.image[hits], rtol=1e-12, atol=0.0)


def test_fresnel_scale_sweep_adds_specular_energy(gt_bundle, camera):
    energy = []
    for scale in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0):
        result = edit_material(gt_bundle, MaterialOverride(fresnel_scale=scale), camera)
        energy.append(float(np.sum(result.image[result.hit_mask])))
    assert np.all(np.diff(energy) > 0.0)


def test_roughness_sweep_sharpens_the_highlight(scene_dict):
    scene_dict["geometry"]["primitives"] = scene_dict["geometry"]["primitives"][1:]
    scene_dict["materials"] = scene_dict["materials"][1:]
    bundle = build_bundle(parse_scene(json.dumps(scene_dict)), ground_truth=True)

    # One sharp light behind the camera; the sphere point facing it is the mirror point.
    axes = bundle.env.axes
    key = int(np.argmax(axes[:, 1]))
    sharpness = np.ones(bundle.env.count)
    sharpness[key] = 20.0
    amplitude = np.full((bundle.env.count, 3), 0.01)
    amplitude[key] = 3.0
    bundle.env.set_values(sharpness, amplitude)
    center = np.array([0.0, 0.5, 0.0])
    camera = Camera(tuple(center + 3.0 * axes[key]), tuple(center), (0.0, 1.0, 0.0), 30.0, 33, 33)

    peaks = []
    for roughness in (1.0, 0.7, 0.5, 0.3, 0.2, 0.1):
        result = edit_material(bundle, MaterialOverride(roughness=roughness), camera)
        peaks.append(float(np.max(np.sum(result.image[result.hit_mask], axis=-1))))
    assert np.all(np.diff(peaks) >= 0.0)
    assert peaks[-1] > peaks[0]


def _sky_amplitudes(count, seed):
    dirs = fibonacci_directions(count).vectors
    rng = np.random.default_rng(seed)
    sky = 0.2 + 1.5 * np.maximum(dirs[:, 1], 0.0)
    return (sky[:, None] * rng.uniform(0.6, 1.0, size=(count, 3))).tolist()


def _sphere_on_plane(scene_dict, lights, size, radius=0.5):
    scene_dict["geometry"]["primitives"][1]["radius"] = radius
    scene_dict["environment"] = {"lights": lights, "init": "values", "amplitude": _sky_amplitudes(lights, seed=5)}
    for camera in scene_dict["cameras"]:
        camera["width"] = camera["height"] = size
    return scene_dict


def _learned_twin(scene_dict, **changes):
    scene_dict = json.loads(json.dumps(scene_dict))
    scene_dict["environment"] = {"lights": scene_dict["environment"]["lights"], "init": "constant", "radiance": 0.5}
    for key, value in changes.items():
        scene_dict["geometry"]["primitives"][1][key] = value
    return parse_scene(json.dumps(scene_dict))


@pytest.mark.slow
def test_end_to_end_fit_recovers_a_lambertian_scene(scene_dict):
    scene_dict = _sphere_on_plane(scene_dict, lights=16, size=64)
    scene_dict["cameras"].append({"position": [-2.5, 1.5, 1.5], "look_at": [0.0, 0.4, 0.0], "fov": 40.0, "width": 64, "height": 64})
    scene_dict["materials"] = [
        {"albedo": [0.6, 0.6, 0.6], "roughness": 1.0, "fresnel": [0.0, 0.0, 0.0]},
        {"albedo": [0.8, 0.3, 0.2], "roughness": 1.0, "fresnel": [0.0, 0.0, 0.0]},
    ]
    scene_dict["networks"].update({"pe_freqs": 4, "latent_dim": 8, "encoder_hidden": [32, 32], "decoder_hidden": [32]})
    truth_scene = parse_scene(json.dumps(scene_dict))
    truth = synthesize_dataset(build_bundle(truth_scene, ground_truth=True), _cameras(truth_scene))
    assert len(truth) == 3

    learned_scene = _learned_twin(scene_dict)
    bundle = build_bundle(learned_scene).replace(fresnel=np.zeros(3))
    # Background pixels see the environment directly, which pins the albedo-light scale.
    training_set = Dataset([View(v.camera, v.image) for v in truth.views], truth.env_map)
    cfg = dataclasses.replace(
        learned_scene.train_config(),
        steps=4000, batch_rays=512, learning_rate=0.01, lambda_smooth=0.01, seed=0,
        freeze_geometry=True, use_boundary=False, log_every=0, divergence_patience=4000,
    )
    fit(bundle, training_set, cfg)

    for view in truth.views:
        render = render_image(bundle, view.camera)
        assert psnr(render.image, view.image, view.mask) >= 30.0
        assert mse(render.albedo, view.albedo, view.mask) <= 1e-2
    env = env_map_export(bundle.env, truth.env_map.shape[1], truth.env_map.shape[0])
    assert env_map_mse(env, truth.env_map) <= 0.05


@pytest.mark.slow
def test_ablations_point_the_right_way(scene_dict):
    scene_dict = _sphere_on_plane(scene_dict, lights=8, size=24)
    truth_scene = parse_scene(json.dumps(scene_dict))
    truth = synthesize_dataset(build_bundle(truth_scene, ground_truth=True), _cameras(truth_scene))
    learned_scene = _learned_twin(scene_dict, radius=0.42)
    base = dataclasses.replace(
        learned_scene.train_config(), steps=200, batch_rays=128, learning_rate=0.01, boundary_pixels=8, log_every=0
    )

    def run(seed, **flags):
        bundle = build_bundle(learned_scene, seed=seed)
        result = fit(bundle, truth, dataclasses.replace(base, seed=seed, **flags))
        rec = float(np.mean([r.rec for r in result.trace[-20:]]))
        env = env_map_export(bundle.env, truth.env_map.shape[1], truth.env_map.shape[0])
        return rec, env_map_mse(env, truth.env_map)

    seeds = (0, 1, 2)
    learned = [run(s, use_boundary=False) for s in seeds]
    uniform = [run(s, use_boundary=False, uniform_weights=True) for s in seeds]
    boundary = [run(s, use_boundary=True) for s in seeds]

    assert np.mean([r for r, _ in learned]) <= np.mean([r for r, _ in uniform])
    assert np.mean([e for _, e in boundary]) <= np.mean([e for _, e in learned])
