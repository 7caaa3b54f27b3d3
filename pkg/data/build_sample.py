"""Build the sample dataset in data/sample/ from sample_scene.json."""

import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent))

from inverse_renderer.dataset import synthesize_dataset, write_dataset  # noqa: E402
from inverse_renderer.renderer import Camera  # noqa: E402
from inverse_renderer.scene_file import load_scene  # noqa: E402
from inverse_renderer.training import build_bundle  # noqa: E402

data_dir = pathlib.Path(__file__).parent
scene_path = data_dir / "sample_scene.json"
out_dir = data_dir / "sample"

scene = load_scene(str(scene_path))
bundle = build_bundle(scene, ground_truth=True)
cameras = [
    Camera(tuple(c["position"]), tuple(c["look_at"]), tuple(c["up"]), c["fov"], c["width"], c["height"])
    for c in scene.cameras
]
dataset = synthesize_dataset(bundle, cameras)
write_dataset(out_dir, dataset)

# Verify
for i, view in enumerate(dataset.views):
    hits = int(view.mask.sum()) if view.mask is not None else 0
    print(f"  view {i}: {view.image.shape[1]}x{view.image.shape[0]}, {hits} foreground pixels")

print("\nSample dataset created successfully at:", out_dir)
