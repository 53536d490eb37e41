"""One synthetic intersection scene, its importance labels and its raster.

    python demos/02_scenes.py
"""
import numpy as np

from icare.scenegen import CHANNELS, generate_scene, importance_oracle, rasterize

scene = generate_scene(seed=7, scene_id=3)
ego = scene.ego
print(f"ego at ({ego.x:.1f}, {ego.y:.1f}) m, {ego.speed:.1f} m/s, intends to go {ego.intent}")
print("heading change per step (deg):", np.round(scene.gt_path, 2).tolist())

labels, distances = importance_oracle(scene)
print(f"\n{len(scene.users)} road users")
for u, important, d in zip(scene.users, labels, distances):
    tag = "IMPORTANT" if important else ""
    print(f"  {u.id:2d} {u.kind:10s} at ({u.x:6.1f}, {u.y:6.1f})  {u.speed:4.1f} m/s  closest {d:6.2f} m  {tag}")

alt = sum(u.important_alt for u in scene.users)
print(f"main annotator marks {scene.n_important}, second annotator marks {alt}")

raster = rasterize(scene)
print(f"\nraster {raster.shape}, channels {list(CHANNELS)}")
for uid, box in zip(raster.user_ids, raster.user_boxes):
    print(f"  user {uid}: cells x {box.x_min:.0f}-{box.x_max:.0f}, y {box.y_min:.0f}-{box.y_max:.0f}")
