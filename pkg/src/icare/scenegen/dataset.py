"""On-disk synthetic corpus: scene records, raster bundle and split manifest."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from icare.errors import FormatError, UsageError
from icare.numcore.serialize import RASTER_MAGIC, RecordWriter, load_records
from icare.scenegen.generate import SceneConfig, generate_scene
from icare.scenegen.oracle import OracleConfig
from icare.scenegen.raster import Raster, rasterize
from icare.scenegen.world import Scene

TEST_FRACTION = 0.26
VAL_FRACTION = 0.12
SCENES_FILE = "scenes.jsonl"
MANIFEST_FILE = "manifest.json"
RASTER_FILE = "rasters.icrt"


def hash_unit(scene_id, salt="split"):
    digest = hashlib.blake2b(f"{salt}:{int(scene_id)}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0**64


def split_of(scene_id):
    if hash_unit(scene_id) < TEST_FRACTION:
        return "test"
    return "val" if hash_unit(scene_id, "val") < VAL_FRACTION else "train"


def scene_config_to_dict(cfg: SceneConfig):
    d = dataclasses.asdict(cfg)
    # ordered pairs: template order decides which template each draw selects
    d["template_weights"] = [[name, w] for name, w in cfg.template_weights]
    return d


def scene_config_from_dict(d):
    d = dict(d)
    d["template_weights"] = tuple((name, w) for name, w in d["template_weights"])
    d["oracle"] = OracleConfig(**d["oracle"])
    return SceneConfig(**d)


def build_manifest(scenes, seed, cfg):
    splits = {"train": [], "val": [], "test": [], "test_annotated": [], "train_unannotated": []}
    n_train_total = 0
    for scene in scenes:
        split = split_of(scene.id)
        annotated = scene.n_important > 0
        if split == "test":
            splits["test"].append(scene.id)
            if annotated:
                splits["test_annotated"].append(scene.id)
        else:
            n_train_total += 1
            if annotated:
                splits[split].append(scene.id)
            else:
                splits["train_unannotated"].append(scene.id)
    n_users = sum(len(s.users) for s in scenes)
    n_pos = sum(s.n_important for s in scenes)
    n_alt = sum(u.important_alt for s in scenes for u in s.users)
    disagree = sum(u.important != u.important_alt for s in scenes for u in s.users)
    return {
        "format": "icare-dataset/1",
        "seed": int(seed),
        "n_scenes": len(scenes),
        "config": scene_config_to_dict(cfg),
        "splits": splits,
        "stats": {
            "train_fraction": n_train_total / max(len(scenes), 1),
            "test_fraction": len(splits["test"]) / max(len(scenes), 1),
            "users": n_users,
            "positive_rate": n_pos / max(n_users, 1),
            "positive_rate_alt": n_alt / max(n_users, 1),
            "annotator_disagreement": disagree / max(n_users, 1),
        },
    }


class Dataset:
    """Scenes plus lazily computed (or loaded) float32 rasters."""

    def __init__(self, scenes, manifest, rasters=None):
        self.scenes = {s.id: s for s in scenes}
        self.manifest = manifest
        self._rasters = dict(rasters or {})
        self._boxes = {}

    @classmethod
    def generate(cls, n_scenes, seed, cfg: SceneConfig = SceneConfig()):
        if n_scenes <= 0:
            raise UsageError("n_scenes must be positive")
        scenes = [generate_scene(seed, i, cfg) for i in range(n_scenes)]
        return cls(scenes, build_manifest(scenes, seed, cfg))

    def split(self, name):
        return [self.scenes[i] for i in self.manifest["splits"][name]]

    def ids(self, name):
        return list(self.manifest["splits"][name])

    def raster(self, scene_id) -> Raster:
        scene = self.scenes[scene_id]
        if scene_id not in self._rasters or scene_id not in self._boxes:
            r = rasterize(scene)
            self._rasters.setdefault(scene_id, r.channels.astype(np.float32))
            self._boxes[scene_id] = (r.user_boxes, r.user_ids)
        boxes, ids = self._boxes[scene_id]
        return Raster(self._rasters[scene_id], boxes, ids)

    def raster_batch(self, scene_ids, dtype=np.float64):
        return np.stack([self.raster(i).channels for i in scene_ids]).astype(dtype)

    def drop_cache(self):
        self._rasters.clear()
        self._boxes.clear()

    # -- persistence -----------------------------------------------------------

    def save(self, out_dir, write_rasters=True):
        os.makedirs(out_dir, exist_ok=True)
        try:
            with open(os.path.join(out_dir, SCENES_FILE), "w") as fh:
                for sid in sorted(self.scenes):
                    fh.write(json.dumps(self.scenes[sid].to_dict(), sort_keys=True) + "\n")
            with open(os.path.join(out_dir, MANIFEST_FILE), "w") as fh:
                json.dump(self.manifest, fh, indent=1, sort_keys=True)
            if write_rasters:
                ids = sorted(self.scenes)
                with RecordWriter(os.path.join(out_dir, RASTER_FILE), len(ids), RASTER_MAGIC) as writer:
                    for sid in ids:
                        writer.write(f"scene/{sid}", self.raster(sid).channels.astype(np.float32))
        except OSError as exc:
            raise OSError(f"writing dataset to {out_dir!r} failed: {exc}") from exc

    @classmethod
    def load(cls, data_dir, load_rasters=True):
        try:
            with open(os.path.join(data_dir, MANIFEST_FILE)) as fh:
                manifest = json.load(fh)
            with open(os.path.join(data_dir, SCENES_FILE)) as fh:
                scenes = [Scene.from_dict(json.loads(line)) for line in fh if line.strip()]
        except OSError as exc:
            raise OSError(f"reading dataset from {data_dir!r} failed: {exc}") from exc
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed dataset in {data_dir!r}: {exc}") from exc
        rasters = {}
        raster_path = os.path.join(data_dir, RASTER_FILE)
        if load_rasters and os.path.exists(raster_path):
            for name, arr in load_records(raster_path, RASTER_MAGIC).items():
                rasters[int(name.split("/", 1)[1])] = arr
        return cls(scenes, manifest, rasters)


def generate_dataset(n_scenes, seed, cfg: SceneConfig = SceneConfig(), out_dir=None, write_rasters=True):
    """Generate, split and (optionally) persist a corpus; returns the in-memory :class:`Dataset`."""
    ds = Dataset.generate(n_scenes, seed, cfg)
    if out_dir is not None:
        ds.save(out_dir, write_rasters=write_rasters)
    return ds
