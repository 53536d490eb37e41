"""A desk-sized run of the whole pipeline: path network, then fusion heads A and C.

Mode A scores users from appearance alone; mode C adds location and the
path network's context feature. On a few hundred scenes C should already
score higher. Takes a few minutes on one core.

    python demos/04_small_ablation.py
"""
from icare import evaluation
from icare.fusion import FusionConfig
from icare.numcore import AdamConfig
from icare.pathnet import PathNetConfig, path_error_by_step, train_pathnet
from icare.proposer import ProposerNet
from icare.scenegen import Dataset

ds = Dataset.generate(600, seed=7)
print({name: len(ds.ids(name)) for name in ("train", "val", "test")})

path = train_pathnet(ds, PathNetConfig(epochs=6, adam=AdamConfig(lr=0.001)), seed=0, log=print)
err = path_error_by_step(path.net, ds, ds.ids("test"))
print("mean abs heading error per step (deg):", [round(float(e), 2) for e in err])

# oracle proposals: one box per road user, so the proposer's weights only feed appearance
table = evaluation.run_ablation(ds, ProposerNet(0), path.net, modes=("A", "C"), seeds=(0,),
                                fusion_config=FusionConfig(epochs=10, adam=AdamConfig(lr=0.001)))
for row in table.rows:
    print(f"mode {row.mode}: F1 all frames {row.f1_all:.3f}, annotated frames {row.f1_annotated:.3f}, "
          f"second annotator {row.f1_alt_all:.3f}")
