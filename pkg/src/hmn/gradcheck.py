"""End-to-end finite-difference verification on a tiny model instance.

Builds an 8×8-input model with two blocks, fills the banks with a couple
of training batches, randomizes every parameter so no gradient path is
trivially zero (the head starts at zero otherwise), then compares
backward() against central differences for each parameter element.
"""

import numpy as np

from . import autodiff as ad
from . import data as data_mod
from .config import config_from_dict
from .model import Model

TINY = {
    "dataset": "synth_blobs", "image_size": [8, 8], "patch_size": 4,
    "d_emb": 8, "d_lat": 6, "n_blocks": 2, "k": 3, "mlp_ratio": 2,
    "k_local": 8, "k_global": 8, "t_steps": 1, "write_sample": 2,
    "synth_classes": 2, "epochs": 2, "warmup_epochs": 1, "batch_size": 4,
    "augment": False, "seed": 0,
}


def tiny_config(**overrides):
    d = dict(TINY)
    d.update(overrides)
    return config_from_dict(d)


def model_gradcheck(t_steps=1, seed=0, step=1e-5, floor=1e-6, batch=4):
    """Worst relative error between backward() and finite differences.

    Checks every learnable parameter of the tiny model with memory
    retrieval active (banks pre-filled, frozen during the check).
    """
    cfg = tiny_config(t_steps=int(t_steps))
    rng = np.random.default_rng(seed)
    model = Model(cfg, rng)
    ds = data_mod.synth_blobs(cfg.num_classes, 8, tuple(cfg.image_size), seed=seed + 1)
    # two write passes so both banks hold real embeddings before the check
    for start in (0, batch):
        x = data_mod.standardize(ds.images[start:start + batch],
                                 cfg.norm_mean, cfg.norm_std)
        model.forward(x, mode="train", labels=ds.labels[start:start + batch], rng=rng)
    model.set_frozen(True)
    params = model.parameters()
    for t in params.values():
        t.value = rng.normal(0.0, 0.3, size=t.value.shape)
    x_fix = data_mod.standardize(ds.images[:batch], cfg.norm_mean, cfg.norm_std)
    y_fix = ds.labels[:batch]

    def build():
        return ad.cross_entropy(model.forward(x_fix, mode="eval"), y_fix)

    return ad.check_gradients(build, list(params.values()), step=step, floor=floor)
