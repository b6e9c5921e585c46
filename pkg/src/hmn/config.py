"""Run configuration: one flat record covering architecture, optimizer, data.

Loaded from UTF-8 JSON. Unknown keys are rejected so typos fail loudly.
Dataset-dependent fields (image size, channels, class count, normalization
constants) may be left null and are filled in by resolve().
"""

import dataclasses
import json
from dataclasses import dataclass

# per-dataset (image_size, channels, classes, mean, std); the normalization
# constants are fixed here rather than recomputed so runs are reproducible
_DATASET_INFO = {
    "cifar10": ((32, 32), 3, 10, [0.4914, 0.4822, 0.4465], [0.2470, 0.2435, 0.2616]),
    "fashion_mnist": ((28, 28), 1, 10, [0.2860], [0.3530]),
    "synth_blobs": ((16, 16), 1, None, [0.5], [0.5]),
}


@dataclass
class RunConfig:
    # architecture
    patch_size: int = 4
    d_emb: int = 64
    d_lat: int = 64
    n_blocks: int = 4
    k: int = 3
    mlp_ratio: int = 2
    k_local: int = 500
    k_global: int = 200
    t_steps: int = 1
    beta_init: float = 0.2
    use_norm: bool = True
    write_sample: int = 4
    # optimizer
    lr: float = 1e-3
    warmup_epochs: int = 5
    epochs: int = 60
    batch_size: int = 128
    weight_decay: float = 5e-5
    # data
    dataset: str = "synth_blobs"
    data_dir: str = ""
    fraction: float = 1.0
    imbalance_ratio: float = 1.0
    augment: bool = True
    num_classes: int = None
    image_size: list = None
    in_channels: int = None
    norm_mean: list = None
    norm_std: list = None
    synth_classes: int = 2
    synth_train_per_class: int = 200
    synth_test_per_class: int = 50
    # run
    seed: int = 0
    out_dir: str = "runs/default"

    def resolve(self):
        """Fill dataset-dependent nulls and validate; returns self."""
        if self.dataset not in _DATASET_INFO:
            raise ValueError(f"unknown dataset {self.dataset!r}; choose from {sorted(_DATASET_INFO)}")
        size, chans, classes, mean, std = _DATASET_INFO[self.dataset]
        if self.image_size is None:
            self.image_size = list(size)
        if self.in_channels is None:
            self.in_channels = chans
        if self.num_classes is None:
            self.num_classes = classes if classes is not None else self.synth_classes
        if self.norm_mean is None:
            self.norm_mean = list(mean)
        if self.norm_std is None:
            self.norm_std = list(std)
        self.image_size = [int(v) for v in self.image_size]
        self.validate()
        return self

    def validate(self):
        h, w = self.image_size
        p = self.patch_size
        if h % p or w % p:
            raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
        if self.k % 2 == 0 or self.k < 1:
            raise ValueError(f"window size k must be odd and positive, got {self.k}")
        n_tokens = (h // p) * (w // p)
        if not 1 <= self.write_sample <= n_tokens:
            raise ValueError(f"write_sample must be in [1, {n_tokens}], got {self.write_sample}")
        if self.t_steps < 0:
            raise ValueError(f"t_steps must be nonnegative, got {self.t_steps}")
        positives = ["patch_size", "d_emb", "d_lat", "n_blocks", "mlp_ratio",
                     "lr", "epochs", "batch_size", "num_classes", "in_channels"]
        for name in positives:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.k_local < self.num_classes or self.k_global < self.num_classes:
            raise ValueError("memory banks need at least one slot per class")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.imbalance_ratio < 1.0:
            raise ValueError(f"imbalance_ratio must be >= 1, got {self.imbalance_ratio}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if len(self.norm_mean) != self.in_channels or len(self.norm_std) != self.in_channels:
            raise ValueError("normalization constants must have one entry per channel")

    @property
    def grid_shape(self):
        return self.image_size[0] // self.patch_size, self.image_size[1] // self.patch_size

    @property
    def n_tokens(self):
        hp, wp = self.grid_shape
        return hp * wp

    def to_json(self):
        """Canonical form: sorted keys, no whitespace; stable across reruns.

        Filesystem locations (data_dir, out_dir) are dropped: they describe
        where a run happened, not what was run, so two runs of the same
        experiment snapshot identically wherever their files land.
        """
        d = dataclasses.asdict(self)
        d.pop("data_dir", None)
        d.pop("out_dir", None)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


def config_from_dict(d):
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**d).resolve()


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as e:
            raise ValueError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ValueError("config root must be a JSON object")
    return config_from_dict(raw)
