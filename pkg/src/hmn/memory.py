"""Class-balanced prototype storage with per-class ring-buffer replacement.

Each class owns a fixed contiguous range of slots. Writes go to the class
cursor and wrap, so the newest capacity[c] embeddings for a class are
always present. Slots never carry gradients; callers hand in plain arrays.
"""

import numpy as np


class FrozenBankError(RuntimeError):
    pass


class MemoryBank:
    def __init__(self, num_classes, total_slots, dim):
        if total_slots < num_classes:
            raise ValueError(f"need at least one slot per class: K={total_slots} < C={num_classes}")
        if num_classes < 1 or dim < 1:
            raise ValueError("num_classes and dim must be positive")
        self.num_classes = int(num_classes)
        self.total_slots = int(total_slots)
        self.dim = int(dim)
        base, extra = divmod(self.total_slots, self.num_classes)
        # the K mod C remainder goes one slot each to the lowest class ids
        self.per_class_capacity = np.full(self.num_classes, base, dtype=np.int64)
        self.per_class_capacity[:extra] += 1
        self.class_start = np.zeros(self.num_classes, dtype=np.int64)
        self.class_start[1:] = np.cumsum(self.per_class_capacity)[:-1]
        self.slots = np.zeros((self.total_slots, self.dim), dtype=np.float64)
        self.slot_class = np.repeat(
            np.arange(self.num_classes, dtype=np.int64), self.per_class_capacity)
        self.cursor = np.zeros(self.num_classes, dtype=np.int64)
        self.filled = np.zeros(self.num_classes, dtype=np.int64)
        self.frozen = False

    def write(self, embedding, class_id):
        """Copy one detached embedding into the class's next ring slot."""
        if self.frozen:
            raise FrozenBankError("write to a frozen bank")
        c = int(class_id)
        if not 0 <= c < self.num_classes:
            raise ValueError(f"class {c} out of range [0, {self.num_classes})")
        emb = np.asarray(embedding, dtype=np.float64).reshape(-1)
        if emb.shape != (self.dim,):
            raise ValueError(f"embedding dim {emb.shape} != ({self.dim},)")
        cap = self.per_class_capacity[c]
        self.slots[self.class_start[c] + self.cursor[c]] = emb
        self.cursor[c] = (self.cursor[c] + 1) % cap
        if self.filled[c] < cap:
            self.filled[c] += 1

    def freeze(self):
        self.frozen = True

    def thaw(self):
        self.frozen = False

    @property
    def any_filled(self):
        return bool(self.filled.sum() > 0)

    def filled_view(self):
        """(slots, slot_class, mask) at full width K; mask marks written slots.

        Slot indices are stable across training, so analysis can track a
        slot over time.
        """
        mask = np.zeros(self.total_slots, dtype=bool)
        for c in range(self.num_classes):
            mask[self.class_start[c]:self.class_start[c] + self.filled[c]] = True
        return self.slots, self.slot_class, mask

    # checkpoint plumbing; arrays are copied on both paths
    def state_dict(self):
        return {
            "num_classes": self.num_classes,
            "total_slots": self.total_slots,
            "dim": self.dim,
            "slots": self.slots.copy(),
            "cursor": self.cursor.copy(),
            "filled": self.filled.copy(),
            "frozen": np.array([1 if self.frozen else 0], dtype=np.int64),
        }

    @classmethod
    def from_state(cls, state):
        bank = cls(int(state["num_classes"]), int(state["total_slots"]), int(state["dim"]))
        if state["slots"].shape != bank.slots.shape:
            raise ValueError("bank state shape mismatch")
        bank.slots[:] = state["slots"]
        bank.cursor[:] = state["cursor"]
        bank.filled[:] = state["filled"]
        bank.frozen = bool(int(np.asarray(state["frozen"]).reshape(-1)[0]))
        return bank
