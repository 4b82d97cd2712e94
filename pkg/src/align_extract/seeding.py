"""Named random substreams derived from one root seed."""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(root: int, *names) -> int:
    """Return a 63-bit seed for the substream ``root/names[0]/names[1]/...``.

    Substreams with different names are statistically independent, and
    adding a new name never shifts the seeds of existing ones.
    """
    entropy = [int(root) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        tag = "i" if isinstance(name, (int, np.integer)) else "s"
        entropy.append(_name_key(f"{tag}:{name}"))
    # SeedSequence zero-pads its entropy, so the length keeps (x,) and (x, 0) apart
    entropy.append(len(names))
    seq = np.random.SeedSequence(entropy)
    return int(seq.generate_state(1, dtype=np.uint64)[0]) >> 1


def substream(root: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))
