"""Raw estimator output -> aligned :class:`PoseSequence`.

Raw channel files are ``.npz`` archives with the arrays

* ``pos2d``   (L, J, 2) image coordinates
* ``pos3d``   (L, J, 3) camera-space joint positions
* ``rot_aa``  (L, J, 3) per-joint axis-angle rotations, or ``rot6d`` (L, J, 6)
* ``pelvis``  (3,) or (L, 3) pelvis position (only frame 0 is used)
* ``expression`` (L, E), optional
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .rotation import axis_angle_to_6d
from .sequence import PoseSequence, align_2d, align_3d_root

REQUIRED_KEYS = ("pos2d", "pos3d", "pelvis")


def preprocess_arrays(arrays: dict, label: int = -1, seq_id: str = "") -> PoseSequence:
    missing = [k for k in REQUIRED_KEYS if k not in arrays]
    if missing:
        raise ValueError(f"raw pose is missing {missing}")
    if "rot6d" in arrays:
        rot6d = np.asarray(arrays["rot6d"], dtype=np.float64)
    elif "rot_aa" in arrays:
        rot6d = axis_angle_to_6d(arrays["rot_aa"])
    else:
        raise ValueError("raw pose needs 'rot_aa' or 'rot6d'")
    pelvis = np.asarray(arrays["pelvis"], dtype=np.float64)
    root = pelvis[0] if pelvis.ndim == 2 else pelvis
    expr = arrays.get("expression")
    seq = PoseSequence(
        pos2d=np.asarray(arrays["pos2d"], dtype=np.float32),
        pos3d=np.asarray(arrays["pos3d"], dtype=np.float32),
        rot6d=rot6d.astype(np.float32),
        expression=None if expr is None else np.asarray(expr, dtype=np.float32),
        root=root.astype(np.float32),
        label=label,
        id=seq_id,
    )
    # rotations and expression are kept as estimated
    return align_3d_root(align_2d(seq), root=root)


def preprocess_file(path, label: int = -1) -> PoseSequence:
    path = Path(path)
    with np.load(path) as z:
        arrays = {k: z[k] for k in z.files}
    return preprocess_arrays(arrays, label=label, seq_id=path.stem)
