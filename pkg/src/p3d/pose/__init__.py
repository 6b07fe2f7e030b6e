from .io import Dataset, FormatError, Sample, load_dataset, read_sequence, write_manifest, write_sequence
from .layout import (
    PART_ORDER,
    REPRESENTATIONS,
    PartLayout,
    assemble_features,
    assemble_frame_features,
    feature_width,
    joint_width,
    normalize_reps,
)
from .preprocess import preprocess_arrays, preprocess_file
from .rotation import axis_angle_to_6d, axis_angle_to_matrix, matrix_to_6d, sixd_to_matrix
from .sequence import (
    PoseSequence,
    align_2d,
    align_3d_root,
    eval_chunk_starts,
    sample_eval_chunks,
    sample_train_chunk,
    train_chunk_indices,
)
from .synthetic import SyntheticSpec, generate_sequences, generate_synthetic_dataset

__all__ = [
    "Dataset", "FormatError", "Sample", "load_dataset", "read_sequence", "write_manifest", "write_sequence",
    "PART_ORDER", "REPRESENTATIONS", "PartLayout", "assemble_features", "assemble_frame_features",
    "feature_width", "joint_width", "normalize_reps", "preprocess_arrays", "preprocess_file",
    "axis_angle_to_6d", "axis_angle_to_matrix", "matrix_to_6d", "sixd_to_matrix",
    "PoseSequence", "align_2d", "align_3d_root", "eval_chunk_starts", "sample_eval_chunks",
    "sample_train_chunk", "train_chunk_indices",
    "SyntheticSpec", "generate_sequences", "generate_synthetic_dataset",
]
