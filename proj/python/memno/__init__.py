"""Memory neural operators for partially observed PDEs."""

from ._core import (
    PdeKind,
    SolverSpec,
    StoreError,
    dataset_omega,
    evaluate_checkpoint,
    generate,
    mz,
    nrmse,
    omega_f,
    read_dataset,
    write_dataset,
)

__all__ = [
    "PdeKind",
    "SolverSpec",
    "StoreError",
    "dataset_omega",
    "evaluate_checkpoint",
    "generate",
    "mz",
    "nrmse",
    "omega_f",
    "read_dataset",
    "write_dataset",
]
