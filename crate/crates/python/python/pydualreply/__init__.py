"""Python bindings for the dualreply suggestion engine."""

from ._native import Run, Suggester, auc, bleu, derive_seed, engine_version

__all__ = ["Run", "Suggester", "auc", "bleu", "derive_seed", "engine_version"]
