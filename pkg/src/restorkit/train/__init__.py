"""Training stages and shared plumbing."""

from .common import Ledger, ModelBundle, load_bundle, load_split, require_checkpoint
from .stage1 import Stage1Models, combine_stage1, stage1_loss_terms, train_stage1
from .stage1 import ledger_total as stage1_ledger_total
from .stage2 import ledger_total as stage2_ledger_total
from .stage2 import train_stage2

__all__ = [
    "Ledger",
    "ModelBundle",
    "Stage1Models",
    "combine_stage1",
    "load_bundle",
    "load_split",
    "require_checkpoint",
    "stage1_loss_terms",
    "stage1_ledger_total",
    "stage2_ledger_total",
    "train_stage1",
    "train_stage2",
]
