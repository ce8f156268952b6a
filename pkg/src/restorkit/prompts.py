"""Two-branch prompt processor over image embeddings.

The semantic branch (3 linear layers) produces the conditioning token for
cross-attention; the degradation branch (2 linear layers) produces the gate
prompt consumed by the control and refinement blocks; a single linear
classifier over the degradation prompt supplies the guidance loss. Hidden
widths equal each branch's output width.
"""

import torch
from torch import nn

from .errors import ShapeError


class _BranchMLP(nn.Module):
    """n linear layers; all but the last followed by LayerNorm + LeakyReLU."""

    def __init__(self, in_dim: int, out_dim: int, layers: int, slope: float):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        mods = []
        d = in_dim
        for i in range(layers):
            mods.append(nn.Linear(d, out_dim))
            d = out_dim
            if i < layers - 1:
                mods.append(nn.LayerNorm(out_dim))
                mods.append(nn.LeakyReLU(slope))
        self.net = nn.Sequential(*mods)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"branch expects input dim {self.in_dim}, got {x.shape[-1]}"
            )
        return self.net(x)


class PromptProcessor(nn.Module):
    def __init__(self, embed_dim: int, style_dim: int = 768, deg_dim: int = 256,
                 num_kinds: int = 8, leaky_slope: float = 0.2):
        super().__init__()
        if style_dim == deg_dim:
            raise ShapeError("style and degradation dims must differ")
        self.embed_dim = embed_dim
        self.style_dim = style_dim
        self.deg_dim = deg_dim
        self.num_kinds = num_kinds
        self.b_s = _BranchMLP(embed_dim, style_dim, layers=3, slope=leaky_slope)
        self.b_d = _BranchMLP(embed_dim, deg_dim, layers=2, slope=leaky_slope)
        self.classifier = nn.Linear(deg_dim, num_kinds)

    def semantic_branch(self, p_clip: torch.Tensor) -> torch.Tensor:
        return self.b_s(p_clip)

    def degradation_branch(self, p_clip: torch.Tensor) -> torch.Tensor:
        return self.b_d(p_clip)

    def classify(self, p_d: torch.Tensor) -> torch.Tensor:
        if p_d.shape[-1] != self.deg_dim:
            raise ShapeError(
                f"classifier expects dim {self.deg_dim}, got {p_d.shape[-1]}"
            )
        return self.classifier(p_d)

    def deg_guidance_loss(self, p_d: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        """Cross-entropy of the kind classifier on the degradation prompt."""
        labels = torch.as_tensor(labels)
        if labels.ndim == 0:
            labels = labels.reshape(1)
        if ((labels < 0) | (labels >= self.num_kinds)).any():
            raise ShapeError(
                f"labels must lie in [0, {self.num_kinds}), got {labels.tolist()}"
            )
        logits = self.classify(p_d if p_d.ndim > 1 else p_d[None])
        return torch.nn.functional.cross_entropy(logits, labels)


def expected_param_counts(embed_dim: int, style_dim: int, deg_dim: int, num_kinds: int) -> dict[str, int]:
    """Closed-form parameter counts for the architecture audit.

    Each branch: linear layers (in*out + out) plus LayerNorms (2*out each)
    after every non-final layer.
    """
    b_s = (
        (embed_dim * style_dim + style_dim)
        + 2 * (style_dim * style_dim + style_dim)
        + 2 * (2 * style_dim)
    )
    b_d = (
        (embed_dim * deg_dim + deg_dim)
        + (deg_dim * deg_dim + deg_dim)
        + 1 * (2 * deg_dim)
    )
    c = deg_dim * num_kinds + num_kinds
    return {"b_s": b_s, "b_d": b_d, "classifier": c}
