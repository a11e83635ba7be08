"""Toy causal-LM backbone plus low-rank adapters.

The backbone stays frozen for the whole curriculum; only the adapter
matrices (an A/B low-rank pair per wrapped linear layer) receive
gradients. The toy transformer exists so the training loop is exercised
end-to-end on a CPU in seconds; it is not meant to produce useful
repairs.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .data import PAD_ID, VOCAB_SIZE


class LoRALinear(nn.Module):
    """Frozen linear layer plus a trainable low-rank update."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        self.base = base
        for param in self.base.parameters():
            param.requires_grad = False
        self.rank = rank
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.empty(rank, base.in_features))
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))
        nn.init.kaiming_uniform_(self.lora_a, a=math.sqrt(5))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * (x @ self.lora_a.T @ self.lora_b.T)


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ln2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim))

    def forward(self, x: torch.Tensor, attn_mask: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        attn_out, _ = self.attn(h, h, h, attn_mask=attn_mask, need_weights=False)
        x = x + attn_out
        x = x + self.ffn(self.ln2(x))
        return x


class TinyCausalLM(nn.Module):
    def __init__(self, dim: int = 64, layers: int = 2, heads: int = 2, ffn_dim: int = 128, max_len: int = 2048):
        super().__init__()
        self.max_len = max_len
        self.tok_emb = nn.Embedding(VOCAB_SIZE, dim, padding_idx=PAD_ID)
        self.pos_emb = nn.Embedding(max_len, dim)
        self.blocks = nn.ModuleList([Block(dim, heads, ffn_dim) for _ in range(layers)])
        self.ln_f = nn.LayerNorm(dim)
        self.lm_head = nn.Linear(dim, VOCAB_SIZE, bias=False)

    def forward(self, input_ids: torch.Tensor) -> torch.Tensor:
        _, seq = input_ids.shape
        if seq > self.max_len:
            raise ValueError(f"sequence length {seq} exceeds model maximum {self.max_len}")
        pos = torch.arange(seq, device=input_ids.device)
        x = self.tok_emb(input_ids) + self.pos_emb(pos)[None, :, :]
        causal = torch.triu(
            torch.full((seq, seq), float("-inf"), device=input_ids.device), diagonal=1
        )
        for block in self.blocks:
            x = block(x, causal)
        return self.lm_head(self.ln_f(x))


def make_backbone(identifier: str) -> TinyCausalLM:
    """Backbone registry. Only small CPU-friendly models are supported;
    anything else is out of scope for this trainer."""
    if identifier == "toy":
        return TinyCausalLM()
    if identifier == "toy-wide":
        return TinyCausalLM(dim=128, layers=4, heads=4, ffn_dim=256)
    raise ValueError(f"unknown backbone identifier {identifier!r}")


def apply_adapters(model: nn.Module, rank: int, alpha: float) -> nn.Module:
    """Freeze every backbone parameter and wrap the attention output and
    feed-forward linears with low-rank adapters."""
    for param in model.parameters():
        param.requires_grad = False
    for block in model.blocks:
        block.ffn[0] = LoRALinear(block.ffn[0], rank, alpha)
        block.ffn[2] = LoRALinear(block.ffn[2], rank, alpha)
    model.lm_head = LoRALinear(model.lm_head, rank, alpha)
    return model


def adapter_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: tensor.detach().clone()
        for name, tensor in model.state_dict().items()
        if "lora_" in name
    }


def load_adapter_state(model: nn.Module, state: dict[str, torch.Tensor]) -> None:
    missing = model.load_state_dict(state, strict=False)
    unexpected = [k for k in missing.unexpected_keys]
    if unexpected:
        raise ValueError(f"adapter checkpoint has unknown tensors: {unexpected[:5]}")


def trainable_parameters(model: nn.Module):
    return [p for p in model.parameters() if p.requires_grad]


def backbone_parameters(model: nn.Module):
    return [p for p in model.parameters() if not p.requires_grad]
