"""Support-query keypoint matching network.

Pipeline: two parallel conv feature extractors (support / query branch),
heatmap-weighted pooling of support keypoint features, a transformer
interaction module (self-attention among keypoint slots, cross-attention
into query feature cells, FFN), and a shared expand-concat-deconv
matching decoder emitting one heatmap per keypoint slot.

Categories with J keypoints occupy the first J of L fixed slots; the
remaining slots hold a learned placeholder embedding and are excluded
from attention keys by the validity mask, so valid outputs never depend
on padded-slot contents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from posematch.config import ModelConfig


@dataclass
class KeypointFeatureSet:
    embeddings: Tensor  # (B, L, D)
    valid_mask: Tensor  # (B, L) bool

    def __post_init__(self) -> None:
        if self.embeddings.shape[:2] != self.valid_mask.shape:
            raise ValueError("embeddings and valid_mask disagree on (B, L)")


class ChannelNorm(nn.Module):
    """LayerNorm across channels at each spatial position.

    Purely local (unlike Group/BatchNorm), so conv features keep a finite
    receptive field, and smooth for finite-difference gradient checks.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


def _stage_strides(total_stride: int, num_stages: int) -> list[int]:
    # a fixed stride-2 stem supplies the first halving
    halvings = int(math.log2(total_stride)) - 1
    if halvings > num_stages:
        raise ValueError(f"stride {total_stride} too deep for {num_stages} stages")
    return [2 if i < halvings else 1 for i in range(num_stages)]


class ConvBackbone(nn.Module):
    """Plain staged conv encoder; smooth activations keep finite-difference
    gradient checks meaningful."""

    def __init__(self, channels: tuple[int, ...], total_stride: int):
        super().__init__()
        strides = _stage_strides(total_stride, len(channels))
        self.stem = nn.Sequential(
            nn.Conv2d(3, channels[0], 3, stride=2, padding=1),
            ChannelNorm(channels[0]),
            nn.GELU(),
        )
        stages = []
        prev = channels[0]
        for ch, stride in zip(channels, strides):
            stages.append(nn.Sequential(
                nn.Conv2d(prev, ch, 3, stride=stride, padding=1),
                ChannelNorm(ch),
                nn.GELU(),
                nn.Conv2d(ch, ch, 3, padding=1),
                ChannelNorm(ch),
                nn.GELU(),
            ))
            prev = ch
        self.stages = nn.ModuleList(stages)

    def forward(self, x: Tensor, return_stage: int | None = None) -> Tensor:
        x = self.stem(x)
        for index, stage in enumerate(self.stages, start=1):
            x = stage(x)
            if return_stage == index:
                return x
        return x


def sincos_position_embedding(dim: int, height: int, width: int,
                              dtype=torch.float32, device=None) -> Tensor:
    """Fixed 2-D sinusoidal embedding, (height*width, dim); half the
    channels encode x, half y."""
    if dim % 4 != 0:
        raise ValueError("embed dim must be divisible by 4")
    quarter = dim // 4
    omega = 1.0 / (10000.0 ** (torch.arange(quarter, dtype=torch.float64) / quarter))
    ys, xs = torch.meshgrid(
        torch.arange(height, dtype=torch.float64),
        torch.arange(width, dtype=torch.float64),
        indexing="ij",
    )
    out_x = xs.reshape(-1)[:, None] * omega[None, :]
    out_y = ys.reshape(-1)[:, None] * omega[None, :]
    emb = torch.cat([torch.sin(out_x), torch.cos(out_x),
                     torch.sin(out_y), torch.cos(out_y)], dim=1)
    return emb.to(dtype=dtype, device=device)


class InteractionBlock(nn.Module):
    """Post-norm transformer block: masked self-attn over keypoint slots,
    cross-attn into query feature tokens, then FFN."""

    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.ffn = nn.Sequential(
            nn.Linear(dim, ffn_dim), nn.GELU(), nn.Linear(ffn_dim, dim))
        self.norm_self = nn.LayerNorm(dim)
        self.norm_cross = nn.LayerNorm(dim)
        self.norm_ffn = nn.LayerNorm(dim)

    def forward(self, slots: Tensor, memory_keys: Tensor, memory_values: Tensor,
                slot_padding_mask: Tensor) -> Tensor:
        attended, _ = self.self_attn(slots, slots, slots,
                                     key_padding_mask=slot_padding_mask,
                                     need_weights=False)
        slots = self.norm_self(slots + attended)
        attended, _ = self.cross_attn(slots, memory_keys, memory_values,
                                      need_weights=False)
        slots = self.norm_cross(slots + attended)
        return self.norm_ffn(slots + self.ffn(slots))


class MatchingDecoder(nn.Module):
    """Shared per-slot decoder: 3x3 conv on [expanded slot; query features],
    stride-2 deconvs up to heatmap resolution, 1x1 conv to one channel."""

    def __init__(self, in_channels: int, width: int, deconv_count: int):
        super().__init__()
        layers: list[nn.Module] = [
            nn.Conv2d(in_channels, width, 3, padding=1),
            ChannelNorm(width),
            nn.GELU(),
        ]
        ch = width
        for _ in range(deconv_count):
            nxt = max(ch // 2, 8)
            layers += [
                nn.ConvTranspose2d(ch, nxt, 4, stride=2, padding=1),
                ChannelNorm(nxt),
                nn.GELU(),
            ]
            ch = nxt
        layers.append(nn.Conv2d(ch, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


class PoseMatcher(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c_back = config.backbone_channels[-1]
        self.support_backbone = ConvBackbone(config.backbone_channels,
                                             config.backbone_stride)
        self.query_backbone = ConvBackbone(config.backbone_channels,
                                           config.backbone_stride)
        self.slot_proj = nn.Linear(c_back, config.embed_dim)
        self.memory_proj = nn.Linear(c_back, config.embed_dim)
        self.placeholder = nn.Parameter(torch.zeros(config.embed_dim))
        self.blocks = nn.ModuleList([
            InteractionBlock(config.embed_dim, config.attention_heads,
                             config.ffn_dim)
            for _ in range(config.kim_blocks)
        ])
        self.decoder = MatchingDecoder(c_back + config.embed_dim, c_back,
                                       config.decoder_deconv_count)
        nn.init.normal_(self.placeholder, std=0.02)

    # ---- feature extraction -------------------------------------------------

    def extract_features(self, images: Tensor, which: str) -> Tensor:
        """Backbone features (B, C, h, w); support and query branches have
        separate parameters."""
        if images.dim() == 3:
            images = images.unsqueeze(0)
        if images.shape[-1] != self.config.input_size:
            raise ValueError(
                f"expected input size {self.config.input_size}, "
                f"got {tuple(images.shape)}")
        if which == "support":
            return self.support_backbone(images)
        if which == "query":
            return self.query_backbone(images)
        raise ValueError("which must be 'support' or 'query'")

    # ---- support keypoint pooling -------------------------------------------

    def pool_keypoint_features(self, support_features: Tensor,
                               support_heatmaps: Tensor,
                               valid: Tensor) -> KeypointFeatureSet:
        """Heatmap-weighted mean of upsampled support features per slot,
        projected to the embedding dim. Slots with zero heatmap mass are
        demoted to invalid; invalid slots carry the placeholder."""
        batch, num_slots = valid.shape
        res = support_heatmaps.shape[-2:]
        upsampled = F.interpolate(support_features, size=res, mode="bilinear",
                                  align_corners=True)
        mass = support_heatmaps.sum(dim=(-2, -1))  # (B, L)
        weighted = torch.einsum("bchw,blhw->blc", upsampled, support_heatmaps)
        valid = valid.bool() & (mass > 0)
        safe_mass = torch.where(mass > 0, mass, torch.ones_like(mass))
        pooled = weighted / safe_mass.unsqueeze(-1)
        embeddings = self.slot_proj(pooled)
        placeholder = self.placeholder.to(embeddings.dtype)
        embeddings = torch.where(valid.unsqueeze(-1), embeddings,
                                 placeholder.expand(batch, num_slots, -1))
        return KeypointFeatureSet(embeddings=embeddings, valid_mask=valid)

    # ---- K-shot aggregation --------------------------------------------------

    def aggregate_kshot(self, per_support: list[KeypointFeatureSet]) -> KeypointFeatureSet:
        """Per-slot mean over supports where the slot is valid.

        Computed as reference + mean(deltas) so K identical supports
        reproduce the 1-shot embeddings bit-exactly. Slots valid in no
        support become invalid and take the placeholder.
        """
        if not per_support:
            raise ValueError("K must be >= 1")
        if len(per_support) == 1:
            return per_support[0]
        emb = torch.stack([s.embeddings for s in per_support], dim=1)  # (B,K,L,D)
        valid = torch.stack([s.valid_mask for s in per_support], dim=1)  # (B,K,L)
        any_valid = valid.any(dim=1)
        count = valid.sum(dim=1).clamp(min=1)
        first = valid.float().argmax(dim=1)  # (B, L): index of first valid support
        ref = emb.gather(
            1, first[:, None, :, None].expand(-1, 1, -1, emb.shape[-1])
        ).squeeze(1)  # (B, L, D)
        deltas = (emb - ref.unsqueeze(1)) * valid.unsqueeze(-1).to(emb.dtype)
        mean = ref + deltas.sum(dim=1) / count.unsqueeze(-1).to(emb.dtype)
        placeholder = self.placeholder.to(mean.dtype)
        mean = torch.where(any_valid.unsqueeze(-1), mean,
                           placeholder.expand_as(mean))
        return KeypointFeatureSet(embeddings=mean, valid_mask=any_valid)

    # ---- keypoint interaction ------------------------------------------------

    def kim_forward(self, keypoints: KeypointFeatureSet,
                    query_features: Tensor) -> KeypointFeatureSet:
        if not keypoints.valid_mask.any(dim=1).all():
            raise ValueError("every episode needs at least one valid keypoint")
        batch, channels, height, width = query_features.shape
        tokens = query_features.flatten(2).transpose(1, 2)  # (B, hw, C)
        memory = self.memory_proj(tokens)
        pos = sincos_position_embedding(
            memory.shape[-1], height, width,
            dtype=memory.dtype, device=memory.device)
        keys = memory + pos  # position added to keys only
        slots = keypoints.embeddings
        padding_mask = ~keypoints.valid_mask
        for block in self.blocks:
            slots = block(slots, keys, memory, padding_mask)
        return KeypointFeatureSet(embeddings=slots,
                                  valid_mask=keypoints.valid_mask)

    # ---- matching head ---------------------------------------------------------

    def matching_head(self, refined: KeypointFeatureSet,
                      query_features: Tensor) -> Tensor:
        """Expand each slot embedding over the query grid, concat with the
        query features, decode to a (B, L, R, R) heatmap stack."""
        batch, channels, height, width = query_features.shape
        num_slots = refined.embeddings.shape[1]
        expanded = refined.embeddings[:, :, :, None, None].expand(
            -1, -1, -1, height, width)
        fq = query_features.unsqueeze(1).expand(-1, num_slots, -1, -1, -1)
        joint = torch.cat([expanded, fq], dim=2)
        flat = joint.reshape(batch * num_slots, -1, height, width)
        decoded = self.decoder(flat)
        res = decoded.shape[-2:]
        return decoded.reshape(batch, num_slots, *res)

    # ---- full pipeline ---------------------------------------------------------

    def forward(self, support_images: Tensor, support_heatmaps: Tensor,
                support_valid: Tensor, query_images: Tensor
                ) -> tuple[Tensor, Tensor]:
        """Batched episodes.

        support_images:   (B, K, 3, S, S)
        support_heatmaps: (B, K, L, R, R) encoded ground truth
        support_valid:    (B, K, L) bool
        query_images:     (B, 3, S, S)
        Returns predicted heatmaps (B, L, R, R) and the slot validity (B, L).
        """
        batch, k_shot = support_images.shape[:2]
        per_support = []
        for k in range(k_shot):
            features = self.extract_features(support_images[:, k], "support")
            per_support.append(self.pool_keypoint_features(
                features, support_heatmaps[:, k], support_valid[:, k]))
        keypoints = self.aggregate_kshot(per_support)
        query_features = self.extract_features(query_images, "query")
        refined = self.kim_forward(keypoints, query_features)
        heatmaps = self.matching_head(refined, query_features)
        return heatmaps, keypoints.valid_mask


# ---- checkpointing --------------------------------------------------------------


def save_checkpoint(path, model: PoseMatcher, extra: dict | None = None) -> None:
    payload = {
        "config_json": model.config.to_json(),
        "config_hash": model.config.config_hash(),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path, model_cls=PoseMatcher) -> tuple[PoseMatcher, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    config = ModelConfig.from_json(payload["config_json"])
    if config.config_hash() != payload["config_hash"]:
        raise ValueError(f"checkpoint {path}: config hash mismatch")
    model = model_cls(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
