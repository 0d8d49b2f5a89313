"""The multi-scale dual-domain denoising network."""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import functional as F
from .blocks import DDML, GFFB, BlockToggles
from .nn import Conv2d, Module
from .tensor import ContractError, Tensor, add, concat


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 16
    stages: int = 4
    blocks_per_stage: tuple = (1, 1, 1, 1)
    heads_per_stage: tuple = (1, 1, 2, 2)
    gff_ratio: float = 2.0
    toggles: BlockToggles = field(default_factory=BlockToggles)
    use_msi: bool = True
    use_gffb: bool = True
    in_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))
        object.__setattr__(self, "heads_per_stage", tuple(self.heads_per_stage))
        if isinstance(self.toggles, dict):
            object.__setattr__(self, "toggles", BlockToggles(**self.toggles))

    def channels(self, i):
        return self.base_channels * 2**i

    def validate(self):
        if self.stages < 1:
            raise ValueError(f"stages must be >= 1, got {self.stages}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        for name in ("blocks_per_stage", "heads_per_stage"):
            if len(getattr(self, name)) != self.stages:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {self.stages}")
        for i, h in enumerate(self.heads_per_stage):
            if h < 1 or self.channels(i) % h:
                raise ValueError(f"stage {i}: {self.channels(i)} channels not divisible by {h} heads")
        if any(b < 0 for b in self.blocks_per_stage):
            raise ValueError("blocks_per_stage entries must be non-negative")
        if self.gff_ratio <= 0:
            raise ValueError("gff_ratio must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["toggles"] = BlockToggles(**d.get("toggles", {}))
        return cls(**d)


ABLATION_ROWS = (
    "full",
    "no_msi",
    "no_gffb",
    "no_msi_gffb",
    "no_msl",
    "no_mfl",
    "no_aseb",
    "no_afeb",
    "no_aseb_afeb",
    "afeb_no_sep",
    "afeb_no_enh",
    "both_no_sep",
    "both_no_enh",
)

# flags cleared per row; loss flags (msl/mfl) live on LossConfig
_ROW_FLAGS = {
    "full": {},
    "no_msi": {"use_msi": False},
    "no_gffb": {"use_gffb": False},
    "no_msi_gffb": {"use_msi": False, "use_gffb": False},
    "no_msl": {},
    "no_mfl": {},
    "no_aseb": {"use_aseb": False},
    "no_afeb": {"use_afeb": False},
    "no_aseb_afeb": {"use_aseb": False, "use_afeb": False},
    "afeb_no_sep": {"use_aseb": False, "use_afeb": False, "use_separation": False},
    "afeb_no_enh": {"use_aseb": False, "use_afeb": False, "use_enhancement": False},
    "both_no_sep": {"use_separation": False},
    "both_no_enh": {"use_enhancement": False},
}

LOSS_ROW_FLAGS = {"no_msl": {"use_msl": False}, "no_mfl": {"use_mfl": False}}


def ablation_variant(cfg, row):
    """Return ``cfg`` with the toggles of one ablation-table row cleared."""
    if row not in _ROW_FLAGS:
        raise ValueError(f"unknown ablation row {row!r}; expected one of {', '.join(ABLATION_ROWS)}")
    flags = _ROW_FLAGS[row]
    model_flags = {k: v for k, v in flags.items() if k in ("use_msi", "use_gffb")}
    toggle_flags = {k: v for k, v in flags.items() if k not in model_flags}
    return replace(cfg, toggles=replace(cfg.toggles, **toggle_flags), **model_flags)


@dataclass
class ModelOutput:
    residuals: list
    restored: list


def make_pyramid(x, levels):
    """Image pyramid by successive 2x bilinear reduction; level 0 is ``x``."""
    return F.pyramid(x, levels)


class Stage(Module):
    def __init__(self, dim, n_blocks, heads, rng, cfg, dtype):
        self.blocks = [
            DDML(dim, heads, rng, cfg.toggles, cfg.gff_ratio, dtype) for _ in range(n_blocks)
        ]

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class MADNet(Module):
    """Pyramid-input / pyramid-output encoder-decoder.

    Encoder stage i: shallow 3x3 conv of pyramid level i (stage 0), or a
    stride-2 conv of the previous stage concatenated with the level-i shallow
    feature and fused by a 1x1 conv (stages >= 1, when multi-scale input is
    on), then DDMLs.  Skips go through GFFB.  The decoder upsamples
    bilinearly, halves channels with a 1x1 conv, fuses the skip by concat +
    1x1 conv and runs DDMLs.  A zero-initialised 3x3 head per scale emits the
    residual, so a fresh model is the identity restorer.
    """

    def __init__(self, cfg, rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        S = cfg.stages
        ch = [cfg.channels(i) for i in range(S)]
        kw = dict(rng=rng, dtype=dtype)

        self.shallow = [
            Conv2d(cfg.in_channels, ch[i], 3, **kw) if (i == 0 or cfg.use_msi) else None
            for i in range(S)
        ]
        self.down = [Conv2d(ch[i - 1], ch[i], 3, stride=2, **kw) for i in range(1, S)]
        self.enc_fuse = [Conv2d(2 * ch[i], ch[i], 1, **kw) for i in range(1, S)] if cfg.use_msi else []
        self.encoder = [
            Stage(ch[i], cfg.blocks_per_stage[i], cfg.heads_per_stage[i], rng, cfg, dtype)
            for i in range(S)
        ]
        self.gffb = GFFB(ch, cfg.heads_per_stage, rng, dtype) if (cfg.use_gffb and S > 1) else None
        self.up = [Conv2d(ch[i + 1], ch[i], 1, **kw) for i in range(S - 1)]
        self.dec_fuse = [Conv2d(2 * ch[i], ch[i], 1, **kw) for i in range(S - 1)]
        self.decoder = [
            Stage(ch[i], cfg.blocks_per_stage[i], cfg.heads_per_stage[i], rng, cfg, dtype)
            for i in range(S - 1)
        ]
        self.heads = [Conv2d(ch[i], cfg.in_channels, 3, zero_init=True, **kw) for i in range(S)]

    def check_pyramid(self, pyramid):
        cfg = self.cfg
        if len(pyramid) != cfg.stages:
            raise ContractError(f"expected a {cfg.stages}-level pyramid, got {len(pyramid)} levels")
        n, c, h, w = pyramid[0].shape
        if c != cfg.in_channels:
            raise ContractError(f"pyramid level 0 has {c} channels, model expects {cfg.in_channels}")
        for i, p in enumerate(pyramid):
            want = (n, c, h >> i, w >> i)
            if p.shape != want or (h >> i) << i != h or (w >> i) << i != w:
                raise ContractError(f"pyramid level {i} has shape {p.shape}, expected {want}")

    def forward(self, pyramid):
        self.check_pyramid(pyramid)
        cfg = self.cfg
        S = cfg.stages
        feats = []
        x = self.shallow[0](pyramid[0])
        for i in range(S):
            if i > 0:
                x = self.down[i - 1](feats[-1])
                if cfg.use_msi:
                    shallow = self.shallow[i](pyramid[i])
                    x = self.enc_fuse[i - 1](concat([x, shallow], axis=1))
            feats.append(self.encoder[i](x))

        skips = self.gffb(feats) if self.gffb is not None else feats
        dec = [None] * S
        dec[S - 1] = skips[S - 1]
        for i in range(S - 2, -1, -1):
            h, w = skips[i].shape[2:]
            up = self.up[i](F.resize_bilinear(dec[i + 1], h, w))
            x = self.dec_fuse[i](concat([up, skips[i]], axis=1))
            dec[i] = self.decoder[i](x)

        residuals = [self.heads[i](dec[i]) for i in range(S)]
        restored = [add(pyramid[i], residuals[i]) for i in range(S)]
        return ModelOutput(residuals, restored)

    def denoise(self, x):
        """Restore a full-resolution batch (N, C, H, W) array; returns level 0."""
        from .tensor import no_grad

        with no_grad():
            t = Tensor(np.asarray(x, dtype=self.dtype))
            out = self.forward(make_pyramid(t, self.cfg.stages))
        return out.restored[0].data


def build_model(cfg, seed=0, dtype=np.float32):
    """Deterministically initialise a model from ``cfg`` and ``seed``."""
    return MADNet(cfg, np.random.default_rng(seed), dtype)
