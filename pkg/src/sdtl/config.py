"""Run configuration: ``key = value`` text files with ``#`` comments."""
import dataclasses
from dataclasses import dataclass, fields

from sdtl.denoiser import DitConfig
from sdtl.errors import ConfigError

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    # denoiser
    depth: int = 6
    embed_dim: int = 384
    heads: int = 6
    patch: int = 4
    # diffusion
    T: int = 200
    ddim_steps: int = 10
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    # optimisation
    lr: float = 5e-4
    batch: int = 8
    crop: int = 256
    epochs: int = 1000
    step_size: int = 50
    gamma: float = 0.90
    lambda_hf: float = 0.1
    seed: int = 0
    ckpt_every: int = 50
    # SEM / structure widths
    band_width: int = 32
    gate_ratio: int = 4
    # ablations
    no_sem: bool = False
    no_sem_enhance: bool = False
    no_sem_fusion: bool = False
    no_sab: bool = False

    def __post_init__(self):
        positive = ["depth", "embed_dim", "heads", "patch", "T", "ddim_steps", "batch", "crop",
                    "epochs", "step_size", "band_width", "gate_ratio", "ckpt_every"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.lambda_hf < 0:
            raise ConfigError(f"lambda_hf must be non-negative, got {self.lambda_hf}")
        if self.crop % (4 * self.patch):
            raise ConfigError(f"crop {self.crop} must be divisible by 4 * patch = {4 * self.patch}")
        if self.ddim_steps > self.T:
            raise ConfigError(f"ddim_steps {self.ddim_steps} exceeds T = {self.T}")
        self.dit  # validates depth/heads split

    @property
    def dit(self):
        return DitConfig.for_depth(self.depth, embed_dim=self.embed_dim, heads=self.heads,
                                   patch=self.patch, sab=not self.no_sab)

    @property
    def use_sem_enhance(self):
        return not (self.no_sem or self.no_sem_enhance)

    @property
    def use_sem_fusion(self):
        return not (self.no_sem or self.no_sem_fusion)

    def replace(self, **overrides):
        return dataclasses.replace(self, **overrides)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, source="<config>"):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
            try:
                values[key] = parse_value(types[key], value)
            except ValueError:
                raise ConfigError(
                    f"{source}:{lineno}: bad value {value!r} for key {key!r}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read(), source=str(path))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def parse_value(typ, value):
    if typ in (bool, "bool"):
        v = value.lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ValueError(value)
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def tiny_config(**overrides):
    """The desk-scale configuration used by the learning experiment."""
    base = dict(depth=2, embed_dim=96, heads=6, patch=4, T=200, band_width=16,
                batch=4, crop=64, lr=1e-3, step_size=300, gamma=0.75, ckpt_every=1000)
    base.update(overrides)
    return RunConfig(**base)
