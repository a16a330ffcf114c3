"""Full model: wavelet conditioning with SEM at both levels, diffusion on the
level-2 low band, and two-level inverse wavelet reconstruction.

Public entry points take images in [0, 1] laid out (3, H, W) or (B, 3, H, W);
``build_condition`` and ``diffusion_target`` work on the [-1, 1] data range.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sdtl import tensor as T
from sdtl.checkpoint import load_checkpoint, save_checkpoint
from sdtl.config import RunConfig
from sdtl.data import ImageBuf, random_crop_pair
from sdtl.denoiser import Denoiser
from sdtl.diffusion import ddim_sample, make_linear_schedule, training_loss
from sdtl.errors import ConfigError, InputError
from sdtl.layers import Conv2d, Module, ModuleList
from sdtl.metrics import psnr, ssim
from sdtl.optim import Adam, StepLR
from sdtl.sem import SEM
from sdtl.structure import StructurePrior, sobel_edge
from sdtl.tensor import Tensor, no_grad
from sdtl.wavelet import SubbandSet, dwt2, dwt2_level2, iwt2

log = logging.getLogger(__name__)

LL_GAIN = 4.0  # two Haar LL stages, gain 2 each

# checkpoint name predicates for each ablation's parameter group
ABLATION_GROUPS = {
    "no_sem": lambda n: n.startswith(("sem1.", "sem2.")),
    "no_sem_enhance": lambda n: n.startswith(("sem1.enhance.", "sem2.enhance.")),
    "no_sem_fusion": lambda n: n.startswith(("sem1.fusion.", "sem2.fusion.")),
    "no_sab": lambda n: ".sab." in n or n.startswith("denoiser.struct_embed."),
}


@dataclass
class Condition:
    cond: Tensor       # (B, 3, H/4, W/4)
    enh1: tuple        # enhanced level-1 high bands, (B, W_b, H/2, W/2) each
    enh2: tuple        # enhanced level-2 high bands, (B, W_b, H/4, W/4) each
    smaps: object      # StructureMaps or None


class SdtlModel(Module):
    def __init__(self, cfg, rng=None):
        super().__init__()
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        width = cfg.band_width
        sem_on = cfg.use_sem_enhance or cfg.use_sem_fusion
        self.needs_structure = cfg.use_sem_enhance or not cfg.no_sab
        if self.needs_structure:
            self.structure = StructurePrior(rng, width)
        self.stem1 = ModuleList(Conv2d(rng, 3, width) for _ in range(3))
        self.stem2 = ModuleList(Conv2d(rng, 3, width) for _ in range(3))
        if sem_on:
            self.sem1 = SEM(rng, width, width, cfg.use_sem_enhance, cfg.use_sem_fusion, cfg.gate_ratio)
            self.sem2 = SEM(rng, width, width, cfg.use_sem_enhance, cfg.use_sem_fusion, cfg.gate_ratio)
        self.sem_on = sem_on
        self.compress = Conv2d(rng, 3 * width, 3)
        self.head1 = ModuleList(Conv2d(rng, width, 3) for _ in range(3))
        self.head2 = ModuleList(Conv2d(rng, width, 3) for _ in range(3))
        grid = cfg.crop // 4 // cfg.patch
        self.schedule = make_linear_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
        self.denoiser = Denoiser(rng, cfg.dit, width, (grid, grid), cfg.T)

    def forward(self, x_low):
        return build_condition(x_low, self)


def _batched(x):
    x = T.as_tensor(x)
    return (T.reshape(x, (1,) + x.shape), True) if x.ndim == 3 else (x, False)


def condition_from_bands(model, level1, level2, smaps):
    """Condition from the low-light high bands only; the LL planes are never read."""
    s1 = smaps.s1 if smaps is not None else None
    s2 = smaps.s2 if smaps is not None else None
    h1 = tuple(stem(b) for stem, b in zip(model.stem1, level1.highs))
    h2 = tuple(stem(b) for stem, b in zip(model.stem2, level2.highs))
    if model.sem_on:
        h1 = model.sem1(h1, s1)
        h2 = model.sem2(h2, s2)
    cond = model.compress(T.concat(list(h2), axis=1))
    return Condition(cond, h1, h2, smaps)


def build_condition(x_low, model):
    """``x_low``: (B, 3, H, W) in [-1, 1] with H, W multiples of 4."""
    x_low, _ = _batched(x_low)
    H, W = x_low.shape[-2:]
    if H % 4 or W % 4:
        raise ConfigError(f"input size {H}x{W} must be a multiple of 4")
    smaps = None
    if model.needs_structure:
        edge = sobel_edge(T.scale(x_low + 1.0, 0.5))
        smaps = model.structure(edge)
    level1, level2 = dwt2_level2(x_low)
    return condition_from_bands(model, level1, level2, smaps)


def predict_highs(heads, enhanced):
    return tuple(head(b) for head, b in zip(heads, enhanced))


def diffusion_target(x_high):
    """Level-2 LL of the ground truth divided by 4, so a constant image v maps to v."""
    x_high, unbatched = _batched(x_high)
    ll2 = dwt2(dwt2(x_high).ll).ll
    out = T.scale(ll2, 1.0 / LL_GAIN)
    return T.reshape(out, out.shape[1:]) if unbatched else out


def reconstruct(x0_hat, highs2, highs1):
    """Two inverse Haar levels from the sampled LL estimate and the predicted high bands."""
    ll2 = T.scale(T.as_tensor(x0_hat), LL_GAIN)
    ll1 = iwt2(SubbandSet(ll2, *highs2))
    return iwt2(SubbandSet(ll1, *highs1))


def _structure2(model, c):
    return c.smaps.s2 if c.smaps is not None else None


def compute_losses(model, x_low, x_high, rng, bands=None, t=None, eps=None):
    """Diffusion and high-band losses on [-1, 1] batches.

    ``bands`` optionally overrides the (level1, level2) decomposition of the
    low-light input.
    """
    x_low, _ = _batched(x_low)
    x_high, _ = _batched(x_high)
    if bands is None:
        c = build_condition(x_low, model)
    else:
        smaps = model.structure(sobel_edge(T.scale(x_low + 1.0, 0.5))) if model.needs_structure else None
        c = condition_from_bands(model, bands[0], bands[1], smaps)
    x0 = diffusion_target(x_high)
    l_diff, t, eps = training_loss(model.denoiser, x0, c.cond, _structure2(model, c),
                                   model.schedule, rng, t=t, eps=eps)
    gt1, gt2 = dwt2_level2(x_high)
    preds = predict_highs(model.head1, c.enh1) + predict_highs(model.head2, c.enh2)
    targets = gt1.highs + gt2.highs
    terms = [T.mean(T.absolute(p - g.detach())) for p, g in zip(preds, targets)]
    l_hf = T.scale(sum(terms[1:], terms[0]), 1.0 / len(terms))
    return l_diff, l_hf


def to_model_range(x):
    """[0, 1] -> [-1, 1]."""
    return T.as_tensor(x) * 2.0 - 1.0


def train_step(model, opt, x_low, x_high, rng, lambda_hf=None):
    """One optimiser step on a [0, 1] batch; returns the loss components."""
    lam = model.cfg.lambda_hf if lambda_hf is None else lambda_hf
    l_diff, l_hf = compute_losses(model, to_model_range(x_low), to_model_range(x_high), rng)
    total = l_diff + T.scale(l_hf, lam) if lam > 0 else l_diff
    opt.zero_grad()
    total.backward()
    opt.step()
    return {"loss": total.item(), "l_diff": l_diff.item(), "l_hf": l_hf.item()}


def enhance(model, x_low, ddim_steps=None, rng=None, sampler=None, highs=None):
    """Enhance a [0, 1] image (or batch); returns a [0, 1] array of the same shape.

    ``sampler(cond, s2)`` replaces DDIM and ``highs(level, enhanced_bands)``
    replaces the band heads; both are hooks for oracle testing.
    """
    cfg = model.cfg
    steps = cfg.ddim_steps if ddim_steps is None else ddim_steps
    if steps > model.schedule.T:
        raise ConfigError(f"DDIM steps {steps} exceed T = {model.schedule.T}")
    x, unbatched = _batched(x_low)
    H, W = x.shape[-2:]
    unit = 4 * cfg.patch
    if H % unit or W % unit:
        raise ConfigError(f"image size {H}x{W} must be a multiple of {unit}")
    with no_grad():
        c = build_condition(to_model_range(x), model)
        s2 = _structure2(model, c)
        if sampler is None:
            rng = rng if rng is not None else np.random.default_rng(cfg.seed)
            x0 = ddim_sample(model.denoiser, c.cond, s2, model.schedule, steps, rng)
        else:
            x0 = T.as_tensor(sampler(c.cond, s2))
        if highs is None:
            h2 = predict_highs(model.head2, c.enh2)
            h1 = predict_highs(model.head1, c.enh1)
        else:
            h2, h1 = highs(2, c.enh2), highs(1, c.enh1)
        img = reconstruct(x0, h2, h1).data
    out = (np.clip(img, -1.0, 1.0) + 1.0) / 2.0
    return out[0] if unbatched else out


# -- checkpoints ---------------------------------------------------------

def save_model(path, model):
    """Write parameters to ``path`` and the run config to ``path`` + ``.cfg``."""
    path = Path(path)
    save_checkpoint(path, model.state_dict())
    model.cfg.save(str(path) + ".cfg")
    return path


def load_model(path, cfg=None):
    path = Path(path)
    if cfg is None:
        cfg_path = Path(str(path) + ".cfg")
        if not cfg_path.exists():
            raise InputError(f"no config sidecar {cfg_path} for checkpoint {path}")
        cfg = RunConfig.from_file(cfg_path)
    model = SdtlModel(cfg, np.random.default_rng(0))
    model.load_state_dict(load_checkpoint(path))
    return model


# -- training loop -------------------------------------------------------

@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    steps: int = 0


def subsystem_rngs(seed):
    """Independent generators for init, data order/cropping and diffusion noise."""
    init, data, noise = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), np.random.default_rng(data), np.random.default_rng(noise))


def _to_batch(imgs, dtype):
    return np.stack([im.to_chw(dtype) for im in imgs])


def train_loop(model, dataset, cfg=None, out_dir=None, held_out=None, rngs=None,
               opt=None, start_epoch=0, on_epoch=None):
    """Epoch loop with shuffled batches, random crops, StepLR and periodic checkpoints."""
    cfg = cfg or model.cfg
    if len(dataset) == 0:
        raise InputError("dataset is empty")
    _, data_rng, noise_rng = rngs if rngs is not None else subsystem_rngs(cfg.seed)
    opt = opt or Adam(model.parameters(), lr=cfg.lr)
    schedule = StepLR(cfg.lr, cfg.step_size, cfg.gamma)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult()
    dtype = T.get_dtype()
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        opt.lr = schedule.lr(epoch)
        t0 = time.perf_counter()
        order = data_rng.permutation(len(dataset))
        comps = []
        for start in range(0, len(order), cfg.batch):
            lows, highs = [], []
            for i in order[start:start + cfg.batch]:
                low, high = dataset[int(i)]
                low, high, _ = random_crop_pair(low, high, cfg.crop, data_rng)
                lows.append(low)
                highs.append(high)
            comps.append(train_step(model, opt, _to_batch(lows, dtype), _to_batch(highs, dtype), noise_rng))
            result.steps += 1
        rec = {"epoch": epoch, "lr": opt.lr, "steps": len(comps),
               "seconds": time.perf_counter() - t0}
        for key in ("loss", "l_diff", "l_hf"):
            rec[key] = float(np.mean([c[key] for c in comps]))
        last = epoch == start_epoch + cfg.epochs - 1
        if (epoch + 1) % cfg.ckpt_every == 0 or last:
            if out_dir is not None:
                result.checkpoints.append(save_model(out_dir / f"epoch_{epoch + 1:04d}.sdtl", model))
            if held_out is not None:
                rec["psnr"], rec["ssim"] = evaluate_model(model, [held_out])
        result.history.append(rec)
        log.info("epoch %d lr=%.6g loss=%.5f l_diff=%.5f l_hf=%.5f", epoch, rec["lr"],
                 rec["loss"], rec["l_diff"], rec["l_hf"])
        if on_epoch is not None:
            on_epoch(rec)
    return result


def evaluate_model(model, pairs, ddim_steps=None, seed=0):
    """Mean PSNR / SSIM of ``enhance`` over (low, high) ImageBuf pairs."""
    ps, ss = [], []
    for i, (low, high) in enumerate(pairs):
        out = enhance(model, low.to_chw(), ddim_steps, np.random.default_rng([seed, i]))
        pred = ImageBuf.from_chw(out).to_float()
        gt = high.to_float()
        ps.append(psnr(pred, gt))
        ss.append(ssim(pred, gt))
    return float(np.mean(ps)), float(np.mean(ss))
