"""Central finite differences and the gradient-check harness."""
import numpy as np

from sdtl.tensor import Tensor, precision

REL_FLOOR = 1e-6


def finite_diff_grad(f, x, h=1e-5, coords=None):
    """Central-difference gradient of scalar ``f()`` with respect to ``x.data``.

    ``f`` is called with no arguments and must read ``x`` through closure.
    With ``coords`` (flat indices) only those entries are estimated; the rest
    of the result stays zero.
    """
    flat = x.data.reshape(-1)
    out = np.zeros(flat.shape, dtype=np.float64)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f())
        flat[i] = orig - h
        fm = _scalar(f())
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return Tensor(out.reshape(x.shape), dtype=np.float64)


def _scalar(v):
    if isinstance(v, Tensor):
        return float(v.data.reshape(-1)[0])
    return float(v)


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """Max over coordinates of |a - n| / max(|a|, |n|, floor)."""
    a = np.asarray(getattr(analytic, "data", analytic), dtype=np.float64)
    n = np.asarray(getattr(numeric, "data", numeric), dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_gradients(f, params, h=1e-5, max_coords=None, rng=None):
    """Compare backward() against finite differences for every tensor in ``params``.

    Returns the worst relative error. ``max_coords`` caps how many randomly
    chosen coordinates of each tensor are probed.
    """
    for p in params:
        p.grad = None
    loss = f()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        coords = None
        if max_coords is not None and p.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(p.size, size=max_coords, replace=False)
        numeric = finite_diff_grad(f, p, h=h, coords=coords).data.reshape(-1)
        a = analytic.reshape(-1)
        if coords is not None:
            a, numeric = a[coords], numeric[coords]
        worst = max(worst, relative_error(a, numeric))
    return worst


__all__ = ["finite_diff_grad", "relative_error", "check_gradients", "precision"]


# -- the verification suite ------------------------------------------------

PRIMITIVE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


def _leaf(rng, shape, low=None, high=None):
    if low is not None:
        data = rng.uniform(low, high, size=shape)
    else:
        data = rng.standard_normal(shape)
    return Tensor(data, requires_grad=True)


def _primitive(build):
    """Wrap ``build(rng) -> (fn, inputs)`` into a check returning the worst error."""
    def check(rng):
        fn, inputs = build(rng)
        # project onto a fixed random direction so every output entry matters
        r = Tensor(rng.standard_normal(fn().shape))

        def f():
            from sdtl import tensor as T
            return T.tsum(T.mul(fn(), r))

        return check_gradients(f, inputs)

    check.__name__ = build.__name__
    return check


def _primitive_builders():
    from sdtl import tensor as T
    from sdtl import wavelet as wv

    def shape(rng, n=3):
        return tuple(int(s) for s in rng.integers(1, 5, size=n))

    def unary(op, low=None, high=None):
        def build(rng):
            x = _leaf(rng, shape(rng), low, high)
            return (lambda: op(x)), [x]
        return build

    def binary(op, positive_b=False):
        def build(rng):
            s = shape(rng)
            a = _leaf(rng, s)
            bs = tuple(1 if rng.random() < 0.3 else n for n in s)[int(rng.integers(0, 2)):]
            b = _leaf(rng, bs, 0.5, 2.0) if positive_b else _leaf(rng, bs)
            return (lambda: op(a, b)), [a, b]
        return build

    def conv(stride):
        def build(rng):
            ci, co = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            k = int(rng.choice([1, 3])) if stride == 1 else 3
            n = 2 * int(rng.integers(2, 4))
            x = _leaf(rng, (int(rng.integers(1, 3)), ci, n, n))
            w = _leaf(rng, (co, ci, k, k))
            b = _leaf(rng, (co,))
            pad = k // 2 if stride == 1 else (0, 1)
            return (lambda: T.conv2d(x, w, b, stride=stride, pad=pad)), [x, w, b]
        return build

    def matmul(rng):
        m, k, n = (int(v) for v in rng.integers(1, 6, size=3))
        lead = (int(rng.integers(1, 3)),) if rng.random() < 0.5 else ()
        a, b = _leaf(rng, lead + (m, k)), _leaf(rng, (k, n))
        return (lambda: T.matmul(a, b)), [a, b]

    def softmax(rng):
        x = _leaf(rng, shape(rng))
        axis = int(rng.integers(0, 3))
        return (lambda: T.softmax(x, axis)), [x]

    def layer_norm(rng):
        s = shape(rng, 2) + (int(rng.integers(2, 9)),)
        x, g, b = _leaf(rng, s), _leaf(rng, s[-1:]), _leaf(rng, s[-1:])
        return (lambda: T.layer_norm(x, g, b)), [x, g, b]

    def reduce(op):
        def build(rng):
            x = _leaf(rng, shape(rng))
            axis = None if rng.random() < 0.3 else int(rng.integers(0, 3))
            keep = bool(rng.integers(0, 2))
            return (lambda: op(x, axis, keep)), [x]
        return build

    def reshape(rng):
        x = _leaf(rng, (2, 3, 4))
        return (lambda: T.reshape(x, (4, 6))), [x]

    def transpose(rng):
        x = _leaf(rng, shape(rng))
        axes = tuple(int(a) for a in rng.permutation(3))
        return (lambda: T.transpose(x, axes)), [x]

    def getitem(rng):
        x = _leaf(rng, (4, 5))
        idx = np.array([0, 2, 2, 3])
        return (lambda: T.concat([x[1:3, ::2], x[idx][:, 1:4]], axis=0)[:, :2]), [x]

    def concat(rng):
        a, b = _leaf(rng, (2, 3)), _leaf(rng, (2, 2))
        return (lambda: T.concat([a, b], axis=1)), [a, b]

    def stack(rng):
        a, b = _leaf(rng, (2, 3)), _leaf(rng, (2, 3))
        return (lambda: T.stack([a, b], axis=1)), [a, b]

    def pad2d(rng):
        x = _leaf(rng, (2, 3, 3))
        return (lambda: T.pad2d(x, (1, 0, 2, 1))), [x]

    def global_avg_pool(rng):
        x = _leaf(rng, (2, 3, int(rng.integers(1, 5)), int(rng.integers(1, 5))))
        return (lambda: T.global_avg_pool(x)), [x]

    def dwt2(rng):
        x = _leaf(rng, (2, 4, 6))
        return (lambda: T.concat(list(wv.dwt2(x).__dict__.values()), axis=0)), [x]

    def iwt2(rng):
        bands = [_leaf(rng, (2, 3, 2)) for _ in range(4)]
        return (lambda: wv.iwt2(wv.SubbandSet(*bands))), bands

    def scale(rng):
        x = _leaf(rng, shape(rng))
        return (lambda: T.scale(x, -1.7)), [x]

    return {
        "add": binary(T.add),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "div": binary(T.div, positive_b=True),
        "scale": scale,
        "neg": unary(T.neg),
        "square": unary(T.square),
        "abs": unary(T.absolute, 0.1, 2.0),
        "exp": unary(T.exp),
        "sqrt": unary(T.sqrt, 0.2, 3.0),
        "tanh": unary(T.tanh),
        "sigmoid": unary(T.sigmoid),
        "gelu": unary(T.gelu),
        "sum": reduce(T.tsum),
        "mean": reduce(T.mean),
        "reshape": reshape,
        "transpose": transpose,
        "getitem": getitem,
        "concat": concat,
        "stack": stack,
        "pad2d": pad2d,
        "matmul": matmul,
        "softmax": softmax,
        "layer_norm": layer_norm,
        "conv2d": conv(1),
        "conv2d_stride2": conv(2),
        "global_avg_pool": global_avg_pool,
        "dwt2": dwt2,
        "iwt2": iwt2,
    }


def _module_check(make, max_coords=4, n_params=None):
    """Check a module-level composite: ``make(rng) -> (module, loss_fn)``."""
    def check(rng):
        module, loss_fn = make(rng)
        params = module.parameters()
        if n_params is not None and len(params) > n_params:
            params = [params[i] for i in rng.choice(len(params), n_params, replace=False)]
        return check_gradients(loss_fn, params, max_coords=max_coords, rng=rng)
    return check


def _composite_builders():
    from sdtl import tensor as T
    from sdtl.config import tiny_config
    from sdtl.denoiser import SAB, Denoiser, DitConfig, ViTBlock
    from sdtl.layers import Module
    from sdtl.pipeline import SdtlModel, compute_losses
    from sdtl.sem import SEM, BandEnhancer, BandFusion, ChannelGate
    from sdtl.structure import StructurePrior

    def with_input(module, x_shape, rng, call, extra=()):
        x = _leaf(rng, x_shape)
        holder = Module()
        holder.inner = module
        holder.x = x
        r = {}

        def loss():
            out = call(module, x)
            if "r" not in r:
                r["r"] = Tensor(rng.standard_normal(out.shape))
            return T.tsum(T.mul(out, r["r"]))
        return holder, loss

    def channel_gate(rng):
        return with_input(ChannelGate(rng, 4), (1, 4, 3, 3), rng, lambda m, x: m(x))

    def enhance_band(rng):
        s = _leaf(rng, (1, 3, 4, 4))
        m = BandEnhancer(rng, 4, 3)
        holder, loss = with_input(m, (1, 4, 4, 4), rng, lambda mod, x: mod(x, s))
        holder.s = s
        return holder, loss

    def fuse_bands(rng):
        m = BandFusion(rng, 4)
        bands = [_leaf(rng, (1, 4, 4, 4)) for _ in range(2)]
        return with_input(m, (1, 4, 4, 4), rng, lambda mod, x: T.concat(list(mod([x] + bands)), axis=1))

    def sem_forward(rng):
        m = SEM(rng, 4, 4)
        s = _leaf(rng, (1, 4, 4, 4))
        others = [_leaf(rng, (1, 4, 4, 4)) for _ in range(2)]
        return with_input(m, (1, 4, 4, 4), rng, lambda mod, x: T.concat(list(mod([x] + others, s)), axis=1))

    def structure_features(rng):
        m = StructurePrior(rng, 3)

        def call(mod, x):
            maps = mod(x)
            return T.concat([T.reshape(maps.s1, (-1,)), T.reshape(maps.s2, (-1,))], axis=0)
        return with_input(m, (1, 1, 8, 8), rng, call)

    def vit_block(rng):
        return with_input(ViTBlock(rng, 8, 2), (1, 4, 8), rng, lambda m, x: m(x))

    def sab(rng):
        m = SAB(rng, 8, 2)
        s = _leaf(rng, (1, 4, 8))
        return with_input(m, (1, 4, 8), rng, lambda mod, x: mod(x, s))

    def denoiser(rng):
        cfg = DitConfig.for_depth(2, embed_dim=8, heads=2, patch=2)
        m = Denoiser(rng, cfg, 2, (2, 2), 10)
        m.head.weight.data[:] = rng.standard_normal(m.head.weight.shape) * 0.3
        s2 = _leaf(rng, (1, 2, 4, 4))
        t = int(rng.integers(0, 10))
        return with_input(m, (1, 6, 4, 4), rng, lambda mod, x: mod(x, t, s2))

    def sdtl_tiny(rng):
        cfg = tiny_config(depth=2, embed_dim=12, heads=2, patch=2, band_width=3, crop=16, T=20)
        model = SdtlModel(cfg, rng)
        model.denoiser.head.weight.data[:] = rng.standard_normal(model.denoiser.head.weight.shape) * 0.3
        x_low = Tensor(rng.uniform(-1, 1, size=(1, 3, 16, 16)))
        x_high = Tensor(rng.uniform(-1, 1, size=(1, 3, 16, 16)))
        t = rng.integers(0, cfg.T, size=1)
        eps = rng.standard_normal((1, 3, 4, 4))

        def loss():
            l_diff, l_hf = compute_losses(model, x_low, x_high, None, t=t, eps=eps)
            return l_diff + T.scale(l_hf, 0.1)
        return model, loss

    return {
        "channel_gate": _module_check(channel_gate),
        "enhance_band": _module_check(enhance_band),
        "fuse_bands": _module_check(fuse_bands),
        "sem_forward": _module_check(sem_forward, n_params=12),
        "structure_features": _module_check(structure_features),
        "vit_block": _module_check(vit_block),
        "sab": _module_check(sab),
        "denoiser": _module_check(denoiser, n_params=12),
        "sdtl_tiny": _module_check(sdtl_tiny, max_coords=3, n_params=5),
    }


def default_checks():
    """Ordered ``{name: (kind, check, tolerance)}`` for every registered op."""
    checks = {}
    for name, build in _primitive_builders().items():
        checks[name] = ("primitive", _primitive(build), PRIMITIVE_TOL)
    for name, fn in _composite_builders().items():
        checks[name] = ("composite", fn, COMPOSITE_TOL)
    return checks


def run_suite(seed=0, seeds=20, checks=None, report=None):
    """Run every check over ``seeds`` derived seeds in 64-bit mode.

    Returns a list of ``(name, kind, worst_error, tolerance, passed)``.
    """
    checks = default_checks() if checks is None else checks
    rows = []
    with precision("float64"):
        for name, (kind, fn, tol) in checks.items():
            worst = 0.0
            for s in range(seeds):
                err = fn(np.random.default_rng([seed, s]))
                worst = max(worst, err) if np.isfinite(err) else float("inf")
            row = (name, kind, worst, tol, worst < tol)
            rows.append(row)
            if report is not None:
                report(row)
    return rows
