"""Deterministic forward-only reference of the 2.5D segmentation network.

The backbone is an attention UNet whose top ``levels_2d`` encoder/decoder
levels use in-plane 3x3x1 convolutions with (2,2,1) down/upsampling, while
deeper levels use 3x3x3 convolutions with (2,2,2) resampling, so feature
grids become isotropic for ~4:1 anisotropic inputs. A densely connected
dilated-convolution block sits at the bottleneck. Three heads produce a
single-channel boundary probability map (multi-scale decoder features fused
through a residual channel attention block), an initial softmax mask from
the bottleneck, and a final softmax mask from the fused boundary features
concatenated with the pre-softmax initial logits.

Everything is plain NumPy: weights are drawn once from a seeded generator
(normal, mean 0, std 0.1) and never change, so the forward pass is a pure
function usable for wiring and invariant checks. Feature standardization
(per-channel, per-instance) follows every spatial convolution to keep
activations bounded; it is a non-architectural stabilizer and can be
disabled via the config.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import json
from typing import Dict, List, Tuple

import numpy as np

from .errors import BadPatchShapeError, InvalidConfigError
from .losses import ProbVolume
from .volume_io import Volume

__all__ = [
    "NetConfig",
    "Network",
    "NetworkOutputs",
    "build",
    "forward",
    "count_params",
    "export_weights",
    "import_weights",
]

_INIT_STD = 0.1  # normal init: mean 0, variance 0.01
_NORM_EPS = 1e-5
# Sigmoid pre-activations are clipped here so gates stay strictly inside
# (1e-12, 1 - 1e-12) even for adversarial features.
_GATE_CLIP = 26.0


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyper-parameters; all non-obvious values are exposed.

    ``depth``, ``levels_2d``, ``base_filters``, ``aspp_rates`` and
    ``aspp_growth`` are choices of this reference (the backbone/bottleneck
    designs leave them open), documented here rather than hard-coded.
    """

    num_classes: int
    in_channels: int = 1
    base_filters: int = 8
    depth: int = 5
    levels_2d: int = 2
    seed: int = 0
    aspp_rates: Tuple[int, ...] = (3, 6, 12, 18)
    aspp_growth: int = 0  # 0 means 2 * base_filters
    normalize_features: bool = True

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidConfigError("num_classes must be at least 2")
        if self.in_channels != 1:
            raise InvalidConfigError("only single-channel inputs are supported")
        if self.base_filters < 1:
            raise InvalidConfigError("base_filters must be at least 1")
        if self.levels_2d < 0 or self.depth < self.levels_2d + 1:
            raise InvalidConfigError("depth must be at least levels_2d + 1")
        if not self.aspp_rates or any(r < 1 for r in self.aspp_rates):
            raise InvalidConfigError("aspp_rates must be positive")
        if self.aspp_growth < 0:
            raise InvalidConfigError("aspp_growth must be nonnegative")

    @property
    def growth(self) -> int:
        return self.aspp_growth or 2 * self.base_filters

    def channels(self, level: int) -> int:
        return self.base_filters * (2 ** level)

    def kernel(self, level: int) -> Tuple[int, int, int]:
        return (3, 3, 1) if level < self.levels_2d else (3, 3, 3)

    def factor(self, level: int) -> Tuple[int, int, int]:
        """Resampling factor for the transition level -> level + 1."""
        return (2, 2, 1) if level < self.levels_2d else (2, 2, 2)

    @property
    def divisors(self) -> Tuple[int, int, int]:
        n_xy = self.depth - 1
        n_z = self.depth - 1 - self.levels_2d
        return (2 ** n_xy, 2 ** n_xy, 2 ** n_z)


@dataclass(frozen=True)
class Network:
    """Immutable weight store; built once from a seed, then read-only."""

    config: NetConfig
    params: Dict[str, np.ndarray] = field(repr=False)
    order: Tuple[str, ...] = field(repr=False)


@dataclass(frozen=True)
class NetworkOutputs:
    """Forward-pass products, all at the input's spatial resolution.

    ``attention_maps`` lists the per-decoder-level gate volumes, deepest
    level first, each at that level's grid resolution with values strictly
    inside (0, 1).
    """

    boundary: ProbVolume
    mask_init: ProbVolume
    mask_final: ProbVolume
    attention_maps: List[np.ndarray]


def _param_specs(cfg: NetConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    """Deterministic (name, shape) inventory for every learnable array."""
    specs: List[Tuple[str, Tuple[int, ...]]] = []

    def conv(name, c_out, c_in, kernel):
        specs.append((f"{name}.w", (c_out, c_in) + tuple(kernel)))
        specs.append((f"{name}.b", (c_out,)))

    def dense(name, c_out, c_in):
        specs.append((f"{name}.w", (c_out, c_in)))
        specs.append((f"{name}.b", (c_out,)))

    for i in range(cfg.depth):
        c_in = cfg.in_channels if i == 0 else cfg.channels(i - 1)
        conv(f"enc{i}.conv1", cfg.channels(i), c_in, cfg.kernel(i))
        conv(f"enc{i}.conv2", cfg.channels(i), cfg.channels(i), cfg.kernel(i))

    bottom = cfg.channels(cfg.depth - 1)
    for j, _rate in enumerate(cfg.aspp_rates):
        conv(f"aspp.branch{j}", cfg.growth, bottom + j * cfg.growth, (3, 3, 3))
    dense("aspp.fuse", bottom, bottom + len(cfg.aspp_rates) * cfg.growth)

    for i in range(cfg.depth - 2, -1, -1):
        c_up = cfg.channels(i + 1)
        c_skip = cfg.channels(i)
        dense(f"dec{i}.gate1", c_skip, c_up + c_skip)
        dense(f"dec{i}.gate2", 1, c_skip)
        conv(f"dec{i}.conv1", c_skip, c_up + c_skip, cfg.kernel(i))
        conv(f"dec{i}.conv2", c_skip, c_skip, cfg.kernel(i))

    for i in range(cfg.depth - 2, -1, -1):
        dense(f"sbpm.proj{i}", cfg.base_filters, cfg.channels(i))
    c_sb = (cfg.depth - 1) * cfg.base_filters
    dense("sbpm.rcab.fc1", max(1, c_sb // 2), c_sb)
    dense("sbpm.rcab.fc2", c_sb, max(1, c_sb // 2))
    dense("sbpm.out", 1, c_sb)

    conv("init.conv1", bottom, bottom, (3, 3, 3))
    conv("init.conv2", bottom, bottom, (3, 3, 3))
    dense("init.head", cfg.num_classes, bottom)

    c_final = c_sb + cfg.num_classes
    dense("final.rcab.fc1", max(1, c_final // 2), c_final)
    dense("final.rcab.fc2", c_final, max(1, c_final // 2))
    dense("final.head", cfg.num_classes, c_final)
    return specs


def build(config: NetConfig) -> Network:
    """Create a network with all parameters drawn from N(0, 0.01 variance).

    The same seed always yields bit-identical weights; parameter order is
    the fixed inventory of :func:`_param_specs`.
    """
    rng = np.random.default_rng(config.seed)
    params: Dict[str, np.ndarray] = {}
    order: List[str] = []
    for name, shape in _param_specs(config):
        arr = rng.standard_normal(shape, dtype=np.float32) * np.float32(_INIT_STD)
        arr.setflags(write=False)
        params[name] = arr
        order.append(name)
    return Network(config=config, params=params, order=tuple(order))


def count_params(net: Network) -> int:
    """Total number of scalar parameters (weights and biases)."""
    return int(sum(p.size for p in net.params.values()))


def export_weights(net: Network, blob_path, manifest_path) -> None:
    """Dump parameters as one little-endian float32 blob plus a manifest."""
    offset = 0
    layers = []
    chunks = []
    for name in net.order:
        arr = net.params[name]
        layers.append({"name": name, "shape": list(arr.shape), "offset": offset})
        raw = arr.astype("<f4").tobytes()
        chunks.append(raw)
        offset += len(raw)
    with open(blob_path, "wb") as fh:
        fh.write(b"".join(chunks))
    manifest = {"dtype": "float32-le", "total_bytes": offset, "layers": layers}
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def import_weights(config: NetConfig, blob_path, manifest_path) -> Network:
    """Rebuild a network from an exported blob, checking the inventory."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    expected = dict((name, shape) for name, shape in _param_specs(config))
    params: Dict[str, np.ndarray] = {}
    order: List[str] = []
    for layer in manifest["layers"]:
        name = layer["name"]
        shape = tuple(layer["shape"])
        if name not in expected:
            raise InvalidConfigError(f"unexpected layer {name!r} in manifest")
        if shape != tuple(expected[name]):
            raise InvalidConfigError(
                f"layer {name!r}: manifest shape {shape} != config shape {expected[name]}"
            )
        n = int(np.prod(shape))
        start = layer["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=start).reshape(shape).copy()
        arr.setflags(write=False)
        params[name] = arr
        order.append(name)
    missing = set(expected) - set(params)
    if missing:
        raise InvalidConfigError(f"manifest missing layers: {sorted(missing)}")
    return Network(config=config, params=params, order=tuple(order))


# ---------------------------------------------------------------------------
# forward-pass primitives (channels-first float32 arrays)


def _conv3d(x, w, b, dilation=(1, 1, 1)):
    c_out, c_in = w.shape[:2]
    kx, ky, kz = w.shape[2:]
    dx, dy, dz = dilation
    px, py, pz = dx * (kx // 2), dy * (ky // 2), dz * (kz // 2)
    xp = np.pad(x, ((0, 0), (px, px), (py, py), (pz, pz)))
    sx, sy, sz = x.shape[1:]
    out = np.broadcast_to(b[:, None, None, None], (c_out, sx, sy, sz)).astype(np.float32).copy()
    for i in range(kx):
        for j in range(ky):
            for l in range(kz):
                view = xp[:, i * dx : i * dx + sx, j * dy : j * dy + sy, l * dz : l * dz + sz]
                out += np.tensordot(w[:, :, i, j, l], view, axes=([1], [0]))
    return out


def _conv1x1(x, w, b):
    return np.tensordot(w, x, axes=([1], [0])) + b[:, None, None, None].astype(np.float32)


def _instance_norm(x):
    mu = x.mean(axis=(1, 2, 3), keepdims=True)
    var = x.var(axis=(1, 2, 3), keepdims=True)
    return (x - mu) / np.sqrt(var + _NORM_EPS)


def _relu(x):
    return np.maximum(x, 0.0)


def _sigmoid64(x):
    z = np.clip(x.astype(np.float64), -_GATE_CLIP, _GATE_CLIP)
    return 1.0 / (1.0 + np.exp(-z))


def _softmax64(logits):
    z = logits.astype(np.float64)
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def _maxpool(x, factor):
    c, sx, sy, sz = x.shape
    fx, fy, fz = factor
    return x.reshape(c, sx // fx, fx, sy // fy, fy, sz // fz, fz).max(axis=(2, 4, 6))


def _lin_weights(n_src: int, n_dst: int):
    scale = n_src / n_dst
    src = (np.arange(n_dst) + 0.5) * scale - 0.5
    i0 = np.floor(src).astype(np.int64)
    w1 = (src - i0).astype(np.float32)
    i0c = np.clip(i0, 0, n_src - 1)
    i1c = np.clip(i0 + 1, 0, n_src - 1)
    return i0c, i1c, w1


def _upsample_to(x, target):
    """Separable trilinear resize (half-pixel centers, clamped borders)."""
    for axis, n_dst in zip((1, 2, 3), target):
        n_src = x.shape[axis]
        if n_src == n_dst:
            continue
        i0, i1, w1 = _lin_weights(n_src, n_dst)
        wshape = [1, 1, 1, 1]
        wshape[axis] = n_dst
        w1 = w1.reshape(wshape)
        x = np.take(x, i0, axis=axis) * (1.0 - w1) + np.take(x, i1, axis=axis) * w1
    return x


def _conv_block(net, prefix, x, level):
    cfg = net.config
    for tag in ("conv1", "conv2"):
        x = _conv3d(x, net.params[f"{prefix}.{tag}.w"], net.params[f"{prefix}.{tag}.b"])
        if cfg.normalize_features:
            x = _instance_norm(x)
        x = _relu(x)
    return x


def _aspp(net, x):
    cfg = net.config
    feats = x
    for j, rate in enumerate(cfg.aspp_rates):
        y = _conv3d(
            feats,
            net.params[f"aspp.branch{j}.w"],
            net.params[f"aspp.branch{j}.b"],
            dilation=(rate, rate, rate),
        )
        if cfg.normalize_features:
            y = _instance_norm(y)
        y = _relu(y)
        feats = np.concatenate([feats, y], axis=0)
    out = _conv1x1(feats, net.params["aspp.fuse.w"], net.params["aspp.fuse.b"])
    if cfg.normalize_features:
        out = _instance_norm(out)
    return _relu(out)


def _rcab(net, prefix, x):
    """Residual channel attention: pooled stats -> two projections -> gates."""
    s = x.mean(axis=(1, 2, 3)).astype(np.float64)
    w1, b1 = net.params[f"{prefix}.fc1.w"], net.params[f"{prefix}.fc1.b"]
    w2, b2 = net.params[f"{prefix}.fc2.w"], net.params[f"{prefix}.fc2.b"]
    h = np.maximum(w1.astype(np.float64) @ s + b1, 0.0)
    gates = _sigmoid64(w2.astype(np.float64) @ h + b2).astype(np.float32)
    return x + x * gates[:, None, None, None]


def forward(net: Network, patch: Volume) -> NetworkOutputs:
    """Run the network on a patch; pure function of (net, patch).

    Raises:
        BadPatchShapeError: when the patch dims do not divide evenly through
            the resampling ladder (x and y by 2**(depth-1), z by
            2**(depth-1-levels_2d)).
    """
    cfg = net.config
    div = cfg.divisors
    if any(patch.shape[a] % div[a] != 0 or patch.shape[a] < div[a] for a in range(3)):
        raise BadPatchShapeError(
            f"patch {patch.shape} must be divisible by {div} (x, y, z)"
        )
    full_shape = patch.shape
    x = patch.data.astype(np.float32)[None]

    skips = []
    for i in range(cfg.depth):
        x = _conv_block(net, f"enc{i}", x, i)
        skips.append(x)
        if i < cfg.depth - 1:
            x = _maxpool(x, cfg.factor(i))

    bottleneck = _aspp(net, x)

    d = bottleneck
    attention: List[np.ndarray] = []
    dec_feats = []
    for i in range(cfg.depth - 2, -1, -1):
        target = skips[i].shape[1:]
        d_up = _upsample_to(d, target)
        cat = np.concatenate([d_up, skips[i]], axis=0)
        t = _relu(_conv1x1(cat, net.params[f"dec{i}.gate1.w"], net.params[f"dec{i}.gate1.b"]))
        pre = _conv1x1(t, net.params[f"dec{i}.gate2.w"], net.params[f"dec{i}.gate2.b"])
        gate = _sigmoid64(pre[0])
        gated = skips[i] * gate.astype(np.float32)[None]
        d = _conv_block(net, f"dec{i}", np.concatenate([d_up, gated], axis=0), i)
        attention.append(gate)
        dec_feats.append((i, d))

    projs = []
    for i, f in dec_feats:
        p = _conv1x1(f, net.params[f"sbpm.proj{i}.w"], net.params[f"sbpm.proj{i}.b"])
        projs.append(_upsample_to(p, full_shape))
    fused = _rcab(net, "sbpm.rcab", np.concatenate(projs, axis=0))
    b_prob = _sigmoid64(_conv1x1(fused, net.params["sbpm.out.w"], net.params["sbpm.out.b"])[0])

    h = bottleneck
    for tag in ("conv1", "conv2"):
        h = _conv3d(h, net.params[f"init.{tag}.w"], net.params[f"init.{tag}.b"])
        if cfg.normalize_features:
            h = _instance_norm(h)
        h = _relu(h)
    logits_low = _conv1x1(h, net.params["init.head.w"], net.params["init.head.b"])
    init_logits = _upsample_to(logits_low, full_shape)
    m_init = _softmax64(init_logits)

    ff = _rcab(net, "final.rcab", np.concatenate([fused, init_logits], axis=0))
    final_logits = _conv1x1(ff, net.params["final.head.w"], net.params["final.head.b"])
    m_final = _softmax64(final_logits)

    spacing = patch.spacing
    return NetworkOutputs(
        boundary=ProbVolume(b_prob[..., None], spacing),
        mask_init=ProbVolume(np.moveaxis(m_init, 0, -1), spacing),
        mask_final=ProbVolume(np.moveaxis(m_final, 0, -1), spacing),
        attention_maps=attention,
    )
