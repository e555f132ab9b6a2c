"""Sequential room-center placement model and its two-phase training.

Two strided-conv encoders (plan context and step state) each reduce the
256x256 rasters to a 32x32 feature grid; the concatenated features pass
through a decoder of one 3x3 conv, three stride-2 4x4 transposed convs, a
final 3x3 conv and a sigmoid, producing a full-resolution heatmap.

Phase 1 trains everything with a shared 4-channel decoder; the loss reads only
the channel of the supervised room type.  Phase 2 freezes both encoders and
fine-tunes one specialized single-channel decoder per room type, each seeded
from its slice of the shared head.  Optional auxiliary door/window heads reuse
the phase-2 recipe on synthetic opening midpoints.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import nn
from .rasters import (
    GLOBAL_CHANNELS,
    STEP_CHANNELS,
    TYPE_INDEX,
    assemble_global_raster,
    assemble_step_raster,
    disc_target,
)
from .synthdata import ROOM_TYPES, Sample, augment, opening_targets

log = logging.getLogger(__name__)

AUX_HEADS = ("door", "window")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class CenterNetConfig:
    enc_widths: tuple = (16, 32, 64, 128)
    dec_widths: tuple = (128, 64, 32, 16)
    single_encoder: bool = False
    aux_heads: bool = False
    seed: int = 0

    @property
    def fused_channels(self) -> int:
        # +2: normalized coordinate planes appended to the fused features
        return self.enc_widths[-1] * (1 if self.single_encoder else 2) + 2


def _coord_planes(n, h, w, dtype=np.float32):
    """Constant x/y position planes in [0, 1]; absolute-position shortcut that
    lets a small conv stack localize without deep spatial bookkeeping."""
    ys = np.linspace(0.0, 1.0, h, dtype=dtype)
    xs = np.linspace(0.0, 1.0, w, dtype=dtype)
    gy = np.broadcast_to(ys[:, None], (h, w))
    gx = np.broadcast_to(xs[None, :], (h, w))
    planes = np.stack([gx, gy]).astype(dtype)
    return np.broadcast_to(planes[None], (n, 2, h, w))


def _encoder(c_in, widths, rng, name):
    """Strided conv stages ending at stride 8 (32x32 feature grid)."""
    del name
    layers = []
    for i, w in enumerate(widths):
        stride = 2 if i < 3 else 1
        layers += [
            nn.Conv2d(c_in, w, kernel=3, stride=stride, pad=1, rng=rng),
            nn.BatchNorm2d(w),
            nn.ReLU(),
        ]
        c_in = w
    return nn.Sequential(*layers)


BACKGROUND_LOGIT = -4.0  # sigmoid(-4) ~ 0.018: start heads near the empty map


def _decoder(c_in, widths, out_channels, rng):
    # coordinate planes re-enter at each scale: localized outputs need
    # absolute position at every stage, not just at the bottleneck
    d0, d1, d2, d3 = widths
    head = nn.Conv2d(d3 + 2, out_channels, kernel=3, stride=1, pad=1, rng=rng)
    head.params["b"][...] = BACKGROUND_LOGIT
    return nn.Sequential(
        nn.Conv2d(c_in, d0, kernel=3, stride=1, pad=1, rng=rng),
        nn.BatchNorm2d(d0),
        nn.ReLU(),
        nn.ConcatCoords(),
        nn.ConvTranspose2d(d0 + 2, d1, kernel=4, stride=2, pad=1, rng=rng, init="bilinear"),
        nn.BatchNorm2d(d1),
        nn.ReLU(),
        nn.ConcatCoords(),
        nn.ConvTranspose2d(d1 + 2, d2, kernel=4, stride=2, pad=1, rng=rng, init="bilinear"),
        nn.BatchNorm2d(d2),
        nn.ReLU(),
        nn.ConcatCoords(),
        nn.ConvTranspose2d(d2 + 2, d3, kernel=4, stride=2, pad=1, rng=rng, init="bilinear"),
        nn.BatchNorm2d(d3),
        nn.ReLU(),
        nn.ConcatCoords(),
        head,
        nn.Sigmoid(),
    )


def _clone_decoder_slice(shared, channel, cfg, rng):
    """Single-channel copy of the shared decoder, final conv sliced to one type."""
    dec = _decoder(cfg.fused_channels, cfg.dec_widths, 1, rng)
    src = shared.state_arrays()
    for name, arr in dec.state_arrays().items():
        ref = src[name]
        if arr.shape == ref.shape:
            arr[...] = ref
        else:  # final conv: [4, C, 3, 3] -> [1, C, 3, 3] (same for bias)
            arr[...] = ref[channel:channel + 1]
    return dec


class CenterNet:
    """Dual-encoder heatmap model with phase-dependent decoding heads."""

    def __init__(self, cfg: CenterNetConfig = CenterNetConfig()):
        self.cfg = cfg
        rng = nn.stream(cfg.seed, "init/centernet")
        if cfg.single_encoder:
            self.enc_single = _encoder(GLOBAL_CHANNELS + STEP_CHANNELS + 2,
                                       cfg.enc_widths, rng, "single")
        else:
            self.enc_glob = _encoder(GLOBAL_CHANNELS + 2, cfg.enc_widths, rng, "glob")
            self.enc_step = _encoder(STEP_CHANNELS + 2, cfg.enc_widths, rng, "step")
        self.shared_decoder = _decoder(cfg.fused_channels, cfg.dec_widths,
                                       len(ROOM_TYPES), rng)
        self.decoders: dict = {}
        self.aux_decoders: dict = {}
        self.phase = 1

    # -- forward ------------------------------------------------------------

    def encode(self, glob, step, train=False):
        n, _, h, w = glob.shape
        coords = _coord_planes(n, h, w, dtype=glob.dtype)
        if self.cfg.single_encoder:
            x = np.concatenate([glob, step, coords], axis=1)
            z = self.enc_single.forward(x, train=train)
        else:
            fg = self.enc_glob.forward(np.concatenate([glob, coords], axis=1),
                                       train=train)
            fs = self.enc_step.forward(np.concatenate([step, coords], axis=1),
                                       train=train)
            z = np.concatenate([fg, fs], axis=1)
        zc = _coord_planes(n, z.shape[2], z.shape[3], dtype=z.dtype)
        return np.concatenate([z, zc], axis=1)

    def _backward_encoders(self, gz):
        gz = gz[:, :-2]  # coordinate planes are constants
        if self.cfg.single_encoder:
            self.enc_single.backward(gz)[:, :-2]
            return
        d = self.cfg.enc_widths[-1]
        self.enc_glob.backward(gz[:, :d])
        self.enc_step.backward(gz[:, d:])

    def head_for(self, task: str):
        if self.phase >= 2 and task in self.decoders:
            return self.decoders[task], 0
        return self.shared_decoder, TYPE_INDEX[task]

    def predict_heatmap(self, glob, step, task: str) -> np.ndarray:
        """Inference heatmap [256, 256] for one task (eval mode)."""
        z = self.encode(glob[None], step[None], train=False)
        head, channel = self.head_for(task)
        out = head.forward(z, train=False)
        return out[0, channel]

    def predict_aux(self, glob, step, head: str) -> np.ndarray:
        if head not in self.aux_decoders:
            raise TrainingError(f"aux head '{head}' not trained")
        z = self.encode(glob[None], step[None], train=False)
        return self.aux_decoders[head].forward(z, train=False)[0, 0]

    # -- parameters / persistence -------------------------------------------

    def _components(self):
        if self.cfg.single_encoder:
            yield "enc_single", self.enc_single
        else:
            yield "enc_glob", self.enc_glob
            yield "enc_step", self.enc_step
        yield "shared_decoder", self.shared_decoder
        for t, dec in sorted(self.decoders.items()):
            yield f"decoder.{t}", dec
        for t, dec in sorted(self.aux_decoders.items()):
            yield f"aux.{t}", dec

    def encoder_components(self):
        for name, comp in self._components():
            if name.startswith("enc_"):
                yield name, comp

    def state_arrays(self) -> dict:
        out = {}
        for name, comp in self._components():
            for k, v in comp.state_arrays().items():
                out[f"{name}.{k}"] = v
        out["__meta.phase"] = np.array([self.phase], dtype=np.float32)
        return out

    def encoder_checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, comp in sorted(self.encoder_components()):
            for k, v in sorted(comp.state_arrays().items()):
                h.update(np.ascontiguousarray(v, dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, path):
        arrays = self.state_arrays()
        arrays["__cfg.enc_widths"] = np.array(self.cfg.enc_widths, dtype=np.float32)
        arrays["__cfg.dec_widths"] = np.array(self.cfg.dec_widths, dtype=np.float32)
        arrays["__cfg.flags"] = np.array(
            [int(self.cfg.single_encoder), int(self.cfg.aux_heads), self.cfg.seed],
            dtype=np.float32)
        nn.save_arrays(path, arrays)

    @classmethod
    def load(cls, path) -> "CenterNet":
        arrays = nn.load_arrays(path)
        cfg = CenterNetConfig(
            enc_widths=tuple(int(v) for v in arrays.pop("__cfg.enc_widths")),
            dec_widths=tuple(int(v) for v in arrays.pop("__cfg.dec_widths")),
            single_encoder=bool(arrays["__cfg.flags"][0]),
            aux_heads=bool(arrays["__cfg.flags"][1]),
            seed=int(arrays.pop("__cfg.flags")[2]),
        )
        model = cls(cfg)
        model.phase = int(arrays.pop("__meta.phase")[0])
        rng = nn.stream(cfg.seed, "init/specialized")
        types_present = {k.split(".")[1] for k in arrays if k.startswith("decoder.")}
        for t in sorted(types_present):
            model.decoders[t] = _decoder(cfg.fused_channels, cfg.dec_widths, 1, rng)
        aux_present = {k.split(".")[1] for k in arrays if k.startswith("aux.")}
        for t in sorted(aux_present):
            model.aux_decoders[t] = _decoder(cfg.fused_channels, cfg.dec_widths, 1, rng)
        by_comp = {name: comp for name, comp in model._components()}
        for key, value in arrays.items():
            comp_name, _, rest = key.partition(".")
            if comp_name in ("decoder", "aux"):
                t, _, rest = rest.partition(".")
                comp_name = f"{comp_name}.{t}"
            target = dict(by_comp[comp_name].state_arrays())[rest]
            target[...] = value.reshape(target.shape)
        return model


# -- training -----------------------------------------------------------------


@dataclass
class TrainAConfig:
    epochs: int = 20
    batch_size: int = 8
    lr: float = 1e-2
    min_lr: float = 0.0
    t0: int = 10
    tmult: int = 2
    weight_decay: float = 1e-4
    head_lr_scale: float = 10.0  # faster head: the sparse-disc MSE signal is weak
    # target-radius annealing (fractions of cfg.epochs per stage); the final
    # stage always trains against the contract radius of 5 px.  Wide early
    # targets give the sparse-disc MSE enough signal to localize, after which
    # shrinking radii sharpen the peaks without collapsing them.
    radius_stages: tuple = ((25.0, 0.35), (18.0, 0.1), (13.0, 0.1),
                            (9.0, 0.1), (6.5, 0.1), (5.0, 0.25))
    seed: int = 0
    augment: bool = False
    val_fraction: float = 0.0
    patience: int = 5
    log_every: int = 0

    def radius_for_epoch(self, epoch: int) -> float:
        if not self.radius_stages:
            return 5.0
        total = sum(f for _, f in self.radius_stages)
        acc = 0.0
        for radius, frac in self.radius_stages:
            acc += frac / total
            if epoch < round(acc * self.epochs):
                return radius
        return 5.0


@dataclass
class StepPair:
    """One supervision pair: rasters in, disc target out."""

    sample: Sample
    step_index: int
    task: str
    target_center: np.ndarray
    placed: list = field(default_factory=list)


def build_step_pairs(samples) -> list[StepPair]:
    """One pair per room per sample, in hierarchy order."""
    pairs = []
    for s in samples:
        placed = []
        for i, (center, rtype) in enumerate(s.centers):
            pairs.append(StepPair(sample=s, step_index=i, task=rtype,
                                  target_center=np.asarray(center, dtype=float),
                                  placed=list(placed)))
            placed.append((np.asarray(center, dtype=float), rtype))
    return pairs


class _RasterCache:
    """Per-sample global rasters are reused across that sample's pairs."""

    def __init__(self):
        self._globals = {}

    def global_raster(self, s: Sample):
        key = id(s)
        if key not in self._globals:
            self._globals[key] = assemble_global_raster(s.envelope, s.door, s.program)
        return self._globals[key]


def _batched(indices, size):
    for i in range(0, len(indices), size):
        yield indices[i:i + size]


def _collect_params(components) -> tuple[dict, dict]:
    params, grads = {}, {}
    for name, comp in components:
        params.update({f"{name}.{k}": v for k, v in comp.named_params()})
        grads.update({f"{name}.{k}": v for k, v in comp.named_grads()})
    return params, grads


def _zero(components):
    for _, comp in components:
        comp.zero_grad()


def _head_lr_scales(trainable, scale):
    """Map each decoder's final conv to a faster learning rate."""
    scales = {}
    if scale == 1.0:
        return scales
    for name, comp in trainable:
        if not isinstance(comp, nn.Sequential) or "dec" not in name and "aux" not in name:
            continue
        for i in reversed(range(len(comp.layers))):
            if isinstance(comp.layers[i], nn.Conv2d):
                scales[f"{name}.{i}."] = scale
                break
    return scales


def _phase_loop(pairs, cfg, trainable, forward_backward, head_label):
    """Shared epoch/minibatch driver for both phases."""
    schedule = nn.WarmRestartSchedule(cfg.lr, cfg.min_lr, cfg.t0, cfg.tmult)
    params, grads = _collect_params(trainable)
    opt = nn.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay,
                   lr_scales=_head_lr_scales(trainable, cfg.head_lr_scale))
    shuffle = nn.stream(cfg.seed, f"train/{head_label}/shuffle")
    aug_seed = nn.stream_key(cfg.seed, f"train/{head_label}/augment") % (2 ** 31)
    cache = _RasterCache()

    n_val = int(len(pairs) * cfg.val_fraction)
    val_pairs = pairs[:n_val]
    train_pairs = pairs[n_val:]
    if not train_pairs:
        raise TrainingError("no training pairs")

    curve, best_val, bad_epochs = [], np.inf, 0
    for epoch in range(cfg.epochs):
        radius = cfg.radius_for_epoch(epoch)
        epoch_pairs = train_pairs
        if cfg.augment:
            epoch_pairs = _augmented(train_pairs, aug_seed + epoch)
        order = shuffle.permutation(len(epoch_pairs))
        epoch_loss, n_batches = 0.0, 0
        for k, batch_idx in enumerate(_batched(order, cfg.batch_size)):
            batch = [epoch_pairs[i] for i in batch_idx]
            lr = schedule.lr_at(epoch + k * cfg.batch_size / len(epoch_pairs))
            _zero(trainable)
            loss = forward_backward(batch, cache, train=True, radius=radius)
            if not np.isfinite(loss):
                raise TrainingError("loss diverged (NaN)")
            opt.step(grads, lr=lr)
            epoch_loss += loss
            n_batches += 1
        curve.append(epoch_loss / max(n_batches, 1))
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            log.info("%s epoch %d r=%.1f loss %.5f", head_label, epoch + 1,
                     radius, curve[-1])
        if val_pairs:
            val = float(np.mean([forward_backward([p], cache, train=False)
                                 for p in val_pairs]))
            if val < best_val - 1e-6:
                best_val, bad_epochs = val, 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    log.info("%s early stop at epoch %d", head_label, epoch + 1)
                    break
    return curve


def _augmented(pairs, epoch_seed):
    out = []
    for i, p in enumerate(pairs):
        s = augment(p.sample, epoch_seed * 100_003 + i, "stageA")
        out.extend(q for q in build_step_pairs([s]) if q.step_index == p.step_index)
    return out


def train_phase1(model: CenterNet, samples, cfg: TrainAConfig = TrainAConfig()):
    """Joint training of encoders plus the shared 4-channel decoder."""
    pairs = build_step_pairs(samples)
    trainable = [(n, c) for n, c in model._components()
                 if n.startswith("enc_") or n == "shared_decoder"]

    def forward_backward(batch, cache, train, radius=5.0):
        glob = np.stack([cache.global_raster(p.sample) for p in batch])
        step = np.stack([assemble_step_raster(p.placed, p.task) for p in batch])
        targets = np.stack([disc_target(p.target_center, radius) for p in batch])
        z = model.encode(glob, step, train=train)
        out = model.shared_decoder.forward(z, train=train)
        n, _, hh, ww = out.shape
        gy = np.zeros_like(out)
        loss = 0.0
        for b, p in enumerate(batch):
            ch = TYPE_INDEX[p.task]
            diff = out[b, ch] - targets[b]
            loss += float(np.mean(diff * diff))
            gy[b, ch] = (2.0 / (hh * ww * n)) * diff
        loss /= n
        if train:
            gz = model.shared_decoder.backward(gy)
            model._backward_encoders(gz)
        return loss

    curve = _phase_loop(pairs, cfg, trainable, forward_backward, "phase1")
    calibrate_batchnorm(model, samples)
    model.phase = 1
    return curve


def train_phase2(model: CenterNet, samples, cfg: TrainAConfig = TrainAConfig()):
    """Freeze encoders; fine-tune one specialized decoder per room type."""
    if model.shared_decoder is None:
        raise TrainingError("phase 1 must run before phase 2")
    rng = nn.stream(cfg.seed, "init/specialized")
    pairs = build_step_pairs(samples)
    curves = {}
    for rtype in ROOM_TYPES:
        type_pairs = [p for p in pairs if p.task == rtype]
        if not type_pairs:
            log.info("phase2: no samples for type '%s'; head skipped", rtype)
            continue
        dec = _clone_decoder_slice(model.shared_decoder, TYPE_INDEX[rtype],
                                   model.cfg, rng)
        model.decoders[rtype] = dec
        trainable = [(f"decoder.{rtype}", dec)]

        def forward_backward(batch, cache, train, radius=5.0, _dec=dec):
            del radius  # specialization always fine-tunes at the contract radius
            glob = np.stack([cache.global_raster(p.sample) for p in batch])
            step = np.stack([assemble_step_raster(p.placed, p.task) for p in batch])
            targets = np.stack([disc_target(p.target_center) for p in batch])
            z = model.encode(glob, step, train=False)  # encoders frozen
            out = _dec.forward(z, train=train)
            loss, gy = nn.mse_loss(out[:, 0], targets)
            if train:
                gfull = np.zeros_like(out)
                gfull[:, 0] = gy
                _dec.backward(gfull)
            return loss

        curves[rtype] = _phase_loop(type_pairs, cfg, trainable,
                                    forward_backward, f"phase2/{rtype}")
    model.phase = 2
    calibrate_batchnorm(model, samples)
    return curves


@dataclass
class _AuxItem:
    sample: Sample
    target: np.ndarray
    placed: list


def train_aux_heads(model: CenterNet, samples, cfg: TrainAConfig = TrainAConfig()):
    """Door/window heads trained on synthetic opening midpoints (multi-disc
    targets), with encoders frozen; step raster reflects the complete plan."""
    rng = nn.stream(cfg.seed, "init/aux")
    curves = {}
    for head in AUX_HEADS:
        dec = _decoder(model.cfg.fused_channels, model.cfg.dec_widths, 1, rng)
        model.aux_decoders[head] = dec
        items = []
        for s in samples:
            target = np.zeros((geo.CANVAS, geo.CANVAS), dtype=np.float32)
            for p in opening_targets(s)[head]:
                np.maximum(target, disc_target(p), out=target)
            items.append(_AuxItem(sample=s, target=target, placed=list(s.centers)))
        trainable = [(f"aux.{head}", dec)]

        def forward_backward(batch, cache, train, radius=5.0, _dec=dec):
            del radius
            glob = np.stack([cache.global_raster(it.sample) for it in batch])
            step = np.stack([assemble_step_raster(it.placed, "kit") for it in batch])
            targets = np.stack([it.target for it in batch])
            z = model.encode(glob, step, train=False)
            out = _dec.forward(z, train=train)
            loss, gy = nn.mse_loss(out[:, 0], targets)
            if train:
                gfull = np.zeros_like(out)
                gfull[:, 0] = gy
                _dec.backward(gfull)
            return loss

        aux_cfg = cfg if not cfg.augment else TrainAConfig(
            **{**cfg.__dict__, "augment": False})
        curves[head] = _phase_loop(items, aux_cfg, trainable,
                                   forward_backward, f"aux/{head}")
    return curves


def calibrate_batchnorm(model: CenterNet, samples, passes: int = 1):
    """Refresh running statistics so eval-mode inference matches training.

    Runs train-mode forwards without optimizer steps; encoders are included in
    phase 1 and left untouched (eval mode) once frozen.
    """
    pairs = build_step_pairs(samples)
    cache = _RasterCache()
    encoder_train = model.phase < 2
    specialized = model.phase >= 2 and bool(model.decoders)
    groups = {}
    for p in pairs:
        key = p.task if specialized else "__shared__"
        groups.setdefault(key, []).append(p)
    for _ in range(passes):
        for key, group in sorted(groups.items()):
            for chunk in _batched(list(range(len(group))), 8):
                batch = [group[i] for i in chunk]
                if len(batch) < 2:
                    continue
                glob = np.stack([cache.global_raster(p.sample) for p in batch])
                step = np.stack([assemble_step_raster(p.placed, p.task) for p in batch])
                z = model.encode(glob, step, train=encoder_train)
                if specialized:
                    if key not in model.decoders:
                        continue
                    head = model.decoders[key]
                else:
                    head = model.shared_decoder
                head.forward(z, train=True)
