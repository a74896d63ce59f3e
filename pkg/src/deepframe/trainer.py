"""Training pipeline for the frame predictor.

Triplets of co-located patches are curated, augmented on the fly (flips,
order reversal, reference-window shifts) and fed to AdaMax. Validation PSNR
is logged at a fixed iteration interval; the ablation harness trains one
model per removed component under an identical budget.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .kvconfig import ConfigError, parse_bool, parse_pair, read_kv, require
from .losses import LossWeights, feature_extractor, loss_total_and_grad
from .predictor import FramePredictor, NetConfig, make_input_tensor, synthesize, synthesize_backward
from .video_io import SyntheticSpec, generate_synthetic, yuv420_to_444

log = logging.getLogger(__name__)

ABLATIONS = ("no_temporal_index", "no_b1", "no_b2_b10_skips", "no_geometric_loss")
TRAINING_QPS = tuple(range(20, 45, 2))
DESK_QPS = (22, 27, 32, 37)
CODING_PROFILES = ("LP", "LD", "RA")
MIN_ENTROPY = 3.5


class DatasetExhausted(RuntimeError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# triplets


@dataclass
class Triplet:
    """Three co-located candidate patches (earliest, middle, latest), float YUV444 in [0, 1].

    ``mode`` selects the prediction task: ``bi`` predicts the middle patch
    from the outer two, ``uni`` predicts the latest from the earlier two.
    Training windows of size ``window`` are cropped from the centre of each
    candidate patch, displaced by the per-patch ``offsets`` (dx, dy).
    """

    patches: tuple
    pocs: tuple
    mode: str = "bi"
    source: str = ""
    degradation: str = "raw"
    window: int | None = None
    offsets: tuple = ((0, 0), (0, 0), (0, 0))

    def __post_init__(self):
        if len(self.patches) != 3 or len(self.pocs) != 3:
            raise ValueError("a triplet holds exactly three patches and three POCs")
        shape = self.patches[0].shape
        if any(p.shape != shape for p in self.patches):
            raise ValueError("triplet patches must be equally shaped")
        if not self.pocs[0] < self.pocs[1] < self.pocs[2]:
            raise ValueError(f"triplet POCs must be strictly increasing, got {self.pocs}")
        if self.mode not in ("bi", "uni"):
            raise ValueError(f"mode must be 'bi' or 'uni', got {self.mode!r}")
        if self.window is None:
            self.window = min(shape[:2])

    @property
    def size(self) -> int:
        return self.patches[0].shape[0]

    @property
    def target_index(self) -> int:
        return 1 if self.mode == "bi" else 2

    @property
    def ref_indices(self) -> tuple[int, int]:
        return (0, 2) if self.mode == "bi" else (0, 1)

    def crop(self, i: int) -> np.ndarray:
        p = self.patches[i]
        h, w = p.shape[:2]
        dx, dy = self.offsets[i]
        y0 = (h - self.window) // 2 + dy
        x0 = (w - self.window) // 2 + dx
        if y0 < 0 or x0 < 0 or y0 + self.window > h or x0 + self.window > w:
            raise ValueError(f"window offset {(dx, dy)} leaves the {w}x{h} candidate patch")
        return p[y0:y0 + self.window, x0:x0 + self.window]

    def views(self):
        """(ref1, ref2, target, (t1, t2, t)) windows for training or validation."""
        a, b = self.ref_indices
        t = self.target_index
        return self.crop(a), self.crop(b), self.crop(t), (self.pocs[a], self.pocs[b], self.pocs[t])


def luma_entropy(patch) -> float:
    """Shannon entropy (bits/pixel) of the 256-bin histogram of the luma channel."""
    y = np.clip(np.floor(np.asarray(patch)[..., 0] * 255.0 + 0.5), 0, 255).astype(np.int64)
    counts = np.bincount(y.ravel(), minlength=256)
    p = counts[counts > 0] / y.size
    return float(-(p * np.log2(p)).sum())


def flow_block_size(size: int) -> int:
    """Flow block edge for a patch: 16 on large patches, smaller so small patches get several blocks."""
    return max(4, min(16, size // 3))


def curation_report(triplet: Triplet, block: int | None = None, search: int = 24) -> dict:
    from .codec.motion import block_flow

    patches = triplet.patches
    size = min(patches[0].shape[:2])
    block = block or flow_block_size(size)
    search = min(search, size)
    entropy = min(luma_entropy(p) for p in patches)
    changed = all(
        not np.array_equal(patches[i], patches[j]) for i, j in ((0, 1), (0, 2), (1, 2))
    )
    to8 = lambda p: np.clip(np.floor(p[..., 0] * 255.0 + 0.5), 0, 255).astype(np.uint8)  # noqa: E731
    flow = block_flow(to8(patches[0]), to8(patches[2]), block, search)
    mag = np.hypot(flow[..., 0], flow[..., 1]).ravel()
    h, w = patches[0].shape[:2]
    return {
        "entropy": entropy,
        "changed": changed,
        "flow_var": float(mag.var()) if mag.size else 0.0,
        "flow_max": float(mag.max()) if mag.size else 0.0,
        "diagonal": math.hypot(h, w),
    }


def passes_filters(triplet: Triplet, **kw) -> bool:
    r = curation_report(triplet, **kw)
    return (
        r["entropy"] >= MIN_ENTROPY
        and r["changed"]
        and r["flow_var"] > 0.0
        and r["flow_max"] <= r["diagonal"]
    )


def curate(candidates, **kw) -> list[Triplet]:
    kept = [t for t in candidates if passes_filters(t, **kw)]
    if not kept:
        raise DatasetExhausted("dataset exhausted: no candidate triplet passed the curation filters")
    return kept


# ---------------------------------------------------------------------------
# augmentation


def flip(triplet: Triplet, horizontal: bool) -> Triplet:
    axis = 1 if horizontal else 0
    patches = tuple(np.flip(p, axis=axis).copy() for p in triplet.patches)
    offsets = tuple((-dx, dy) if horizontal else (dx, -dy) for dx, dy in triplet.offsets)
    return replace(triplet, patches=patches, offsets=offsets)


def reverse_order(triplet: Triplet) -> Triplet:
    """Play the triplet backwards; POC gaps are mirrored so the order stays increasing."""
    p0, p1, p2 = triplet.pocs
    return replace(
        triplet,
        patches=tuple(reversed(triplet.patches)),
        pocs=(p0, p0 + p2 - p1, p2),
        offsets=tuple(reversed(triplet.offsets)),
    )


def shift_references(triplet: Triplet, shift) -> Triplet:
    """Add apparent linear motion: each window moves by shift * (t_target - poc)."""
    sx, sy = shift
    t = triplet.pocs[triplet.target_index]
    offsets = tuple(
        (dx + sx * (t - p), dy + sy * (t - p)) for (dx, dy), p in zip(triplet.offsets, triplet.pocs)
    )
    return replace(triplet, offsets=offsets)


def max_motion_shift(triplet: Triplet) -> int:
    margin = (triplet.size - triplet.window) // 2
    t = triplet.pocs[triplet.target_index]
    span = max(abs(t - p) for p in triplet.pocs)
    return margin // span


@dataclass(frozen=True)
class AugmentConfig:
    flip_h: float = 0.5
    flip_v: float = 0.5
    reverse: float = 0.5
    max_shift: int = 0


def augment(triplet: Triplet, rng, cfg: AugmentConfig = AugmentConfig()) -> Triplet:
    out = triplet
    if rng.random() < cfg.flip_h:
        out = flip(out, horizontal=True)
    if rng.random() < cfg.flip_v:
        out = flip(out, horizontal=False)
    if rng.random() < cfg.reverse:
        out = reverse_order(out)
    limit = min(cfg.max_shift, max_motion_shift(out))
    if limit > 0:
        out = shift_references(out, tuple(int(v) for v in rng.integers(-limit, limit + 1, size=2)))
    return out


# ---------------------------------------------------------------------------
# compression augmentation


def compression_augment(frames, qp_set=DESK_QPS, configs=CODING_PROFILES, **coding_kw):
    """Decoded variants of a sequence keyed by (profile, qp), coded without deep prediction.

    ``coding_kw`` sets further :class:`CodingConfig` fields such as ``search``.
    """
    from .codec import CodingConfig, encode

    variants = {}
    for profile in configs:
        for qp in qp_set:
            result = encode(frames, CodingConfig(profile=profile, qp=qp, dfp=False, **coding_kw))
            variants[(profile, qp)] = result.recon
    return variants


def sample_variant(raw, variants, rng):
    """Raw sequence or a coded one: coding profile first, then QP, each uniformly."""
    profiles = sorted({p for p, _ in variants})
    choice = int(rng.integers(0, len(profiles) + 1))
    if choice == len(profiles):
        return "raw", raw
    profile = profiles[choice]
    qps = sorted(q for p, q in variants if p == profile)
    qp = qps[int(rng.integers(0, len(qps)))]
    return f"{profile}@{qp}", variants[(profile, qp)]


# ---------------------------------------------------------------------------
# candidate extraction


def frames_to_tensors(frames) -> list[np.ndarray]:
    return [yuv420_to_444(f) / 255.0 for f in frames]


def extract_candidates(tensors, size: int, window: int, count: int, rng, source: str = "",
                       degradation: str = "raw", modes=("bi", "uni")) -> list[Triplet]:
    """Random co-located candidate triplets from consecutive frames."""
    h, w = tensors[0].shape[:2]
    if len(tensors) < 3 or size > min(h, w):
        return []
    out = []
    for _ in range(count):
        t0 = int(rng.integers(0, len(tensors) - 2))
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        mode = modes[int(rng.integers(0, len(modes)))]
        patches = tuple(tensors[t0 + k][y:y + size, x:x + size].copy() for k in range(3))
        out.append(Triplet(patches, (t0, t0 + 1, t0 + 2), mode, source, degradation, window))
    return out


def source_in_validation(source: str, fraction: float = 0.1) -> bool:
    digest = hashlib.sha256(source.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") / 2**32 < fraction


def split_by_source(triplets, fraction: float = 0.1):
    train, val = [], []
    for t in triplets:
        (val if source_in_validation(t.source, fraction) else train).append(t)
    return train, val


@dataclass
class SuiteConfig:
    """Synthetic-motion training suite: many small clips with random translations."""

    sources: int = 48
    width: int = 96
    height: int = 64
    frames: int = 9
    max_velocity: float = 1.0
    local_fraction: float = 0.3
    candidates_per_source: int = 24
    candidate_size: int = 24
    window: int = 16
    uni_fraction: float = 0.5
    compression_qps: tuple = ()
    seed: int = 0

    @classmethod
    def from_kv(cls, values: dict[str, str], seed: int = 0) -> "SuiteConfig":
        """Suite settings from ``suite_*`` config keys; unset keys keep their defaults."""
        d = cls()
        w, h = parse_pair(values.get("suite_size", f"{d.width}x{d.height}"), int)
        qps = values.get("suite_compression_qps", "")
        return cls(
            sources=int(values.get("suite_sources", d.sources)),
            width=w,
            height=h,
            frames=int(values.get("suite_frames", d.frames)),
            max_velocity=float(values.get("suite_max_velocity", d.max_velocity)),
            local_fraction=float(values.get("suite_local_fraction", d.local_fraction)),
            candidates_per_source=int(values.get("suite_candidates", d.candidates_per_source)),
            candidate_size=int(values.get("suite_candidate_size", d.candidate_size)),
            window=int(values.get("suite_window", d.window)),
            uni_fraction=float(values.get("suite_uni_fraction", d.uni_fraction)),
            compression_qps=tuple(int(q) for q in qps.split(",") if q.strip()),
            seed=seed,
        )


def yuv_dataset(paths, size: tuple[int, int], candidate_size: int, window: int, count: int, seed: int):
    """(train, val) curated triplets drawn from raw YUV420 files, split by file."""
    from .video_io import read_yuv

    rng = np.random.default_rng(seed)
    cands = []
    for path in paths:
        frames = read_yuv(path, *size)
        cands += extract_candidates(frames_to_tensors(frames), candidate_size, window, count, rng, str(path))
    train_set, val_set = split_by_source(curate(cands))
    if not train_set:
        raise DatasetExhausted("dataset exhausted: every source fell into the validation split")
    return train_set, val_set or train_set


def load_dataset(values: dict[str, str], seed: int):
    """Dataset named by the ``data`` config key: ``synthetic`` or comma-separated YUV paths."""
    data = values.get("data", "synthetic").strip()
    if data == "synthetic":
        return synthetic_suite(SuiteConfig.from_kv(values, seed))
    paths = [p.strip() for p in data.split(",") if p.strip()]
    size = parse_pair(require(values, "data_size"), int)
    return yuv_dataset(
        paths, size,
        int(values.get("suite_candidate_size", 24)),
        int(values.get("suite_window", 16)),
        int(values.get("suite_candidates", 64)),
        seed,
    )


def synthetic_suite(cfg: SuiteConfig):
    """(train, val) curated triplets; validation sources are disjoint from training."""
    rng = np.random.default_rng(cfg.seed)
    train, val = [], []
    n_val = max(1, round(cfg.sources * 0.1))
    for s in range(cfg.sources):
        vel = tuple(float(v) for v in rng.uniform(-cfg.max_velocity, cfg.max_velocity, size=2))
        local = rng.random() < cfg.local_fraction
        ovel = tuple(float(v) for v in rng.uniform(-cfg.max_velocity, cfg.max_velocity, size=2))
        spec = SyntheticSpec(
            seed=int(rng.integers(0, 2**31)),
            motion="local" if local else "global",
            velocity=vel,
            object_velocity=ovel,
            object_size=(cfg.width // 3 // 2 * 2, cfg.height // 3 // 2 * 2),
            frames=cfg.frames,
            width=cfg.width,
            height=cfg.height,
            smoothness=float(rng.uniform(0.5, 2.0)),
        )
        frames, _ = generate_synthetic(spec)
        name = f"synthetic-{cfg.seed}-{s}"
        is_val = s < n_val
        variants = [("raw", frames)]
        if cfg.compression_qps and not is_val:
            coded = compression_augment(frames, cfg.compression_qps)
            variants += [(f"{p}@{q}", v) for (p, q), v in sorted(coded.items())]
        for tag, seq in variants:
            modes = ["uni"] * int(round(cfg.uni_fraction * 100)) + ["bi"] * int(round((1 - cfg.uni_fraction) * 100))
            cands = extract_candidates(
                frames_to_tensors(seq), cfg.candidate_size, cfg.window, cfg.candidates_per_source,
                rng, name, tag, tuple(modes),
            )
            kept = [t for t in cands if passes_filters(t)]
            (val if is_val else train).extend(kept)
    if not train or not val:
        raise DatasetExhausted("dataset exhausted: synthetic suite produced no usable triplets")
    return train, val


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdaMaxState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)


def adamax_step(weights: dict, grads: dict, state: AdaMaxState, lr: float = 0.001) -> None:
    """In-place AdaMax update of every array in ``weights``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name}")
    state.step += 1
    scale = lr / (1.0 - state.beta1**state.step)
    for name, w in weights.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(w))
        u = state.u.setdefault(name, np.zeros_like(w))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * u, np.abs(g), out=u)
        w -= scale * m / (u + state.eps)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch: int = 16
    epochs: int = 1
    iterations_per_epoch: int = 1000
    seed: int = 0
    loss: LossWeights = LossWeights()
    features: str = "edgebank-v1"
    ablation: str | None = None
    stage: str = "pretrain"
    init_weights: str | None = None
    net: str = "reduced"
    val_every: int = 100
    augment: AugmentConfig = AugmentConfig()

    def __post_init__(self):
        if self.ablation in ("", "none"):
            self.ablation = None
        if self.ablation is not None and self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose one of {ABLATIONS}")
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError(f"stage must be pretrain or finetune, got {self.stage!r}")
        if self.stage == "finetune" and not self.init_weights:
            raise ConfigError("finetune stage requires init_weights from a pre-training run")
        if self.ablation == "no_geometric_loss":
            self.loss = replace(self.loss, lambda_g=0.0)

    @property
    def iterations(self) -> int:
        return self.epochs * self.iterations_per_epoch

    def net_config(self) -> NetConfig:
        base = {"reduced": NetConfig.reduced(), "production": NetConfig.production()}
        if self.net not in base:
            raise ConfigError(f"net must be reduced or production, got {self.net!r}")
        return base[self.net].with_ablation(self.ablation)

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "TrainConfig":
        ablations = [a for a in ABLATIONS if parse_bool(values.get(a, "false"))]
        if len(ablations) > 1:
            raise ConfigError(f"at most one ablation switch per run, got {ablations}")
        ablation = values.get("ablation") or (ablations[0] if ablations else None)
        return cls(
            lr=float(values.get("lr", 0.001)),
            batch=int(values.get("batch", 16)),
            epochs=int(require(values, "epochs")),
            iterations_per_epoch=int(require(values, "iterations_per_epoch")),
            seed=int(require(values, "seed")),
            loss=LossWeights(
                float(values.get("lambda_n", 2.0)),
                float(values.get("lambda_f", 2.0)),
                float(values.get("lambda_g", 1.0)),
            ),
            features=values.get("features", "edgebank-v1"),
            ablation=ablation,
            stage=require(values, "stage"),
            init_weights=values.get("init_weights") or None,
            net=values.get("net", "reduced"),
            val_every=int(values.get("val_every", 100)),
            augment=AugmentConfig(
                flip_h=float(values.get("flip_h", 0.5)),
                flip_v=float(values.get("flip_v", 0.5)),
                reverse=float(values.get("reverse", 0.5)),
                max_shift=int(values.get("max_shift", 0)),
            ),
        )

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_kv(read_kv(path))


def batch_tensors(triplets, model: FramePredictor):
    x1, x2, tgt = [], [], []
    for tr in triplets:
        a, b, t, (t1, t2, tt) = tr.views()
        c1, c2 = model.index_constants(t1, t2, tt)
        x1.append(make_input_tensor(a, c1))
        x2.append(make_input_tensor(b, c2))
        tgt.append(t)
    return np.stack(x1), np.stack(x2), np.stack(tgt)


def predict_batch(model: FramePredictor, x1, x2, train=False):
    field = model.forward(x1, x2, train=train)
    return field, synthesize(x1[..., :3], x2[..., :3], field)


def psnr_unit(pred, target) -> float:
    mse = float(np.mean((np.clip(pred, 0.0, 1.0) - target) ** 2))
    return float("inf") if mse == 0 else 10.0 * math.log10(1.0 / mse)


def evaluate(model: FramePredictor, triplets, chunk: int = 64) -> float:
    """Mean validation PSNR (dB, unit peak, all channels) over centred windows."""
    scores = []
    for i in range(0, len(triplets), chunk):
        x1, x2, tgt = batch_tensors(triplets[i:i + chunk], model)
        _, pred = predict_batch(model, x1, x2)
        scores += [psnr_unit(p, t) for p, t in zip(pred, tgt)]
    return float(np.mean(scores))


@dataclass
class TrainResult:
    model: FramePredictor
    log: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    @property
    def final_psnr(self) -> float:
        return self.log[-1][2] if self.log else float("nan")


def train_step(model, fx, cfg: TrainConfig, state: AdaMaxState, triplets) -> float:
    x1, x2, tgt = batch_tensors(triplets, model)
    field, pred = predict_batch(model, x1, x2, train=True)
    value, d_pred = loss_total_and_grad(pred, tgt, cfg.loss, fx)
    if not math.isfinite(value):
        raise TrainingDiverged(f"loss became non-finite ({value}) at step {state.step + 1}")
    grads = model.backward(synthesize_backward(x1[..., :3], x2[..., :3], field, d_pred))
    adamax_step(model.params, grads, state, cfg.lr)
    return value


def train(cfg: TrainConfig, dataset, val=None, model: FramePredictor | None = None,
          augment_data: bool = True, log_path=None, stop_psnr: float | None = None) -> TrainResult:
    """Run ``cfg.iterations`` AdaMax steps over ``dataset`` (a list of triplets).

    Validation PSNR is appended to the log every ``cfg.val_every`` iterations
    and after the last one. ``stop_psnr`` ends training early once reached.
    """
    if not dataset:
        raise DatasetExhausted("dataset exhausted: training set is empty")
    if model is None:
        if cfg.stage == "finetune":
            model = FramePredictor.load(cfg.init_weights)
            if cfg.ablation == "no_temporal_index":
                model.config = replace(model.config, dummy_index=True)
        else:
            model = FramePredictor(cfg.net_config(), seed=cfg.seed)
    fx = feature_extractor(cfg.features)
    rng = np.random.default_rng(cfg.seed + 1)
    state = AdaMaxState()
    result = TrainResult(model)
    val = val if val is not None else dataset
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["iteration", "train_loss", "val_psnr"])
    try:
        for it in range(1, cfg.iterations + 1):
            idx = rng.integers(0, len(dataset), size=cfg.batch)
            batch = [dataset[i] for i in idx]
            if augment_data:
                batch = [augment(t, rng, cfg.augment) for t in batch]
            loss = train_step(model, fx, cfg, state, batch)
            result.losses.append(loss)
            if it % cfg.val_every == 0 or it == cfg.iterations:
                score = evaluate(model, val)
                result.log.append((it, loss, score))
                if writer:
                    writer.writerow([it, f"{loss:.8g}", f"{score:.6f}"])
                    fh.flush()
                log.info("iter %d loss %.6g val %.3f dB", it, loss, score)
                if stop_psnr is not None and score >= stop_psnr:
                    break
    finally:
        if fh:
            fh.close()
    return result


def ablate(cfg: TrainConfig, train_set, val_set, log_dir=None) -> dict[str, TrainResult]:
    """Baseline plus one run per ablation switch, each with the same budget and seed."""
    runs = {}
    for name in ("full",) + ABLATIONS:
        run_cfg = replace(cfg, ablation=None if name == "full" else name, loss=cfg.loss)
        log_path = Path(log_dir) / f"{name}.csv" if log_dir else None
        runs[name] = train(run_cfg, train_set, val_set, log_path=log_path)
    return runs


def ablation_table(runs: dict[str, TrainResult]) -> list[tuple]:
    """Rows of (iteration, psnr_full, psnr_<ablation>...) for PSNR-vs-iteration curves."""
    names = list(runs)
    iters = [row[0] for row in runs[names[0]].log]
    rows = []
    for k, it in enumerate(iters):
        rows.append((it,) + tuple(runs[n].log[k][2] for n in names))
    return rows

