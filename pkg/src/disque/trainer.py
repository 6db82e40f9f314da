"""Manifest loading, quadruple construction, the optimisation loop and checkpoints."""

from __future__ import annotations

import collections
import concurrent.futures
import dataclasses
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .distortions import ALL_KINDS, BankDomain, Kind
from .errors import CheckpointError, ConfigError, DataError, NumericalError
from .network import DualHeadUNet, NetConfig
from .objective import LOG_COLUMNS, LossBreakdown, total_loss
from .pixelcore import Colorspace, Image, read_image, screen_image
from .tonemap import TmoSpec, apply_spec, sample_spec

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "disque-checkpoint"
CHECKPOINT_VERSION = 1


# -- manifest ------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    colorspace: Colorspace = Colorspace.SRGB
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps({"path": self.path, "colorspace": Colorspace(self.colorspace).value,
                           "split": self.split}, sort_keys=True)


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    bank_domain: BankDomain = BankDomain.SDR
    root: Path = field(default_factory=Path)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def load_images(self, split: str | None = None) -> list[Image]:
        return [read_image(self.resolve(e), e.colorspace) for e in self.entries
                if split is None or e.split == split]


def write_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    Path(path).write_text("".join(e.to_json() + "\n" for e in entries))


def load_manifest(path: str | Path, validate: bool = True) -> Manifest:
    """Read a JSON-lines manifest; paths are resolved relative to its directory."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entries.append(ManifestEntry(rec["path"], Colorspace(rec.get("colorspace", "srgb")),
                                         rec.get("split", "train")))
        except (ValueError, KeyError) as e:
            raise DataError(f"{path}:{lineno}: bad manifest line ({e})") from None
    if len(entries) < 2:
        raise DataError(f"manifest {path} needs at least 2 entries, has {len(entries)}")
    spaces = {e.colorspace for e in entries}
    domain = BankDomain.HDR if spaces == {Colorspace.PQ_BT2100} else BankDomain.SDR
    if Colorspace.PQ_BT2100 in spaces and domain is BankDomain.SDR:
        raise DataError("manifest mixes PQ and SDR entries")
    manifest = Manifest(entries, domain, path.parent)
    if validate:
        for e in entries:
            read_image(manifest.resolve(e), e.colorspace)
    return manifest


# -- configuration ---------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 36
    steps: int = 400_000
    lr0: float = 2e-4
    decay: float = 0.99
    decay_every: int = 1000
    lambda_f: float = 0.1
    beta: float = 0.5
    tau: float = 0.2
    eps_char: float = 1e-3
    patch_size: int = 128
    seed: int = 0
    checkpoint_every: int = 10_000
    workers: int = 1
    deterministic: bool = True
    screen: bool = True
    kinds: list[str] | None = None
    crossing: str = "mixing"
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if isinstance(self.net, dict):
            self.net = NetConfig.from_dict(self.net)
        for name in ("batch_size", "steps", "lr0", "decay", "decay_every", "tau",
                     "eps_char", "patch_size", "checkpoint_every", "workers"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lambda_f < 0 or self.beta < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.patch_size != self.net.patch_size:
            self.net.patch_size = self.patch_size
        if self.kinds is not None:
            try:
                self.kinds = [Kind(k).value for k in self.kinds]
            except ValueError as e:
                raise ConfigError(str(e)) from None
        if self.crossing not in ("mixing", "replacement"):
            raise ConfigError(f"unknown crossing {self.crossing!r}")

    @classmethod
    def paper(cls) -> "TrainConfig":
        return cls()

    @classmethod
    def desk(cls, **kw) -> "TrainConfig":
        base = dict(batch_size=8, steps=5000, patch_size=64, checkpoint_every=1000,
                    net=NetConfig.toy(64))
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_dict(data.get("train", data))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def lr_at(step: int, lr0: float = 2e-4, decay: float = 0.99, every: int = 1000) -> float:
    """Stepped exponential decay: multiply by ``decay`` every ``every`` steps."""
    return lr0 * decay ** (step // every)


# -- quadruples -------------------------------------------------------------------------

@dataclass
class Quadruple:
    views: np.ndarray  # 4 x P x P x 3, ordered x11, x12, x21, x22
    spec: object
    sources: tuple[int, int]
    offsets: tuple[tuple[int, int], tuple[int, int]]

    @property
    def x11(self):
        return self.views[0]

    @property
    def x12(self):
        return self.views[1]

    @property
    def x21(self):
        return self.views[2]

    @property
    def x22(self):
        return self.views[3]


def _region_and_patch(img: Image, patch: int, rng: np.random.Generator):
    """Pick a patch and the 2x-sized region centred on it (reflect-padded if needed)."""
    h, w = img.height, img.width
    if h < patch or w < patch:
        raise DataError(f"image {h}x{w} smaller than patch size {patch}")
    r = int(rng.integers(0, h - patch + 1))
    c = int(rng.integers(0, w - patch + 1))
    m = patch // 2
    padded = np.pad(img.pixels, ((m, m), (m, m), (0, 0)), mode="reflect")
    region = padded[r:r + 2 * patch, c:c + 2 * patch]
    return img.with_pixels(region), (r, c)


def _center(px: np.ndarray, patch: int) -> np.ndarray:
    m = patch // 2
    return px[m:m + patch, m:m + patch]


def build_quadruple(images: list[Image], rng_seed=None, patch_size: int = 128,
                    domain: BankDomain | str = BankDomain.SDR, kinds=None, spec=None,
                    screen: bool = True, max_retries: int = 50, **screen_kw) -> Quadruple:
    """Sample two distinct source images, one patch from each and one transform.

    The transform is applied to a region twice the patch size centred on the
    patch and the result is centre-cropped, so border handling of blurs and
    resizes sees real image context.
    """
    if len(images) < 2:
        raise DataError("need at least two source images")
    rng = np.random.default_rng(rng_seed)
    domain = BankDomain(getattr(domain, "value", domain))
    kinds = kinds if kinds is not None else ALL_KINDS
    picks = []
    for _ in range(max_retries):
        i1, i2 = (int(v) for v in rng.choice(len(images), size=2, replace=False))
        reg1, off1 = _region_and_patch(images[i1], patch_size, rng)
        reg2, off2 = _region_and_patch(images[i2], patch_size, rng)
        if screen and domain is BankDomain.SDR:
            ok = all(screen_image(Image(_center(r.pixels, patch_size)), **screen_kw).accepted
                     for r in (reg1, reg2))
            if not ok:
                continue
        picks = [(i1, reg1, off1), (i2, reg2, off2)]
        break
    if not picks:
        raise DataError(f"screening rejected every candidate after {max_retries} retries")
    if spec is None:
        spec = sample_spec(domain, int(rng.integers(0, 2**31 - 1)), kinds)
    views = []
    for _, region, _ in picks:
        views.append(_center(region.pixels, patch_size))
        views.append(_center(apply_spec(region, spec).pixels, patch_size))
    return Quadruple(np.stack(views).astype(np.float32), spec,
                     (picks[0][0], picks[1][0]), (picks[0][2], picks[1][2]))


def quadruple_seed(seed: int, step: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, step, index])


def build_batch(images: list[Image], cfg: TrainConfig, step: int,
                domain: BankDomain = BankDomain.SDR) -> tuple[torch.Tensor, list]:
    quads = [build_quadruple(images, quadruple_seed(cfg.seed, step, i), cfg.patch_size,
                             domain, cfg.kinds, screen=cfg.screen)
             for i in range(cfg.batch_size)]
    arr = np.stack([q.views for q in quads]).transpose(0, 1, 4, 2, 3)
    return torch.from_numpy(np.ascontiguousarray(arr)), [q.spec for q in quads]


class _Prefetcher:
    """Builds batches ahead of the optimiser, yielding them in step order."""

    def __init__(self, fn, steps, workers: int):
        self.fn = fn
        self.steps = iter(steps)
        self.workers = workers
        self.pool = concurrent.futures.ThreadPoolExecutor(workers) if workers > 1 else None
        self.pending = collections.deque()

    def __iter__(self):
        if self.pool is None:
            for s in self.steps:
                yield s, self.fn(s)
            return
        try:
            for s in self.steps:
                self.pending.append((s, self.pool.submit(self.fn, s)))
                if len(self.pending) >= 2 * self.workers:
                    s0, fut = self.pending.popleft()
                    yield s0, fut.result()
            while self.pending:
                s0, fut = self.pending.popleft()
                yield s0, fut.result()
        finally:
            self.pool.shutdown(cancel_futures=True)


# -- checkpoints -------------------------------------------------------------------------

def save_checkpoint(path: str | Path, model: DualHeadUNet, optimizer, step: int,
                    config: TrainConfig | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "net_config": model.config.to_dict(),
        "train_config": config.to_dict() if config else None,
        "model": model.state_dict(),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def read_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {type(e).__name__}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload.get('version')} unsupported (expected {CHECKPOINT_VERSION})")
    return payload


def load_model(path: str | Path, dtype=torch.float32) -> DualHeadUNet:
    payload = read_checkpoint(path)
    model = DualHeadUNet(NetConfig.from_dict(payload["net_config"]))
    model.load_state_dict(payload["model"])
    return model.to(dtype).eval()


def model_checksum(model: DualHeadUNet) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()[:16]


# -- training loop -----------------------------------------------------------------------

@dataclass
class TrainResult:
    model: DualHeadUNet
    log_path: Path
    checkpoints: list[Path]
    history: list[dict]


def _training_model(net: NetConfig) -> DualHeadUNet:
    # channels-last weights run the small CPU convolutions about 15% faster
    return DualHeadUNet(net).to(memory_format=torch.channels_last)


class Trainer:
    def __init__(self, config: TrainConfig, images: list[Image], out_dir: str | Path,
                 domain: BankDomain = BankDomain.SDR):
        self.config = config
        self.images = images
        self.domain = BankDomain(getattr(domain, "value", domain))
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.out_dir / "train_log.csv"
        if config.deterministic:
            torch.use_deterministic_algorithms(True)
        torch.manual_seed(config.seed)
        self.model = _training_model(config.net)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=config.lr0,
                                          betas=(0.9, 0.999), eps=1e-8)
        self.step = 0

    def load(self, checkpoint: str | Path) -> None:
        payload = read_checkpoint(checkpoint)
        if NetConfig.from_dict(payload["net_config"]).to_dict() != self.config.net.to_dict():
            raise CheckpointError("checkpoint network config differs from the training config")
        model = _training_model(self.config.net)
        optimizer = torch.optim.Adam(model.parameters(), lr=self.config.lr0)
        try:
            model.load_state_dict(payload["model"])
            optimizer.load_state_dict(payload["optimizer"])
        except (RuntimeError, KeyError, ValueError, TypeError) as e:
            raise CheckpointError(f"checkpoint state does not fit the model: {e}") from None
        self.model, self.optimizer, self.step = model, optimizer, int(payload["step"])

    def _batch(self, step):
        return build_batch(self.images, self.config, step, self.domain)

    def _prepare_log(self):
        rows = []
        if self.step > 0 and self.log_path.exists():
            for line in self.log_path.read_text().splitlines()[1:]:
                if int(line.split(",", 1)[0]) < self.step:
                    rows.append(line)
        self.log_path.write_text(",".join(LOG_COLUMNS) + "\n" + "".join(r + "\n" for r in rows))

    def _snapshot(self, step, batch, breakdown):
        path = self.out_dir / f"nonfinite_step{step:07d}.npz"
        np.savez(path, step=step, batch=batch.numpy(),
                 **{k: np.float64(v) for k, v in breakdown.values().items()})
        return path

    def run(self, until: int | None = None) -> TrainResult:
        cfg = self.config
        until = cfg.steps if until is None else min(until, cfg.steps)
        self._prepare_log()
        checkpoints, history = [], []
        workers = 1 if cfg.deterministic else cfg.workers
        t0 = time.monotonic()
        self.model.train()
        with self.log_path.open("a") as fh:
            for step, (batch, _specs) in _Prefetcher(self._batch, range(self.step, until), workers):
                lr = lr_at(step, cfg.lr0, cfg.decay, cfg.decay_every)
                for g in self.optimizer.param_groups:
                    g["lr"] = lr
                self.optimizer.zero_grad(set_to_none=True)
                br = total_loss(self.model, batch, cfg.lambda_f, cfg.beta, cfg.tau, cfg.eps_char,
                                crossing=cfg.crossing)
                if not br.is_finite():
                    snap = self._snapshot(step, batch, br)
                    raise NumericalError(f"non-finite loss at step {step}; inputs saved to {snap}")
                br.total.backward()
                self.optimizer.step()
                fh.write(br.csv_row(step, lr) + "\n")
                history.append({"step": step, "lr": lr, **br.values()})
                self.step = step + 1
                if self.step % cfg.checkpoint_every == 0 or self.step == cfg.steps:
                    fh.flush()
                    path = self.out_dir / f"ckpt_{self.step:07d}.pt"
                    save_checkpoint(path, self.model, self.optimizer, self.step, cfg)
                    checkpoints.append(path)
                if step % 100 == 0:
                    log.info("step %d total %.4g (%.1fs)", step, br.values()["total"],
                             time.monotonic() - t0)
        self.model.eval()
        return TrainResult(self.model, self.log_path, checkpoints, history)


def train(config: TrainConfig, manifest: Manifest | list[Image], out_dir: str | Path,
          resume_from: str | Path | None = None) -> TrainResult:
    if isinstance(manifest, Manifest):
        images, domain = manifest.load_images(), manifest.bank_domain
    else:
        images, domain = list(manifest), BankDomain.SDR
        if images and all(im.colorspace == Colorspace.PQ_BT2100 for im in images):
            domain = BankDomain.HDR
    trainer = Trainer(config, images, out_dir, domain)
    if resume_from is not None:
        trainer.load(resume_from)
    return trainer.run()


def resume(checkpoint: str | Path, manifest: Manifest | list[Image], out_dir: str | Path,
           config: TrainConfig | None = None) -> TrainResult:
    """Continue training from ``checkpoint``; the stored config is used unless given."""
    if config is None:
        stored = read_checkpoint(checkpoint).get("train_config")
        if stored is None:
            raise CheckpointError("checkpoint carries no training config")
        config = TrainConfig.from_dict(stored)
    return train(config, manifest, out_dir, resume_from=checkpoint)
