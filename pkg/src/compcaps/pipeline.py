"""Featurize, train, evaluate, grid-search and compare.

Training order: features -> outlier statistics (clip, then standardize) ->
dual-channel LSTM on pitch/energy -> capsule network.  After
``warmup_epochs`` capsule epochs the primary-capsule variance profile,
weighted per sample by the LSTM's probability of the true class, picks the
instantiation parameters to eliminate; the resulting mask stays frozen for
the remaining epochs and for inference.
"""

from __future__ import annotations

import itertools
import logging
import time
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import audio, checkpoint, config, tensor as T
from .baselines import BASELINES
from .capsnet import CapsNet, CapsNetConfig
from .compress import CompressionMask, build_mask, compression_report, variance_profile
from .config import TrainConfig
from .data import Manifest, speaker_folds
from .dclstm import DcLstm, DcLstmConfig, elimination_list
from .errors import LabelError, NonFiniteError, ParameterError
from .metrics import ConfusionMatrix, MetricsReport, TTestResult, confusion, precision_recall, \
    relative_improvement, t_test
from .tensor import Tensor

log = logging.getLogger(__name__)

PHILOX_LSTM, PHILOX_CAPS = 1, 2


# -- features ----------------------------------------------------------------------


@dataclass(frozen=True)
class ClipFeatures:
    mfcc: np.ndarray    # frames x 3*n_mfcc
    pitch: np.ndarray   # frames
    energy: np.ndarray  # frames


def feature_config(cfg: TrainConfig, sample_rate: int = 22050) -> audio.FeatureConfig:
    return audio.FeatureConfig(n_fft=cfg.n_fft, hop=cfg.hop, n_mfcc=cfg.n_mfcc, n_mels=cfg.n_mels,
                               sample_rate=sample_rate)


def featurize_clip(clip: audio.AudioClip, cfg: TrainConfig) -> ClipFeatures:
    fc = feature_config(cfg, clip.sample_rate)
    return ClipFeatures(audio.mfcc_stack(clip, fc).values, audio.pitch_series(clip, fc).values[:, 0],
                        audio.energy_series(clip, fc).values[:, 0])


def _featurize_path(args) -> ClipFeatures:
    path, cfg = args
    return featurize_clip(audio.read_wav(path), cfg)


def featurize(manifest: Manifest, cfg: TrainConfig) -> list[ClipFeatures]:
    """Features for every record, in manifest order; ``cfg.workers`` > 1 fans out to processes."""
    jobs = [(manifest.audio_path(r), cfg) for r in manifest.records]
    if cfg.workers == 1 or len(jobs) < 2:
        return [_featurize_path(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(_featurize_path, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))


@dataclass(frozen=True)
class Normalizer:
    """Per-column outlier clipping followed by standardization, fit on training frames."""

    mfcc: audio.FeatureStats
    pitch: audio.FeatureStats
    energy: audio.FeatureStats
    limit: float

    @classmethod
    def fit(cls, feats: list[ClipFeatures], limit: float) -> "Normalizer":
        return cls(audio.FeatureStats.fit(np.vstack([f.mfcc for f in feats])),
                   audio.FeatureStats.fit(np.concatenate([f.pitch for f in feats])[:, None]),
                   audio.FeatureStats.fit(np.concatenate([f.energy for f in feats])[:, None]), limit)

    def _norm(self, x: np.ndarray, stats: audio.FeatureStats, kind: str) -> np.ndarray:
        clipped = audio.remove_outliers(audio.FeatureMatrix(x, kind), stats, self.limit).values
        return stats.standardize(clipped)

    def apply(self, f: ClipFeatures) -> ClipFeatures:
        return ClipFeatures(self._norm(f.mfcc, self.mfcc, "stacked"),
                            self._norm(f.pitch[:, None], self.pitch, "pitch")[:, 0],
                            self._norm(f.energy[:, None], self.energy, "energy")[:, 0])


def fit_frames(x: np.ndarray, frames: int) -> np.ndarray:
    """Centre-crop or zero-pad the first axis to ``frames`` rows."""
    n = x.shape[0]
    if n >= frames:
        start = (n - frames) // 2
        return x[start:start + frames]
    left = (frames - n) // 2
    pad = [(left, frames - n - left)] + [(0, 0)] * (x.ndim - 1)
    return np.pad(x, pad)


@dataclass
class Inputs:
    maps: np.ndarray     # N x frames x dims
    pitch: np.ndarray    # N x steps x 1
    energy: np.ndarray   # N x steps x 1

    def __len__(self) -> int:
        return self.maps.shape[0]

    def take(self, idx) -> "Inputs":
        return Inputs(self.maps[idx], self.pitch[idx], self.energy[idx])

    def pooled(self) -> np.ndarray:
        """Utterance-level vectors (frame mean and sd of every stream) for the baselines."""
        parts = [self.maps.mean(axis=1), self.maps.std(axis=1), self.pitch.mean(axis=1), self.pitch.std(axis=1),
                 self.energy.mean(axis=1), self.energy.std(axis=1)]
        return np.concatenate(parts, axis=1)


def build_inputs(feats: list[ClipFeatures], norm: Normalizer, cfg: TrainConfig) -> Inputs:
    maps, pitch, energy = [], [], []
    for f in feats:
        g = norm.apply(f)
        maps.append(fit_frames(g.mfcc, cfg.frames))
        pitch.append(fit_frames(g.pitch, cfg.frames)[::cfg.lstm_stride, None])
        energy.append(fit_frames(g.energy, cfg.frames)[::cfg.lstm_stride, None])
    return Inputs(np.stack(maps), np.stack(pitch), np.stack(energy))


# -- model -------------------------------------------------------------------------


def capsnet_config(cfg: TrainConfig, num_classes: int) -> CapsNetConfig:
    return CapsNetConfig(input_frames=cfg.frames, input_dims=3 * cfg.n_mfcc, conv1_channels=cfg.conv1_channels,
                         conv1_kernel=cfg.conv1_kernel, conv2_channels=cfg.conv2_channels,
                         conv2_kernel=cfg.conv2_kernel, conv2_stride=cfg.conv2_stride,
                         capsule_dim=cfg.capsule_dim, num_classes=num_classes,
                         class_capsule_dim=cfg.class_capsule_dim, routing_iters=cfg.routing_iters,
                         first_stage_width=cfg.first_stage_width, decoder_widths=cfg.decoder_widths,
                         m_plus=cfg.m_plus, m_minus=cfg.m_minus, lam=cfg.lam, w_rec=cfg.w_rec, head=cfg.head)


@dataclass
class Model:
    config: TrainConfig
    labels: tuple[str, ...]
    normalizer: Normalizer
    dclstm: DcLstm
    capsnet: CapsNet
    mask: CompressionMask
    history: list[dict] = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: TrainConfig, labels, normalizer: Normalizer) -> "Model":
        k = len(labels)
        lstm = DcLstm(DcLstmConfig(hidden_dim=cfg.lstm_hidden, num_classes=k), np.random.default_rng([cfg.seed, 1]))
        caps = CapsNet(capsnet_config(cfg, k), np.random.default_rng([cfg.seed, 2]))
        return cls(cfg, tuple(labels), normalizer, lstm, caps, build_mask((), cfg.capsule_dim))

    def scores(self, inputs: Inputs, batch: int = 64) -> np.ndarray:
        """(N, K) class scores: capsule lengths, or softmax output for the ablation head."""
        out = [self.capsnet.scores(inputs.maps[i:i + batch], self.mask) for i in range(0, len(inputs), batch)]
        return np.concatenate(out, axis=0)

    def predict(self, inputs: Inputs) -> np.ndarray:
        return np.argmax(self.scores(inputs), axis=1)

    def inputs_for(self, feats: list[ClipFeatures]) -> Inputs:
        return build_inputs(feats, self.normalizer, self.config)

    # -- persistence ---------------------------------------------------------

    def to_sections(self) -> dict[str, np.ndarray]:
        n = self.normalizer
        s = {"meta/config": checkpoint.text_section(config.echo(self.config)),
             "meta/labels": checkpoint.text_section("\n".join(self.labels)),
             "mask/D": self.mask.D,
             "mask/rate": np.array(self.mask.rate),
             "stats/limit": np.array(n.limit)}
        for name in ("mfcc", "pitch", "energy"):
            st = getattr(n, name)
            s[f"stats/{name}_mean"], s[f"stats/{name}_sd"] = st.mean, st.sd
        for name, p in self.dclstm.named_parameters().items():
            s[f"dclstm/{name}"] = p.data
        for name, p in self.capsnet.named_parameters().items():
            s[f"capsnet/{name}"] = p.data
        if self.history:
            keys = ("epoch", "loss", "accuracy")
            s["history/capsnet"] = np.array([[h[k] for k in keys] for h in self.history if h["stage"] == "capsnet"])
        return s

    @classmethod
    def from_sections(cls, s: dict[str, np.ndarray]) -> "Model":
        from .errors import FormatError

        def need(name):
            if name not in s:
                raise FormatError(f"section {name!r} is missing")
            return s[name]

        cfg = config.from_text(TrainConfig, checkpoint.section_text(need("meta/config")), "meta/config")
        labels = checkpoint.section_text(need("meta/labels")).split("\n")
        stats = {k: audio.FeatureStats(need(f"stats/{k}_mean"), need(f"stats/{k}_sd"))
                 for k in ("mfcc", "pitch", "energy")}
        norm = Normalizer(stats["mfcc"], stats["pitch"], stats["energy"], float(need("stats/limit")))
        model = cls.initial(cfg, labels, norm)
        for prefix, obj in (("dclstm", model.dclstm), ("capsnet", model.capsnet)):
            for name, p in obj.named_parameters().items():
                arr = need(f"{prefix}/{name}")
                if arr.shape != p.data.shape:
                    raise FormatError(f"section '{prefix}/{name}': shape {arr.shape} != expected {p.data.shape}")
                p.data = arr.copy()
        D = need("mask/D")
        try:
            model.mask = build_mask(np.flatnonzero(D == 0), D.size, float(need("mask/rate")))
        except (ParameterError, IndexError) as exc:
            raise FormatError(f"section 'mask/D': {exc}") from None
        if "history/capsnet" in s:
            model.history = [{"stage": "capsnet", "epoch": int(r[0]), "loss": float(r[1]), "accuracy": float(r[2])}
                             for r in s["history/capsnet"]]
        return model

    def save(self, path) -> bytes:
        return checkpoint.save(path, self.to_sections())

    @classmethod
    def load(cls, path) -> "Model":
        return cls.from_sections(checkpoint.load(path))


# -- training ----------------------------------------------------------------------


def _batches(n: int, size: int, seed: int, stream: int, epoch: int):
    """Shuffled index batches from a counter-based generator keyed by (seed, stream, epoch)."""
    gen = np.random.Generator(np.random.Philox(key=(seed << 8) | stream, counter=epoch))
    order = gen.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def _check_finite(loss: Tensor, stage: str, epoch: int, batch: int) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise NonFiniteError(f"{stage}: non-finite loss {value} at epoch {epoch}, batch {batch}")
    return value


def _step(loss_fn, params, opt, stage, epoch, b):
    try:
        loss = loss_fn()
        value = _check_finite(loss, stage, epoch, b)
        opt.zero_grad()
        loss.backward(params)
        opt.step()
    except NonFiniteError as exc:
        if "epoch" in str(exc):
            raise
        raise NonFiniteError(f"{stage}: {exc} at epoch {epoch}, batch {b}") from exc
    return value


def train_dclstm(model: Model, inputs: Inputs, y: np.ndarray, history: list) -> None:
    cfg = model.config
    params = model.dclstm.parameters()
    opt = T.Adam(params, lr=cfg.lstm_lr)
    for epoch in range(cfg.lstm_epochs):
        t0, total, correct = time.perf_counter(), 0.0, 0
        for b, idx in enumerate(_batches(len(inputs), cfg.batch_size, cfg.seed, PHILOX_LSTM, epoch)):
            holder = {}

            def loss_fn():
                logits = model.dclstm.logits(inputs.pitch[idx], inputs.energy[idx])
                holder["logits"] = logits.data
                return T.cross_entropy(logits, y[idx])

            total += _step(loss_fn, params, opt, "dclstm", epoch, b) * len(idx)
            correct += int(np.sum(np.argmax(holder["logits"], axis=1) == y[idx]))
        rec = {"stage": "dclstm", "epoch": epoch, "loss": total / len(inputs), "accuracy": correct / len(inputs),
               "seconds": time.perf_counter() - t0}
        history.append(rec)
        log.info("dclstm epoch %d loss %.4f acc %.3f", epoch, rec["loss"], rec["accuracy"])


def calibrate(model: Model, inputs: Inputs, y: np.ndarray, batch: int = 64) -> CompressionMask:
    """Elimination mask from the LSTM-weighted variance of primary capsule coordinates."""
    cfg = model.config
    acts, weights = [], []
    for i in range(0, len(inputs), batch):
        part = inputs.take(slice(i, i + batch))
        acts.append(model.capsnet.primary_capsules(part.maps).data)
        p = model.dclstm.probabilities(part.pitch, part.energy)
        weights.append(p[np.arange(len(part)), y[i:i + batch]])
    w = np.concatenate(weights)
    profile = variance_profile(np.concatenate(acts), w if w.sum() > 0 else None)
    elim = elimination_list(profile.variances, cfg.compression_rate)
    return build_mask(elim, cfg.capsule_dim, cfg.compression_rate)


def train_capsnet(model: Model, inputs: Inputs, y: np.ndarray, history: list, compression: bool) -> None:
    cfg = model.config
    net = model.capsnet
    params = net.parameters()
    opt = T.Adam(params, lr=cfg.lr)
    targets = inputs.maps.mean(axis=1)
    masked = cfg.head == "capsule"
    for epoch in range(cfg.epochs):
        if compression and masked and epoch == cfg.warmup_epochs:
            model.mask = calibrate(model, inputs, y)
            log.info("mask frozen at epoch %d: eliminated %s", epoch, model.mask.eliminated)
        t0, total, correct = time.perf_counter(), 0.0, 0
        for b, idx in enumerate(_batches(len(inputs), cfg.batch_size, cfg.seed, PHILOX_CAPS, epoch)):
            holder = {}

            def loss_fn():
                loss, scores = net.loss(Tensor(inputs.maps[idx]), y[idx], targets[idx], model.mask)
                holder["scores"] = scores
                return loss

            total += _step(loss_fn, params, opt, "capsnet", epoch, b) * len(idx)
            correct += int(np.sum(np.argmax(holder["scores"], axis=1) == y[idx]))
        rec = {"stage": "capsnet", "epoch": epoch, "loss": total / len(inputs), "accuracy": correct / len(inputs),
               "seconds": time.perf_counter() - t0}
        history.append(rec)
        log.info("capsnet epoch %d loss %.4f acc %.3f (%.1fs)", epoch, rec["loss"], rec["accuracy"],
                 rec["seconds"])
    if compression and masked and cfg.warmup_epochs >= cfg.epochs:
        model.mask = calibrate(model, inputs, y)


def train(cfg: TrainConfig, manifest: Manifest, compression: bool = True, feats=None) -> Model:
    """Full pipeline on ``manifest``; ``compression=False`` skips calibration (mask of ones)."""
    if len(manifest) == 0:
        raise ParameterError("cannot train on an empty manifest")
    feats = featurize(manifest, cfg) if feats is None else feats
    norm = Normalizer.fit(feats, cfg.outlier_limit)
    model = Model.initial(cfg, manifest.labels, norm)
    model.capsnet.cfg.check_first_stage()
    inputs = model.inputs_for(feats)
    y = np.array(manifest.targets())
    history: list[dict] = []
    train_dclstm(model, inputs, y, history)
    train_capsnet(model, inputs, y, history, compression)
    model.history = history
    return model


# -- evaluation --------------------------------------------------------------------


@dataclass
class Evaluation:
    confusion: ConfusionMatrix
    report: MetricsReport
    scores: np.ndarray
    y_true: np.ndarray
    y_pred: np.ndarray
    labels: tuple[str, ...]

    @property
    def accuracy(self) -> float:
        return self.report.accuracy


def targets_for(model_labels, manifest: Manifest) -> np.ndarray:
    missing = sorted({r.emotion for r in manifest.records} - set(model_labels))
    if missing:
        raise LabelError(f"labels {missing} are unknown to the model")
    return np.array([list(model_labels).index(r.emotion) for r in manifest.records])


def evaluate(model: Model, manifest: Manifest, feats=None) -> Evaluation:
    y = targets_for(model.labels, manifest)
    feats = featurize(manifest, model.config) if feats is None else feats
    scores = model.scores(model.inputs_for(feats))
    pred = np.argmax(scores, axis=1)
    m = confusion(y, pred, len(model.labels))
    return Evaluation(m, precision_recall(m), scores, y, pred, model.labels)


def baseline_accuracy(name: str, model: Model, train_feats, train_manifest: Manifest, test_feats,
                      test_manifest: Manifest, **kwargs) -> float:
    """Fit a reference classifier on pooled utterance features normalized like ``model``."""
    Xtr = model.inputs_for(train_feats).pooled()
    Xte = model.inputs_for(test_feats).pooled()
    clf = BASELINES[name](**kwargs).fit(Xtr, targets_for(model.labels, train_manifest))
    return clf.score(Xte, targets_for(model.labels, test_manifest))


def compression_summary(model: Model) -> dict:
    return compression_report(model.capsnet.cfg, model.mask)


# -- grid search -------------------------------------------------------------------


def parse_grid(text: str, source: str = "<grid>") -> dict[str, list]:
    """``key = v1, v2, ...`` lines; values are typed like :class:`TrainConfig` fields."""
    hints = typing.get_type_hints(TrainConfig)
    grid = {}
    for key, (raw, lineno) in config.parse_pairs(text, source).items():
        if key not in hints:
            raise ParameterError(f"{source}:{lineno}: unknown key {key!r}")
        if hints[key] is tuple[int, ...] or typing.get_origin(hints[key]) is tuple:
            values = [config._convert(v.strip(), hints[key], f"{source}:{lineno}") for v in raw.split(";")]
        else:
            values = [config._convert(v.strip(), hints[key], f"{source}:{lineno}") for v in raw.split(",")]
        if not raw.strip() or not values:
            raise ParameterError(f"{source}:{lineno}: empty value list for {key!r}")
        grid[key] = values
    return grid


def grid_candidates(grid: dict[str, list]) -> list[dict]:
    """Cartesian product over sorted parameter names, values in listed order."""
    if not grid:
        raise ParameterError("grid is empty")
    for k, v in grid.items():
        if len(v) == 0:
            raise ParameterError(f"grid parameter {k!r} has an empty value list")
    keys = sorted(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def grid_search(grid: dict[str, list], cfg: TrainConfig, manifest: Manifest, folds: int = 5,
                scorer=None) -> tuple[TrainConfig, list[dict]]:
    """Exhaustive search; score = mean held-out accuracy over speaker folds; first best wins ties.

    ``scorer(cfg, train, test)`` defaults to train-then-evaluate accuracy.
    """
    candidates = grid_candidates(grid)
    splits = speaker_folds(manifest, folds)
    if scorer is None:
        cache: dict = {}

        def scorer(c, tr, te):
            key = (c.n_fft, c.hop, c.n_mfcc, c.n_mels)
            if key not in cache:
                feats = featurize(manifest, c)
                cache[key] = {r.path: f for r, f in zip(manifest.records, feats)}
            table = cache[key]
            model = train(c, tr, feats=[table[r.path] for r in tr.records])
            return evaluate(model, te, feats=[table[r.path] for r in te.records]).accuracy

    rows, best, best_score = [], None, -np.inf
    for params in candidates:
        c = config.replace(cfg, **params)
        scores = [float(scorer(c, tr, te)) for tr, te in splits]
        mean = float(np.mean(scores))
        rows.append({"params": params, "fold_scores": scores, "mean": mean})
        log.info("grid %s -> %.4f", params, mean)
        if mean > best_score:
            best, best_score = c, mean
    return best, rows


def grid_table_csv(rows: list[dict]) -> str:
    keys = sorted(rows[0]["params"]) if rows else []
    n = len(rows[0]["fold_scores"]) if rows else 0
    lines = [",".join(keys + [f"fold{i}" for i in range(n)] + ["mean"])]
    for r in rows:
        lines.append(",".join([str(r["params"][k]) for k in keys] + [f"{s:.6f}" for s in r["fold_scores"]]
                              + [f"{r['mean']:.6f}"]))
    return "\n".join(lines) + "\n"


# -- comparison --------------------------------------------------------------------


@dataclass(frozen=True)
class Comparison:
    test: TTestResult
    improvement: float
    text: str


def compare_runs(runs_a, runs_b, acc_a: float | None = None, acc_b: float | None = None) -> Comparison:
    """t statistic between two run-accuracy vectors plus the relative improvement of A over B.

    Accuracies default to the run means (as percentages when the runs are fractions).
    """
    a, b = np.asarray(runs_a, dtype=float), np.asarray(runs_b, dtype=float)
    res = t_test(a, b)
    acc_a = float(a.mean()) if acc_a is None else acc_a
    acc_b = float(b.mean()) if acc_b is None else acc_b
    imp = relative_improvement(acc_a, acc_b)
    t_txt = ("+inf" if res.t > 0 else "-inf") if res.infinite else f"{res.t:.4f}"
    verdict = "significant at 0.01" if res.significant else "not significant at 0.01"
    text = (f"n = {res.n}\nt = {t_txt}\nsd_pooled = {res.sd_pooled:.6f}\n"
            f"verdict: {verdict} (critical value 3.17)\n"
            f"accuracy A = {acc_a:.2f}, accuracy B = {acc_b:.2f}\nrelative improvement = {imp:.2f} %\n")
    return Comparison(res, imp, text)
