"""End-to-end orchestration: graded label-filtering masks, the inner
(cluster -> filter -> pseudo-label-train) loop, the outer confident-label
loop, the pared-down baseline, the four evaluation settings, timing, and
result serialization.
"""

from __future__ import annotations

import dataclasses
import json
import time
import warnings
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import clustering, dimreduce, metrics
from .data import WindowSet, make_windows
from .encoder import EncoderConfig, EncoderModel, pseudo_label_train


@dataclass(frozen=True)
class PipelineConfig:
    k: int | None = None
    window_len: int = 512
    step: int = 5
    inner_iters: int = 10
    epochs_per_iter: int = 5
    conf_threshold: float = 0.95
    setting: str = "sdep"              # 'sdep' | 'sindep'
    dimreduce: str = "umap"            # 'umap' | 'none' | 'mlp'
    no_filter: bool = False
    use_gmm: bool = False
    reinit_encoder: bool = False
    mask_semantics: str = "loss"       # 'loss' | 'half'
    transition_semantics: str = "self"  # 'self' | 'complement'
    self_transition: float | None = None  # None -> estimate from labels
    outer_cap: int = 10
    seed: int = 0
    batch_size: int = 256
    lr: float = 1e-3
    umap_neighbors: int = 60
    umap_min_dist: float = 0.0
    umap_epochs: int = 200
    umap_negative_rate: int = 5
    hmm_iters: int = 10

    def __post_init__(self):
        if not 0.0 < self.conf_threshold < 1.0:
            raise ValueError(f"conf_threshold must be in (0,1), got "
                             f"{self.conf_threshold}")
        if self.inner_iters < 1:
            raise ValueError(f"inner_iters must be >= 1, got {self.inner_iters}")
        if self.setting not in ("sdep", "sindep"):
            raise ValueError(f"setting must be sdep|sindep, got {self.setting!r}")
        if self.dimreduce not in ("umap", "none", "mlp"):
            raise ValueError(f"dimreduce must be umap|none|mlp, got "
                             f"{self.dimreduce!r}")
        if self.mask_semantics not in ("loss", "half"):
            raise ValueError(f"mask_semantics must be loss|half, got "
                             f"{self.mask_semantics!r}")


def baseline_config(config: PipelineConfig) -> PipelineConfig:
    """Pared-down variant: no UMAP, no label filtering, step 100."""
    return replace(config, dimreduce="none", no_filter=True, step=100)


class SeedBank:
    """Deterministic fan-out of one master seed to named consumers."""

    def __init__(self, master: int):
        self.master = int(master)

    def seq(self, tag: str, counter: int = 0) -> np.random.SeedSequence:
        return np.random.SeedSequence(
            [self.master, zlib.crc32(tag.encode()), int(counter)])

    def rng(self, tag: str, counter: int = 0) -> np.random.Generator:
        return np.random.default_rng(self.seq(tag, counter))

    def seed(self, tag: str, counter: int = 0) -> int:
        return int(self.seq(tag, counter).generate_state(1)[0])


class Timer:
    """Wall-clock accumulation per pipeline phase."""

    def __init__(self):
        self.buckets = {"train": 0.0, "umap": 0.0, "cluster": 0.0}
        self._t0 = time.perf_counter()

    class _Phase:
        def __init__(self, timer, name):
            self.timer, self.name = timer, name

        def __enter__(self):
            self.start = time.perf_counter()

        def __exit__(self, *exc):
            self.timer.buckets[self.name] += time.perf_counter() - self.start

    def phase(self, name):
        return Timer._Phase(self, name)

    def total(self) -> float:
        return time.perf_counter() - self._t0


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

@dataclass
class MaskState:
    prev_labels: np.ndarray | None
    ever_failed: np.ndarray
    in_mask: np.ndarray
    in_semimask: np.ndarray
    weights: np.ndarray
    fallback: bool = False

    @classmethod
    def fresh(cls, n: int) -> "MaskState":
        return cls(prev_labels=None,
                   ever_failed=np.zeros(n, dtype=bool),
                   in_mask=np.zeros(n, dtype=bool),
                   in_semimask=np.zeros(n, dtype=bool),
                   weights=np.ones(n))


def mask_weights(in_mask, in_semimask, semantics="loss"):
    """Per-window training weights from the two filter sets.

    'loss' semantics double-weights the always-consistent set: 2 on S, 1 on
    M\\S, 0 elsewhere.  'half' half-weights the provisional set instead: 1
    on Mask, 0.5 on SemiMask\\Mask, 0 elsewhere.
    """
    in_mask = np.asarray(in_mask, dtype=bool)
    in_semimask = np.asarray(in_semimask, dtype=bool)
    w = np.zeros(in_mask.shape[0])
    if semantics == "loss":
        w[in_mask & ~in_semimask] = 1.0
        w[in_semimask] = 2.0
    elif semantics == "half":
        w[in_semimask & ~in_mask] = 0.5
        w[in_mask] = 1.0
    else:
        raise ValueError(f"unknown mask semantics {semantics!r}")
    return w


def update_masks(state: MaskState, labels, confidences, threshold,
                 iteration, semantics="loss") -> MaskState:
    """One filtering step.

    Mask = confident windows whose label matches the previous iteration
    (vacuous at iteration 1); SemiMask = windows that never failed that test
    in any iteration so far.  If the Mask comes out empty, training falls
    back to all windows at weight 1 for the iteration.
    """
    labels = np.asarray(labels, dtype=np.int64)
    confidences = np.asarray(confidences, dtype=np.float64)
    confident = confidences >= threshold
    if iteration <= 1 or state.prev_labels is None:
        consistent = np.ones(labels.shape[0], dtype=bool)
    else:
        consistent = labels == state.prev_labels
    in_mask = confident & consistent
    ever_failed = state.ever_failed | ~in_mask
    in_semimask = in_mask & ~ever_failed
    weights = mask_weights(in_mask, in_semimask, semantics)
    fallback = False
    if not np.any(weights > 0):
        warnings.warn("label filter left no trainable windows; training on "
                      "all windows at weight 1 for this iteration")
        weights = np.ones(labels.shape[0])
        fallback = True
    return MaskState(prev_labels=labels.copy(), ever_failed=ever_failed,
                     in_mask=in_mask, in_semimask=in_semimask,
                     weights=weights, fallback=fallback)


# ---------------------------------------------------------------------------
# clustering step
# ---------------------------------------------------------------------------

def _relabel_to_previous(assignment, prev_labels, K):
    """Permute cluster ids to best agree with the previous iteration's
    labels, so that label consistency is meaningful across re-clusterings."""
    if prev_labels is None:
        return assignment
    table = metrics.contingency(assignment.labels, prev_labels, K, K)
    perm = metrics.align_labels(table)
    labels = perm[assignment.labels]
    post = np.empty_like(assignment.posteriors)
    for old in range(K):
        post[:, perm[old]] = assignment.posteriors[:, old]
    return clustering.ClusterAssignment(
        labels=labels,
        confidence=post[np.arange(labels.shape[0]), labels],
        posteriors=post)


def _self_transition_from_chains(labels, chains):
    same = 0
    pairs = 0
    for chain in chains:
        seq = labels[chain]
        if seq.size >= 2:
            same += int(np.sum(seq[1:] == seq[:-1]))
            pairs += seq.size - 1
    if pairs == 0:
        return 0.5
    return same / pairs


def _cluster(config, emb, chains, K, transitions, seed, timer):
    with timer.phase("cluster"):
        if config.use_gmm:
            model = clustering.gmm_fit(emb, K, seed=seed)
            return clustering.gmm_assign(model, emb)
        _, assignment = clustering.hmm_fit_and_decode(
            emb, chains, K, transitions, seed=seed,
            n_iter=config.hmm_iters)
        return assignment


# ---------------------------------------------------------------------------
# inner / outer loops
# ---------------------------------------------------------------------------

def run_inner_loop(config: PipelineConfig, windows: WindowSet, K, chains,
                   transitions, bank: SeedBank, rep: int, timer: Timer,
                   model: EncoderModel | None = None, prev_labels=None):
    """One repetition: inner_iters rounds of encode -> reduce -> cluster ->
    filter -> pseudo-label train.  Returns (assignment, MaskState, model).
    """
    n = windows.n_windows
    enc_config = EncoderConfig(
        window_len=config.window_len, batch_size=config.batch_size,
        lr=config.lr, reducer="mlp" if config.dimreduce == "mlp" else None)
    state = MaskState.fresh(n)
    state.prev_labels = prev_labels
    assignment = None
    for i in range(1, config.inner_iters + 1):
        counter = rep * 1000 + i
        if model is None or config.reinit_encoder:
            model = EncoderModel(enc_config, windows.n_channels, K,
                                 bank.rng("encoder-init", counter))
        with timer.phase("train"):
            latents = model.encode(windows.data)
        if config.dimreduce == "umap":
            umap_config = dimreduce.UmapConfig(
                n_neighbors=config.umap_neighbors,
                min_dist=config.umap_min_dist,
                n_epochs=config.umap_epochs,
                negative_sample_rate=config.umap_negative_rate,
                seed=bank.seed("umap", counter))
            with timer.phase("umap"):
                emb, _ = dimreduce.umap_fit(latents, umap_config)
        elif config.dimreduce == "mlp":
            with timer.phase("train"):
                emb = model.encode_reduced(windows.data)
        else:
            emb = latents
        assignment = _cluster(config, emb, chains, K, transitions,
                              bank.seed("cluster", counter), timer)
        assignment = _relabel_to_previous(assignment, state.prev_labels, K)
        if config.no_filter:
            state = MaskState(prev_labels=assignment.labels.copy(),
                              ever_failed=np.zeros(n, dtype=bool),
                              in_mask=np.ones(n, dtype=bool),
                              in_semimask=np.ones(n, dtype=bool),
                              weights=np.ones(n))
        else:
            state = update_masks(state, assignment.labels,
                                 assignment.confidence, config.conf_threshold,
                                 i, config.mask_semantics)
        with timer.phase("train"):
            pseudo_label_train(model, windows.data, assignment.labels,
                               state.weights, bank.rng("train", counter),
                               epochs=config.epochs_per_iter)
    return assignment, state, model


def run_outer_loop(config: PipelineConfig, windows: WindowSet, K=None,
                   timer: Timer | None = None):
    """Repeat the inner loop while the set of ever-confident windows grows.

    Returns (labels, confidences, info dict).
    """
    if windows.n_windows == 0:
        raise ValueError("run_outer_loop: empty window set")
    timer = timer or Timer()
    if K is None:
        K = config.k or int(windows.labels.max()) + 1
    bank = SeedBank(config.seed)
    chains = windows.chains()
    p = config.self_transition
    if p is None:
        p = _self_transition_from_chains(windows.labels, chains)
    p = clustering.clamp_probability(p)
    transitions = clustering.build_transitions(
        K, p, config.transition_semantics)

    final: dict[int, int] = {}
    model = None
    prev_labels = None
    reps = 0
    cap_hit = False
    while True:
        reps += 1
        prev_size = len(final)
        assignment, state, model = run_inner_loop(
            config, windows, K, chains, transitions, bank, reps, timer,
            model=None, prev_labels=prev_labels)
        prev_labels = assignment.labels
        for x in np.flatnonzero(state.in_mask):
            final[int(x)] = int(assignment.labels[x])
        if len(final) <= prev_size:
            break
        if reps >= config.outer_cap:
            cap_hit = True
            warnings.warn(f"outer loop hit the hard cap of {config.outer_cap} "
                          "repetitions before |Final| stopped increasing")
            break
    labels = assignment.labels.copy()
    for x, lbl in final.items():
        labels[x] = lbl
    info = {"repetitions": reps, "final_size": len(final),
            "outer_cap_hit": cap_hit, "self_transition": p, "k": K}
    return labels, assignment.confidence.copy(), info


def run_baseline(config: PipelineConfig, windows: WindowSet, K=None,
                 timer: Timer | None = None):
    """Pared-down model on pre-built step-100 windows."""
    cfg = baseline_config(config)
    if windows.step != cfg.step:
        raise ValueError(f"baseline expects step-{cfg.step} windows, got "
                         f"step {windows.step}")
    return run_outer_loop(cfg, windows, K=K, timer=timer)


# ---------------------------------------------------------------------------
# evaluation settings
# ---------------------------------------------------------------------------

@dataclass
class RunRecord:
    dataset: str
    config: dict
    setting: str
    reports: dict                       # granularity -> MetricsReport
    timing: dict
    n_windows: int
    n_points: int
    warnings: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    def to_dict(self, include_timing=True):
        out = {
            "dataset": self.dataset,
            "config": self.config,
            "setting": {"subject": self.setting,
                        "granularity": "both"},
            "metrics": {
                gran: {
                    **{k: round(v * 100.0, 2)
                       for k, v in rep.as_dict().items()},
                }
                for gran, rep in self.reports.items()
            },
            "per_subject": {
                gran: [
                    {"metrics": {k: round(v * 100.0, 2)
                                 for k, v in r.as_dict().items()},
                     "weight": w}
                    for r, w in zip(rep.per_subject, rep.weights)
                ]
                for gran, rep in self.reports.items()
            },
            "n_windows": self.n_windows,
            "n_points": self.n_points,
            "warnings": self.warnings,
            "info": self.info,
        }
        if include_timing:
            out["timing"] = self.timing
        return out

    def to_json(self, include_timing=True) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True,
                          indent=2)


def _point_eval(recording, win_subset, labels_pred, K):
    """Point-wise predictions vs. truth for one recording.  Returns
    (preds, truth) over covered points only."""
    preds, covered = metrics.pointwise_labels(
        labels_pred, win_subset.offsets, win_subset.window_len,
        recording.n_points, K)
    return preds[covered], recording.labels[covered]


def evaluate(config: PipelineConfig, recordings, dataset_name="dataset",
             use_baseline=False) -> RunRecord:
    """Run the pipeline under the configured evaluation setting and report
    window-wise and point-wise metrics.
    """
    timer = Timer()
    runner = run_baseline if use_baseline else run_outer_loop
    cfg = baseline_config(config) if use_baseline else config
    K = cfg.k
    if K is None:
        K = int(max(rec.labels.max() for rec in recordings)) + 1
    notes = []
    total_points = sum(rec.n_points for rec in recordings)

    if cfg.setting == "sdep":
        win_reports, point_reports, weights = [], [], []
        per_info = {}
        windows_total = 0
        for rec in recordings:
            windows = make_windows([rec], cfg.window_len, cfg.step)
            windows_total += windows.n_windows
            if windows.n_windows < K:
                msg = (f"subject {rec.subject_id} has {windows.n_windows} "
                       f"windows (< K={K}); skipped")
                warnings.warn(msg)
                notes.append(msg)
                continue
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                labels_pred, conf, info = runner(cfg, windows, K=K,
                                                 timer=timer)
            notes.extend(str(w.message) for w in caught)
            per_info[rec.subject_id] = info
            win_reports.append(metrics.score(labels_pred, windows.labels))
            pp, pt = _point_eval(rec, windows, labels_pred, K)
            point_reports.append(metrics.score(pp, pt))
            weights.append(int(pt.shape[0]))
        if not win_reports:
            raise ValueError("all subjects were skipped; no metrics to report")
        win_agg = metrics.aggregate_subject_dependent(win_reports, weights)
        point_agg = metrics.aggregate_subject_dependent(point_reports, weights)
        win_agg.granularity = "window"
        point_agg.granularity = "point"
        reports = {"window": win_agg, "point": point_agg}
        run_info = {"per_subject": per_info}
    else:
        windows = make_windows(recordings, cfg.window_len, cfg.step)
        if windows.n_windows < K:
            raise ValueError(f"only {windows.n_windows} windows for K={K}")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            labels_pred, conf, info = runner(cfg, windows, K=K, timer=timer)
        notes.extend(str(w.message) for w in caught)
        win_rep = metrics.score(labels_pred, windows.labels)
        win_rep.subject_setting = "subject-independent"
        win_rep.granularity = "window"
        pp_all, pt_all = [], []
        for rec in recordings:
            sel = np.flatnonzero(windows.subjects == rec.subject_id)
            if sel.size == 0:
                continue
            pp, pt = _point_eval(rec, windows.subset(sel), labels_pred[sel], K)
            pp_all.append(pp)
            pt_all.append(pt)
        point_rep = metrics.score(np.concatenate(pp_all), np.concatenate(pt_all))
        point_rep.subject_setting = "subject-independent"
        point_rep.granularity = "point"
        reports = {"window": win_rep, "point": point_rep}
        windows_total = windows.n_windows
        run_info = info

    timing = dict(timer.buckets)
    timing["total"] = timer.total()
    timing["per_point"] = timing["total"] / max(total_points, 1)
    return RunRecord(
        dataset=dataset_name,
        config=dataclasses.asdict(cfg),
        setting="subject-dependent" if cfg.setting == "sdep"
                else "subject-independent",
        reports=reports,
        timing=timing,
        n_windows=windows_total,
        n_points=total_points,
        warnings=notes,
        info=run_info)
