"""Analytic toy conditional-diffusion testbed for the fusion operators.

Real feature fusion happens inside a pretrained denoiser, which is not
desk-reproducible.  This simulator keeps the iterative sampler but
replaces the network with closed forms:

* the data prior is an elementwise Gaussian N(prior_mean, prior_std^2),
  so the score of every noised marginal is available exactly and
  ancestral sampling needs no training;
* each conditioning branch is a synthetic encoder producing a feature
  map whose channel std tracks local condition violation by
  construction: g_b[:, j, k] = strength * mask[j, k] *
  (target[j, k] - x0_hat[j, k]) * w_b, with w_b the branch's embedding
  vector.  Outside a branch's mask its features are exactly zero, and
  where the sample already matches the target they vanish, so "condition
  strength shows up as channel variance" holds by design and the fusion
  gates are exercised honestly;
* a shared read-out vector u with <u, w_b> = 1 decodes any fused
  feature back to a scalar per-pixel guidance field, which is added to
  the analytic score with weight guidance_weight during the reverse
  update.

Branch embeddings are built from Hadamard directions when the channel
count is a power of two, making their pairwise geometry exact: with the
default amplitude 0.5 two branch embeddings have cosine similarity
exactly 0.8, so overlapping same-target branches land above the default
correlation gate of 0.7.

Every run is deterministic given its seed: one generator is consumed in
a fixed order (initial state first, then one noise field per step).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .fusion import FoldResult, FusionConfig, maxfusion_fold, naive_average
from .tensor_core import FeatureMap, SelectionMask, _freeze

STRATEGIES = ("maxfusion", "naive", "max_select", "single", "unconditional")
PRESET_NAMES = ("contradictory", "complementary", "three_way")


class NoiseSchedule:
    """Forward-diffusion beta schedule with derived cumulative products."""

    __slots__ = ("betas", "alphas", "alpha_bar")

    def __init__(self, betas):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if not ((betas > 0.0) & (betas < 1.0)).all():
            raise ValueError("every beta must lie strictly in (0, 1)")
        self.betas = _freeze(betas.copy())
        self.alphas = _freeze(1.0 - betas)
        alpha_bar = np.cumprod(self.alphas)
        if betas.size > 1 and not (np.diff(alpha_bar) < 0).all():
            raise ValueError("cumulative alpha products must be strictly decreasing")
        self.alpha_bar = _freeze(alpha_bar)

    @property
    def steps(self) -> int:
        return int(self.betas.size)

    @classmethod
    def linear(cls, steps: int = 50, beta_start: float = 1e-4, beta_end: float = 0.02):
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        return cls(np.linspace(beta_start, beta_end, steps))


def _hadamard_row(size: int, k: int) -> np.ndarray:
    signs = [1.0 if bin(c & k).count("1") % 2 == 0 else -1.0 for c in range(size)]
    return np.array(signs)


def branch_embedding(channels: int, index: int, amplitude: float = 0.5) -> np.ndarray:
    """Embedding w = 1 + amplitude * v with mean(v) = 0 and std(v) = 1.

    Against the uniform read-out u = 1/C this gives <u, w> = 1 exactly
    and std(w) = amplitude.  For power-of-two channel counts v is a
    Hadamard row, so distinct indices are exactly orthogonal and any two
    embeddings have cosine similarity 1 / (1 + amplitude^2); otherwise a
    centered cosine pattern is used.
    """
    if channels < 2:
        raise ValueError("need at least 2 channels for a non-degenerate embedding")
    if not (amplitude > 0):
        raise ValueError(f"amplitude must be > 0, got {amplitude}")
    k = index + 1
    if channels & (channels - 1) == 0 and k < channels:
        direction = _hadamard_row(channels, k)
    else:
        grid = np.arange(channels, dtype=np.float64)
        raw = np.cos(np.pi * k * (2.0 * grid + 1.0) / (2.0 * channels))
        raw = raw - raw.mean()
        sd = raw.std()
        if sd < 1e-9:
            raise ValueError(f"degenerate embedding direction for index {index}")
        direction = raw / sd
    return 1.0 + amplitude * direction


def default_readout(channels: int) -> np.ndarray:
    return np.full(channels, 1.0 / channels)


@dataclass(frozen=True, eq=False)
class Branch:
    """One synthetic conditioning branch.

    mask: (H, W) spatial support in [0, 1].
    target: (H, W) desired image content inside the mask.
    embedding: C-vector w with <u, w> = 1 against the scenario read-out.
    strength: positive scaling of the encoded signal.
    """

    mask: np.ndarray
    target: np.ndarray
    embedding: np.ndarray
    strength: float = 1.0

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float64)
        target = np.asarray(self.target, dtype=np.float64)
        emb = np.asarray(self.embedding, dtype=np.float64)
        if mask.ndim != 2:
            raise ValueError("branch field 'mask' must be a 2-D (H, W) array")
        if target.shape != mask.shape:
            raise ValueError(
                f"branch field 'target' shape {target.shape} != mask shape {mask.shape}"
            )
        if emb.ndim != 1:
            raise ValueError("branch field 'embedding' must be a 1-D C-vector")
        if not np.isfinite(mask).all() or mask.min() < 0.0 or mask.max() > 1.0:
            raise ValueError("branch field 'mask' must lie in [0, 1]")
        if not np.isfinite(target).all() or not np.isfinite(emb).all():
            raise ValueError("branch fields must be finite")
        if not (np.isfinite(self.strength) and self.strength > 0):
            raise ValueError(f"branch field 'strength' must be > 0, got {self.strength}")
        object.__setattr__(self, "mask", _freeze(mask.copy()))
        object.__setattr__(self, "target", _freeze(target.copy()))
        object.__setattr__(self, "embedding", _freeze(emb.copy()))
        object.__setattr__(self, "strength", float(self.strength))


@dataclass(frozen=True, eq=False)
class Scenario:
    """Complete specification of one toy-diffusion run."""

    height: int
    width: int
    channels: int = 8
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.linear)
    branches: tuple[Branch, ...] = ()
    guidance_weight: float = 1.5
    prior_mean: float = 0.0
    prior_std: float = 1.0
    seed: int = 42
    fusion: FusionConfig = field(default_factory=FusionConfig)
    strategy: str = "maxfusion"
    single_branch: int = 0
    readout: np.ndarray | None = None

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"scenario fields 'height'/'width' must be >= 1, "
                             f"got {self.height}x{self.width}")
        if self.channels < 1:
            raise ValueError(f"scenario field 'channels' must be >= 1, got {self.channels}")
        if not (np.isfinite(self.guidance_weight) and self.guidance_weight >= 0):
            raise ValueError(
                f"scenario field 'guidance_weight' must be >= 0, got {self.guidance_weight}"
            )
        if not np.isfinite(self.prior_mean):
            raise ValueError("scenario field 'prior_mean' must be finite")
        if not (np.isfinite(self.prior_std) and self.prior_std >= 0):
            raise ValueError(f"scenario field 'prior_std' must be >= 0, got {self.prior_std}")
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"scenario field 'strategy' must be one of {STRATEGIES}, got {self.strategy!r}"
            )
        object.__setattr__(self, "branches", tuple(self.branches))
        if self.strategy == "single" and not (0 <= self.single_branch < len(self.branches)):
            raise ValueError(
                f"scenario field 'single_branch' must index a branch, got {self.single_branch}"
            )
        readout = self.readout
        readout = default_readout(self.channels) if readout is None else np.asarray(
            readout, dtype=np.float64
        )
        if readout.shape != (self.channels,):
            raise ValueError(
                f"scenario field 'readout' must have length {self.channels}, "
                f"got shape {readout.shape}"
            )
        object.__setattr__(self, "readout", _freeze(readout.copy()))
        for i, br in enumerate(self.branches):
            if br.mask.shape != (self.height, self.width):
                raise ValueError(
                    f"branch {i} field 'mask' shape {br.mask.shape} != "
                    f"scenario grid ({self.height}, {self.width})"
                )
            if br.embedding.shape != (self.channels,):
                raise ValueError(
                    f"branch {i} field 'embedding' length {br.embedding.size} != "
                    f"scenario channels {self.channels}"
                )
            dot = float(self.readout @ br.embedding)
            if abs(dot - 1.0) > 1e-6:
                raise ValueError(
                    f"branch {i} field 'embedding' violates the read-out identity: "
                    f"<u, w> = {dot!r}, expected 1 within 1e-6"
                )


@dataclass(frozen=True)
class SelectionStats:
    """Aggregate of one merge event's selection mask."""

    averaged_fraction: float
    win_fractions: tuple[float, ...]

    @classmethod
    def from_mask(cls, mask: SelectionMask) -> "SelectionStats":
        return cls(mask.averaged_fraction(), mask.win_fractions())


@dataclass(frozen=True)
class TraceStep:
    """Per-step fusion internals kept when a run records its trace."""

    features: tuple[FeatureMap, ...]
    fold: FoldResult | None
    f_eff: FeatureMap | None


@dataclass(eq=False)
class RunReport:
    """Outcome of one simulator run."""

    final_sample: np.ndarray
    branch_mse: tuple[float, ...]
    step_stats: tuple[tuple[SelectionStats, ...], ...]
    wall_clock_s: float
    seed: int
    strategy: str
    trace: tuple[TraceStep, ...] | None = None

    @property
    def averaged_fraction(self) -> float:
        """Mean averaged fraction over all merge events; NaN if none occurred."""
        fracs = [ev.averaged_fraction for step in self.step_stats for ev in step]
        return float(np.mean(fracs)) if fracs else math.nan

    def per_step_averaged_fraction(self) -> tuple[float, ...]:
        return tuple(
            float(np.mean([ev.averaged_fraction for ev in step])) if step else math.nan
            for step in self.step_stats
        )

    def same_outputs(self, other: "RunReport") -> bool:
        """Equality of everything reproducible (wall clock and trace excluded)."""
        return (
            self.seed == other.seed
            and self.strategy == other.strategy
            and self.branch_mse == other.branch_mse
            and self.step_stats == other.step_stats
            and bool(np.array_equal(self.final_sample, other.final_sample))
        )


def _marginal(schedule: NoiseSchedule, t: int, prior_mean: float, prior_std: float):
    abar = float(schedule.alpha_bar[t])
    mean = math.sqrt(abar) * prior_mean
    var = abar * prior_std * prior_std + 1.0 - abar
    return mean, var


def analytic_score(
    x: np.ndarray,
    t: int,
    schedule: NoiseSchedule,
    prior_mean: float = 0.0,
    prior_std: float = 1.0,
) -> np.ndarray:
    """Exact score of the noised Gaussian prior at step t.

    The marginal at step t is N(sqrt(abar_t) * mu, abar_t * sigma^2 +
    1 - abar_t) elementwise, so the score is -(x - mean) / variance.
    """
    if not 0 <= t < schedule.steps:
        raise ValueError(f"step index {t} out of range [0, {schedule.steps})")
    mean, var = _marginal(schedule, t, prior_mean, prior_std)
    return -(np.asarray(x, dtype=np.float64) - mean) / var


def branch_encode(scenario: Scenario, b: int, x0_hat: np.ndarray) -> FeatureMap:
    """Encode branch b's condition against the current clean-image estimate.

    The channel vector at (j, k) is strength * mask * (target - x0_hat)
    times the branch embedding, so its channel std is
    strength * mask * |residual| * std(w): zero outside the mask, zero
    where the condition is already satisfied, and growing with local
    violation inside it.
    """
    br = scenario.branches[b]
    signal = br.strength * br.mask * (br.target - np.asarray(x0_hat, dtype=np.float64))
    data = br.embedding[:, np.newaxis, np.newaxis] * signal[np.newaxis]
    return FeatureMap(data.astype(np.float32))


def decode_guidance(f_eff: FeatureMap, readout: np.ndarray) -> np.ndarray:
    """Project a (fused) feature map onto the read-out vector per location.

    Decoding a single un-fused branch encoding recovers its
    strength * mask * residual field exactly, by the <u, w> = 1 identity.
    """
    readout = np.asarray(readout, dtype=np.float64)
    if readout.shape != (f_eff.channels,):
        raise ValueError(
            f"readout length {readout.size} != feature channels {f_eff.channels}"
        )
    return (readout[:, np.newaxis, np.newaxis] * f_eff.data.astype(np.float64)).sum(axis=0)


def _apply_strategy(scenario: Scenario, feats: tuple[FeatureMap, ...]):
    strat = scenario.strategy
    if strat in ("maxfusion", "max_select"):
        cfg = scenario.fusion if strat == "maxfusion" else replace(scenario.fusion, delta=2.0)
        if len(feats) == 1:
            return feats[0], None, ()
        fold = maxfusion_fold(list(feats), cfg)
        events = tuple(SelectionStats.from_mask(r.selection) for r in fold.pair_results)
        return fold.f_eff, fold, events
    if strat == "naive":
        # semantically one all-averaged merge event, so the stats line up
        # with a maxfusion run at delta = -1
        return naive_average(list(feats)), None, (SelectionStats(1.0, (0.0,) * len(feats)),)
    if strat == "single":
        return feats[scenario.single_branch], None, ()
    raise ValueError(f"unknown strategy {strat!r}")


def sample(scenario: Scenario, record_trace: bool = False) -> RunReport:
    """Run the full guided ancestral loop and score the result.

    Steps go t = T-1 .. 0.  Each step estimates the clean image from the
    analytic posterior mean, encodes every branch against it, applies
    the configured fusion strategy, decodes the fused feature to a
    scalar guidance field g, and takes the score-form ancestral update
    with effective score (analytic score + guidance_weight * g), adding
    sqrt(beta_t) noise for every step but the last.  The maxfusion and
    max_select strategies run the fold, which merges and unmerges every
    pair; the unmerged per-branch features live in the trace (the
    encoders are stateless, so there is nothing to feed them back into).
    """
    start = time.perf_counter()
    sched = scenario.schedule
    steps = sched.steps
    rng = np.random.default_rng(scenario.seed)
    shape = (scenario.height, scenario.width)

    mean0, var0 = _marginal(sched, steps - 1, scenario.prior_mean, scenario.prior_std)
    x = mean0 + math.sqrt(var0) * rng.standard_normal(shape)

    lam = scenario.guidance_weight
    conditioned = scenario.strategy != "unconditional" and len(scenario.branches) > 0
    step_stats: list[tuple[SelectionStats, ...]] = []
    trace: list[TraceStep] = []

    for t in range(steps - 1, -1, -1):
        score = analytic_score(x, t, sched, scenario.prior_mean, scenario.prior_std)
        s_eff = score
        feats: tuple[FeatureMap, ...] = ()
        fold = None
        f_eff = None
        events: tuple[SelectionStats, ...] = ()
        if conditioned:
            abar = float(sched.alpha_bar[t])
            x0_hat = (x + (1.0 - abar) * score) / math.sqrt(abar)
            feats = tuple(
                branch_encode(scenario, b, x0_hat) for b in range(len(scenario.branches))
            )
            f_eff, fold, events = _apply_strategy(scenario, feats)
            if lam != 0.0:
                s_eff = score + lam * decode_guidance(f_eff, scenario.readout)
        beta = float(sched.betas[t])
        mean = (x + beta * s_eff) / math.sqrt(1.0 - beta)
        if t > 0:
            x = mean + math.sqrt(beta) * rng.standard_normal(shape)
        else:
            x = mean
        step_stats.append(events)
        if record_trace:
            trace.append(TraceStep(features=feats, fold=fold, f_eff=f_eff))

    return RunReport(
        final_sample=_freeze(x),
        branch_mse=condition_error(x, scenario),
        step_stats=tuple(step_stats),
        wall_clock_s=time.perf_counter() - start,
        seed=scenario.seed,
        strategy=scenario.strategy,
        trace=tuple(trace) if record_trace else None,
    )


def condition_error(sample_field: np.ndarray, scenario: Scenario) -> tuple[float, ...]:
    """Masked MSE of the sample against each branch's target.

    Empty masks score 0 by convention.
    """
    s = np.asarray(sample_field, dtype=np.float64)
    if s.shape != (scenario.height, scenario.width):
        raise ValueError(
            f"sample shape {s.shape} != scenario grid ({scenario.height}, {scenario.width})"
        )
    out = []
    for br in scenario.branches:
        denom = float(br.mask.sum())
        if denom == 0.0:
            out.append(0.0)
        else:
            out.append(float((br.mask * (s - br.target) ** 2).sum() / denom))
    return tuple(out)


@dataclass(frozen=True)
class AblationRow:
    delta: float
    branch_mse: tuple[float, ...]
    averaged_fraction: float


def run_ablation(scenario: Scenario, deltas) -> tuple[AblationRow, ...]:
    """Re-run the scenario as maxfusion at each threshold, sharing the seed.

    Because every run replays identical noise, tightening the gate can
    only shrink the set of averaged locations step by step, so the
    reported averaged fraction is non-increasing in delta.
    """
    deltas = list(deltas)
    if not deltas:
        raise ValueError("need at least one delta")
    rows = []
    for d in deltas:
        scn = replace(
            scenario, strategy="maxfusion", fusion=replace(scenario.fusion, delta=float(d))
        )
        rep = sample(scn)
        rows.append(AblationRow(float(d), rep.branch_mse, rep.averaged_fraction))
    return tuple(rows)


def _rect(h: int, w: int, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
    m = np.zeros((h, w))
    m[r0:r1, c0:c1] = 1.0
    return m


def preset_scenario(
    name: str,
    *,
    seed: int = 42,
    delta: float = 0.7,
    renormalize: bool = True,
    strategy: str = "maxfusion",
) -> Scenario:
    """Named 16x16 scenarios covering the interesting fusion regimes.

    contradictory: two branches with disjoint rectangular masks pulling
    toward different targets; their encodings never overlap, so rho is 0
    everywhere and fusion always routes through variance selection.
    complementary: two branches sharing one mask and target through
    different embeddings; inside the overlap their encodings are
    parallel up to embedding geometry (cosine 0.8), exercising the
    averaging path at the default gate.
    three_way: three disjoint branches for the incremental fold.
    """
    if name not in PRESET_NAMES:
        raise ValueError(
            f"unknown preset {name!r}; valid presets: {', '.join(PRESET_NAMES)}"
        )
    h = w = 16
    c = 8
    common = dict(
        height=h,
        width=w,
        channels=c,
        schedule=NoiseSchedule.linear(),
        guidance_weight=1.5,
        prior_mean=0.0,
        prior_std=1.0,
        seed=seed,
        fusion=FusionConfig(delta=delta, renormalize=renormalize),
        strategy=strategy,
    )
    if name == "contradictory":
        branches = (
            Branch(
                mask=_rect(h, w, 2, 14, 1, 7),
                target=np.full((h, w), 2.0),
                embedding=branch_embedding(c, 0),
            ),
            Branch(
                mask=_rect(h, w, 2, 14, 9, 15),
                target=np.full((h, w), -2.0),
                embedding=branch_embedding(c, 1),
            ),
        )
    elif name == "complementary":
        overlap = _rect(h, w, 4, 12, 4, 12)
        target = np.full((h, w), 1.5)
        branches = (
            Branch(mask=overlap, target=target, embedding=branch_embedding(c, 0)),
            Branch(mask=overlap, target=target, embedding=branch_embedding(c, 1)),
        )
    else:
        branches = (
            Branch(
                mask=_rect(h, w, 1, 15, 0, 5),
                target=np.full((h, w), 2.0),
                embedding=branch_embedding(c, 0),
            ),
            Branch(
                mask=_rect(h, w, 1, 15, 6, 10),
                target=np.full((h, w), -2.0),
                embedding=branch_embedding(c, 1),
            ),
            Branch(
                mask=_rect(h, w, 1, 15, 11, 16),
                target=np.full((h, w), 1.0),
                embedding=branch_embedding(c, 2),
            ),
        )
    return Scenario(branches=branches, **common)


def scenario_to_dict(s: Scenario) -> dict:
    """Mirror a Scenario as a JSON-ready dict."""
    return {
        "height": s.height,
        "width": s.width,
        "channels": s.channels,
        "schedule": {"betas": [float(b) for b in s.schedule.betas]},
        "branches": [
            {
                "mask": br.mask.tolist(),
                "target": br.target.tolist(),
                "embedding": br.embedding.tolist(),
                "strength": br.strength,
            }
            for br in s.branches
        ],
        "guidance_weight": s.guidance_weight,
        "prior_mean": s.prior_mean,
        "prior_std": s.prior_std,
        "seed": s.seed,
        "fusion": {
            "delta": s.fusion.delta,
            "renormalize": s.fusion.renormalize,
            "epsilon_norm": s.fusion.stats.epsilon_norm,
        },
        "strategy": s.strategy,
        "single_branch": s.single_branch,
        "readout": s.readout.tolist(),
    }


def scenario_from_dict(d: dict) -> Scenario:
    """Build and validate a Scenario from a JSON-shaped dict.

    The schedule accepts either an explicit {"betas": [...]} list or
    linear parameters {"steps", "beta_start", "beta_end"}.
    """
    for req in ("height", "width"):
        if req not in d:
            raise ValueError(f"scenario field '{req}' is required")
    sched_d = d.get("schedule", {})
    if not isinstance(sched_d, dict):
        raise ValueError("scenario field 'schedule' must be an object")
    if "betas" in sched_d:
        schedule = NoiseSchedule(sched_d["betas"])
    else:
        schedule = NoiseSchedule.linear(
            steps=int(sched_d.get("steps", 50)),
            beta_start=float(sched_d.get("beta_start", 1e-4)),
            beta_end=float(sched_d.get("beta_end", 0.02)),
        )
    fusion_d = d.get("fusion", {})
    if not isinstance(fusion_d, dict):
        raise ValueError("scenario field 'fusion' must be an object")
    stats_kwargs = {}
    if "epsilon_norm" in fusion_d:
        from .stats import StatsConfig

        stats_kwargs["stats"] = StatsConfig(epsilon_norm=float(fusion_d["epsilon_norm"]))
    fusion = FusionConfig(
        delta=float(fusion_d.get("delta", 0.7)),
        renormalize=bool(fusion_d.get("renormalize", True)),
        **stats_kwargs,
    )
    branch_dicts = d.get("branches", [])
    if not isinstance(branch_dicts, list):
        raise ValueError("scenario field 'branches' must be a list")
    branches = []
    for i, bd in enumerate(branch_dicts):
        if not isinstance(bd, dict):
            raise ValueError(f"branch {i} must be an object")
        for req in ("mask", "target", "embedding"):
            if req not in bd:
                raise ValueError(f"branch {i} field '{req}' is required")
        branches.append(
            Branch(
                mask=np.asarray(bd["mask"], dtype=np.float64),
                target=np.asarray(bd["target"], dtype=np.float64),
                embedding=np.asarray(bd["embedding"], dtype=np.float64),
                strength=float(bd.get("strength", 1.0)),
            )
        )
    return Scenario(
        height=int(d["height"]),
        width=int(d["width"]),
        channels=int(d.get("channels", 8)),
        schedule=schedule,
        branches=branches,
        guidance_weight=float(d.get("guidance_weight", 1.5)),
        prior_mean=float(d.get("prior_mean", 0.0)),
        prior_std=float(d.get("prior_std", 1.0)),
        seed=int(d.get("seed", 42)),
        fusion=fusion,
        strategy=str(d.get("strategy", "maxfusion")),
        single_branch=int(d.get("single_branch", 0)),
        readout=d.get("readout"),
    )
