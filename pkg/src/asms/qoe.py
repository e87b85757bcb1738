"""Per-step quality-of-experience scoring, reward pooling, and the
grid-search calibration of the score's weights against opinion ratings.

The score is linear in its five weights, which the fitting code exploits:
each trace reduces to one 5-dim feature vector and the whole grid is then a
single matrix product.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import Observation, QoECoefficients, RngStream

# Tally of received bitrates clamped up to y_min inside quality(); a starving
# stream scores floor quality instead of erroring.
_clamp_count = 0


def quality_clamp_count() -> int:
    return _clamp_count


def reset_quality_clamp_count() -> None:
    global _clamp_count
    _clamp_count = 0


def quality(received_mbps: float, y_min: float) -> float:
    """Log bitrate utility ln(y / y_min); diminishing returns, 0 at the floor.

    Inputs below y_min are clamped to y_min (counted, not raised).
    """
    if y_min <= 0:
        raise ValueError("y_min must be > 0")
    if received_mbps < y_min:
        global _clamp_count
        _clamp_count += 1
        received_mbps = y_min
    return math.log(received_mbps / y_min)


def disruption_penalty(lost_packets: float, p_threshold: float) -> float:
    """Packets lost beyond the tolerated threshold; 0 below it."""
    if lost_packets < 0:
        raise ValueError("lost_packets must be >= 0")
    return max(0.0, lost_packets - p_threshold)


def qoe_features(obs: Observation, frame_rate: float, next_received_mbps: float,
                 users: int, c: QoECoefficients) -> np.ndarray:
    """Signed per-term features so that weights . features == compute_qoe.

    Order matches QoECoefficients.weights(): (alpha, beta, gamma, delta1,
    delta2). Penalty terms are negated here.
    """
    q_now = quality(obs.received_mbps, c.y_min)
    q_next = quality(next_received_mbps, c.y_min)
    return np.array([
        q_now * math.exp(-users / c.u_max),
        -abs(frame_rate - c.f_target),
        -obs.latency_ms / (obs.received_mbps + c.eps_small),
        -abs(q_next - q_now),
        -disruption_penalty(obs.lost_packets, c.p_threshold),
    ])


def compute_qoe(obs: Observation, frame_rate: float, next_received_mbps: float,
                users: int, c: QoECoefficients) -> float:
    """Experience score for one step.

    Scene quality (damped by user density) minus penalties for frame-rate
    mismatch, latency per unit throughput, quality fluctuation versus the
    next step, and above-threshold packet loss.
    """
    return float(c.weights() @ qoe_features(obs, frame_rate, next_received_mbps, users, c))


def global_reward(scores: Sequence[float], mode: str = "mean") -> float:
    """Pool per-agent scores into the shared reward (mean by default)."""
    if len(scores) == 0:
        raise ValueError("global_reward needs at least one score")
    total = float(np.sum(scores))
    if mode == "sum":
        return total
    if mode == "mean":
        return total / len(scores)
    raise ValueError(f"unknown reward mode {mode!r}")


# ---------------------------------------------------------------------------
# Ratings and coefficient fitting
# ---------------------------------------------------------------------------

class TraceStep(NamedTuple):
    obs: Observation
    frame_rate: float
    users: int


@dataclass(frozen=True)
class RatingsRecord:
    """One rated trial: an observation trace and its 1-5 opinion score."""

    scenario: str
    steps: tuple[TraceStep, ...]
    mos: float

    def __post_init__(self) -> None:
        if not (1.0 <= self.mos <= 5.0):
            raise ValueError(f"mos must be within [1, 5], got {self.mos}")
        if len(self.steps) == 0:
            raise ValueError("trace must be non-empty")


def record_features(record: RatingsRecord, base: QoECoefficients) -> np.ndarray:
    """Trace-mean feature vector; next-step bitrate at the trace end reuses
    the final step (no fluctuation penalty there)."""
    steps = record.steps
    feats = np.zeros(5)
    for i, step in enumerate(steps):
        nxt = steps[i + 1].obs.received_mbps if i + 1 < len(steps) else step.obs.received_mbps
        feats += qoe_features(step.obs, step.frame_rate, nxt, step.users, base)
    return feats / len(steps)


DEFAULT_GRID: tuple[tuple[float, ...], ...] = tuple(
    tuple(round(0.1 * k, 1) for k in range(11)) for _ in range(5))


def _affine_rmse(predicted: np.ndarray, mos: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-candidate least-squares alignment a*pred+b onto the rating scale.

    predicted: (n_candidates, n_records). Returns (rmse, a, b). Candidates
    with constant predictions fall back to a=0, b=mean(mos).
    """
    n = mos.size
    p_mean = predicted.mean(axis=1)
    m_mean = float(mos.mean())
    p_centered = predicted - p_mean[:, None]
    var = (p_centered ** 2).mean(axis=1)
    cov = (p_centered * (mos - m_mean)).mean(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(var > 1e-18, cov / np.where(var > 1e-18, var, 1.0), 0.0)
    b = m_mean - a * p_mean
    resid = a[:, None] * predicted + b[:, None] - mos
    rmse = np.sqrt((resid ** 2).mean(axis=1))
    return rmse, a, b


@dataclass(frozen=True)
class FitResult:
    coefficients: QoECoefficients
    rmse: float
    r_squared: float
    scale: float      # fitted a of a*score+b -> MOS
    offset: float     # fitted b
    grid: tuple[tuple[float, ...], ...]


def fit_coefficients(records: Sequence[RatingsRecord],
                     grid: Sequence[Sequence[float]] = DEFAULT_GRID,
                     base: QoECoefficients | None = None) -> FitResult:
    """Exhaustive grid search minimizing RMSE against the MOS ratings.

    Model scores and the 1-5 rating scale differ in units, so each candidate
    is first aligned by least-squares a*score+b before its RMSE is taken.
    Ties break to the first candidate in lexicographic grid order.
    """
    if len(records) < 2:
        raise ValueError("need at least 2 ratings records")
    grids = [tuple(float(v) for v in axis) for axis in grid]
    if len(grids) != 5 or any(len(axis) == 0 for axis in grids):
        raise ValueError("grid must provide a non-empty axis for each of the 5 weights")
    base = base or QoECoefficients()

    feats = np.stack([record_features(r, base) for r in records])   # (R, 5)
    mos = np.array([r.mos for r in records])
    candidates = np.array(list(itertools.product(*grids)))          # (C, 5)
    predicted = candidates @ feats.T                                # (C, R)
    rmse, a, b = _affine_rmse(predicted, mos)
    best = int(np.argmin(rmse))   # argmin returns the first minimum: lexicographic tie-break

    aligned = a[best] * predicted[best] + b[best]
    ss_res = float(((aligned - mos) ** 2).sum())
    ss_tot = float(((mos - mos.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    w = candidates[best]
    coeffs = QoECoefficients(
        alpha=w[0], beta=w[1], gamma=w[2], delta1=w[3], delta2=w[4],
        y_min=base.y_min, f_target=base.f_target, u_max=base.u_max,
        p_threshold=base.p_threshold, eps_small=base.eps_small)
    return FitResult(coefficients=coeffs, rmse=float(rmse[best]), r_squared=r2,
                     scale=float(a[best]), offset=float(b[best]),
                     grid=tuple(grids))


def _rmse_of(coeffs: QoECoefficients, feats: np.ndarray, mos: np.ndarray) -> float:
    predicted = (coeffs.weights() @ feats.T)[None, :]
    rmse, _, _ = _affine_rmse(predicted, mos)
    return float(rmse[0])


@dataclass(frozen=True)
class SensitivityResult:
    baseline_rmse: float
    # weight name -> (rmse at -20%, rmse at +20%)
    perturbed: dict[str, tuple[float, float]]
    mean_abs_change: float
    # mean |rmse delta| / baseline, or None when the baseline RMSE is 0
    mean_rel_change: float | None


def coefficient_sensitivity(coeffs: QoECoefficients,
                            records: Sequence[RatingsRecord]) -> SensitivityResult:
    """RMSE shift when each weight is scaled by +/-20% with the rest fixed."""
    if len(records) < 2:
        raise ValueError("need at least 2 ratings records")
    feats = np.stack([record_features(r, coeffs) for r in records])
    mos = np.array([r.mos for r in records])
    baseline = _rmse_of(coeffs, feats, mos)

    perturbed: dict[str, tuple[float, float]] = {}
    deltas: list[float] = []
    for name in ("alpha", "beta", "gamma", "delta1", "delta2"):
        lo_hi = []
        for factor in (0.8, 1.2):
            trial = QoECoefficients(**{
                **{f: getattr(coeffs, f) for f in (
                    "alpha", "beta", "gamma", "delta1", "delta2", "y_min",
                    "f_target", "u_max", "p_threshold", "eps_small")},
                name: getattr(coeffs, name) * factor})
            r = _rmse_of(trial, feats, mos)
            lo_hi.append(r)
            deltas.append(abs(r - baseline))
        perturbed[name] = (lo_hi[0], lo_hi[1])
    mean_abs = float(np.mean(deltas))
    mean_rel = mean_abs / baseline if baseline > 0 else None
    return SensitivityResult(baseline_rmse=baseline, perturbed=perturbed,
                             mean_abs_change=mean_abs, mean_rel_change=mean_rel)


# ---------------------------------------------------------------------------
# Ratings CSV ingestion
# ---------------------------------------------------------------------------

RATINGS_HEADER = ["scenario", "step", "x", "y", "l", "j", "p", "n", "f", "u", "mos"]


def load_ratings_csv(path: str) -> list[RatingsRecord]:
    """Parse rated traces: rows grouped into trials wherever the step counter
    resets or the scenario changes; every row repeats its trial's MOS."""
    records: list[RatingsRecord] = []
    cur_steps: list[TraceStep] = []
    cur_scenario: str | None = None
    cur_mos: float | None = None
    prev_step = -1

    def flush() -> None:
        if cur_steps:
            records.append(RatingsRecord(scenario=cur_scenario or "",
                                         steps=tuple(cur_steps), mos=float(cur_mos)))

    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise ValueError(f"cannot read ratings file {path!r}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"ratings file {path!r} is empty")
        if [h.strip() for h in header] != RATINGS_HEADER:
            raise ValueError(
                f"{path!r}: expected header {','.join(RATINGS_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RATINGS_HEADER):
                raise ValueError(f"{path!r} line {lineno}: expected "
                                 f"{len(RATINGS_HEADER)} columns, got {len(row)}")
            try:
                scenario = row[0].strip()
                step = int(row[1])
                x, y, l, j, p, n, f, u, mos = (float(v) for v in row[2:])
            except ValueError as exc:
                raise ValueError(f"{path!r} line {lineno}: {exc}") from None
            if scenario != cur_scenario or step <= prev_step:
                flush()
                cur_steps = []
                cur_scenario = scenario
                cur_mos = mos
            if mos != cur_mos:
                raise ValueError(f"{path!r} line {lineno}: MOS changed mid-trial")
            try:
                obs = Observation(x, y, l, j, p, n)
            except ValueError as exc:
                raise ValueError(f"{path!r} line {lineno}: {exc}") from None
            cur_steps.append(TraceStep(obs=obs, frame_rate=f, users=int(u)))
            prev_step = step
    flush()
    if not records:
        raise ValueError(f"ratings file {path!r} contains no data rows")
    return records


def write_ratings_csv(path: str, records: Iterable[RatingsRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RATINGS_HEADER)
        for rec in records:
            for t, step in enumerate(rec.steps):
                o = step.obs
                writer.writerow([
                    rec.scenario, t,
                    f"{o.target_mbps:.6g}", f"{o.received_mbps:.6g}",
                    f"{o.latency_ms:.6g}", f"{o.jitter_ms:.6g}",
                    f"{o.lost_packets:.6g}", f"{o.nack_count:.6g}",
                    f"{step.frame_rate:.6g}", step.users, f"{rec.mos:.6g}",
                ])


def synthetic_ratings(truth: QoECoefficients, rng: RngStream, n_records: int = 96,
                      trace_len: int = 20, noise_sigma: float = 0.0,
                      raters: int = 8, mos_lo: float = 1.3,
                      mos_hi: float = 4.7) -> list[RatingsRecord]:
    """Ratings manufactured from known weights, for fit-recovery tests.

    Traces spread across bitrate/latency/loss regimes; the trace scores map
    affinely onto [mos_lo, mos_hi] (so the fitter's rescale can be exact).
    Each record's mean opinion score averages ``raters`` independent ratings
    carrying Gaussian noise_sigma noise, then the 1-5 bounds are enforced.
    """
    traces: list[tuple[str, tuple[TraceStep, ...]]] = []
    scores: list[float] = []
    for r in range(n_records):
        # Designed-experiment layout: each record probes one term over a wide
        # regime while the others stay mild, cycling through the five terms.
        # Fully random regimes leave the weights nearly collinear under the
        # affine MOS alignment, which noise then exploits.
        base_y = rng.uniform(2.0, 80.0)
        users = 1 + int(rng.uniform(0, 6))
        base_l = rng.uniform(8.0, 12.0)
        volatility = rng.uniform(0.02, 0.08)    # log-scale bitrate swings
        max_overshoot = rng.uniform(0.0, 0.04)  # target above delivery
        loss_ceiling = 0.0
        probe = r % 4
        if probe == 0:
            max_overshoot = rng.uniform(0.05, 0.5)
        elif probe == 1:
            base_l = rng.uniform(5.0, 100.0)
        elif probe == 2:
            volatility = rng.uniform(0.3, 2.0)
        else:
            loss_ceiling = rng.uniform(5.0, 30.0)
        steps = []
        for _ in range(trace_len):
            y = max(1.0, base_y * math.exp(rng.uniform(-volatility, volatility)))
            x = y * (1.0 + rng.uniform(0.0, max_overshoot))
            lat = base_l * rng.uniform(0.8, 1.2)
            lost = float(int(rng.uniform(0.0, loss_ceiling))) if loss_ceiling >= 1 else 0.0
            f = 60.0 * min(1.0, y / x)
            steps.append(TraceStep(Observation(x, y, lat, 2.0, lost, lost), f, users))
        rec = RatingsRecord(scenario=f"synthetic-{r}", steps=tuple(steps), mos=3.0)
        traces.append((rec.scenario, rec.steps))
        scores.append(float(truth.weights() @ record_features(rec, truth)))

    lo, hi = min(scores), max(scores)
    span = hi - lo if hi > lo else 1.0
    records = []
    for (scenario, steps), score in zip(traces, scores):
        mos = mos_lo + (mos_hi - mos_lo) * (score - lo) / span
        if noise_sigma > 0:
            mos += noise_sigma * float(np.mean(rng.normal(size=raters)))
        records.append(RatingsRecord(scenario, steps, min(5.0, max(1.0, mos))))
    return records


__all__ = [
    "DEFAULT_GRID", "FitResult", "RATINGS_HEADER", "RatingsRecord",
    "SensitivityResult", "TraceStep", "coefficient_sensitivity", "compute_qoe",
    "disruption_penalty", "fit_coefficients", "global_reward", "load_ratings_csv",
    "qoe_features", "quality", "quality_clamp_count", "record_features",
    "reset_quality_clamp_count", "synthetic_ratings", "write_ratings_csv",
]
