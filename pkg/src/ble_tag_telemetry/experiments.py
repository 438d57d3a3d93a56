# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Monte Carlo experiments: burst synthesis, single trials, Pd curves and range prediction."""

import logging
import math
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.optimize import isotonic_regression

from .channel import (
    AntennaPattern,
    ChannelParams,
    LinkBudget,
    apply_channel,
    distance_for_rx_power,
    distance_for_snr,
    fspl_db,
    noise_power_dbm,
    pattern_gain,
    resolve_levels,
    rx_power_dbm,
)
from .common import (
    CENTER_OFFSET_HZ,
    DEFAULT_THRESHOLD,
    DETECT_BITS,
    FRAME_BITS,
    PREAMBLE_BITS,
    BitSequence,
    InvalidArgumentError,
    IqBuffer,
    UnsupportedError,
)
from .frame import TagFrame, assemble_frame, flatten_to_bits
from .modem import GmskParams, TimingRecoveryParams, gmsk_modulate
from .pncode import Codebook
from .rx import (
    DetectionEvent,
    DetectorConfig,
    Receiver,
    SquelchParams,
    XlatingFirParams,
)

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Seed key for distance-mode trials, clear of the per-SNR-bin keys
DISTANCE_SEED_KEY = 1 << 20
MAX_DISTANCE_HALVINGS = 8


class ImpairmentRanges(BaseModel):
    """Per-trial random impairments, drawn uniformly."""

    model_config = ConfigDict(frozen=True)

    max_cfo_hz: float = Field(default=0.0, ge=0.0, allow_inf_nan=False)
    max_clock_offset: float = Field(default=0.0, ge=0.0, lt=0.01)
    random_timing: bool = True


class TrialSetup(BaseModel):
    """Everything a transmit-channel-receive trial needs apart from the channel drive."""

    model_config = ConfigDict(frozen=True)

    gmsk: GmskParams = GmskParams()
    timing: TimingRecoveryParams = TimingRecoveryParams()
    squelch: SquelchParams = SquelchParams()
    fir: XlatingFirParams = XlatingFirParams()
    threshold: int = Field(default=DEFAULT_THRESHOLD, gt=128, le=DETECT_BITS)
    dedup_window_bits: int = Field(default=FRAME_BITS, ge=1)
    budget: LinkBudget = LinkBudget()
    pattern: AntennaPattern = AntennaPattern()
    impairments: ImpairmentRanges = ImpairmentRanges()
    lead_samples: int = Field(default=64, ge=0)
    trail_samples: int = Field(default=64, ge=0)

    @property
    def input_rate(self) -> float:
        return self.gmsk.sample_rate_hz * self.fir.decimation

    @property
    def tx_gmsk(self) -> GmskParams:
        """Modulator settings at the receiver's input rate."""
        sps = self.gmsk.samples_per_symbol * self.fir.decimation
        return self.gmsk.model_copy(update={"samples_per_symbol": sps})

    def detector(self, codebook: Codebook) -> DetectorConfig:
        return DetectorConfig(
            codebook=codebook, threshold=self.threshold, dedup_window_bits=self.dedup_window_bits
        )

    def receiver(self, codebook: Codebook) -> Receiver:
        timing = self.timing
        if timing.omega != self.gmsk.samples_per_symbol:
            timing = timing.model_copy(update={"omega": float(self.gmsk.samples_per_symbol)})
        return Receiver(
            self.detector(codebook), self.squelch, self.fir, self.gmsk, timing, self.input_rate
        )


def tag_frame(codebook: Codebook, tag_id: str) -> TagFrame:
    """Frame for a codebook tag; the stored sequence already carries the preamble."""
    return assemble_frame(codebook.lookup(tag_id).code[PREAMBLE_BITS:])


def tag_frame_bits(codebook: Codebook, tag_id: str) -> BitSequence:
    """The 280 on-air bits of a codebook tag's frame."""
    return flatten_to_bits(tag_frame(codebook, tag_id))


def synthesize_burst(
    bits: BitSequence,
    gmsk: Optional[GmskParams] = None,
    center_offset_hz: float = CENTER_OFFSET_HZ,
    lead_samples: int = 64,
    trail_samples: int = 64,
    repeat: int = 1,
    interval_s: float = 1.0,
) -> IqBuffer:
    """GMSK-modulate ``bits`` at ``center_offset_hz`` inside a silent buffer.

    With ``repeat > 1`` the burst recurs every ``interval_s`` seconds, the way a tag
    pulses its frame.
    """
    gmsk = gmsk or GmskParams()
    if repeat < 1:
        raise InvalidArgumentError(f"repeat must be at least 1, got {repeat}")
    if lead_samples < 0 or trail_samples < 0:
        raise InvalidArgumentError("silence padding must be non-negative")
    burst = gmsk_modulate(bits, gmsk)
    fs = burst.sample_rate
    stride = int(round(interval_s * fs))
    if repeat > 1 and stride < len(burst):
        raise InvalidArgumentError(
            f"interval {interval_s:g} s is shorter than one burst ({burst.duration:g} s)"
        )
    total = lead_samples + (repeat - 1) * stride + len(burst) + trail_samples
    out = np.zeros(total, dtype=np.complex128)
    for k in range(repeat):
        start = lead_samples + k * stride
        out[start : start + len(burst)] = burst.samples
    out *= np.exp(2j * math.pi * center_offset_hz * np.arange(total) / fs)
    return IqBuffer(out, fs)


def trial_seeds(seed: int, count: int, *key: int) -> List[int]:
    """Independent, reproducible 63-bit seeds for ``count`` trials."""
    children = np.random.SeedSequence(seed, spawn_key=key).spawn(count)
    return [int(child.generate_state(1, np.uint64)[0] >> np.uint64(1)) for child in children]


def random_channel(
    setup: TrialSetup,
    seed: int,
    snr_db: Optional[float] = None,
    distance_m: Optional[float] = None,
    azimuth_deg: float = 0.0,
) -> ChannelParams:
    """Channel for one trial with the setup's random impairments drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    imp = setup.impairments
    sps = setup.tx_gmsk.samples_per_symbol
    timing = float(rng.uniform(0.0, sps)) if imp.random_timing else 0.0
    cfo = float(rng.uniform(-imp.max_cfo_hz, imp.max_cfo_hz)) if imp.max_cfo_hz else 0.0
    clock = (
        float(rng.uniform(-imp.max_clock_offset, imp.max_clock_offset))
        if imp.max_clock_offset
        else 0.0
    )
    return ChannelParams(
        snr_db=snr_db,
        distance_m=distance_m,
        azimuth_deg=azimuth_deg,
        cfo_hz=cfo,
        phase_rad=float(rng.uniform(-math.pi, math.pi)),
        timing_offset_samples=timing,
        sample_clock_offset=clock,
        rng_seed=int(rng.integers(0, 2**63 - 1)),
    )


def run_trial(
    setup: TrialSetup, codebook: Codebook, tag_id: str, channel: ChannelParams
) -> List[DetectionEvent]:
    """Transmit one frame of ``tag_id`` through ``channel`` and return what the receiver saw."""
    burst = synthesize_burst(
        tag_frame_bits(codebook, tag_id),
        setup.tx_gmsk,
        setup.fir.center_offset_hz,
        setup.lead_samples,
        setup.trail_samples,
    )
    received = apply_channel(burst, channel, setup.budget, setup.pattern)
    receiver = setup.receiver(codebook)
    events = receiver.push(received)
    events.extend(receiver.flush())
    return events


def best_score(events: Sequence[DetectionEvent], tag_id: str) -> int:
    return max((e.score for e in events if e.tag_id == tag_id), default=0)


class PdPoint(BaseModel):
    snr_db: float
    pd: float = Field(ge=0.0, le=1.0)
    detections: int
    trials: int


def pd_curve(
    setup: TrialSetup,
    codebook: Codebook,
    tag_id: str,
    snr_grid_db: Sequence[float],
    trials: int,
    seed: int = 0,
    first_key: int = 0,
) -> List[PdPoint]:
    """Probability that a frame yields at least one event with the right tag id, per SNR.

    Bin ``k`` draws its trials from seed key ``first_key + k``.
    """
    if trials < 1:
        raise InvalidArgumentError(f"trials must be at least 1, got {trials}")
    if not len(snr_grid_db):
        raise InvalidArgumentError("SNR grid is empty")
    curve = []
    for index, snr in enumerate(snr_grid_db):
        hits = 0
        for trial_seed in trial_seeds(seed, trials, first_key + index):
            channel = random_channel(setup, trial_seed, snr_db=float(snr))
            events = run_trial(setup, codebook, tag_id, channel)
            detected = any(e.tag_id == tag_id for e in events)
            hits += detected
            logger.debug(f"snr {snr:g} dB seed {trial_seed}: best {best_score(events, tag_id)}")
        curve.append(PdPoint(snr_db=float(snr), pd=hits / trials, detections=hits, trials=trials))
        logger.debug(f"Pd({snr:g} dB) = {hits / trials:.3f}")
    return curve


def isotonic_pd(curve: Sequence[PdPoint]) -> np.ndarray:
    """Least-squares non-decreasing fit of Pd over SNR, weighted by trial count."""
    values = np.array([p.pd for p in curve], dtype=np.float64)
    weights = np.array([p.trials for p in curve], dtype=np.float64)
    return isotonic_regression(values, weights=weights, increasing=True).x


def monotonicity_violation(curve: Sequence[PdPoint]) -> float:
    """Largest distance between the measured curve and its isotonic fit."""
    if not curve:
        return 0.0
    fitted = isotonic_pd(curve)
    return float(np.max(np.abs(fitted - np.array([p.pd for p in curve]))))


def snr_at_pd(curve: Sequence[PdPoint], target: float) -> float:
    """Lowest SNR at which the isotonic Pd fit reaches ``target`` (linear between bins)."""
    if not 0.0 < target <= 1.0:
        raise InvalidArgumentError(f"Pd target must be in (0, 1], got {target}")
    if not curve:
        raise InvalidArgumentError("Pd curve is empty")
    fitted = isotonic_pd(curve)
    snr = [p.snr_db for p in curve]
    reached = np.flatnonzero(fitted >= target)
    if reached.size == 0:
        raise UnsupportedError(
            f"Pd {target:g} is not reached below {snr[-1]:g} dB; extend the SNR grid"
        )
    i = int(reached[0])
    if i == 0 or fitted[i] == fitted[i - 1]:
        return float(snr[i])
    frac = (target - fitted[i - 1]) / (fitted[i] - fitted[i - 1])
    return float(snr[i - 1] + frac * (snr[i] - snr[i - 1]))


class RangeSettings(BaseModel):
    """Pd-curve grid and the distance search behind a range prediction.

    When the target Pd is not reached on the grid, the grid grows by
    ``extension_db`` at most ``max_extensions`` times before giving up.
    """

    model_config = ConfigDict(frozen=True)

    pd_target: float = Field(default=0.9, gt=0.0, le=1.0)
    trials: int = Field(default=100, ge=1)
    snr_min_db: float = -6.0
    snr_max_db: float = 12.0
    snr_step_db: float = Field(default=0.5, gt=0.0)
    max_extensions: int = Field(default=2, ge=0)
    extension_db: float = Field(default=6.0, gt=0.0)
    distance_tolerance: float = Field(default=0.005, gt=0.0, lt=1.0)
    environment_margin_db: float = Field(default=6.0, ge=0.0)

    @model_validator(mode="after")
    def _ordered(self) -> "RangeSettings":
        if self.snr_max_db < self.snr_min_db:
            raise ValueError("snr_max_db must not be below snr_min_db")
        return self

    def snr_grid(self) -> List[float]:
        count = int(math.floor((self.snr_max_db - self.snr_min_db) / self.snr_step_db + 1e-9)) + 1
        return [round(self.snr_min_db + k * self.snr_step_db, 6) for k in range(count)]

    def extension_grid(self, after_db: float) -> List[float]:
        """The next ``extension_db`` of grid points above ``after_db``."""
        count = int(math.floor(self.extension_db / self.snr_step_db + 1e-9))
        return [round(after_db + k * self.snr_step_db, 6) for k in range(1, max(count, 1) + 1)]


class RangeReport(BaseModel):
    """Predicted boresight range for a detection-probability target.

    The noise-limited range inverts the link budget at the SNR where Pd reaches the
    target. The gate-limited range is the farthest distance at which the squelch still
    opens early enough for Pd to reach the target (``gate_pd`` is the Pd measured
    there); ``squelch_edge_m`` is where the level falls to the threshold itself. The
    prediction is the smaller of the two limits.
    """

    pd_target: float
    trials: int
    curve: List[PdPoint]
    snr_star_db: float
    noise_limited_m: float
    gate_limited_m: float
    gate_pd: float
    squelch_edge_m: float
    predicted_m: float
    limited_by: str
    environment_margin_db: float
    plausible_interval_m: Tuple[float, float]

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def squelch_edge_range(setup: TrialSetup, azimuth_deg: float = 0.0) -> float:
    """Distance at which the received level sits exactly at the squelch threshold.

    The smoothed power only approaches the threshold there, so nothing is detected
    at this distance; it bounds the gate-limited search from above.
    """
    level = setup.budget.rx_full_scale_dbm + setup.squelch.threshold_db
    return distance_for_rx_power(setup.budget, setup.pattern, level, azimuth_deg)


def pd_at_distance(
    setup: TrialSetup,
    codebook: Codebook,
    tag_id: str,
    distance_m: float,
    trials: int,
    seed: int = 0,
    azimuth_deg: float = 0.0,
) -> float:
    """Pd for a tag at ``distance_m`` with levels from the link budget.

    Every distance reuses the same trial seeds, so Pd changes with distance alone.
    """
    if trials < 1:
        raise InvalidArgumentError(f"trials must be at least 1, got {trials}")
    hits = 0
    for trial_seed in trial_seeds(seed, trials, DISTANCE_SEED_KEY):
        channel = random_channel(
            setup, trial_seed, distance_m=distance_m, azimuth_deg=azimuth_deg
        )
        hits += any(e.tag_id == tag_id for e in run_trial(setup, codebook, tag_id, channel))
    pd = hits / trials
    logger.debug(f"Pd({distance_m:.1f} m) = {pd:.3f}")
    return pd


class GateSearch(NamedTuple):
    distance_m: float
    pd: float


def gate_limited_range(
    setup: TrialSetup,
    codebook: Codebook,
    tag_id: str,
    pd_target: float = 0.9,
    trials: int = 100,
    seed: int = 0,
    tolerance: float = 0.005,
) -> GateSearch:
    """Farthest boresight distance whose Monte Carlo Pd still reaches ``pd_target``.

    Bisects (geometrically) below the squelch edge until the bracket is narrower
    than ``tolerance`` relative. The returned distance is the last one that passed.
    """
    if not 0.0 < pd_target <= 1.0:
        raise InvalidArgumentError(f"Pd target must be in (0, 1], got {pd_target}")
    hi = squelch_edge_range(setup)
    lo = hi
    lo_pd = 0.0
    for _ in range(MAX_DISTANCE_HALVINGS):
        hi, lo = lo, lo / 2.0
        lo_pd = pd_at_distance(setup, codebook, tag_id, lo, trials, seed)
        if lo_pd >= pd_target:
            break
    else:
        raise UnsupportedError(f"Pd {pd_target:g} is not reached even at {lo:.1f} m")
    while hi / lo > 1.0 + tolerance:
        mid = math.sqrt(lo * hi)
        mid_pd = pd_at_distance(setup, codebook, tag_id, mid, trials, seed)
        if mid_pd >= pd_target:
            lo, lo_pd = mid, mid_pd
        else:
            hi = mid
    logger.debug(f"gate-limited range {lo:.1f} m (Pd {lo_pd:.3f})")
    return GateSearch(lo, lo_pd)


def link_budget_summary(
    setup: TrialSetup, distance_m: float, azimuth_deg: float = 0.0
) -> Dict[str, Any]:
    """Received power, SNR and receiver level for a tag at one distance and azimuth."""
    budget, pattern = setup.budget, setup.pattern
    levels = resolve_levels(
        ChannelParams(distance_m=distance_m, azimuth_deg=azimuth_deg), budget, pattern
    )
    return {
        "distance_m": distance_m,
        "azimuth_deg": azimuth_deg,
        "fspl_db": round(fspl_db(distance_m, budget.frequency_hz), 3),
        "rx_gain_dbi": round(pattern_gain(pattern, azimuth_deg), 3),
        "rx_power_dbm": round(rx_power_dbm(budget, pattern, distance_m, azimuth_deg), 3),
        "noise_power_dbm": round(noise_power_dbm(budget), 3),
        "snr_db": round(levels.snr_db, 3),
        "rx_level_dbfs": round(levels.signal_dbfs, 3),
        "squelch_open": levels.signal_dbfs >= setup.squelch.threshold_db,
    }


def extended_pd_curve(
    setup: TrialSetup,
    codebook: Codebook,
    tag_id: str,
    settings: RangeSettings,
    seed: int = 0,
) -> List[PdPoint]:
    """Pd curve over the settings' grid, grown upward until the target is reached."""
    curve = pd_curve(setup, codebook, tag_id, settings.snr_grid(), settings.trials, seed)
    for _ in range(settings.max_extensions):
        if isotonic_pd(curve)[-1] >= settings.pd_target:
            break
        more = settings.extension_grid(curve[-1].snr_db)
        logger.info(
            f"Pd {settings.pd_target:g} not reached by {curve[-1].snr_db:g} dB; "
            f"extending the grid to {more[-1]:g} dB"
        )
        curve += pd_curve(
            setup, codebook, tag_id, more, settings.trials, seed, first_key=len(curve)
        )
    return curve


def predict_range(
    setup: TrialSetup,
    codebook: Codebook,
    tag_id: str,
    settings: Optional[RangeSettings] = None,
    seed: int = 0,
) -> RangeReport:
    settings = settings or RangeSettings()
    curve = extended_pd_curve(setup, codebook, tag_id, settings, seed)
    snr_star = snr_at_pd(curve, settings.pd_target)
    noise_limited = distance_for_snr(setup.budget, setup.pattern, snr_star)
    gate = gate_limited_range(
        setup,
        codebook,
        tag_id,
        settings.pd_target,
        settings.trials,
        seed,
        settings.distance_tolerance,
    )
    predicted = min(noise_limited, gate.distance_m)
    limited_by = "noise" if noise_limited <= gate.distance_m else "squelch"
    spread = 10.0 ** (settings.environment_margin_db / 20.0)
    logger.info(
        f"Pd {settings.pd_target:g} at {snr_star:.2f} dB SNR: noise-limited "
        f"{noise_limited:.0f} m, squelch-limited {gate.distance_m:.0f} m -> {predicted:.0f} m"
    )
    return RangeReport(
        pd_target=settings.pd_target,
        trials=settings.trials,
        curve=curve,
        snr_star_db=snr_star,
        noise_limited_m=noise_limited,
        gate_limited_m=gate.distance_m,
        gate_pd=gate.pd,
        squelch_edge_m=squelch_edge_range(setup),
        predicted_m=predicted,
        limited_by=limited_by,
        environment_margin_db=settings.environment_margin_db,
        plausible_interval_m=(predicted / spread, predicted * spread),
    )


def curve_to_csv(curve: Sequence[PdPoint]) -> str:
    fitted = isotonic_pd(curve) if curve else []
    rows = ["snr_db,pd,pd_isotonic"]
    rows.extend(f"{p.snr_db:g},{p.pd:.4f},{f:.4f}" for p, f in zip(curve, fitted))
    return "\n".join(rows) + "\n"
