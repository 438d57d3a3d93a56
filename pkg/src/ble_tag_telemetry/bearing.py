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
"""Azimuth sweeps of the receive antenna and bearing estimation from them."""

import csv
import io
import json
import logging
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .channel import wrap_degrees
from .common import DEFAULT_THRESHOLD, DETECT_BITS, NoBearingError
from .experiments import TrialSetup, best_score, random_channel, run_trial, trial_seeds
from .pncode import Codebook, build_codebook

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

METHOD_SCORE_PARABOLIC = "score-parabolic"
METHOD_RSSI_PARABOLIC = "rssi-parabolic"
METHOD_PLATEAU_MIDPOINT = "plateau-midpoint"
METHOD_GRID_ARGMAX = "grid-argmax"


def _default_angles() -> List[float]:
    return [float(a) for a in range(-90, 91, 10)]


class SweepConfig(BaseModel):
    """One simulated sweep: the tag sits at ``distance_m`` and ``tag_azimuth_deg``."""

    angles_deg: List[float] = Field(default_factory=_default_angles)
    distance_m: float = Field(default=50.0, gt=0.0)
    tag_azimuth_deg: float = Field(default=0.0, ge=-180.0, le=180.0)
    trials_per_angle: int = Field(default=5, ge=1)
    rng_seed: int = 0
    setup: TrialSetup = TrialSetup()

    @field_validator("angles_deg")
    @classmethod
    def _strictly_increasing(cls, angles: List[float]) -> List[float]:
        if not angles:
            raise ValueError("at least one sweep angle is required")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise ValueError("sweep angles must be strictly increasing")
        if any(not -180.0 <= a <= 180.0 for a in angles):
            raise ValueError("sweep angles must lie in -180..180 degrees")
        return angles


class SweepPoint(BaseModel):
    angle_deg: float
    best_score: int = Field(ge=0, le=DETECT_BITS)
    detection_rate: float = Field(ge=0.0, le=1.0)
    mean_score: float = Field(ge=0.0, le=DETECT_BITS)
    rssi_db: Optional[float] = None


class SweepResult(BaseModel):
    """Per-angle scores plus the bearing estimate (``None`` when nothing was detected).

    ``bearing_method`` says how the estimate was obtained; anything other than
    ``grid-argmax`` is interpolated between grid angles.
    """

    points: List[SweepPoint]
    threshold: int = DEFAULT_THRESHOLD
    estimated_bearing_deg: Optional[float] = None
    bearing_method: Optional[str] = None
    peak_angle_deg: Optional[float] = None

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["angle", "correlation"])
        for point in self.points:
            writer.writerow([f"{point.angle_deg:g}", point.best_score])
        return buffer.getvalue()

    def to_plot_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["angle", "correlation", "mean_correlation", "detection_rate", "rssi_db"])
        for p in self.points:
            rssi = "" if p.rssi_db is None else f"{p.rssi_db:.3f}"
            writer.writerow(
                [f"{p.angle_deg:g}", p.best_score, f"{p.mean_score:.2f}", p.detection_rate, rssi]
            )
        return buffer.getvalue()

    def summary_json(self) -> str:
        best = max(self.points, key=lambda p: p.best_score)
        doc = {
            "estimated_bearing_deg": self.estimated_bearing_deg,
            "bearing_method": self.bearing_method,
            "bearing_available": self.estimated_bearing_deg is not None,
            "peak_angle_deg": self.peak_angle_deg,
            "peak_score": best.best_score,
            "threshold": self.threshold,
            "angles": len(self.points),
        }
        return json.dumps(doc, indent=2) + "\n"


class BearingEstimate(NamedTuple):
    bearing_deg: float
    method: str
    peak_angle_deg: float


def _vertex(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Abscissa of the parabola through three points, if it opens downward."""
    a, b, _ = np.polyfit(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64), 2)
    if a >= 0:
        return None
    vertex = -b / (2.0 * a)
    return float(np.clip(vertex, x[0], x[2]))


def estimate_bearing(
    angles_deg: Sequence[float],
    scores: Sequence[float],
    rssi_db: Optional[Sequence[Optional[float]]] = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> BearingEstimate:
    """Bearing from a sweep.

    A single best angle is refined by a parabola through it and its neighbours. When
    several adjacent angles share the best score the main lobe has saturated the
    correlator, and the received power inside that plateau locates the peak instead.
    """
    if len(angles_deg) != len(scores) or len(scores) == 0:
        raise NoBearingError("sweep has no points")
    s = np.asarray(scores, dtype=np.float64)
    top = float(s.max())
    if top < threshold:
        raise NoBearingError(f"no angle reached the detection threshold {threshold:g}")
    tops = np.flatnonzero(s == top)
    n = len(s)

    # longest run of adjacent best angles, first one on ties
    runs = np.split(tops, np.flatnonzero(np.diff(tops) > 1) + 1)
    run = max(runs, key=len)
    first, last = int(run[0]), int(run[-1])

    grid = np.asarray(angles_deg, dtype=np.float64)

    def nearest_top(bearing: float) -> float:
        return float(grid[run[np.argmin(np.abs(grid[run] - bearing))]])

    if first == last:
        i = first
        if 0 < i < n - 1:
            vertex = _vertex(angles_deg[i - 1 : i + 2], s[i - 1 : i + 2])
            if vertex is not None:
                return BearingEstimate(vertex, METHOD_SCORE_PARABOLIC, float(angles_deg[i]))
        return BearingEstimate(float(angles_deg[i]), METHOD_GRID_ARGMAX, float(angles_deg[i]))

    if rssi_db is not None and all(rssi_db[k] is not None for k in run):
        j = int(max(run, key=lambda k: rssi_db[k]))
        if 0 < j < n - 1 and rssi_db[j - 1] is not None and rssi_db[j + 1] is not None:
            vertex = _vertex(angles_deg[j - 1 : j + 2], [rssi_db[k] for k in (j - 1, j, j + 1)])
            if vertex is not None:
                return BearingEstimate(vertex, METHOD_RSSI_PARABOLIC, nearest_top(vertex))
        return BearingEstimate(float(angles_deg[j]), METHOD_GRID_ARGMAX, float(angles_deg[j]))

    midpoint = 0.5 * (float(angles_deg[first]) + float(angles_deg[last]))
    return BearingEstimate(midpoint, METHOD_PLATEAU_MIDPOINT, nearest_top(midpoint))


def run_sweep(
    config: SweepConfig, codebook: Optional[Codebook] = None, tag_id: Optional[str] = None
) -> SweepResult:
    """Simulate the sweep angle by angle; each angle keeps its best score over the trials."""
    codebook = codebook or build_codebook(1, config.rng_seed)
    tag_id = tag_id or codebook.tag_ids[0]
    setup = config.setup
    points: List[SweepPoint] = []
    for index, angle in enumerate(config.angles_deg):
        offset = wrap_degrees(angle - config.tag_azimuth_deg)
        scores: List[int] = []
        rssi: List[float] = []
        for seed in trial_seeds(config.rng_seed, config.trials_per_angle, index):
            channel = random_channel(setup, seed, distance_m=config.distance_m, azimuth_deg=offset)
            events = [e for e in run_trial(setup, codebook, tag_id, channel) if e.tag_id == tag_id]
            scores.append(best_score(events, tag_id))
            if events:
                strongest = max(events, key=lambda e: e.score)
                if strongest.rssi_db_est is not None:
                    rssi.append(strongest.rssi_db_est)
        detected = sum(1 for score in scores if score >= setup.threshold)
        point = SweepPoint(
            angle_deg=angle,
            best_score=max(scores),
            detection_rate=detected / len(scores),
            mean_score=float(np.mean(scores)),
            rssi_db=float(np.mean(rssi)) if rssi else None,
        )
        logger.info(
            f"angle {angle:g} deg: best {point.best_score}, detected "
            f"{detected}/{len(scores)}"
        )
        points.append(point)

    result = SweepResult(points=points, threshold=setup.threshold)
    try:
        estimate = estimate_bearing(
            [p.angle_deg for p in points],
            [p.best_score for p in points],
            [p.rssi_db for p in points],
            setup.threshold,
        )
    except NoBearingError as e:
        logger.warning(f"No bearing available: {e}")
        return result
    logger.info(f"Estimated bearing {estimate.bearing_deg:.2f} deg ({estimate.method})")
    return result.model_copy(
        update={
            "estimated_bearing_deg": estimate.bearing_deg,
            "bearing_method": estimate.method,
            "peak_angle_deg": estimate.peak_angle_deg,
        }
    )
