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
"""Experiment configuration: JSON files, environment defaults and flag overrides."""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Tuple, Union

from pydantic import BaseModel, Field, ValidationError

from .bearing import SweepConfig
from .common import DEFAULT_THRESHOLD, DETECT_BITS, InvalidArgumentError
from .experiments import RangeSettings, TrialSetup

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

CONFIG_ENV = "BLE_TAG_TELEMETRY_CONFIG"

# Flat override names and where they land in the nested config
OVERRIDE_PATHS: Dict[str, Tuple[str, ...]] = {
    "seed": ("seed",),
    "max_cross": ("max_cross",),
    "threshold": ("setup", "threshold"),
    "squelch_db": ("setup", "squelch", "threshold_db"),
    "distance_m": ("sweep", "distance_m"),
    "tag_azimuth_deg": ("sweep", "tag_azimuth_deg"),
    "angles_deg": ("sweep", "angles_deg"),
    "trials_per_angle": ("sweep", "trials_per_angle"),
    "pd_target": ("range", "pd_target"),
    "trials": ("range", "trials"),
    "snr_min_db": ("range", "snr_min_db"),
    "snr_max_db": ("range", "snr_max_db"),
    "snr_step_db": ("range", "snr_step_db"),
    "environment_margin_db": ("range", "environment_margin_db"),
}


class ExperimentConfig(BaseModel):
    """Everything the CLI and the MCP tools need for one run.

    ``sweep.setup`` and ``sweep.rng_seed`` are replaced by the top-level ``setup`` and
    ``seed`` when the sweep runs (see :meth:`sweep_config`).
    """

    seed: int = 0
    max_cross: int = Field(default=DEFAULT_THRESHOLD, ge=128, lt=DETECT_BITS)
    setup: TrialSetup = TrialSetup()
    sweep: SweepConfig = SweepConfig()
    range: RangeSettings = RangeSettings()

    def sweep_config(self) -> SweepConfig:
        return self.sweep.model_copy(update={"setup": self.setup, "rng_seed": self.seed})


def _link_budget_document(doc: Dict[str, Any]) -> Dict[str, Any]:
    """Lift a bare ``{"budget": ..., "pattern": ...}`` file into the experiment layout."""
    if "setup" in doc or not ({"budget", "pattern"} & doc.keys()):
        return doc
    lifted = {k: v for k, v in doc.items() if k not in ("budget", "pattern")}
    lifted["setup"] = {k: doc[k] for k in ("budget", "pattern") if k in doc}
    return lifted


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise InvalidArgumentError("configuration must be a JSON object")
        return ExperimentConfig.model_validate(_link_budget_document(doc))
    except (json.JSONDecodeError, ValidationError) as e:
        raise InvalidArgumentError(f"invalid configuration: {e}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    logger.debug(f"loading configuration from {path}")
    return parse_config(Path(path).read_text(encoding="utf-8"))


def default_config() -> ExperimentConfig:
    """The file named by ``BLE_TAG_TELEMETRY_CONFIG``, or built-in defaults."""
    path = os.environ.get(CONFIG_ENV)
    if path:
        return load_config(path)
    return ExperimentConfig()


def merge_overrides(config: ExperimentConfig, **flags: Any) -> ExperimentConfig:
    """Apply explicit flags on top of ``config``; ``None`` means not given."""
    doc = config.model_dump()
    for name, value in flags.items():
        if value is None:
            continue
        if name not in OVERRIDE_PATHS:
            raise InvalidArgumentError(f"unknown configuration override '{name}'")
        *parents, leaf = OVERRIDE_PATHS[name]
        node = doc
        for key in parents:
            node = node[key]
        node[leaf] = value
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        raise InvalidArgumentError(f"invalid override: {e}") from e
