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
"""Shared state and helpers for the MCP tools."""

import logging
from typing import Any, Optional

from ..common import (
    CapacityExceededError,
    CorruptFileError,
    NoBearingError,
    UnsupportedError,
)
from ..config import ExperimentConfig, default_config, merge_overrides
from ..fileio import read_codebook
from ..pncode import Codebook, build_codebook

# Configure logger
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

# Failures reported to the client as tool errors; bad arguments surface as ValueError
TOOL_ERRORS = (CapacityExceededError, CorruptFileError, NoBearingError, UnsupportedError, OSError)


class LazyExperimentConfig:
    """Loads the server's configuration on first use rather than at import time."""

    def __init__(self):
        self._config: Optional[ExperimentConfig] = None

    def get(self) -> ExperimentConfig:
        if self._config is None:
            self._config = default_config()
            logger.info(f"Loaded experiment configuration (seed {self._config.seed})")
        return self._config

    def set(self, config: ExperimentConfig) -> None:
        self._config = config

    def reset(self) -> None:
        self._config = None

    def with_overrides(self, **flags: Any) -> ExperimentConfig:
        return merge_overrides(self.get(), **flags)

    def __getattr__(self, name):
        """Delegate attribute access to the loaded configuration"""
        return getattr(self.get(), name)


experiment_config = LazyExperimentConfig()


def codebook_or_default(path: Optional[str], seed: int) -> Codebook:
    """The codebook at ``path``, or a one-tag codebook built from ``seed``."""
    if path:
        return read_codebook(path)
    return build_codebook(1, seed)
