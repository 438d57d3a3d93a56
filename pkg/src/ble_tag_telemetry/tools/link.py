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
"""Link tools: link budget at a given geometry and Monte Carlo range prediction."""

from typing import Any, Dict, Optional

from mcp.server.fastmcp import FastMCP

from ..experiments import curve_to_csv, link_budget_summary
from ..experiments import predict_range as run_range_prediction
from ..fileio import atomic_write_text
from .common import TOOL_ERRORS, codebook_or_default, experiment_config, logger


def register_tools(mcp: FastMCP):
    """Register link budget and range tools with the MCP server."""

    @mcp.tool()
    async def compute_link_budget(distance_m: float, azimuth_deg: float = 0.0) -> Dict[str, Any]:
        """Computes received power, SNR and receiver level for a tag at a distance and azimuth.

        Args:
            distance_m (float): Tag distance in metres (> 0)
            azimuth_deg (float, optional): Receive antenna azimuth off the tag, -180..180
                (default: 0, boresight)

        Returns:
            Dict[str, Any]: fspl_db, rx_gain_dbi, rx_power_dbm, noise_power_dbm, snr_db,
                rx_level_dbfs and whether the squelch would open
        """
        if distance_m <= 0:
            raise ValueError("distance_m must be positive")
        if not -180.0 <= azimuth_deg <= 180.0:
            raise ValueError("azimuth_deg must be in -180..180")
        return link_budget_summary(experiment_config.setup, distance_m, azimuth_deg)

    @mcp.tool()
    async def predict_range(
        pd_target: Optional[float] = None,
        trials: Optional[int] = None,
        snr_min_db: Optional[float] = None,
        snr_max_db: Optional[float] = None,
        snr_step_db: Optional[float] = None,
        environment_margin_db: Optional[float] = None,
        codebook_path: Optional[str] = None,
        tag_id: Optional[str] = None,
        seed: Optional[int] = None,
        plot_data_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """Predicts boresight detection range from a simulated detection-probability curve.

        Every trial runs the full transmit, channel and receive chain, so large trial
        counts take minutes. The squelch limit is found by bisecting distance-mode
        trials below the point where the level equals the squelch threshold.

        Args:
            pd_target (float, optional): Detection probability to reach (default: 0.9)
            trials (int, optional): Monte Carlo trials per SNR point (default: 100)
            snr_min_db (float, optional): Lowest SNR on the grid (default: -6)
            snr_max_db (float, optional): Highest SNR on the grid (default: 12); the grid
                grows by up to two 6 dB steps when the target is not reached
            snr_step_db (float, optional): Grid step (default: 0.5)
            environment_margin_db (float, optional): Unmodeled excess loss that widens the
                plausible interval (default: 6)
            codebook_path (str, optional): Codebook JSON; a one-tag codebook is built when omitted
            tag_id (str, optional): Tag to simulate (default: first tag)
            seed (int, optional): Seed for all random draws (default: configured seed)
            plot_data_path (str, optional): Also write the Pd curve as CSV here

        Returns:
            Dict[str, Any]: The range report: curve, snr_star_db, noise_limited_m,
                gate_limited_m (with the Pd measured there as gate_pd), squelch_edge_m,
                predicted_m, limited_by and plausible_interval_m

        Example:
            ```python
            report = await predict_range(pd_target=0.9, trials=50)
            ```
        """
        try:
            config = experiment_config.with_overrides(
                seed=seed,
                pd_target=pd_target,
                trials=trials,
                snr_min_db=snr_min_db,
                snr_max_db=snr_max_db,
                snr_step_db=snr_step_db,
                environment_margin_db=environment_margin_db,
            )
            book = codebook_or_default(codebook_path, config.seed)
            tag = book.resolve_tag(tag_id)
            report = run_range_prediction(config.setup, book, tag, config.range, config.seed)
            if plot_data_path:
                atomic_write_text(plot_data_path, curve_to_csv(report.curve))
            return report.model_dump()
        except TOOL_ERRORS as e:
            logger.error(f"Range prediction failed: {e}")
            raise Exception(f"Error predicting range: {e}")
