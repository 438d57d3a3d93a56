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
"""Receiver tools: tag detection in IQ captures and simulated bearing sweeps."""

from typing import Any, Dict, List, Optional

from mcp.server.fastmcp import FastMCP

from ..bearing import run_sweep
from ..fileio import DEFAULT_BLOCK_SAMPLES, atomic_write_text, iter_iq_blocks, read_codebook
from ..rx import events_to_jsonl
from .common import TOOL_ERRORS, experiment_config, logger


def register_tools(mcp: FastMCP):
    """Register receiver tools with the MCP server."""

    @mcp.tool()
    async def detect_tags_in_capture(
        capture_path: str,
        codebook_path: str,
        threshold: Optional[int] = None,
        sample_rate: Optional[float] = None,
        out_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """Runs the receiver over a raw IQ capture and reports every tag detection.

        Args:
            capture_path (str): Interleaved little-endian float32 IQ file
            codebook_path (str): Codebook JSON with the tags to look for
            threshold (int, optional): Correlation threshold, 129..256 (default: 192)
            sample_rate (float, optional): Sample rate in Hz; read from the capture's
                .json sidecar when omitted
            out_path (str, optional): Also write the detections as JSON lines here

        Returns:
            Dict[str, Any]: {"detections": [...], "count": int, "samples": int} where each
                detection has tag_id, score, sample_offset, rssi_db_est and timestamp
        """
        try:
            config = experiment_config.with_overrides(threshold=threshold)
            book = read_codebook(codebook_path)
            receiver = config.setup.receiver(book)
            events = []
            for block in iter_iq_blocks(capture_path, sample_rate, DEFAULT_BLOCK_SAMPLES):
                events.extend(receiver.push(block))
            events.extend(receiver.flush())
            if out_path:
                atomic_write_text(out_path, events_to_jsonl(events))
            logger.info(f"{len(events)} detections in {capture_path}")
            return {
                "detections": [e.model_dump(exclude={"input_sample"}) for e in events],
                "count": len(events),
                "samples": receiver.consumed_samples,
            }
        except TOOL_ERRORS as e:
            logger.error(f"Error detecting tags in {capture_path}: {e}")
            raise Exception(f"Error detecting tags in capture {capture_path}: {e}")

    @mcp.tool()
    async def simulate_bearing_sweep(
        distance_m: Optional[float] = None,
        tag_azimuth_deg: Optional[float] = None,
        angles_deg: Optional[List[float]] = None,
        trials_per_angle: Optional[int] = None,
        codebook_path: Optional[str] = None,
        tag_id: Optional[str] = None,
        seed: Optional[int] = None,
    ) -> Dict[str, Any]:
        """Simulates an azimuth sweep of the directional antenna and estimates the tag bearing.

        Args:
            distance_m (float, optional): Tag distance in metres (default: 50)
            tag_azimuth_deg (float, optional): True tag azimuth, -180..180 (default: 0)
            angles_deg (List[float], optional): Strictly increasing antenna azimuths
                (default: -90..90 in 10 degree steps)
            trials_per_angle (int, optional): Bursts per angle; each angle keeps its best
                score (default: 5)
            codebook_path (str, optional): Codebook JSON; a one-tag codebook is built when omitted
            tag_id (str, optional): Tag to simulate (default: first tag)
            seed (int, optional): Seed for all random draws (default: configured seed)

        Returns:
            Dict[str, Any]: Per-angle points, estimated_bearing_deg (None when no angle
                reached the threshold), bearing_method and peak_angle_deg
        """
        try:
            config = experiment_config.with_overrides(
                seed=seed,
                distance_m=distance_m,
                tag_azimuth_deg=tag_azimuth_deg,
                angles_deg=angles_deg,
                trials_per_angle=trials_per_angle,
            )
            book = read_codebook(codebook_path) if codebook_path else None
            tag = book.resolve_tag(tag_id) if book else None
            result = run_sweep(config.sweep_config(), book, tag)
            summary = result.model_dump()
            summary["bearing_available"] = result.estimated_bearing_deg is not None
            return summary
        except TOOL_ERRORS as e:
            logger.error(f"Bearing sweep failed: {e}")
            raise Exception(f"Error simulating bearing sweep: {e}")
