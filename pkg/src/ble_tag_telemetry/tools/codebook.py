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
"""Codebook tools: PN code search, verification and per-tag firmware export."""

from typing import Any, Dict, Optional

from mcp.server.fastmcp import FastMCP

from ..experiments import tag_frame
from ..fileio import atomic_write_text, read_codebook, write_codebook
from ..frame import export_firmware, render_c_header
from ..pncode import build_codebook
from ..pncode import verify_codebook as check_codebook
from .common import TOOL_ERRORS, experiment_config, logger

FIRMWARE_FORMATS = ("json", "c-header")


def register_tools(mcp: FastMCP):
    """Register codebook tools with the MCP server."""

    @mcp.tool()
    async def generate_codebook(
        n_tags: int,
        seed: Optional[int] = None,
        max_cross: Optional[int] = None,
        out_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """Searches for a set of 256-bit tag detection sequences with bounded cross-correlation.

        Args:
            n_tags (int): Number of tags to generate codes for (at least 1)
            seed (int, optional): Seed for the search order (default: configured seed)
            max_cross (int, optional): Largest allowed pairwise sliding match count, 128..255
                (default: configured max_cross, normally 192)
            out_path (str, optional): Also write the codebook JSON to this file

        Returns:
            Dict[str, Any]: The codebook (version, max_cross_correlation, entries) plus the
                list of tag ids

        Example:
            ```python
            book = await generate_codebook(n_tags=4, seed=7)
            ```
        """
        if n_tags < 1:
            raise ValueError("n_tags must be at least 1")
        try:
            config = experiment_config.with_overrides(seed=seed, max_cross=max_cross)
            book = build_codebook(n_tags, config.seed, config.max_cross)
            if out_path:
                write_codebook(out_path, book)
                logger.info(f"Wrote {n_tags} tag codes to {out_path}")
            result = book.model_dump()
            result["tag_ids"] = book.tag_ids
            return result
        except TOOL_ERRORS as e:
            logger.error(f"Codebook search for {n_tags} tags failed: {e}")
            raise Exception(f"Error generating codebook for {n_tags} tags: {e}")

    @mcp.tool()
    async def verify_codebook(codebook_path: str) -> Dict[str, Any]:
        """Re-checks every pairwise bound and code property of a codebook file.

        Args:
            codebook_path (str): Path to a codebook JSON file

        Returns:
            Dict[str, Any]: {"tags": count, "sound": bool, "violations": [messages]}
        """
        try:
            book = read_codebook(codebook_path)
            violations = check_codebook(book)
            if violations:
                logger.warning(f"{codebook_path} has {len(violations)} violations")
            return {"tags": len(book.entries), "sound": not violations, "violations": violations}
        except TOOL_ERRORS as e:
            logger.error(f"Error verifying {codebook_path}: {e}")
            raise Exception(f"Error verifying codebook {codebook_path}: {e}")

    @mcp.tool()
    async def export_tag_firmware(
        codebook_path: str,
        tag_id: str,
        format: str = "json",
        out_path: Optional[str] = None,
    ) -> Dict[str, Any]:
        """Exports the access address and PDU a tag must broadcast to emit its code.

        Args:
            codebook_path (str): Path to a codebook JSON file
            tag_id (str): Tag to export
            format (str, optional): "json" or "c-header" (default: json)
            out_path (str, optional): Also write the export to this file

        Returns:
            Dict[str, Any]: {"tag_id", "format", "access_address", "content"} where content
                is the rendered export

        Example:
            ```python
            export = await export_tag_firmware(
                codebook_path="codebook.json", tag_id="tag-0000", format="c-header"
            )
            ```
        """
        if format not in FIRMWARE_FORMATS:
            raise ValueError(f"format must be one of {', '.join(FIRMWARE_FORMATS)}")
        try:
            book = read_codebook(codebook_path)
            export = export_firmware(tag_frame(book, book.resolve_tag(tag_id)))
            content = export.to_json() if format == "json" else render_c_header(export, tag_id)
            if out_path:
                atomic_write_text(out_path, content)
            return {
                "tag_id": tag_id,
                "format": format,
                "access_address": f"0x{export.access_address_word:08X}",
                "content": content,
            }
        except TOOL_ERRORS as e:
            logger.error(f"Error exporting {tag_id}: {e}")
            raise Exception(f"Error exporting firmware for tag {tag_id}: {e}")
