"""Test configuration and fixtures for the BLE tag telemetry tests."""

import numpy as np
import pytest
from mcp.server.fastmcp import FastMCP

from ble_tag_telemetry.common import SAMPLE_RATE_HZ, BitSequence
from ble_tag_telemetry.config import CONFIG_ENV
from ble_tag_telemetry.experiments import synthesize_burst, tag_frame_bits
from ble_tag_telemetry.fileio import write_codebook, write_iq
from ble_tag_telemetry.modem import GmskParams
from ble_tag_telemetry.pncode import Codebook, build_codebook
from ble_tag_telemetry.rx import DetectorConfig


@pytest.fixture(autouse=True)
def isolated_experiment_config(monkeypatch):
    """Every test starts from the built-in configuration."""
    from ble_tag_telemetry.tools.common import experiment_config

    monkeypatch.delenv(CONFIG_ENV, raising=False)
    experiment_config.reset()
    yield experiment_config
    experiment_config.reset()


@pytest.fixture(scope="session")
def single_codebook() -> Codebook:
    """One-tag codebook."""
    return build_codebook(1, seed=0)


@pytest.fixture(scope="session")
def small_codebook() -> Codebook:
    """Three mutually screened tags."""
    return build_codebook(3, seed=1)


@pytest.fixture
def rng():
    """Seeded generator so random fixtures are reproducible."""
    return np.random.default_rng(1234)


@pytest.fixture
def random_bits(rng):
    """Factory for i.i.d. fair bit sequences."""

    def make(n: int) -> BitSequence:
        return BitSequence(rng.integers(0, 2, n))

    return make


@pytest.fixture
def detector(single_codebook) -> DetectorConfig:
    return DetectorConfig(codebook=single_codebook)


@pytest.fixture
def clean_burst(single_codebook):
    """Noise-free frame of the single tag at +1 MHz in a 4 MS/s buffer."""
    tag_id = single_codebook.tag_ids[0]
    return synthesize_burst(tag_frame_bits(single_codebook, tag_id), GmskParams(), 1.0e6)


@pytest.fixture
def codebook_file(tmp_path, small_codebook):
    path = tmp_path / "codebook.json"
    write_codebook(path, small_codebook)
    return path


@pytest.fixture
def capture_file(tmp_path, single_codebook, clean_burst):
    """Clean capture of the single tag with its sidecar, plus the codebook it came from."""
    capture = tmp_path / "capture.cf32"
    book = tmp_path / "single.json"
    write_iq(capture, clean_burst, center_freq_hz=2.479e9, description="clean burst")
    write_codebook(book, single_codebook)
    assert clean_burst.sample_rate == SAMPLE_RATE_HZ
    return capture, book


@pytest.fixture
def mcp_server_with_tools():
    """Create MCP server instance with all tools registered."""
    from ble_tag_telemetry.tools import codebook, link, receiver

    mcp = FastMCP("test-ble-tag-telemetry")
    codebook.register_tools(mcp)
    link.register_tools(mcp)
    receiver.register_tools(mcp)
    return mcp


# Helper function to get tool from MCP server
def get_tool_function(mcp_server: FastMCP, tool_name: str):
    """Extract a tool function from the MCP server by name."""
    # Access the tool through the tool manager
    if hasattr(mcp_server, "_tool_manager"):
        tool_manager = mcp_server._tool_manager
        try:
            tool = tool_manager.get_tool(tool_name)
            if tool and hasattr(tool, "fn"):
                return tool.fn
        except Exception:
            pass

    raise ValueError(f"Tool '{tool_name}' not found in MCP server")


@pytest.fixture
def tool_extractor():
    """Fixture that provides the tool extraction helper function."""
    return get_tool_function
