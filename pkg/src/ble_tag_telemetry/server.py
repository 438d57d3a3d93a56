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

import json
import logging
import os
import sys

from mcp.server.fastmcp import FastMCP

from .common import LOG_LEVEL_ENV
from .config import CONFIG_ENV
from .tools import codebook, link, receiver
from .tools.common import experiment_config

# configure logger
logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)


def create_mcp_server():
    """Create MCP server with the tag telemetry tools"""
    mcp = FastMCP("ble-tag-telemetry")

    config_path = os.environ.get(CONFIG_ENV)
    if config_path:
        logger.info(f"Using experiment configuration from {config_path}")
    else:
        logger.info("Using built-in experiment configuration")

    try:
        # Fail early on a broken configuration file
        experiment_config.reset()
        experiment_config.get()
    except Exception as e:
        logger.error(f"Failed to load experiment configuration: {e}")
        raise

    codebook.register_tools(mcp)
    link.register_tools(mcp)
    receiver.register_tools(mcp)

    return mcp


def main():
    """Entry point for console script."""
    logging.basicConfig(
        stream=sys.stderr, level=os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    )
    try:
        # stdio transport only; stdout belongs to the protocol
        logger.info("Starting BLE tag telemetry MCP server with stdio transport")

        mcp = create_mcp_server()
        mcp.run()
    except KeyboardInterrupt:
        print("KeyboardInterrupt received. Shutting down gracefully.", file=sys.stderr)
        sys.exit(0)
    except Exception as e:
        # Ensure we return a proper JSON response even in case of errors
        error_response = {
            "error": str(e),
            "type": type(e).__name__,
            "message": "MCP server encountered an error",
        }
        print(json.dumps(error_response))
        logger.error(f"Server error: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
