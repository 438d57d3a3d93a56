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
"""Command-line entry point.

Machine-readable output goes to stdout, diagnostics to stderr. Exit status is 0 on
success, 1 for usage or input errors and 2 for domain failures (codebook capacity,
no bearing, unreachable detection target).
"""

import argparse
import json
import logging
import math
import os
import sys
from typing import Callable, Dict, List, Optional

from pydantic import ValidationError

from .bearing import run_sweep
from .channel import ChannelParams, apply_channel, resolve_levels
from .common import (
    LOG_LEVEL_ENV,
    CapacityExceededError,
    CorruptFileError,
    InvalidArgumentError,
    NoBearingError,
    TelemetryError,
    UnsupportedError,
)
from .config import ExperimentConfig, default_config, load_config, merge_overrides
from .experiments import (
    curve_to_csv,
    link_budget_summary,
    predict_range,
    synthesize_burst,
    tag_frame,
    tag_frame_bits,
)
from .fileio import atomic_write_text, iter_iq_blocks, read_codebook, write_codebook, write_iq
from .frame import export_firmware, render_c_header
from .pncode import build_codebook, verify_codebook
from .rx import events_to_jsonl

logger = logging.getLogger(__name__)
logger.setLevel(logging.INFO)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2


class UsageError(Exception):
    """Bad command-line usage."""


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else os.environ.get(LOG_LEVEL_ENV, "INFO").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )
    package = __name__.rsplit(".", 1)[0]
    for name in list(logging.root.manager.loggerDict):
        if name == package or name.startswith(package + "."):
            logging.getLogger(name).setLevel(level)


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    sys.stdout.flush()


def _parse_angles(text: str) -> List[float]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise UsageError("--angles needs at least one angle")
    try:
        return [float(p) for p in parts]
    except ValueError as e:
        raise UsageError(f"--angles: {e}") from e


def cmd_gen_codebook(args: argparse.Namespace, config: ExperimentConfig) -> int:
    if args.tags < 1:
        raise UsageError("--tags must be at least 1")
    max_cross = args.max_cross if args.max_cross is not None else config.max_cross
    book = build_codebook(args.tags, config.seed, max_cross)
    if args.out:
        write_codebook(args.out, book)
        logger.info(f"Wrote {len(book.entries)} tags to {args.out}")
    else:
        _emit(book.to_json())
    return EXIT_OK


def cmd_verify_codebook(args: argparse.Namespace, config: ExperimentConfig) -> int:
    book = read_codebook(args.codebook)
    violations = verify_codebook(book)
    doc = {"tags": len(book.entries), "sound": not violations, "violations": violations}
    _emit(json.dumps(doc))
    if violations:
        logger.warning(f"Codebook has {len(violations)} violations")
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_tx(args: argparse.Namespace, config: ExperimentConfig) -> int:
    book = read_codebook(args.codebook)
    tag_id = book.resolve_tag(args.tag)
    setup = config.setup
    channel = ChannelParams(
        snr_db=args.snr,
        distance_m=args.distance,
        azimuth_deg=args.angle,
        cfo_hz=args.cfo,
        timing_offset_samples=args.timing,
        sample_clock_offset=args.clock_offset,
        rng_seed=config.seed,
    )
    burst = synthesize_burst(
        tag_frame_bits(book, tag_id),
        setup.tx_gmsk,
        setup.fir.center_offset_hz,
        setup.lead_samples,
        setup.trail_samples,
        args.repeat,
        args.interval,
    )
    received = apply_channel(burst, channel, setup.budget, setup.pattern)
    snr = resolve_levels(channel, setup.budget, setup.pattern).snr_db
    if args.distance is not None:
        drive = f"distance {args.distance:g} m, azimuth {args.angle:g} deg"
    else:
        drive = "SNR setting"
    write_iq(
        args.out,
        received,
        center_freq_hz=setup.budget.frequency_hz - setup.fir.center_offset_hz,
        description=f"{tag_id}: {drive}, SNR {snr:.2f} dB, CFO {args.cfo:g} Hz",
        snr_db=snr if math.isfinite(snr) else None,
    )
    logger.info(f"Wrote {len(received)} samples for {tag_id} to {args.out} (SNR {snr:.2f} dB)")
    return EXIT_OK


def cmd_rx(args: argparse.Namespace, config: ExperimentConfig) -> int:
    book = read_codebook(args.codebook)
    threshold = args.threshold if args.threshold is not None else config.setup.threshold
    setup = merge_overrides(config, threshold=threshold).setup
    receiver = setup.receiver(book)
    events = []
    for block in iter_iq_blocks(args.input, args.sample_rate, args.block_samples):
        events.extend(receiver.push(block))
    events.extend(receiver.flush())
    text = events_to_jsonl(events)
    if args.out:
        atomic_write_text(args.out, text)
    if text:
        sys.stdout.write(text)
    logger.info(f"{len(events)} detections in {receiver.consumed_samples} samples")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace, config: ExperimentConfig) -> int:
    angles = _parse_angles(args.angles) if args.angles is not None else None
    config = merge_overrides(
        config,
        distance_m=args.distance,
        tag_azimuth_deg=args.tag_angle,
        angles_deg=angles,
        trials_per_angle=args.trials,
    )
    book = read_codebook(args.codebook) if args.codebook else None
    tag_id = book.resolve_tag(args.tag) if book else None
    result = run_sweep(config.sweep_config(), book, tag_id)
    summary = result.summary_json()
    atomic_write_text(args.out, result.to_csv())
    atomic_write_text(args.summary or f"{args.out}.json", summary)
    if args.plot_data:
        atomic_write_text(args.plot_data, result.to_plot_csv())
    _emit(summary)
    if result.estimated_bearing_deg is None:
        raise NoBearingError("no sweep angle produced a detection")
    return EXIT_OK


def cmd_range(args: argparse.Namespace, config: ExperimentConfig) -> int:
    if args.trials is not None and args.trials < 1:
        raise UsageError("--trials must be at least 1")
    config = merge_overrides(
        config,
        pd_target=args.pd_target,
        trials=args.trials,
        snr_min_db=args.snr_min,
        snr_max_db=args.snr_max,
        snr_step_db=args.snr_step,
        environment_margin_db=args.margin,
    )
    book = read_codebook(args.codebook) if args.codebook else build_codebook(1, config.seed)
    tag_id = book.resolve_tag(args.tag)
    report = predict_range(config.setup, book, tag_id, config.range, config.seed)
    text = report.to_json()
    if args.out:
        atomic_write_text(args.out, text)
    if args.plot_data:
        atomic_write_text(args.plot_data, curve_to_csv(report.curve))
    _emit(text)
    return EXIT_OK


def cmd_export_firmware(args: argparse.Namespace, config: ExperimentConfig) -> int:
    book = read_codebook(args.codebook)
    tag_id = book.resolve_tag(args.tag)
    export = export_firmware(tag_frame(book, tag_id))
    if args.format == "json":
        text = export.to_json()
    else:
        text = render_c_header(export, tag_id)
    if args.out:
        atomic_write_text(args.out, text)
        logger.info(f"Exported {tag_id} as {args.format} to {args.out}")
    else:
        _emit(text)
    return EXIT_OK


def cmd_link_budget(args: argparse.Namespace, config: ExperimentConfig) -> int:
    doc = link_budget_summary(config.setup, args.distance, args.angle)
    _emit(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="ble-tag-telemetry",
        description="PN-coded BLE tag telemetry: codebooks, simulation, detection and sweeps.",
    )
    parser.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    parser.add_argument("--config", default=None, help="experiment configuration JSON")
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-codebook", help="search for a set of tag codes")
    p.add_argument("--tags", type=int, required=True)
    p.add_argument("--max-cross", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("verify-codebook", help="re-check a codebook's pairwise bounds")
    p.add_argument("--codebook", required=True)

    p = sub.add_parser("tx", help="synthesize a tag burst through the channel")
    p.add_argument("--codebook", required=True)
    p.add_argument("--tag", default=None)
    drive = p.add_mutually_exclusive_group(required=True)
    drive.add_argument("--snr", type=float, help="SNR in dB ('inf' for no noise)")
    drive.add_argument("--distance", type=float, help="distance in metres")
    p.add_argument("--angle", type=float, default=0.0, help="antenna azimuth off the tag")
    p.add_argument("--cfo", type=float, default=0.0, help="carrier offset in Hz")
    p.add_argument("--timing", type=float, default=0.0, help="delay in samples")
    p.add_argument("--clock-offset", type=float, default=0.0, help="fractional clock error")
    p.add_argument("--repeat", type=int, default=1, help="number of bursts")
    p.add_argument("--interval", type=float, default=1.0, help="seconds between bursts")
    p.add_argument("--out", required=True)

    p = sub.add_parser("rx", help="detect tags in an IQ capture")
    p.add_argument("--codebook", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--threshold", type=int, default=None)
    p.add_argument("--sample-rate", type=float, default=None, help="overrides the sidecar")
    p.add_argument("--block-samples", type=int, default=1 << 18)
    p.add_argument("--out", default=None, help="also write the JSON lines here")

    p = sub.add_parser("sweep", help="simulate an antenna azimuth sweep")
    p.add_argument("--distance", type=float, default=None)
    p.add_argument("--tag-angle", type=float, default=None)
    p.add_argument("--angles", default=None, help="comma-separated azimuths in degrees")
    p.add_argument("--trials", type=int, default=None, help="trials per angle")
    p.add_argument("--codebook", default=None)
    p.add_argument("--tag", default=None)
    p.add_argument("--out", required=True, help="CSV with header angle,correlation")
    p.add_argument("--summary", default=None, help="bearing JSON (default <out>.json)")
    p.add_argument("--plot-data", default=None)

    p = sub.add_parser("range", help="predict detection range from a Monte Carlo Pd curve")
    p.add_argument("--pd-target", type=float, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--snr-min", type=float, default=None)
    p.add_argument("--snr-max", type=float, default=None)
    p.add_argument("--snr-step", type=float, default=None)
    p.add_argument("--margin", type=float, default=None, help="environment margin in dB")
    p.add_argument("--codebook", default=None)
    p.add_argument("--tag", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--plot-data", default=None)

    p = sub.add_parser("export-firmware", help="access address and PDU for a tag")
    p.add_argument("--codebook", required=True)
    p.add_argument("--tag", required=True)
    p.add_argument("--format", choices=("json", "c-header"), default="json")
    p.add_argument("--out", default=None)

    p = sub.add_parser("link-budget", help="link budget at a distance and azimuth")
    p.add_argument("--distance", type=float, required=True)
    p.add_argument("--angle", type=float, default=0.0)
    return parser


COMMANDS: Dict[str, Callable[[argparse.Namespace, ExperimentConfig], int]] = {
    "gen-codebook": cmd_gen_codebook,
    "verify-codebook": cmd_verify_codebook,
    "tx": cmd_tx,
    "rx": cmd_rx,
    "sweep": cmd_sweep,
    "range": cmd_range,
    "export-firmware": cmd_export_firmware,
    "link-budget": cmd_link_budget,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point for console script."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    _configure_logging(args.verbose)
    try:
        config = load_config(args.config) if args.config else default_config()
        config = merge_overrides(config, seed=args.seed)
        return COMMANDS[args.command](args, config)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CapacityExceededError, NoBearingError, UnsupportedError) as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_DOMAIN
    except (InvalidArgumentError, CorruptFileError, ValidationError, KeyError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except TelemetryError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
