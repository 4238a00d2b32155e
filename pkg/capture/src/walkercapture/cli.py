"""walkercapture CLI.

Record mode writes dataset NDJSON; live mode streams wire-protocol frames
to a running walkerpose service.  Exit codes match the service ecosystem:
0 ok, 1 usage, 2 source/data error, 3 detector failure.
"""
from __future__ import annotations

import argparse
import sys

from .capture import CaptureConfig, SourceError, record, stream
from .detectors import DetectorError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DETECTOR = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="walkercapture",
                     description="Run a pose detector on a camera or video "
                                 "file and emit walkerpose landmark streams")
    parser.add_argument("--source", required=True,
                        help="camera index (e.g. 0) or video file path")
    parser.add_argument("--backend", default="mediapipe",
                        choices=["mediapipe", "marker"])
    parser.add_argument("--fps", type=float, default=10.0)
    parser.add_argument("--pid", default="live", help="participant id")
    parser.add_argument("--view", default="full", choices=["full", "upper"])
    parser.add_argument("--max-frames", type=int)

    mode = parser.add_argument_group("record mode")
    mode.add_argument("--record", metavar="OUT_NDJSON",
                      help="write labeled dataset NDJSON instead of streaming")
    mode.add_argument("--label", help="posture class name for every sample")
    mode.add_argument("--walker", type=int, choices=[0, 1], default=1)
    mode.add_argument("--init", default="standing", choices=["sitting", "standing"])

    live = parser.add_argument_group("live mode")
    live.add_argument("--connect", metavar="HOST:PORT",
                      help="stream frames to a walkerpose service")
    live.add_argument("--calibrate", type=int, default=0,
                      help="ask the service to calibrate on the first N frames")
    live.add_argument("--quiet", action="store_true",
                      help="do not print service responses")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if bool(args.record) == bool(args.connect):
        parser.error("exactly one of --record or --connect is required")
    if args.record and not args.label:
        parser.error("--record requires --label")

    config = CaptureConfig(
        source=args.source,
        target_fps=args.fps,
        participant_id=args.pid,
        view=args.view,
        backend=args.backend,
        record_label=args.label,
        record_walker=bool(args.walker),
        record_init=args.init,
        max_frames=args.max_frames,
    )
    try:
        if args.record:
            stats = record(config, args.record)
            print(f"recorded {stats.emitted} frames to {args.record} "
                  f"({stats.dropped} dropped)")
        else:
            host, _, port = args.connect.rpartition(":")
            if not host or not port.isdigit():
                parser.error("--connect expects HOST:PORT")
            on_response = None if args.quiet else print
            stats = stream(config, host, int(port),
                           calibrate_frames=args.calibrate,
                           on_response=on_response)
            print(f"streamed {stats.emitted} frames ({stats.dropped} dropped)",
                  file=sys.stderr)
    except DetectorError as exc:
        print(f"walkercapture: detector: {exc}", file=sys.stderr)
        return EXIT_DETECTOR
    except (SourceError, OSError, ValueError) as exc:
        print(f"walkercapture: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
