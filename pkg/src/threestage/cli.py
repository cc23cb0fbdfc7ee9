"""Command line entry point: ``threestage <subcommand> [options]``.

Exit codes: 0 success, 1 domain failure, 2 usage or config error,
3 transport error.
"""

from __future__ import annotations

import argparse
import csv
import json
import secrets
import sys
from pathlib import Path
from typing import Optional

from . import __version__
from .adversary import ENGINES, MESSAGES, parse_strategy, run_attack_experiment
from .bench import BenchConfig, bench_run, decode_message, encode_message, read_flat_config
from .detector import ERASURE, DetectorModel
from .net.endpoints import DEFAULT_TIMEOUT, BobServer, SessionAborted, send_message
from .net.proxy import EveProxy
from .timing import ConstraintViolation
from .verify import ALIASES, SUITES, format_table, run_suites

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE, EXIT_TRANSPORT = 0, 1, 2, 3

BENCH_FIELDS = {
    "wavelength",
    "source_power",
    "source_extinction",
    "shutter_max_rate",
    "shutter_min_on",
    "rotator_max_speed",
    "rotator_range",
    "alice_plate_angles",
    "bob_plate_angles",
    "source_angle",
}


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed; drawn and reported when omitted")
    p.add_argument("--json", action="store_true", help="print a JSON document instead of a table")
    p.add_argument("--config", help="flat key = value file; command line flags win")
    p.add_argument("--out", help="directory for result files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threestage", description="Three-stage protocol simulator and harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("bench", help="send a message through the simulated optical bench")
    _common(p)
    p.add_argument("--message", help="text to send (UTF-8)")
    p.add_argument("--slot-ms", type=float, default=40.0, help="bit slot length in ms")
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--rekey-gap-ms", type=float, help="fixed time allowed for each rotator move")
    p.add_argument("--photons", type=int, default=1)

    p = sub.add_parser("attack", help="Monte Carlo eavesdropping experiment")
    _common(p)
    p.add_argument("--strategy", default="none", help="none | intercept:stage=1,basis=0 | beamsplit:k=1,n=2,stage=1")
    p.add_argument("--trials", type=int, default=10000, help="number of plaintext bits")
    p.add_argument("--photons", type=int, help="photons per pulse (default: n= from strategy, else 1)")
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument(
        "--engine", choices=ENGINES, default=MESSAGES, help="per-pulse protocol path, or the faster array path"
    )
    p.add_argument("--csv", action="store_true", help="print a CSV row instead of a table")

    p = sub.add_parser("serve", help="run Bob as a TCP listener")
    _common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--sessions", type=int, default=1)
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)

    p = sub.add_parser("send", help="run Alice and send a message to a listener")
    _common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--message", help="text to send (UTF-8)")
    p.add_argument("--block-size", type=int, default=8)
    p.add_argument("--mode", default="rotation", help="rotation | bench | abstract:pauli | abstract:hadamard")
    p.add_argument("--photons", type=int, default=1)
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)

    p = sub.add_parser("proxy", help="relay one session between Alice and Bob as Eve")
    _common(p)
    p.add_argument("--listen-host", default="127.0.0.1")
    p.add_argument("--listen-port", type=int, default=7879)
    p.add_argument("--target-host", default="127.0.0.1")
    p.add_argument("--target-port", type=int, default=7878)
    p.add_argument("--strategy", default="none")
    p.add_argument("--message", help="known plaintext, used only to score Eve's guesses")
    p.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT)

    p = sub.add_parser("verify", help="run the built-in invariant suites")
    _common(p)
    p.add_argument("--suite", default="all", choices=sorted(SUITES) + ["all", *ALIASES])
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> tuple:
    """Parse argv, letting values from --config fill in flags that were not given."""
    args = parser.parse_args(argv)
    hardware = {}
    if getattr(args, "config", None):
        try:
            values = read_flat_config(args.config)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[args.subcommand]
        dests = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            if dest in BENCH_FIELDS:
                hardware[dest] = value
            elif dest in dests and dest not in ("config", "help"):
                action = dests[dest]
                if action.type is not None:
                    try:
                        value = action.type(value)
                    except ValueError as exc:
                        raise UsageError(f"config key {key}: {exc}") from exc
                elif isinstance(action, argparse._StoreTrueAction):
                    value = value.strip().lower() in ("1", "true", "yes", "on")
                defaults[dest] = value
            else:
                raise UsageError(f"unknown config key {key!r} for {args.subcommand}")
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args, hardware


def _resolved(args: argparse.Namespace, hardware: dict) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("json", "out", "config", "subcommand")}
    if hardware:
        cfg["bench"] = hardware
    return cfg


def _document(args: argparse.Namespace, hardware: dict, result: dict) -> dict:
    return {
        "tool": "threestage",
        "version": __version__,
        "subcommand": args.subcommand,
        "seed": args.seed,
        "config": _resolved(args, hardware),
        "result": result,
    }


def _emit(args, hardware, result: dict, lines: list) -> None:
    doc = _document(args, hardware, result)
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        print(f"threestage {__version__} {args.subcommand} seed={args.seed}")
        for line in lines:
            print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.subcommand}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write(args, name: str, text: str) -> None:
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def _need_message(args) -> str:
    if args.message is None:
        raise UsageError("--message is required")
    if args.message == "":
        raise UsageError("empty message: nothing to transmit")
    return args.message


def cmd_bench(args, hardware) -> int:
    message = _need_message(args)
    try:
        config = BenchConfig.from_mapping(hardware)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bench config: {exc}") from exc
    try:
        run = bench_run(
            message,
            config,
            args.seed,
            detector=DetectorModel(config.source_extinction),
            slot_ms=args.slot_ms,
            block_size=args.block_size,
            rekey_gap_ms=args.rekey_gap_ms,
            photon_count=args.photons,
        )
    except ConstraintViolation as exc:
        print(f"error: constraint violated: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    sent = message.encode("utf-8")
    ok = run.decoded == sent
    result = {
        "decoded": run.decoded.decode("utf-8", errors="replace"),
        "match": ok,
        "bits": len(sent) * 8,
        "erasures": run.erasures,
        "bit_errors": run.transcript.bit_errors,
        "duration_ms": run.timing.total_ms,
        "bits_per_second": run.timing.bits_per_second,
    }
    _write(args, "decoded.txt", result["decoded"] + "\n")
    _write(args, "timing.csv", run.timing.to_csv())
    _write(args, "transcript.jsonl", run.transcript.to_jsonl())
    _emit(
        args,
        hardware,
        result,
        [
            f"decoded: {result['decoded']}",
            f"match: {ok}  bit errors: {result['bit_errors']}  erasures: {run.erasures}",
            f"duration: {run.timing.total_ms:.1f} ms  ({run.timing.bits_per_second:.3f} bits/s)",
        ],
    )
    return EXIT_OK if ok else EXIT_DOMAIN


def cmd_attack(args, hardware) -> int:
    try:
        strategy, n = parse_strategy(args.strategy)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    photons = args.photons if args.photons is not None else (n or 1)
    if args.trials < 1:
        raise UsageError("--trials must be positive")
    try:
        report = run_attack_experiment(
            strategy,
            args.trials,
            rng_seed=args.seed,
            photon_count=photons,
            block_size=args.block_size,
            workers=args.workers,
            engine=args.engine,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.csv:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(report.CSV_FIELDS)
        w.writerow(report.csv_row())
        if args.out:
            _emit(argparse.Namespace(**{**vars(args), "json": True}), hardware, report.to_dict(), [])
        return EXIT_OK
    lo, hi = report.eve_bit_accuracy_ci
    blo, bhi = report.bob_error_rate_ci
    _emit(
        args,
        hardware,
        report.to_dict(),
        [
            f"strategy: {report.strategy}  photons: {photons}  trials: {report.trials}",
            f"eve_bit_accuracy: {report.eve_bit_accuracy:.5f}  (95% CI {lo:.5f}..{hi:.5f})",
            f"bob_error_rate:   {report.bob_error_rate:.5f}  (95% CI {blo:.5f}..{bhi:.5f})",
            f"erasure_rate:     {report.erasure_rate:.5f}",
            f"mutual_information: {report.mutual_information:.6f} bits",
        ],
    )
    return EXIT_OK


def cmd_serve(args, hardware) -> int:
    try:
        server = BobServer(args.host, args.port, args.seed, timeout=args.timeout)
    except OSError as exc:
        print(f"error: cannot listen on {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    print(f"listening on {server.address[0]}:{server.address[1]}", file=sys.stderr, flush=True)
    try:
        results = server.serve(args.sessions)
    finally:
        server.close()
    code = EXIT_OK
    summary = []
    lines = []
    for i, r in enumerate(results):
        if isinstance(r, SessionAborted):
            code = max(code, EXIT_TRANSPORT if r.reason.startswith("transport") else EXIT_DOMAIN)
            summary.append({"aborted": r.reason, "frames": len(r.transcript.frames)})
            lines.append(f"session {i}: aborted ({r.reason})")
            _write(args, f"bob-{i}.jsonl", r.transcript.to_jsonl())
            continue
        text = r.message.decode("utf-8", errors="replace")
        summary.append(
            {
                "message": text,
                "frames": len(r.transcript.frames),
                "stage_frames": r.transcript.stage_frames,
                "erasures": sum(1 for b in r.transcript.bits if b == ERASURE),
            }
        )
        lines.append(text)
        _write(args, f"bob-{i}.jsonl", r.transcript.to_jsonl())
    _emit(args, hardware, {"sessions": summary}, lines)
    return code


def cmd_send(args, hardware) -> int:
    message = args.message if args.message is not None else ""
    try:
        result = send_message(
            args.host,
            args.port,
            message,
            args.seed,
            timeout=args.timeout,
            block_size=args.block_size,
            mode=args.mode,
            photon_count=args.photons,
        )
    except OSError as exc:
        print(f"error: cannot connect to {args.host}:{args.port}: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    except SessionAborted as exc:
        _write(args, "alice.jsonl", exc.transcript.to_jsonl())
        print(f"error: session aborted: {exc.reason}", file=sys.stderr)
        return EXIT_TRANSPORT if exc.reason.startswith("transport") else EXIT_DOMAIN
    _write(args, "alice.jsonl", result.transcript.to_jsonl())
    sent_bytes = len(message.encode("utf-8"))
    ok = result.byte_count == sent_bytes
    _emit(
        args,
        hardware,
        {"bytes_sent": sent_bytes, "bytes_acknowledged": result.byte_count, "frames": len(result.transcript.frames)},
        [f"sent {sent_bytes} bytes, receiver acknowledged {result.byte_count}"],
    )
    return EXIT_OK if ok else EXIT_DOMAIN


def cmd_proxy(args, hardware) -> int:
    try:
        strategy, _ = parse_strategy(args.strategy)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        proxy = EveProxy(
            (args.target_host, args.target_port),
            strategy,
            args.seed,
            listen_addr=(args.listen_host, args.listen_port),
            timeout=args.timeout,
        )
    except OSError as exc:
        print(f"error: cannot listen on {args.listen_host}:{args.listen_port}: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    print(f"proxy listening on {proxy.address[0]}:{proxy.address[1]}", file=sys.stderr, flush=True)
    try:
        proxy.run_once()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    finally:
        proxy.close()
    n_bits = proxy.params.message_bits if proxy.params else 0
    guesses = proxy.eve.guesses(n_bits)
    result = {
        "strategy": strategy.describe(),
        "frames_alice_to_bob": len(proxy.frames["alice->bob"]),
        "frames_bob_to_alice": len(proxy.frames["bob->alice"]),
        "forwarded_verbatim": proxy.passed_verbatim,
        "eve_guess_hex": decode_message(guesses).hex() if n_bits % 8 == 0 else None,
        "transport_errors": proxy.errors,
    }
    lines = [f"strategy: {result['strategy']}", f"eve guess: {result['eve_guess_hex']}"]
    if args.message is not None:
        truth = encode_message(args.message)
        if len(truth) == n_bits and n_bits:
            acc = sum(int(g == t) for g, t in zip(guesses, truth)) / n_bits
            result["eve_bit_accuracy"] = acc
            lines.append(f"eve_bit_accuracy: {acc:.5f}")
    _emit(args, hardware, result, lines)
    return EXIT_TRANSPORT if proxy.errors else EXIT_OK


def cmd_verify(args, hardware) -> int:
    checks = run_suites(args.suite)
    ok = all(c.passed for c in checks)
    result = {
        "passed": ok,
        "checks": [{"suite": c.suite, "name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
    }
    _emit(args, hardware, result, [format_table(checks), "ALL PASS" if ok else "FAILURES"])
    return EXIT_OK if ok else EXIT_DOMAIN


COMMANDS = {
    "bench": cmd_bench,
    "attack": cmd_attack,
    "serve": cmd_serve,
    "send": cmd_send,
    "proxy": cmd_proxy,
    "verify": cmd_verify,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, hardware = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is None:
        args.seed = secrets.randbits(32)
        print(f"seed: {args.seed}", file=sys.stderr)
    try:
        return COMMANDS[args.subcommand](args, hardware)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
