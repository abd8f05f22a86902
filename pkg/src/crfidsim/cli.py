"""Operator command line.

Four subcommands cover the desk workflow: `enroll` builds challenge
maps from device readouts and reports extraction efficiency, `update`
drives end-to-end firmware sessions (optionally under the harvested-
power model and channel tampering), `analyze` emits reliability and
entropy tables, and `attack` demonstrates the helper-data coset bound
at toy scale. Output is tab-separated text with '#' section markers so
any plotting tool can consume it.

Exit codes: 0 ok/committed, 2 usage, 3 bad input or enrollment
material, 10 rejected by token, 11 key recovery failure, 12 brownout,
13 timeout.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import bch, enroll, fuzzy, powersim, protocol, puf
from .gen2 import BlockWrite, Gen2Frame, SecureComm, decode, encode
from .protocol import CHUNK_WORDS, TamperPolicy, UpdateOutcome

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3

OUTCOME_EXIT = {
    UpdateOutcome.COMMITTED: 0,
    UpdateOutcome.REJECTED_BY_TOKEN: 10,
    UpdateOutcome.KEY_RECOVERY_FAILURE: 11,
    UpdateOutcome.BROWNOUT_ABORTED: 12,
    UpdateOutcome.TIMEOUT: 13,
}


class InputError(Exception):
    """Bad device source, image, or enrollment material."""


# ------------------------------------------------------------- input loading

def load_device(source: str, seed: int) -> puf.PufDevice:
    if source == "synthetic":
        return puf.synth_device(seed=seed)
    if source.startswith("dump:"):
        path = source[len("dump:"):]
        try:
            dump = puf.read_dump(path)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot load dump {path!r}: {exc}") from exc
        return puf.device_from_dump(dump, seed=seed)
    raise InputError(f"unknown device source {source!r} (synthetic or dump:<path>)")


def load_image(name: str) -> protocol.FirmwareImage:
    demos = protocol.demo_images()
    if name in demos:
        return demos[name]
    path = Path(name)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot load image {name!r}: {exc}") from exc
    if not data:
        raise InputError(f"image {name!r} is empty")
    return protocol.FirmwareImage(segments=(protocol.Segment(0, data),))


def parse_code(text: str) -> bch.BchParams:
    try:
        n, k, t = (int(x) for x in text.split(","))
        return bch.make_code(n, k, t)
    except (ValueError, bch.UnsupportedCodeError) as exc:
        raise argparse.ArgumentTypeError(f"bad code {text!r}: {exc}") from exc


def fe_config_from(args: argparse.Namespace) -> fuzzy.FeConfig:
    return fuzzy.FeConfig(code=args.code, blocks=args.blocks)


def out_dir(args: argparse.Namespace) -> Path | None:
    if args.out is None:
        return None
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def emit(lines: list[str], dest: Path | None, name: str) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if dest is not None:
        (dest / name).write_text(text)
        sys.stdout.write(f"# wrote\t{dest / name}\n")


# ------------------------------------------------------------------- enroll

def cmd_enroll(args: argparse.Namespace) -> int:
    dest = out_dir(args)
    if args.device != "synthetic" and args.devices != 1:
        raise InputError("--devices requires the synthetic source")
    lines = ["# enroll", "device\tblocks\tbits\tefficiency_pct"]
    for i in range(args.devices):
        seed = args.seed + i
        device = load_device(args.device, seed)
        device_id = f"dev-{seed:04d}"
        try:
            record = enroll.enroll_device(device, device_id)
        except (enroll.InsufficientMaterialError, enroll.EmptyRegionError) as exc:
            raise InputError(f"{device_id}: {exc}") from exc
        blocks = len(record.crp_map)
        eff = 100.0 * enroll.efficiency(record.crp_map)
        lines.append(f"{device_id}\t{blocks}\t{blocks * 248}\t{eff:.3g}")
        if dest is not None:
            (dest / f"{device_id}.record.txt").write_text(
                enroll.record_to_text(record)
            )
    emit(lines, dest, "enroll.tsv")
    return EXIT_OK


# ------------------------------------------------------------------- update

def chunk_frame_count(image: protocol.FirmwareImage) -> int:
    words = math.ceil(image.total_bytes / 2)
    return math.ceil(words / CHUNK_WORDS)


def parse_tamper(rule: str, image: protocol.FirmwareImage) -> tuple[
    TamperPolicy, int | None
]:
    """Returns (drop/flip policy, index of the frame to mutate in-protocol).

    Mutation rewrites a frame's payload and re-frames it with a valid
    CRC (an active relay), so the token answers instead of staying
    silent on a checksum error.
    """
    last = 3 + chunk_frame_count(image)   # privilege, setup, auth, chunks...
    if rule == "none":
        return TamperPolicy(), None
    if rule == "mac":
        return TamperPolicy(), last
    if rule.startswith("chunk:"):
        idx = int(rule.split(":", 1)[1])
        if not 0 <= idx < chunk_frame_count(image):
            raise InputError(f"chunk index out of range in {rule!r}")
        return TamperPolicy(), 3 + idx
    if rule.startswith("drop:"):
        idx = int(rule.split(":", 1)[1])
        if not 0 <= idx <= last:
            raise InputError(f"frame index out of range in {rule!r}")
        return TamperPolicy(drops=frozenset({idx})), None
    raise InputError(f"unknown tamper policy {rule!r}")


def mutate_payload(frame: Gen2Frame) -> Gen2Frame:
    """Flip one payload bit and re-frame with a fresh valid CRC."""
    view = decode(frame)
    if isinstance(view, SecureComm):
        ct = bytearray(view.ciphertext)
        ct[0] ^= 0x01
        view = SecureComm(inner_wordptr=view.inner_wordptr, ciphertext=bytes(ct))
    elif isinstance(view, BlockWrite):
        words = list(view.words)
        words[0] ^= 0x0001
        view = BlockWrite(membank=view.membank, wordptr=view.wordptr,
                          words=tuple(words))
    return encode(view, rn=0)


class MutatingChannel(protocol.Channel):
    """Channel that rewrites one chosen frame in flight."""

    def __init__(self, token, policy: TamperPolicy, mutate_at: int | None):
        super().__init__(token, policy)
        self._mutate_at = mutate_at
        self._count = 0

    def send(self, frame: Gen2Frame):
        if self._count == self._mutate_at:
            frame = mutate_payload(frame)
        self._count += 1
        return super().send(frame)


def run_powered_update(
    db: protocol.ProverDb,
    token_id: str,
    image: protocol.FirmwareImage,
    channel: protocol.Channel,
    power: tuple[float, float, int] | None,
    trial: int,
    max_attempts: int = 3,
) -> tuple[UpdateOutcome, float | None]:
    """Gate each update attempt on a harvested-power session."""
    if power is None:
        return protocol.prover_update(db, token_id, image, channel), None
    distance, sleep_ms, seed = power
    extra = powersim.update_ops(image.total_bytes, chunk_frame_count(image))
    outcome = UpdateOutcome.BROWNOUT_ABORTED
    latency = math.inf
    for attempt in range(max_attempts):
        session = powersim.cold_start_session(
            distance, sleep_ms, seed, trial=trial * max_attempts + attempt,
            extra_ops=extra,
        )
        latency = session.latency_ms
        if session.success:
            return protocol.prover_update(db, token_id, image, channel), latency
        channel.token.inject_brownout()
        channel.reset_token()
    return outcome, latency


def cmd_update(args: argparse.Namespace) -> int:
    dest = out_dir(args)
    device = load_device(args.device, args.seed)
    token_id = f"dev-{args.seed:04d}"
    try:
        record = enroll.enroll_device(device, token_id)
    except (enroll.InsufficientMaterialError, enroll.EmptyRegionError) as exc:
        raise InputError(str(exc)) from exc
    db = protocol.ProverDb()
    db.add(record)
    image = load_image(args.image)
    policy, mutate_at = parse_tamper(args.tamper, image)
    power = None
    if args.distance_cm is not None:
        power = (args.distance_cm, args.sleep_ms, args.seed)

    lines = ["# update", "trial\toutcome\tframes\tlatency_ms"]
    committed = 0
    exit_code = EXIT_OK
    for trial in range(args.trials):
        token = protocol.TokenSim(
            device, record.crp_map, session_seed=args.seed * 1000 + trial
        )
        channel = MutatingChannel(token, policy, mutate_at)
        outcome, latency = run_powered_update(
            db, token_id, image, channel, power, trial
        )
        committed += outcome is UpdateOutcome.COMMITTED
        shown = "-" if latency is None else f"{latency:.3f}"
        lines.append(f"{trial}\t{outcome.name}\t{len(channel.transcript)}\t{shown}")
        exit_code = OUTCOME_EXIT[outcome]
        if dest is not None:
            (dest / f"transcript-{trial}.txt").write_text(
                "\n".join(channel.transcript) + "\n"
            )
    lines.append(f"# committed\t{committed}/{args.trials}")
    emit(lines, dest, "update.tsv")
    return exit_code


# ------------------------------------------------------------------ analyze

def cmd_analyze(args: argparse.Namespace) -> int:
    dest = out_dir(args)
    device = load_device(args.device, args.seed)
    try:
        record = enroll.enroll_device(device, f"dev-{args.seed:04d}")
    except (enroll.InsufficientMaterialError, enroll.EmptyRegionError) as exc:
        raise InputError(str(exc)) from exc
    cfg = fe_config_from(args)
    base = 9_000_000 + args.seed * 10_000

    lines = ["# ber_vs_temperature", "temperature_c\traw_ber\tpipeline_ber"]
    layout = enroll.DEFAULT_LAYOUT
    lo = layout.eligible_start
    hi = lo + layout.eligible_bytes
    ref = puf.readout(device, enroll.NOMINAL_TEMP, trial_seed=base).bits
    ref_region = ref[8 * lo : 8 * hi]
    for i, temp in enumerate((0.0, 10.0, 25.0, 40.0)):
        trials = [
            puf.readout(device, temp, trial_seed=base + 100 * (i + 1) + j).bits[
                8 * lo : 8 * hi
            ]
            for j in range(args.trials)
        ]
        raw = puf.ber(ref_region, trials)
        pipe = enroll.measure_pipeline_ber(
            device, record, temperatures=(temp,),
            trials_per_temp=args.trials, trial_seed_base=base + 10_000 * (i + 1),
        )
        lines.append(f"{temp:g}\t{raw:.6g}\t{pipe:.6g}")

    lines += ["# bias", "stage\tmean_one_prob"]
    raw_reads = [
        puf.readout(device, enroll.NOMINAL_TEMP, trial_seed=base + 900 + j).bits[
            8 * lo : 8 * hi
        ]
        for j in range(args.trials)
    ]
    raw_bias = puf.bias(raw_reads)
    resp_bits: list[int] = []
    for j in range(args.trials):
        r = puf.readout(device, enroll.NOMINAL_TEMP, trial_seed=base + 1300 + j)
        for c in range(len(record.crp_map)):
            resp_bits.extend(enroll.challenge_to_response(record.crp_map, c, r.bits))
    pipe_bias = sum(resp_bits) / len(resp_bits)
    lines.append(f"raw\t{raw_bias:.5f}")
    lines.append(f"pipeline\t{pipe_bias:.5f}")

    lines += ["# p_fail_vs_ber", "ber\tp_fail"]
    for ber in (0.001, 0.0025, 0.005, 0.0075, 0.0094, 0.0125, 0.015, 0.02):
        lines.append(f"{ber:g}\t{fuzzy.key_failure_prob(ber, cfg):.6g}")

    lines += ["# residual_min_entropy", "bias\tbits"]
    for b in (0.5, 0.501, 0.499, 0.51, 0.5374, 0.55):
        lines.append(f"{b:g}\t{fuzzy.residual_min_entropy(b, cfg):.6g}")

    emit(lines, dest, "analyze.tsv")
    return EXIT_OK


# ------------------------------------------------------------------- attack

def cmd_attack(args: argparse.Namespace) -> int:
    dest = out_dir(args)
    code = args.code
    if code.n > 20:
        raise InputError(
            f"coset enumeration needs a toy code, not ({code.n},{code.k},{code.t})"
        )
    cfg = fuzzy.FeConfig(code=code, blocks=1)
    import random

    rng = random.Random(args.seed)
    response = tuple(rng.randrange(2) for _ in range(cfg.response_bits))
    _, helper = fuzzy.fe_gen(response, cfg)
    candidates = list(fuzzy.coset_candidates(helper, cfg))

    tampered = fuzzy.HelperData(
        tuple(b ^ (i == 0) for i, b in enumerate(helper.bits))
    )
    tampered_set = set(fuzzy.coset_candidates(tampered, cfg))
    overlap = len(tampered_set & set(candidates))

    full = fuzzy.default_config()
    lines = [
        "# attack_demo",
        f"code\t({code.n},{code.k},{code.t})",
        f"helper\t{''.join(map(str, helper.bits))}",
        f"candidates\t{len(candidates)}",
        f"expected\t2^{code.k} = {2 ** code.k}",
        f"true_response_in_candidates\t{'yes' if response in candidates else 'no'}",
        f"tampered_helper_overlap\t{overlap}",
        "# full_scale_extrapolation",
        f"code\t({full.code.n},{full.code.k},{full.code.t}) x {full.blocks}",
        f"brute_force_complexity\t2^{full.key_bits}",
    ]
    emit(lines, dest, "attack.tsv")
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crfidsim",
        description="Wireless firmware-update simulator for "
                    "intermittently powered RFID tokens.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--device", default="synthetic",
                       help="synthetic or dump:<path>")
        p.add_argument("--out", default=None, help="directory for output files")

    p_enroll = sub.add_parser("enroll", help="build challenge maps and report "
                                             "extraction efficiency")
    common(p_enroll)
    p_enroll.add_argument("--devices", type=int, default=1)
    p_enroll.set_defaults(func=cmd_enroll)

    p_update = sub.add_parser("update", help="run end-to-end update sessions")
    common(p_update)
    p_update.add_argument("--image", default="blinky",
                          help="blinky, sense, boot-shim, or a file path")
    p_update.add_argument("--distance-cm", type=float, default=None)
    p_update.add_argument("--sleep-ms", type=float, default=0,
                          choices=powersim.SLEEP_CHOICES)
    p_update.add_argument("--trials", type=int, default=1)
    p_update.add_argument("--tamper", default="none",
                          help="none, mac, chunk:<i>, or drop:<frame>")
    p_update.set_defaults(func=cmd_update)

    p_analyze = sub.add_parser("analyze", help="emit reliability and entropy "
                                               "tables")
    common(p_analyze)
    p_analyze.add_argument("--code", type=parse_code,
                           default=bch.make_code(31, 16, 3))
    p_analyze.add_argument("--blocks", type=int, default=8)
    p_analyze.add_argument("--trials", type=int, default=5)
    p_analyze.set_defaults(func=cmd_analyze)

    p_attack = sub.add_parser("attack", help="helper-data coset demonstration")
    common(p_attack)
    p_attack.add_argument("--code", type=parse_code,
                          default=bch.make_code(7, 4, 1))
    p_attack.set_defaults(func=cmd_attack)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
