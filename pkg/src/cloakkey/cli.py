"""Command line interface: ``cloakkey <command> [options]``.

Every command reads an optional INI config (``--config``), applies
``--set section.key=value`` overrides, and is reproducible from the config
and its seeds. Errors exit with a code per error family (2 config, 3
protocol or format, 4 verification) and print ``error kind=<Kind>`` on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import socket
import sys
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import bits as bitops
from . import channel, security
from .bitpool import (BitPoolState, RoundParams, append_keystore, gaussian_noise,
                      read_keystore)
from .codec import MaryConfig
from .config import RunConfig, load_config
from .entropy import (FIXED_ANALYTIC, RUNNING_AVERAGE, EntropyConfig, LfsrSpec,
                      PhysicalBitGenerator, bias_zscore)
from .errors import CloakKeyError, ConfigError, FormatError, ProtocolTimeout
from .otp import (build_key_matrix, collision_prob_all, collision_prob_one, decrypt_message,
                  encrypt_message, read_envelopes, write_envelopes)
from .stations import run_rx_session, run_tap, run_tx_session
from .wire import SocketTransport, loopback_pair


# --- seeds and round inputs --------------------------------------------------

def derive_seed(base: int, *path: int) -> int:
    """128-bit seed from a base seed and a path such as (round,)."""
    words = np.random.SeedSequence([base, *path]).generate_state(4, np.uint32)
    return int.from_bytes(words.astype(">u4").tobytes(), "big")


def bootstrap_pool(cfg: RunConfig) -> BitPoolState:
    """Initial shared basis bits from the simulated generator (``seeds.basis``)."""
    gen = PhysicalBitGenerator(EntropyConfig(channel=cfg.channel, seed=cfg.seeds.basis))
    return BitPoolState(gen.bits(cfg.mary.m * cfg.protocol.a), 0, cfg.mary, cfg.protocol.a)


def load_or_bootstrap(path: str | None, cfg: RunConfig) -> BitPoolState:
    if path and Path(path).exists():
        pool = BitPoolState.load(path, cfg.mary)
        if pool.a != cfg.protocol.a:
            raise ConfigError(f"pool state holds a={pool.a}, config says a={cfg.protocol.a}")
        return pool
    return bootstrap_pool(cfg)


def round_fresh_bits(cfg: RunConfig, round_index: int) -> np.ndarray:
    ecfg = EntropyConfig(channel=cfg.channel, seed=derive_seed(cfg.seeds.fresh, round_index))
    return PhysicalBitGenerator(ecfg).bits(cfg.protocol.a)


def round_params(cfg: RunConfig, round_index: int) -> RoundParams:
    return RoundParams(lam=cfg.protocol.lam, mode=cfg.protocol.pa_mode,
                       shuffle_seed=derive_seed(cfg.seeds.shuffle, round_index))


def leak_stats(cfg: RunConfig) -> security.AttackStats:
    return security.attack_stats(channel.sigma_v(cfg.channel), cfg.mary, cfg.protocol.leak_model)


def round_noise(cfg: RunConfig, round_index: int):
    return gaussian_noise(channel.sigma_v(cfg.channel), derive_seed(cfg.seeds.noise, round_index))


# --- output helpers -----------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(out, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    w = csv.writer(out, delimiter=",", lineterminator="\n")
    w.writerow(header)
    n = 0
    for row in rows:
        w.writerow([_fmt(v) for v in row])
        n += 1
    return n


def _kv(stream, /, **items) -> None:
    for k, v in items.items():
        print(f"{k}={_fmt(v)}", file=stream)


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``name=lo..hi[:step]`` (inclusive) or ``name=v1,v2,...``."""
    name, sep, spec = text.partition("=")
    if not sep or not spec:
        raise ConfigError(f"sweep {text!r} must look like name=lo..hi or name=v1,v2")
    name = name.strip()
    try:
        if ".." in spec:
            lo_s, _, rest = spec.partition("..")
            hi_s, _, step_s = rest.partition(":")
            lo, hi = float(lo_s), float(hi_s)
            step = float(step_s) if step_s else 1.0
            if step <= 0 or hi < lo:
                raise ValueError
            count = int(math.floor((hi - lo) / step + 1e-9)) + 1
            values = [lo + i * step for i in range(count)]
        else:
            values = [float(v) for v in spec.split(",")]
    except ValueError:
        raise ConfigError(f"cannot parse sweep {text!r}") from None
    return name, values


# --- commands -------------------------------------------------------------

def cmd_keygen(args, cfg: RunConfig, out) -> int:
    ecfg = EntropyConfig(channel=cfg.channel, seed=cfg.seeds.entropy,
                         mean_reference_mode=args.mean_reference)
    gen = PhysicalBitGenerator(ecfg, None if args.no_whiten else LfsrSpec())
    if args.bits:
        bits = gen.bits(args.bits)
        Path(args.out).write_bytes(bitops.pack(bits))
        _kv(out, bits=bits.size, ones=int(bits.sum()), bias_z=bias_zscore(bits), out=args.out)
    if args.pool_state:
        pool = bootstrap_pool(cfg)
        pool.save(args.pool_state)
        _kv(out, pool_state=args.pool_state, basis_bits=pool.basis_bits.size)
    return 0


def _attack_rows(cfg: RunConfig, sweeps: dict[str, list[float]]):
    for gain in sweeps.get("gain", [cfg.channel.gain]):
        for M in sweeps.get("M", [cfg.mary.M]):
            for power in sweeps.get("power", [cfg.channel.optical_power]):
                params = cfg.channel.with_(gain=gain, optical_power=power)
                mary = MaryConfig(int(M), cfg.mary.b_max)
                s = channel.sigma_v(params)
                ex = security.attack_stats(s, mary, security.EXACT)
                pr = security.attack_stats(s, mary, security.CONSERVATIVE)
                yield (gain, int(M), power, channel.mean_voltage(params), s,
                       ex.p_success, ex.p_error, pr.p_success, pr.p_error,
                       security.symbol_information(s, mary))


def _fraction_rows(cfg: RunConfig, sweeps: dict[str, list[float]]):
    a = cfg.protocol.a
    for M in sweeps.get("M", [cfg.mary.M]):
        mary = MaryConfig(int(M), cfg.mary.b_max)
        ps = security.attack_stats(channel.sigma_v(cfg.channel), mary, cfg.protocol.leak_model).p_success
        n = a + mary.m * a
        t = security.leaked_bits(a, ps)
        for lam in sweeps.get("lambda", [cfg.protocol.lam]):
            lam = int(lam)
            if t + lam > a:
                continue
            yield (int(M), lam, a, n, t, security.fraction_left(n, t, lam), a - t - lam)


def _leak_rows(sweeps: dict[str, list[float]]):
    for lam in sweeps.get("lambda", list(range(65))):
        lam = int(lam)
        yield lam, security.log2_pa_leak_bound(lam), security.pa_leak_bound(lam)


def _condition_rows(cfg: RunConfig, sweeps: dict[str, list[float]], much: float, coverage: float):
    for gain in sweeps.get("gain", [cfg.channel.gain]):
        for power in sweeps.get("power", [cfg.channel.optical_power]):
            params = cfg.channel.with_(gain=gain, optical_power=power)
            r = channel.check_conditions(params, cfg.mary, much=much, coverage=coverage)
            yield (gain, power, channel.mean_voltage(params), channel.sigma_v(params),
                   r.optical_to_thermal_ratio, r.optical_to_lsb_ratio, r.vmax_to_four_sigma_ratio,
                   r.two_m_sigma_to_vmax_ratio, r.coverage_margin_v, r.separation_margin_v,
                   r.all_satisfied)


TABLES = {
    "attack": ("gain", "M", "optical_power", "mean_voltage", "sigma_v",
               "p_success_exact", "p_error_exact", "p_success_conservative", "p_error_conservative",
               "symbol_info_bits"),
    "fraction": ("M", "lambda", "a", "n", "t", "f", "z"),
    "leak": ("lambda", "log2_I", "I"),
    "conditions": ("gain", "optical_power", "mean_voltage", "sigma_v",
                   "optical_to_thermal", "optical_to_lsb", "vmax_to_4sigma",
                   "two_m_sigma_to_vmax", "coverage_margin_v", "separation_margin_v",
                   "all_satisfied"),
}
SWEEPABLE = {"lambda", "M", "gain", "power"}


def cmd_analyze(args, cfg: RunConfig, out) -> int:
    sweeps = {}
    for text in args.sweep or ():
        name, values = parse_sweep(text)
        if name not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {name!r}; choose from {sorted(SWEEPABLE)}")
        sweeps[name] = values
    table = args.table
    if table == "attack":
        rows = _attack_rows(cfg, sweeps)
    elif table == "fraction":
        rows = _fraction_rows(cfg, sweeps)
    elif table == "leak":
        rows = _leak_rows(sweeps)
    else:
        rows = _condition_rows(cfg, sweeps, args.much, args.coverage)
    if args.out:
        with open(args.out, "w", newline="", encoding="ascii") as fh:
            write_csv(fh, TABLES[table], rows)
    else:
        write_csv(out, TABLES[table], rows)
    return 0


def simulate_round(cfg: RunConfig, pool_tx: BitPoolState, pool_rx: BitPoolState,
                   *, timeout: float = 30.0):
    """TX and RX over an in-process socket pair, plus the tap on TX's recording."""
    rnd = pool_tx.round_index + 1
    fresh = round_fresh_bits(cfg, rnd)
    record: list[bytes] = []
    tx_end, rx_end = loopback_pair(timeout)
    result: dict = {}

    def rx() -> None:
        try:
            result["rx"] = run_rx_session(rx_end, pool_rx, config_digest=cfg.digest())
        except BaseException as exc:  # reported by the caller
            result["rx_error"] = exc

    worker = threading.Thread(target=rx, daemon=True)
    worker.start()
    try:
        out = run_tx_session(tx_end, pool_tx, round_params(cfg, rnd), fresh, round_noise(cfg, rnd),
                             leak_stats(cfg), config_digest=cfg.digest(),
                             account_digest=cfg.protocol.account_digest, record=record)
    finally:
        worker.join(timeout)
        tx_end.close()
        rx_end.close()
    if "rx_error" in result:
        raise result["rx_error"]
    tap = run_tap(record, cfg.mary, channel.sigma_v(cfg.channel), truth_fresh=fresh, truth_z=out.z_bits)
    return out, result["rx"], tap, b"".join(record)


def cmd_simulate_round(args, cfg: RunConfig, out) -> int:
    pool_tx = load_or_bootstrap(args.pool_state, cfg)
    pool_rx = pool_tx.copy()
    for _ in range(args.rounds):
        tx, rx, tap, transcript = simulate_round(cfg, pool_tx, pool_rx)
        b = tx.budget
        _kv(out, round=tx.round_index, a=pool_tx.a, m=cfg.mary.m, n=b.n, t=b.t, **{"lambda": b.lam},
            r=b.r, z=b.z, f=b.fraction_left, log2_I=b.log2_mutual_info,
            tx_rx_identical=tx.same_keys(rx),
            tap_fresh_agreement=tap.agreement, tap_analytic_p_success=tap.analytic_p_success,
            tap_z_agreement=tap.z_agreement)
        if args.keystore:
            append_keystore(args.keystore, tx.z_bits)
        if args.transcript:
            with open(args.transcript, "ab") as fh:
                fh.write(transcript)
    if args.pool_state and args.save_state:
        pool_tx.save(args.pool_state)
    return 0


def _session_loop(args, cfg: RunConfig, out, run_one: Callable[[BitPoolState], object],
                  pool_path: str) -> int:
    pool = load_or_bootstrap(pool_path, cfg)
    for _ in range(args.rounds):
        res = run_one(pool)
        append_keystore(args.keystore or cfg.files.keystore, res.z_bits)
        pool.save(pool_path)
        _kv(out, round=res.round_index, z=res.budget.z, t=res.budget.t, **{"lambda": res.budget.lam})
    return 0


def cmd_serve_tx(args, cfg: RunConfig, out) -> int:
    host, port = cfg.network.host, cfg.network.port
    pool_path = args.pool_state or cfg.files.pool_state
    with socket.create_server((host, port)) as server:
        server.settimeout(cfg.network.timeout)
        print(f"listening={host}:{server.getsockname()[1]}", file=out, flush=True)
        conns = []
        try:
            while len(conns) < args.peers:
                sock, _ = server.accept()
                conns.append(SocketTransport(sock, cfg.network.timeout))
        except socket.timeout:
            raise ProtocolTimeout(f"only {len(conns)} of {args.peers} receivers connected") from None
        record: list[bytes] | None = [] if args.transcript else None
        try:
            def one(pool: BitPoolState):
                rnd = pool.round_index + 1
                return run_tx_session(conns if len(conns) > 1 else conns[0], pool,
                                      round_params(cfg, rnd), round_fresh_bits(cfg, rnd),
                                      round_noise(cfg, rnd), leak_stats(cfg),
                                      config_digest=cfg.digest(),
                                      account_digest=cfg.protocol.account_digest, record=record)
            code = _session_loop(args, cfg, out, one, pool_path)
        finally:
            for c in conns:
                c.close()
        if record is not None:
            Path(args.transcript).write_bytes(b"".join(record))
        return code


def cmd_serve_rx(args, cfg: RunConfig, out) -> int:
    pool_path = args.pool_state or cfg.files.pool_state
    sock = socket.create_connection((cfg.network.host, cfg.network.port), timeout=cfg.network.timeout)
    transport = SocketTransport(sock, cfg.network.timeout)
    try:
        return _session_loop(args, cfg, out,
                             lambda pool: run_rx_session(transport, pool, config_digest=cfg.digest()),
                             pool_path)
    finally:
        transport.close()


def cmd_tap(args, cfg: RunConfig, out) -> int:
    data = Path(args.transcript).read_bytes()
    truth = bitops.unpack(Path(args.truth).read_bytes(), cfg.protocol.a) if args.truth else None
    rep = run_tap(data, cfg.mary, channel.sigma_v(cfg.channel), truth_fresh=truth)
    if args.guesses:
        Path(args.guesses).write_bytes(bitops.pack(rep.guessed_bits))
    _kv(out, round=rep.round, samples=rep.n, analytic_p_success=rep.analytic_p_success,
        agreement=rep.agreement if rep.agreement is not None else "n/a")
    return 0


def _key_matrix(path: str):
    bits = read_keystore(path)
    if bits.size < 4:
        raise FormatError(f"key store {path} holds {bits.size} bits; at least 4 are needed")
    return build_key_matrix(bits)


def cmd_encrypt(args, cfg: RunConfig, out) -> int:
    matrix = _key_matrix(args.keystore)
    msg = bitops.unpack(Path(args.input).read_bytes())
    lines = min(args.lines, matrix.d)
    envs = encrypt_message(matrix, msg, lines, derive_seed(args.seed))
    write_envelopes(args.output, envs)
    _kv(out, d=matrix.d, blocks=len(envs), lines=lines, message_bits=msg.size,
        refresh_needed=matrix.refresh_needed)
    return 0


def cmd_decrypt(args, cfg: RunConfig, out) -> int:
    matrix = _key_matrix(args.keystore)
    plain = decrypt_message(matrix, read_envelopes(args.input))
    if plain.size % 8:
        raise FormatError("decrypted bit length is not a whole number of bytes")
    Path(args.output).write_bytes(bitops.pack(plain))
    _kv(out, d=matrix.d, message_bits=plain.size)
    return 0


def cmd_collide(args, cfg: RunConfig, out) -> int:
    _, users = parse_sweep(f"N={args.users}")
    total = int(float(args.bits))
    d = math.isqrt(total)

    def rows():
        for n in users:
            p = collision_prob_one(int(n), total)
            yield int(n), d, p.exact, p.approx, collision_prob_all(int(n), total, args.lines)

    write_csv(out, ("N", "d", "p_one_exact", "p_one_approx", f"p_all_{args.lines}"), rows())
    return 0


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--print-config", action="store_true",
                        help="print the resolved canonical config and exit")

    p = argparse.ArgumentParser(prog="cloakkey", description="Noise-cloaked key distribution toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", parents=[common], help="generate whitened random bits")
    k.add_argument("--bits", type=int, default=0, help="number of bits to write to --out")
    k.add_argument("--out", default="random.bin")
    k.add_argument("--no-whiten", action="store_true", help="skip the LFSR keystream")
    k.add_argument("--mean-reference", choices=(FIXED_ANALYTIC, RUNNING_AVERAGE), default=FIXED_ANALYTIC)
    k.add_argument("--pool-state", help="also write an initial pool state file")
    k.set_defaults(func=cmd_keygen)

    a = sub.add_parser("analyze", parents=[common], help="emit analysis tables as CSV")
    a.add_argument("--table", choices=sorted(TABLES), default="leak")
    a.add_argument("--sweep", action="append", metavar="NAME=LO..HI[:STEP]",
                   help=f"sweep one of {sorted(SWEEPABLE)} (repeatable)")
    a.add_argument("--much", type=float, default=10.0, help="factor for 'much greater than'")
    a.add_argument("--coverage", type=float, default=2.0, help="minimum 2 M sigma_V / V_max")
    a.add_argument("--out", help="CSV path (default stdout)")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("simulate-round", parents=[common], help="run TX, RX and tap in-process")
    s.add_argument("--rounds", type=int, default=1)
    s.add_argument("--pool-state", help="start from this pool state file")
    s.add_argument("--save-state", action="store_true", help="write the TX pool back to --pool-state")
    s.add_argument("--keystore", help="append distilled key bits here")
    s.add_argument("--transcript", help="append raw frames here")
    s.set_defaults(func=cmd_simulate_round)

    for name, func, helptext in (("serve-tx", cmd_serve_tx, "transmitting station"),
                                 ("serve-rx", cmd_serve_rx, "receiving station")):
        n = sub.add_parser(name, parents=[common], help=helptext)
        n.add_argument("--rounds", type=int, default=1)
        n.add_argument("--pool-state", help="pool state file (default files.pool_state)")
        n.add_argument("--keystore", help="key store file (default files.keystore)")
        if name == "serve-tx":
            n.add_argument("--peers", type=int, default=1,
                           help="receivers to wait for; more than one broadcasts identical rounds")
            n.add_argument("--transcript", help="write the raw frame transcript here")
        n.set_defaults(func=func)

    t = sub.add_parser("tap", parents=[common], help="run the eavesdropper on a transcript")
    t.add_argument("transcript")
    t.add_argument("--truth", help="packed true fresh bits, for the agreement rate")
    t.add_argument("--guesses", help="write the guessed bits here")
    t.set_defaults(func=cmd_tap)

    for name, func in (("encrypt", cmd_encrypt), ("decrypt", cmd_decrypt)):
        e = sub.add_parser(name, parents=[common], help=f"{name} with the key-store matrix")
        e.add_argument("--keystore", required=True)
        e.add_argument("--in", dest="input", required=True)
        e.add_argument("--out", dest="output", required=True)
        if name == "encrypt":
            e.add_argument("--lines", type=int, default=20)
            e.add_argument("--seed", type=int, default=0)
        e.set_defaults(func=func)

    c = sub.add_parser("collide", parents=[common], help="line collision probabilities")
    c.add_argument("--users", default="1..20", help="N values, lo..hi or a comma list")
    c.add_argument("--bits", default="1e8", help="total key bits K")
    c.add_argument("--lines", type=int, default=20)
    c.set_defaults(func=cmd_collide)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r} must look like section.key=value")
        overrides[key.strip()] = value.strip()
    return cfg.with_overrides(overrides) if overrides else cfg


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.print_config:
            out.write(cfg.canonical())
            print(f"# digest = {cfg.digest().hex()}", file=out)
            return 0
        return args.func(args, cfg, out)
    except CloakKeyError as exc:
        print(f"error kind={exc.kind} message={exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error kind=IOError message={exc}", file=sys.stderr)
        return 3


def run(argv: Sequence[str]) -> tuple[int, str]:
    """Invoke :func:`main` capturing stdout; convenient for scripting and tests."""
    buf = io.StringIO()
    code = main(list(argv), buf)
    return code, buf.getvalue()


if __name__ == "__main__":
    sys.exit(main())
