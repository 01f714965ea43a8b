"""Command-line entry point: ``teapse <command> ...``.

Errors are reported on stderr as one line, ``error: <code>: <message>``,
with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import shlex
import sys
from pathlib import Path

import numpy as np

from . import bench, datagen, io, losses, schedule
from .dsp import AudioBuffer
from .errors import ConfigError, TeapseError
from .model import ModelConfig, build_model, count_macs, count_params, mac_breakdown

REFERENCE_PARAMS = 22.24e6
REFERENCE_MACS = 19.66e9


def _model_config(path):
    if path is None:
        return ModelConfig(), {}
    return io.load_run_config(path)


def _build(args, weights=None):
    cfg, extras = _model_config(getattr(args, "config", None))
    seed = args.seed if args.seed is not None else extras.get("seed", 0)
    model, registry = build_model(cfg, seed)
    weights = weights or extras.get("weights")
    if weights:
        io.load_into(registry, weights)
    return model, registry


def cmd_enhance(args):
    model, _ = _build(args, args.weights)
    noisy = io.read_wav(args.noisy)
    enroll = io.read_wav(args.enroll)
    for name, buf in (("noisy", noisy), ("enroll", enroll)):
        if buf.sample_rate != 48000:
            raise ConfigError(f"{name} audio must be 48 kHz, got {buf.sample_rate}")
    emb = io.read_embedding(args.embedding, model.cfg.embedding_dim)
    if args.streaming:
        session = model.stream(enroll, emb)
        hop = session.hop
        y = session.run(noisy.samples)[hop:hop + len(noisy)]
        out = AudioBuffer(y)
    else:
        out = model.enhance(noisy, enroll, emb)
    io.write_wav(args.out, out, args.encoding)
    print(f"wrote={args.out} samples={len(out)} mode={'streaming' if args.streaming else 'offline'}")


def _parse_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"expected lo:hi, got {text!r}") from None
    if not datagen.RT60_RANGE[0] <= lo <= hi <= datagen.RT60_RANGE[1]:
        raise ConfigError(f"RT60 range {text} must lie within {datagen.RT60_RANGE}")
    return lo, hi


def cmd_rir_gen(args):
    lo, hi = _parse_range(args.rt60)
    out = Path(args.out)
    lines = []
    for i in range(args.count):
        rng = np.random.default_rng([args.seed, i])
        rt60 = float(rng.uniform(lo, hi))
        room = datagen.draw_room(rng, rt60, sample_rate=args.fs, rir_len=args.len)
        beta = datagen.calibrate_reflection(room)
        rir = datagen.simulate_rir(room, beta)
        name = f"rir_{i:05d}.wav"
        io.write_wav(out / name, AudioBuffer(rir.samples, args.fs), "float32")
        dims = ",".join(f"{v:.4f}" for v in room.dims)
        lines.append(f"{name} rt60={rt60:.6f} beta={beta:.6f} dims={dims}")
        print(lines[-1])
    io.atomic_write(out / "index.txt", ("\n".join(lines) + "\n").encode())


def parse_manifest(text, base=Path(".")):
    """One recipe per line: ``seed target noise interferer enroll snr sir rt60``.

    ``-`` stands for an absent noise or interferer; ``#`` starts a comment.
    """
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = shlex.split(line)
        if len(parts) != 8:
            raise ConfigError(f"manifest line {lineno}: expected 8 fields, got {len(parts)}")
        seed, target, noise, interf, enroll, snr, sir, rt60 = parts
        path = lambda p: None if p == "-" else base / p  # noqa: E731
        try:
            rows.append(dict(seed=int(seed), target=path(target), noise=path(noise),
                             interferer=path(interf), enroll=path(enroll),
                             snr=float(snr), sir=float(sir), rt60=float(rt60)))
        except ValueError:
            raise ConfigError(f"manifest line {lineno}: bad number in {raw!r}") from None
    return rows


def cmd_mix(args):
    manifest = Path(args.manifest)
    rows = parse_manifest(manifest.read_text(encoding="utf-8"), manifest.parent)
    out = Path(args.out)
    for i, row in enumerate(rows):
        seed = int(np.random.SeedSequence([args.seed, row["seed"]]).generate_state(1)[0])
        params = datagen.draw_params(seed, row["rt60"], row["snr"], row["sir"], rir_len=args.rir_len)
        read = lambda p: None if p is None else io.read_wav(p).samples  # noqa: E731
        recipe = datagen.MixtureRecipe(
            target=read(row["target"]), enroll=read(row["enroll"]), noise=read(row["noise"]),
            interferer=read(row["interferer"]), rir=datagen.simulate_rir(params.room).samples,
            snr_db=params.snr_db, sir_db=params.sir_db, seed=seed,
        )
        noisy, clean, enroll = datagen.synth_example(recipe)
        for tag, buf in (("noisy", noisy), ("clean", clean), ("enroll", enroll)):
            io.write_wav(out / f"{i:05d}_{tag}.wav", buf, "float32")
        print(f"item={i:05d} seed={seed} snr={params.snr_db:g} sir={params.sir_db:g} rt60={params.room.rt60:g}")


def cmd_stats(args):
    cfg, _ = _model_config(args.config)
    if args.what == "params":
        _, registry = build_model(cfg, 0)
        groups = [args.group] if args.group else registry.groups()
        for g in groups:
            print(f"group.{g}={count_params(registry, g)}")
        total = count_params(registry, args.group)
        print(f"total={total}")
        if args.group is None:
            print(f"reference={REFERENCE_PARAMS:.0f}")
            print(f"ratio={total / REFERENCE_PARAMS:.4f}")
    else:
        fps = cfg.frames_per_second
        for key, value in mac_breakdown(cfg).items():
            if key.endswith("_per_frame"):
                print(f"{key[:-len('_per_frame')]}_per_second={value * fps:.0f}")
            else:
                print(f"{key}={value}")
        total = count_macs(cfg)
        print(f"total_per_second={total:.0f}")
        print(f"reference={REFERENCE_MACS:.0f}")
        print(f"ratio={total / REFERENCE_MACS:.4f}")


def cmd_loss_eval(args):
    ref = io.read_wav(args.ref)
    est = io.read_wav(args.est)
    multi = losses.MultiResConfig.single() if args.single else losses.MultiResConfig()
    result = losses.composite_loss(ref, est, multi, args.which.upper())
    print("\n".join(result.lines()))


def cmd_bench_rtf(args):
    model, _ = _build(args)
    report = bench.bench_rtf(model, args.seconds, args.mode, seed=args.seed or 0)
    print(bench.format_report(report))


def cmd_schedule_trace(args):
    try:
        values = [float(v) for v in args.losses.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad loss list {args.losses!r}") from None
    state = schedule.LrState()
    for epoch, loss in enumerate(values, 1):
        state = schedule.lr_step(state, loss)
        print(f"epoch={epoch} val_loss={loss:g} {state.report()}")
    print("trace=" + ",".join(f"{v:g}" for v in schedule.lr_trace(values)))


def cmd_weights_init(args):
    _, registry = _build(args)
    io.save_weights(registry, args.out)
    print(f"wrote={args.out} tensors={len(registry)} params={count_params(registry, trainable=None)}")


def build_parser():
    p = argparse.ArgumentParser(prog="teapse", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("enhance", help="enhance a noisy recording")
    e.add_argument("--noisy", required=True)
    e.add_argument("--enroll", required=True)
    e.add_argument("--embedding", required=True, help="raw float32 vector file, or 'zero'")
    e.add_argument("--weights", help="weight file (default: seeded random init)")
    e.add_argument("--out", required=True)
    e.add_argument("--streaming", action="store_true")
    e.add_argument("--seed", type=int)
    e.add_argument("--config")
    e.add_argument("--encoding", choices=("float32", "pcm16"), default="float32")
    e.set_defaults(func=cmd_enhance)

    rir = sub.add_parser("rir", help="room impulse responses").add_subparsers(dest="action", required=True)
    g = rir.add_parser("gen", help="generate image-method RIRs")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--rt60", default="0.1:1.0")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--fs", type=int, default=48000)
    g.add_argument("--len", type=int, default=48000)
    g.set_defaults(func=cmd_rir_gen)

    m = sub.add_parser("mix", help="synthesize training mixtures from a manifest")
    m.add_argument("--manifest", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--rir-len", type=int, default=48000)
    m.set_defaults(func=cmd_mix)

    s = sub.add_parser("stats", help="parameter and MAC accounting")
    s.add_argument("what", choices=("params", "macs"))
    s.add_argument("--config")
    s.add_argument("--group")
    s.set_defaults(func=cmd_stats)

    loss = sub.add_parser("loss", help="loss evaluation").add_subparsers(dest="action", required=True)
    le = loss.add_parser("eval", help="evaluate L1/L2 on a reference/estimate pair")
    le.add_argument("--ref", required=True)
    le.add_argument("--est", required=True)
    res = le.add_mutually_exclusive_group()
    res.add_argument("--multi", action="store_true", default=True)
    res.add_argument("--single", action="store_true")
    le.add_argument("--which", choices=("l1", "l2"), default="l2")
    le.set_defaults(func=cmd_loss_eval)

    b = sub.add_parser("bench", help="benchmarks").add_subparsers(dest="action", required=True)
    br = b.add_parser("rtf", help="real-time factor")
    br.add_argument("--mode", choices=("streaming", "offline"), default="streaming")
    br.add_argument("--seconds", type=float, default=10.0)
    br.add_argument("--seed", type=int)
    br.add_argument("--config")
    br.set_defaults(func=cmd_bench_rtf)

    sc = sub.add_parser("schedule", help="learning-rate schedule").add_subparsers(dest="action", required=True)
    st = sc.add_parser("trace", help="print the lr trace for a validation-loss sequence")
    st.add_argument("--losses", required=True)
    st.set_defaults(func=cmd_schedule_trace)

    w = sub.add_parser("weights", help="weight files").add_subparsers(dest="action", required=True)
    wi = w.add_parser("init", help="write seeded random weights")
    wi.add_argument("--out", required=True)
    wi.add_argument("--seed", type=int, default=0)
    wi.add_argument("--config")
    wi.set_defaults(func=cmd_weights_init)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except TeapseError as exc:
        print(f"error: {exc.code}: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {' '.join(str(exc).split())}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
