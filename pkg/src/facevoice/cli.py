"""Command-line entry point: ``facevoice <command> [options]``.

Every command validates its inputs and computes its results before it
creates any output file, so a failed run leaves nothing behind.  Exit
codes: 0 success, 1 validation error, 2 numerical failure; errors are
printed on one line as ``ERROR <code>: <message>``.
"""

import argparse
import contextlib
import csv
import io
import os
import sys
import time
from pathlib import Path

import numpy as np

from ._validation import NumericalError, ValidationError
from .adapter.model import decode, encode, init_adapter, load_checkpoint, to_bytes
from .adapter.training import STAGE1_COLUMNS, gradcheck, log_to_csv, train_stage1
from .config import RunConfig
from .dcts import evaluate_dcts, parse_report_csv, render_report
from .density import estimate_independence, gaussian_total_correlation
from .embedding import EmbeddingSet, RandomSource
from .io import _format_jsonl, encode_binary, read_embeddings
from .synthdata import SynthConfig, generate, parse_split, render_split
from .surrogate import STAGE2_COLUMNS, SurrogateStack, gradcheck_stage2, train_stage2

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="seed of the command's main random stream (u64)")
    p.add_argument("--out", help="output directory (default: runs/<timestamp>-<seed>)")
    p.add_argument("--format", choices=("text", "csv"), default="text", help="stdout format")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")


def build_parser():
    parser = _Parser(prog="facevoice", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic paired face/voice dataset (keys synth.*)")
    p.add_argument("--file-format", choices=("binary", "jsonl"), default="binary")
    _common(p)

    p = sub.add_parser("train", help="train stage 1 (stage1.*) or stage 2 (stage2.*)")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--faces", required=True)
    p.add_argument("--voices", required=True)
    p.add_argument("--split", help="split manifest; only train-split speakers are used")
    p.add_argument("--init", help="checkpoint to start from (stage 2 warm start)")
    _common(p)

    p = sub.add_parser("eval-dcts", help="score an embedding file, or a model's outputs on faces (dcts.*)")
    p.add_argument("--input", help="labeled embedding file")
    p.add_argument("--checkpoint", help="adapter checkpoint; scores its outputs on --faces")
    p.add_argument("--faces")
    p.add_argument("--split", help="split manifest; restricts --faces to one part")
    p.add_argument("--part", choices=("train", "test"), default="test")
    p.add_argument("--draws", type=int, default=1, help="posterior draws per face (0 = posterior mean)")
    _common(p)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences (gradcheck.*)")
    p.add_argument("--stage", choices=("1", "2", "all"), default="all")
    p.add_argument("--checkpoint", help="model to check (default: random init from the seed)")
    p.add_argument("--mode", choices=("full", "preactivation"), help="overrides gradcheck.mode")
    _common(p)

    p = sub.add_parser("mi-bench", help="KDE/GMM dependence estimates against the Gaussian closed form")
    _common(p)

    p = sub.add_parser("report", help="merge CSV DCTS reports into one comparison table")
    p.add_argument("reports", nargs="+", help="report CSV files (name=path to set the row name)")
    _common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _threads():
    raw = os.environ.get("F2VS_THREADS")
    if raw is None or raw.strip() == "":
        return contextlib.nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"F2VS_THREADS must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError(f"F2VS_THREADS must be a non-negative integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(n, 1))


def _existing(path, what):
    if path is None:
        raise ValidationError(f"{what} path is required")
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{what} file not found: {path}")
    return path


def _load_pair(faces_path, voices_path, split_path=None, part="train"):
    faces = read_embeddings(_existing(faces_path, "faces"))
    voices = read_embeddings(_existing(voices_path, "voices"))
    if split_path is not None:
        faces, voices = _restrict(faces, split_path, part), _restrict(voices, split_path, part)
    if len(faces) != len(voices) or faces.labels != voices.labels:
        raise ValidationError("faces and voices are misaligned: record counts or labels differ")
    return faces, voices


def _restrict(emb, split_path, part):
    split = parse_split(_existing(split_path, "split").read_text())
    missing = set(emb.labels) - set(split)
    if missing:
        raise ValidationError(f"split manifest lacks {len(missing)} labels, e.g. {sorted(missing)[0]!r}")
    idx = [i for i, lab in enumerate(emb.labels) if split[lab] == part]
    if not idx:
        raise ValidationError(f"no records in the {part} split")
    return emb.subset(idx)


class Outputs:
    """Collects files in memory; written only once the command has succeeded."""

    def __init__(self, args, seed):
        self.args = args
        self.seed = seed
        self.files = {}

    def add(self, name, data):
        self.files[name] = data.encode() if isinstance(data, str) else data

    def commit(self):
        if self.args.out:
            out = Path(self.args.out)
        else:
            out = Path("runs") / f"{time.strftime('%Y%m%d-%H%M%S')}-{self.seed}"
        out.mkdir(parents=True, exist_ok=True)
        for name, data in self.files.items():
            (out / name).write_bytes(data)
        return out


def _config(args, seed_key=None):
    cfg = RunConfig.load(args.config, args.set)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ValidationError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
        for key in (seed_key if isinstance(seed_key, tuple) else (seed_key,)):
            if key:
                cfg.set(key, args.seed)
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    cfg = _config(args, "synth.data_seed")
    synth = cfg.section("synth")
    ds = generate(synth)
    out = Outputs(args, synth.data_seed)
    ext = "emb" if args.file_format == "binary" else "jsonl"
    for name, emb in (("faces", ds.faces), ("voices", ds.voices)):
        out.add(f"{name}.{ext}", encode_binary(emb) if ext == "emb" else _format_jsonl(emb))
    out.add("split.csv", render_split(ds.split))
    out.add("config.txt", cfg.render())
    path = out.commit()
    print(f"wrote {len(ds.faces)} paired records for {synth.n_speakers} speakers "
          f"({len(ds.test_labels)} held out) to {path}")
    return EXIT_OK


def cmd_train(args):
    if args.stage == 1:
        cfg = _config(args, "stage1.seed")
        conf = cfg.section("stage1")
        faces, voices = _load_pair(args.faces, args.voices, args.split, "train")
        init = load_checkpoint(args.init) if args.init else None
        model, log = train_stage1(faces, voices, conf, model=init)
        columns = STAGE1_COLUMNS
    else:
        cfg = _config(args, "stage2.seed")
        conf = cfg.section("stage2")
        faces, voices = _load_pair(args.faces, args.voices, args.split, "train")
        if args.init:
            model = load_checkpoint(args.init)
        else:
            model = init_adapter(RandomSource(conf.seed).spawn(1)[0], conf.latent_dim, faces.dim,
                                 out_dim=voices.dim)
        stack = SurrogateStack(conf.surrogate_seed, voices.dim)
        model, log = train_stage2(model, faces, voices, stack, conf)
        columns = STAGE2_COLUMNS
    if log and not all(np.isfinite(row["total"]) for row in log):
        raise NumericalError("training diverged: non-finite loss")
    out = Outputs(args, conf.seed)
    out.add("model.f2vs", to_bytes(model))
    out.add("log.csv", log_to_csv(log, columns))
    out.add("config.txt", cfg.render())
    path = out.commit()
    if log:
        last = log[-1]
        summary = " ".join(f"{c}={last[c]:.4f}" for c in columns[1:])
        print(f"stage {args.stage} epoch {last['epoch']}: {summary}")
    print(f"wrote {path / 'model.f2vs'}")
    return EXIT_OK


def generated_embeddings(model, faces, draws, rng):
    """Adapter outputs for every face; ``draws = 0`` uses the posterior mean."""
    mu, logvar = encode(model, faces.vectors)
    if draws == 0:
        return EmbeddingSet(decode(model, mu), faces.labels)
    out, labels = [], []
    for _ in range(draws):
        out.append(decode(model, mu + np.exp(0.5 * logvar) * rng.normal(mu.shape)))
        labels.extend(faces.labels)
    return EmbeddingSet(np.concatenate(out), tuple(labels))


def cmd_eval_dcts(args):
    cfg = _config(args, "dcts.seed")
    conf = cfg.section("dcts")
    if (args.input is None) == (args.checkpoint is None):
        raise ValidationError("give exactly one of --input or --checkpoint")
    if args.draws < 0:
        raise ValidationError("--draws must be non-negative")
    if args.input is not None:
        emb = read_embeddings(_existing(args.input, "input"))
    else:
        model = load_checkpoint(args.checkpoint)
        faces = read_embeddings(_existing(args.faces, "faces"))
        if args.split:
            faces = _restrict(faces, args.split, args.part)
        emb = generated_embeddings(model, faces, args.draws, RandomSource(conf.seed).spawn(2)[1])
    report = evaluate_dcts(emb, conf)
    if not np.isfinite(report.dcts):
        raise NumericalError("DCTS is not finite")
    text, table = render_report(report, "text"), render_report(report, "csv")
    out = Outputs(args, conf.seed)
    out.add("report.txt", text)
    out.add("report.csv", table)
    out.add("config.txt", cfg.render())
    out.commit()
    sys.stdout.write(table if args.format == "csv" else text)
    return EXIT_OK


def gradcheck_case(seed, batch_size=8, latent_dim=64, model=None):
    """``(model, (faces, voices), rng)`` for a seeded gradient check on synthetic records."""
    model_rng, data_rng, check_rng = RandomSource(seed).spawn(3)
    if model is None:
        model = init_adapter(model_rng, latent_dim)
    ds = generate(SynthConfig(n_speakers=max(2, -(-batch_size // 3)),
                              data_seed=int(data_rng.integers(0, 2**63))))
    idx = np.arange(batch_size)
    return model, (ds.faces.subset(idx), ds.voices.subset(idx)), check_rng


def cmd_gradcheck(args):
    cfg = _config(args, ("gradcheck.stage1_seed", "gradcheck.stage2_seed"))
    if args.mode:
        cfg.set("gradcheck.mode", args.mode)
    gc = cfg.section("gradcheck")
    s1, s2 = cfg.section("stage1"), cfg.section("stage2")
    base = load_checkpoint(args.checkpoint) if args.checkpoint else None
    reports = []
    for stage in ((1, 2) if args.stage == "all" else (int(args.stage),)):
        seed = gc.stage1_seed if stage == 1 else gc.stage2_seed
        model, batch, check_rng = gradcheck_case(seed, gc.batch_size, s1.latent_dim, base)
        if stage == 1:
            rep = gradcheck(model, batch, s1, check_rng, mode=gc.mode)
        else:
            stack = SurrogateStack(s2.surrogate_seed, model.out_dim)
            rep = gradcheck_stage2(model, stack, batch, s2, check_rng, mode=gc.mode)
        reports.append((stage, rep))
    text = "".join(f"stage {stage}\n{rep.render()}" for stage, rep in reports)
    lines = ["stage,block,max_rel_error,passed"]
    for stage, rep in reports:
        lines += [f"{stage},{b.name},{b.max_error:.6e},{int(b.passed)}" for b in rep.blocks]
    table = "\n".join(lines) + "\n"
    out = Outputs(args, gc.stage1_seed)
    out.add("gradcheck.txt", text)
    out.add("gradcheck.csv", table)
    out.add("config.txt", cfg.render())
    out.commit()
    sys.stdout.write(table if args.format == "csv" else text)
    return EXIT_OK if all(rep.passed for _, rep in reports) else EXIT_NUMERICAL


def mi_bench_rows(conf):
    rows = []
    root = RandomSource(conf.seed)
    for rho, rng in zip(conf.rho_values, root.spawn(len(conf.rho_values))):
        data_rng, mc_rng = rng.spawn(2)
        C = np.array([[1.0, rho], [rho, 1.0]])
        X = data_rng.normal((conf.n_tuples, 2)) @ np.linalg.cholesky(C).T
        oracle = gaussian_total_correlation(C)
        for est in conf.estimator_names:
            r = estimate_independence(X[:, :, None], estimator=est, n_eval=conf.n_eval,
                                      rng=RandomSource(int(mc_rng.integers(0, 2**63))))
            rows.append((rho, est, r.value, oracle, r.value - oracle))
    return rows


def cmd_mi_bench(args):
    cfg = _config(args, "mibench.seed")
    conf = cfg.section("mibench")
    rows = mi_bench_rows(conf)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("rho", "estimator", "estimate", "oracle", "error"))
    for rho, est, value, oracle, err in rows:
        writer.writerow((f"{rho:g}", est, f"{value:.4f}", f"{oracle:.4f}", f"{err:+.4f}"))
    table = buf.getvalue()
    text = "".join(
        f"rho={rho:<4g} {est:<4} estimate={value:.4f} oracle={oracle:.4f} error={err:+.4f}\n"
        for rho, est, value, oracle, err in rows
    )
    out = Outputs(args, conf.seed)
    out.add("mi_bench.csv", table)
    out.add("config.txt", cfg.render())
    out.commit()
    sys.stdout.write(table if args.format == "csv" else text)
    return EXIT_OK


def cmd_report(args):
    cfg = _config(args)
    rows = []
    for item in args.reports:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).parent.name or Path(item).stem, item
        agg = parse_report_csv(_existing(path, "report").read_text())
        rows.append((name, agg))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("system", "dcts", "rir", "rcr", "i_intra", "i_inter", "d_intra", "d_inter"))
    for name, agg in rows:
        writer.writerow((name,) + tuple(f"{agg[k]:.4f}" for k in
                                        ("dcts", "rir", "rcr", "i_intra", "i_inter", "d_intra", "d_inter")))
    table = buf.getvalue()
    width = max([len("system")] + [len(n) for n, _ in rows])
    text = f"{'system':<{width}}  {'DCTS':>7} {'RIR':>9} {'RCR':>9}\n" + "".join(
        f"{name:<{width}}  {agg['dcts']:>7.4f} {agg['rir']:>9.4f} {agg['rcr']:>9.4f}\n" for name, agg in rows
    )
    out = Outputs(args, 0 if args.seed is None else args.seed)
    out.add("report.csv", table)
    out.add("report.txt", text)
    out.add("config.txt", cfg.render())
    out.commit()
    sys.stdout.write(table if args.format == "csv" else text)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-dcts": cmd_eval_dcts,
    "gradcheck": cmd_gradcheck,
    "mi-bench": cmd_mi_bench,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_VALIDATION
        with _threads():
            return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"ERROR {EXIT_VALIDATION}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"ERROR {EXIT_NUMERICAL}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
