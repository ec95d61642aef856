"""Command-line pipeline: import -> split -> gen -> featurize -> train -> eval / embed.

Everything lives under one work directory::

    manifests/all.tsv, {train,val,test}.tsv, <split>.artifacts.tsv
    artifacts/<kind>/<fake_id>__<kind>.wav, provenance.jsonl
    features/<file_id>.melf            (images/<file_id>.png with --png)
    checkpoints/{baseline,adm,final}.spfw and <stage>.history.csv
    reports/<checkpoint>.<task>.<split>.json|.txt, scores/<same>.csv
    embeddings/<checkpoint>.<task>.<split>.csv

Exit codes: 0 ok, 2 invalid input or config, 3 unreadable data,
4 missing prerequisite, 64 command-line usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .artifact_gen import ArtifactKind, BandSpec, generate_artifact_set
from .config import ENV_PREFIX, PipelineConfig, load_config
from .dataset import (SPLITS, Label, Manifest, SampleRecord, Task, build_task_view, import_asvspoof_protocol,
                      parse_manifest, split_random, write_manifest)
from .errors import (CheckpointError, ConfigError, DimensionError, InvalidInputError, ManifestError,
                     MaterializationError, MetricError, WavFormatError, WavParseError)
from .metrics import report, write_embeddings, write_scores
from .model import (STAGES, Freeze, load_checkpoint, save_checkpoint, train_adm, train_baseline,
                    train_final, embed_batch)
from .pipeline import featurize_manifest, score_view

log = logging.getLogger("admspoof")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3
EXIT_MISSING = 4
EXIT_USAGE = 64


class MissingPrerequisite(Exception):
    """An earlier pipeline stage has not produced the file this command needs."""


class DataFailure(Exception):
    """Some inputs could not be read; the rest were processed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- work dir


class Workdir:
    def __init__(self, root):
        self.root = Path(root)

    manifests = property(lambda self: self.root / "manifests")
    features = property(lambda self: self.root / "features")
    images = property(lambda self: self.root / "images")
    checkpoints = property(lambda self: self.root / "checkpoints")
    reports = property(lambda self: self.root / "reports")
    scores = property(lambda self: self.root / "scores")
    embeddings = property(lambda self: self.root / "embeddings")

    def manifest(self, name: str) -> Path:
        return self.manifests / f"{name}.tsv"

    def artifact_manifest(self, split: str) -> Path:
        return self.manifests / f"{split}.artifacts.tsv"

    def artifacts(self, kind: str) -> Path:
        return self.root / "artifacts" / kind

    def checkpoint(self, stage: str) -> Path:
        return self.checkpoints / f"{stage}.spfw"


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise MissingPrerequisite(f"missing {path} (run `{hint}` first)")
    return path


def _rebase(manifest: Manifest, target_dir: Path) -> Manifest:
    """Rewrite record paths relative to ``target_dir`` so the TSV stays valid where it is written."""
    target_dir = Path(target_dir).resolve()
    records = [replace(r, path=os.path.relpath(manifest.resolve(r).resolve(), target_dir)) for r in manifest]
    return Manifest(records, manifest.split, target_dir)


def _load(path: Path, split=None) -> Manifest:
    return parse_manifest(path, split)


# ---------------------------------------------------------------- commands


def cmd_import(args, cfg: PipelineConfig, wd: Workdir) -> int:
    if args.asvspoof:
        src = _require(Path(args.asvspoof), "a protocol file")
        root = args.audio_root or cfg.corpus_root
        if root is None:
            raise ConfigError("--audio-root (or corpus_root in the config) is required with --asvspoof")
        manifest = import_asvspoof_protocol(src, root, args.ext)
    else:
        manifest = _load(_require(Path(args.manifest), "a manifest file"))
    out = wd.manifest("all")
    write_manifest(_rebase(manifest, out.parent), out)
    print(f"{out}: {len(manifest)} records "
          f"({len(manifest.with_label(Label.REAL))} real, {len(manifest.with_label(Label.FAKE))} fake)")
    return EXIT_OK


def cmd_split(args, cfg: PipelineConfig, wd: Workdir) -> int:
    manifest = _load(_require(wd.manifest("all"), "import"))
    fractions = tuple(args.fractions) if args.fractions else cfg.split.fractions
    for part in split_random(manifest, fractions, cfg.seed):
        write_manifest(part, wd.manifest(part.split))
        print(f"{wd.manifest(part.split)}: {len(part)} records")
    return EXIT_OK


def cmd_gen(args, cfg: PipelineConfig, wd: Workdir) -> int:
    manifest = _load(_require(wd.manifest("all"), "import"))
    split_of = {}
    for split in SPLITS:
        for r in _load(_require(wd.manifest(split), "split")):
            split_of[r.file_id] = split
    kinds = args.kind or list(cfg.artifact.kinds)
    per_split: dict[str, list[SampleRecord]] = {s: [] for s in SPLITS}
    failed = []
    for kind in dict.fromkeys(kinds):
        acfg = cfg.artifact_config(kind)
        if args.band is not None:
            if kind != ArtifactKind.FIXED_FREQ.value:
                raise ConfigError("--band applies to fixed_freq only")
            acfg = replace(acfg, band=BandSpec.parse(args.band))
        if args.alpha is not None:
            acfg = replace(acfg, noise_alpha=args.alpha)
            acfg.__post_init__()
        res = generate_artifact_set(manifest, acfg, wd.artifacts(kind), seconds=cfg.audio.seconds,
                                    rate=cfg.audio.rate, jobs=cfg.jobs)
        rebased = _rebase(res.manifest, wd.manifests)
        for rec, prov in zip(rebased, res.provenance):
            per_split[split_of.get(prov["fake_id"], "train")].append(rec)
        failed += res.failed
        print(f"{kind}: {len(res.manifest)} clips in {wd.artifacts(kind)}, "
              f"{len(res.skipped)} skipped, {len(res.failed)} unreadable")
    for split, records in per_split.items():
        write_manifest(Manifest(sorted(records, key=lambda r: r.file_id), split), wd.artifact_manifest(split))
    if failed:
        raise DataFailure(f"{len(failed)} fake clips could not be read: {', '.join(sorted(failed)[:10])}")
    return EXIT_OK


def _all_manifests(wd: Workdir) -> list[Manifest]:
    out = [_load(_require(wd.manifest("all"), "import"))]
    for split in SPLITS:
        p = wd.artifact_manifest(split)
        if p.exists():
            out.append(_load(p))
    return out


def cmd_featurize(args, cfg: PipelineConfig, wd: Workdir) -> int:
    failed = []
    total = 0
    for manifest in _all_manifests(wd):
        res = featurize_manifest(manifest, wd.features, cfg.mel_params(), seconds=cfg.audio.seconds,
                                 rate=cfg.audio.rate, jobs=cfg.jobs, overwrite=args.overwrite,
                                 png_dir=wd.images if args.png else None)
        total += len(res.written) + len(res.reused)
        failed += res.failed
    print(f"{wd.features}: {total} feature files")
    if failed:
        raise DataFailure(f"{len(failed)} clips could not be read: {', '.join(sorted(failed)[:10])}")
    return EXIT_OK


def _view(wd: Workdir, split: str, task: Task):
    manifests = [_load(_require(wd.manifest(split), "split"), split)]
    if task == Task.ADM:
        manifests.append(_load(_require(wd.artifact_manifest(split), "gen"), split))
    if not wd.features.exists():
        raise MissingPrerequisite(f"missing {wd.features} (run `featurize` first)")
    return build_task_view(manifests, task, wd.features)


def cmd_train(args, cfg: PipelineConfig, wd: Workdir) -> int:
    tcfg = cfg.train_config()
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
        tcfg.__post_init__()
    stage_epochs = None if args.epochs is not None else cfg.train.stage_epochs
    stages = STAGES if args.stage == "all" else (args.stage,)
    wd.checkpoints.mkdir(parents=True, exist_ok=True)
    main_view = _view(wd, "train", Task.MAIN)
    model = None
    for stage in stages:
        if stage == "baseline":
            model, hist = train_baseline(main_view, tcfg, epochs=stage_epochs)
        elif stage == "adm":
            start = model or load_checkpoint(_require(wd.checkpoint("baseline"), "train --stage baseline"))
            model, hist = train_adm(start, _view(wd, "train", Task.ADM), tcfg, epochs=stage_epochs)
        else:
            start = model or load_checkpoint(_require(wd.checkpoint("adm"), "train --stage adm"))
            model, hist = train_final(start, main_view, tcfg, Freeze(cfg.train.final_freeze), epochs=stage_epochs)
        save_checkpoint(model, wd.checkpoint(stage))
        hist.write_csv(wd.checkpoints / f"{stage}.history.csv")
        # reload so a chained stage starts from exactly the stored float32 bytes
        model = load_checkpoint(wd.checkpoint(stage))
        print(f"{stage}: {len(hist.loss)} epochs, final loss {hist.loss[-1]:.5f} -> {wd.checkpoint(stage)}")
    return EXIT_OK


def _checkpoint_path(wd: Workdir, name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    candidates = [wd.checkpoints / name, wd.checkpoint(name)]
    for c in candidates:
        if c.exists():
            return c
    raise MissingPrerequisite(f"missing checkpoint {name} (looked in {wd.checkpoints}; run `train` first)")


def _eval_names(args, ckpt: Path) -> str:
    return f"{ckpt.stem}.{args.task}.{args.split}"


def cmd_eval(args, cfg: PipelineConfig, wd: Workdir) -> int:
    ckpt = _checkpoint_path(wd, args.checkpoint)
    model = load_checkpoint(ckpt)
    task = Task(args.task)
    view = _view(wd, args.split, task)
    scores = score_view(model, view)
    name = _eval_names(args, ckpt)
    wd.scores.mkdir(parents=True, exist_ok=True)
    write_scores(wd.scores / f"{name}.csv", view.ids, scores.scores, scores.labels)
    positive = "real" if task == Task.MAIN else "artifact"
    result = report(scores, wd.reports / f"{name}.json", positive_class=positive)
    print(f"{name}: F1 {result['f1']:.4f}  EER {result['eer']:.4f}  AUC {result['auc']:.4f} "
          f"(positive class {positive}) -> {wd.reports / (name + '.json')}")
    return EXIT_OK


def cmd_embed(args, cfg: PipelineConfig, wd: Workdir) -> int:
    ckpt = _checkpoint_path(wd, args.checkpoint)
    model = load_checkpoint(ckpt)
    view = _view(wd, args.split, Task(args.task))
    wd.embeddings.mkdir(parents=True, exist_ok=True)
    out = wd.embeddings / f"{_eval_names(args, ckpt)}.csv"
    write_embeddings(out, view.ids, view.labels, embed_batch(model, view.features))
    print(f"{out}: {len(view)} embeddings")
    return EXIT_OK


def cmd_toy(args, cfg: PipelineConfig, wd: Workdir) -> int:
    from .synthetic import make_toy_corpus

    m = make_toy_corpus(args.out, args.n_real, args.n_fake, args.speakers, cfg.seed,
                        seconds=cfg.audio.seconds, rate=cfg.audio.rate)
    print(f"{Path(args.out) / 'manifest.tsv'}: {len(m)} synthetic clips")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", default=argparse.SUPPRESS, help="JSON config file (env ADMSPOOF_CONFIG)")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (env ADMSPOOF_SEED)")
    g.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads (env ADMSPOOF_JOBS)")
    g.add_argument("--workdir", default=argparse.SUPPRESS, help="work directory (env ADMSPOOF_WORKDIR)")
    g.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    p = _Parser(prog="admspoof", parents=[common],
                description="Deepfake audio detection with artifact detection modules.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("import", parents=[common], help="write manifests/all.tsv")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--asvspoof", metavar="PROTOCOL", help="ASVspoof LA protocol file")
    src.add_argument("--manifest", metavar="TSV", help="existing 4-column manifest")
    s.add_argument("--audio-root", help="audio directory for --asvspoof")
    s.add_argument("--ext", default=".wav", help="audio file extension for --asvspoof (default .wav)")
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("split", parents=[common], help="stratified train/val/test split")
    s.add_argument("--fractions", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("gen", parents=[common], help="generate artifact fakes")
    s.add_argument("--kind", action="append", choices=[k.value for k in ArtifactKind],
                   help="artifact kind; repeat for several (default from config)")
    s.add_argument("--band", metavar="START:END", help="fixed_freq band in Hz, e.g. 2000:3500")
    s.add_argument("--alpha", type=float, help="background_noise mix weight")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("featurize", parents=[common], help="mel features for every manifest")
    s.add_argument("--png", action="store_true", help="also render magma PNG images")
    s.add_argument("--overwrite", action="store_true", help="recompute existing feature files")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", parents=[common], help="baseline, ADM and fine-tuning stages")
    s.add_argument("--stage", choices=("all",) + STAGES, default="all")
    s.add_argument("--epochs", type=int, help="epochs for every stage (overrides the config)")
    s.set_defaults(func=cmd_train)

    for name, func, helptext in (("eval", cmd_eval, "score a split and write a metric report"),
                                 ("embed", cmd_embed, "export dense-128 embeddings as CSV")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--checkpoint", default="final", help="stage name or .spfw path (default final)")
        s.add_argument("--split", choices=SPLITS, default="test")
        s.add_argument("--task", choices=[t.value for t in Task], default="main")
        s.set_defaults(func=func)

    s = sub.add_parser("toy", parents=[common], help="write a synthetic real/fake corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n-real", type=int, default=300)
    s.add_argument("--n-fake", type=int, default=300)
    s.add_argument("--speakers", type=int, default=10)
    s.set_defaults(func=cmd_toy)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in ("seed", "jobs", "workdir")}
        cfg = load_config(getattr(args, "config", None), overrides)
        return args.func(args, cfg, Workdir(cfg.workdir))
    except (MissingPrerequisite, MaterializationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DataFailure, WavFormatError, WavParseError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ManifestError, InvalidInputError, MetricError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
