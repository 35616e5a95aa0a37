"""``fakeforge`` command line entry point."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .datamodel import ManifestError, load_manifest, manifest_tallies, write_manifest

logger = logging.getLogger("fakeforge")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def run_metadata(command: str, cfg, endpoints: list[str], seed: int | None) -> dict:
    """Run description embedded in outputs; its digest ties outputs to the run."""
    catalog = cfg.catalog()
    meta = {
        "command": command,
        "version": __version__,
        "config_digest": cfg.digest,
        "prompt_digests": dict(sorted(catalog.digests.items())),
        "endpoints": sorted(endpoints),
        "seed": seed,
    }
    meta["digest"] = hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()
    return meta


def _write_meta(path: Path, meta: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _meta_beside(out: Path) -> Path:
    return out.with_name(out.name + ".run.json")


def _gateway(cfg, journal_path: Path | None = None):
    from .gateway import Gateway, RequestJournal

    return Gateway(retry=cfg.retry, journal=RequestJournal(journal_path) if journal_path else None)


# -- subcommands --------------------------------------------------------------


def cmd_ingest(args, cfg) -> int:
    from .gateway import ImageReadError, check_image

    records = load_manifest(args.manifest)
    bad = []
    for r in records:
        try:
            check_image(r.image_path, r.id)
        except ImageReadError as exc:
            bad.append(str(exc))
    for msg in bad:
        logger.error(msg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out, records)
    meta = run_metadata("ingest", cfg, [], None)
    meta["tallies"] = manifest_tallies(records)
    meta["undecodable"] = len(bad)
    _write_meta(_meta_beside(out), meta)
    print(json.dumps(meta["tallies"], sort_keys=True))
    return EXIT_FAILURE if bad else EXIT_OK


def cmd_categorize(args, cfg) -> int:
    from .dataset import CategorizationError, categorize

    records = load_manifest(args.manifest)
    needs = [r for r in records if r.category is None or args.force]
    classifier = cfg.role("classifier", args.classifier) if needs else None
    gw = _gateway(cfg)
    out_records, failures = [], 0
    for r in records:
        if r.category is not None and not args.force:
            out_records.append(r)
            continue
        try:
            out_records.append(r.with_category(categorize(r, classifier, gw, force=args.force)))
        except CategorizationError as exc:
            logger.error("%s: %s", r.id, exc)
            failures += 1
            out_records.append(r)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_manifest(out, out_records)
    _write_meta(_meta_beside(out), run_metadata("categorize", cfg,
                                                [classifier.name] if classifier else [], None))
    return EXIT_FAILURE if failures else EXIT_OK


def cmd_annotate(args, cfg) -> int:
    from .annotation import run_annotation

    annotators = cfg.role_list("annotators")
    if not annotators:
        raise ConfigError("no annotators configured (roles.annotators)")
    aggregator = cfg.role("aggregator", args.aggregator)
    out = Path(args.out)
    summary = run_annotation(args.manifest, annotators, aggregator, out, gateway=_gateway(cfg),
                             catalog=cfg.catalog(), workers=cfg.workers)
    meta = run_metadata("annotate", cfg, [e.name for e in annotators] + [aggregator.name], None)
    meta["summary"] = summary.to_dict()
    _write_meta(_meta_beside(out), meta)
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_build_dataset(args, cfg) -> int:
    from .dataset import build_dataset

    out = Path(args.out)
    summary = build_dataset(args.manifest, args.annotations, out, args.ratio,
                            args.test_fraction, cfg.seed)
    meta = run_metadata("build-dataset", cfg, [], cfg.seed)
    meta.update(ratio=args.ratio, test_fraction=args.test_fraction, summary=summary.to_dict())
    _write_meta(_meta_beside(out), meta)
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_perturb(args, cfg) -> int:
    from .perturbations import get_spec, perturb_records, suite

    specs = suite() if args.suite else [get_spec(args.spec)]
    records = load_manifest(args.input)
    out = Path(args.out)
    for spec in specs:
        derived = perturb_records(records, spec, cfg.seed, out)
        write_manifest(out / spec.slug / "manifest.jsonl", derived)
    _write_meta(out / "run.json", run_metadata("perturb", cfg, [], cfg.seed))
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    from .evaluate import evaluate, write_report

    model = cfg.endpoint(args.model)
    embedder = cfg.role("embedder", args.embedder) if (args.embedder or cfg.roles.get("embedder")) else None
    out = Path(args.out)
    names = [model.name] + ([embedder.name] if embedder else [])
    meta = run_metadata("evaluate", cfg, names, None)
    report = evaluate(model, args.dataset, embedder, _gateway(cfg), out, cfg.workers,
                      run_digest=meta["digest"])
    write_report([report], out, metadata=meta)
    _write_meta(out / "run.json", meta)
    return EXIT_OK


def cmd_robustness(args, cfg) -> int:
    from .evaluate import evaluate_robustness, write_report

    model = cfg.endpoint(args.model)
    embedder = cfg.role("embedder", args.embedder) if (args.embedder or cfg.roles.get("embedder")) else None
    out = Path(args.out)
    names = [model.name] + ([embedder.name] if embedder else [])
    meta = run_metadata("robustness", cfg, names, cfg.seed)
    reports = evaluate_robustness(model, args.dataset, cfg.seed, embedder, _gateway(cfg), out,
                                  cfg.workers, run_digest=meta["digest"])
    write_report(reports, out, metadata=meta)
    _write_meta(out / "run.json", meta)
    return EXIT_OK


def cmd_rescore(args, cfg) -> int:
    from .evaluate import rescore, write_report

    embedder = cfg.role("embedder", args.embedder) if (args.embedder or cfg.roles.get("embedder")) else None
    report = rescore(args.responses, args.dataset, embedder, _gateway(cfg))
    out = Path(args.out)
    meta = run_metadata("rescore", cfg, [embedder.name] if embedder else [], None)
    write_report([report], out, metadata=meta)
    _write_meta(out / "run.json", meta)
    return EXIT_OK


def cmd_probe(args, cfg) -> int:
    from .evaluate import load_report
    from .probe import compare_paradigms, extract_features, probe_report, train

    encoder = cfg.role("encoder", args.encoder)
    out = Path(args.out)
    gw = _gateway(cfg)
    cache = Path(args.cache) if args.cache else out / "feature_cache"
    train_fm = extract_features(load_manifest(args.train), encoder, cache, gw)
    test_fm = extract_features(load_manifest(args.test), encoder, cache, gw)
    model = train(train_fm)
    rep = probe_report(model, test_fm, name=f"{encoder.name} + linear probe")
    meta = run_metadata("probe", cfg, [encoder.name], None)
    from .evaluate import write_report

    write_report([rep], out, name="probe_report", metadata=meta)
    if args.compare:
        chat = load_report(args.compare)[0]
        table = compare_paradigms(rep, chat)
        (out / "comparison.txt").write_text(table.render() + "\n", encoding="utf-8")
        (out / "comparison.json").write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n")
        print(table.render())
    _write_meta(out / "run.json", meta)
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    from .evaluate import load_report, write_report

    reports = [r for p in args.reports for r in load_report(p)]
    jpath, tpath = write_report(reports, Path(args.out), metadata=run_metadata("report", cfg, [], None))
    print(tpath.read_text(encoding="utf-8"), end="")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fakeforge", description=(
        "Build explained synthetic-image-detection datasets and benchmark chat models on them."))
    p.add_argument("--version", action="version", version=f"fakeforge {__version__}")
    p.add_argument("--config", help="YAML config file (default: $FAKEFORGE_CONFIG)")
    p.add_argument("--workers", type=int, help="parallel workers (overrides config and $FAKEFORGE_WORKERS)")
    p.add_argument("--seed", type=int, help="random seed (overrides config and $FAKEFORGE_SEED)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("ingest", help="validate a manifest and its images")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="normalized manifest path")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("categorize", help="fill missing categories with the classifier endpoint")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--classifier", help="endpoint name (default: roles.classifier)")
    s.add_argument("--force", action="store_true", help="re-categorize records that have a category")
    s.set_defaults(func=cmd_categorize)

    s = sub.add_parser("annotate", help="multi-annotator captioning with aggregation (resumable)")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="annotation store path (.jsonl)")
    s.add_argument("--aggregator", help="endpoint name (default: roles.aggregator)")
    s.set_defaults(func=cmd_annotate)

    s = sub.add_parser("build-dataset", help="balance, split and export QA pairs")
    s.add_argument("--manifest", required=True)
    s.add_argument("--annotations", required=True)
    s.add_argument("--out", required=True, help="QA dataset path (.jsonl)")
    s.add_argument("--ratio", type=float, default=1.0, help="fake-to-real ratio per category")
    s.add_argument("--test-fraction", type=float, default=0.05)
    s.set_defaults(func=cmd_build_dataset)

    s = sub.add_parser("perturb", help="write perturbed copies of a manifest's images")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--suite", action="store_true", help="apply every suite perturbation")
    g.add_argument("--spec", help='one perturbation tag, e.g. "JPEG 70"')
    s.add_argument("--in", dest="input", required=True, help="input manifest")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_perturb)

    for name, func, helptext in (("evaluate", cmd_evaluate, "evaluate a model on the test split"),
                                 ("robustness", cmd_robustness, "evaluate under every perturbation")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--model", required=True, help="endpoint name of the model under test")
        s.add_argument("--dataset", required=True)
        s.add_argument("--embedder", help="endpoint name for CSS (default: roles.embedder)")
        s.add_argument("--out", required=True, help="output directory")
        s.set_defaults(func=func)

    s = sub.add_parser("rescore", help="recompute metrics from persisted responses")
    s.add_argument("--responses", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--embedder")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rescore)

    s = sub.add_parser("probe", help="linear probe on frozen encoder features")
    s.add_argument("--encoder", help="endpoint name (default: roles.encoder)")
    s.add_argument("--train", required=True, help="training manifest")
    s.add_argument("--test", required=True, help="test manifest")
    s.add_argument("--cache", help="feature cache directory (default: OUT/feature_cache)")
    s.add_argument("--compare", help="machine report of a chat model on the same test split")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("report", help="merge machine reports into one table")
    s.add_argument("--reports", nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"workers": args.workers, "seed": args.seed})
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        print(f"fakeforge: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ManifestError, OSError, ValueError, RuntimeError) as exc:
        print(f"fakeforge {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
