import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

import cv2
import numpy as np
from tqdm import tqdm

from descriptor import (CNLBPExtractor, DescriptorConfig, ExtractionRecord, FeatureVector,
                        compute_map_families, write_csv, write_jsonl)
from evalharness import evaluate, evaluate_repeated, load_manifest, synth_textures
from imagecore import load_image, resize_bilinear, sobel_field
from lbp import encode_image
from oracles import run_selftest
from pixelgraph import build_graph, degrees, dump_edges
from settings import CliConfig, SettingsError, build_config, parse_size

logger = logging.getLogger(__name__)


def setup_logging(log_file: Optional[str] = None, level: int = logging.INFO):
    """Configure logging for a command run; log_file receives the same records as stderr"""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.insert(0, logging.FileHandler(log_file, mode='w'))
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def write_metadata(out: Path, config: CliConfig, extra: Optional[Dict] = None):
    meta = config.metadata()
    if extra:
        meta.update(extra)
    with open(f"{out}.meta.json", 'w', encoding='utf-8') as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def _extract_task(task: Tuple[str, str]):
    """Worker entry point: returns (path, vector or None, error message or None)"""
    path, config_json = task
    try:
        extractor = CNLBPExtractor(DescriptorConfig.model_validate_json(config_json))
        return path, extractor.extract_file(path), None
    except Exception as e:
        return path, None, f"{type(e).__name__}: {str(e)}"


def extract_many(paths: List[str], descriptor: DescriptorConfig, workers: int) -> Iterable[Tuple[str, Optional[FeatureVector], Optional[str]]]:
    """Extract in input order; per-image failures come back as error strings"""
    tasks = [(p, descriptor.model_dump_json()) for p in paths]
    progress = dict(total=len(tasks), desc="Extracting", unit="img", disable=None)
    if workers <= 1 or len(tasks) <= 1:
        for task in tqdm(tasks, **progress):
            yield _extract_task(task)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for result in tqdm(pool.map(_extract_task, tasks), **progress):
            yield result


def collect_inputs(args) -> List[Tuple[str, Optional[str]]]:
    """(path, label) pairs from positional paths and/or a manifest"""
    inputs = [(p, None) for p in args.inputs]
    if args.manifest:
        manifest = load_manifest(args.manifest)
        inputs.extend((e.path, e.label) for e in manifest.entries)
    return inputs


def cmd_extract(args, config: CliConfig) -> int:
    out = Path(args.out)
    setup_logging(f"{out}.log")
    inputs = collect_inputs(args)
    labels = dict(inputs)

    try:
        stream = open(out, 'w', encoding='utf-8', newline='')
    except OSError as e:
        logger.error(f"Cannot write output {out}: {str(e)}")
        return 1

    failures = 0
    layout = None

    def records():
        nonlocal failures, layout
        for path, vector, error in extract_many([p for p, _ in inputs], config.descriptor, config.workers):
            if error is not None:
                failures += 1
                logger.error(f"Failed to extract {path}: {error}")
                continue
            if config.format == 'csv':
                if layout is None:
                    layout = vector.layout
                elif vector.layout != layout:
                    failures += 1
                    logger.error(f"Skipping {path}: band count differs from the first image in the batch")
                    continue
            yield ExtractionRecord(path=path, label=labels.get(path), vector=vector)

    with stream:
        writer = write_csv if config.format == 'csv' else write_jsonl
        written = writer(records(), config.digest, stream)

    write_metadata(out, config, {'images': len(inputs), 'written': written, 'failed': failures})
    logger.info(f"Wrote {written} feature vector(s) to {out} ({failures} failure(s))")
    return 0


def cmd_graph_stats(args, config: CliConfig) -> int:
    setup_logging()
    img = load_image(args.image)
    if args.resize:
        size = parse_size(args.resize)
        if size is not None:
            img = resize_bilinear(img, *size)
    if not 0 <= args.band < img.bands:
        logger.error(f"Band {args.band} out of range: image has {img.bands} band(s)")
        return 1

    params = config.descriptor.graph
    field = sobel_field(img)
    g = build_graph(img.band(args.band), field.band(args.band), params)
    k_in, k_out = degrees(g)

    lines = [f"nodes={g.node_count} edges={g.edge_count}"]
    for name, values in (('k_in', k_in), ('k_out', k_out)):
        lines.append(f"{name}: min={values.min()} max={values.max()} mean={values.mean():.4f}")

    margin = int(np.ceil(params.q))
    if img.height > 2 * margin and img.width > 2 * margin:
        interior = (slice(margin, img.height - margin), slice(margin, img.width - margin))
        for name, values in (('k_in', k_in), ('k_out', k_out)):
            inner = values.reshape(img.height, img.width)[interior]
            lines.append(f"interior {name}: min={inner.min()} max={inner.max()}")
    print('\n'.join(lines))

    if args.dump == '-':
        dump_edges(g, sys.stdout)
    elif args.dump:
        with open(args.dump, 'w', encoding='utf-8') as f:
            dump_edges(g, f)
        logger.info(f"Edge dump written to {args.dump}")
    return 0


def _write_plane_csv(path: Path, rows: Iterable[List]):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        for row in rows:
            writer.writerow(row)


def _scaled_gray(plane: np.ndarray) -> np.ndarray:
    lo, hi = float(plane.min()), float(plane.max())
    if hi == lo:
        return np.zeros(plane.shape, dtype=np.uint8)
    return np.round((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)


def cmd_maps(args, config: CliConfig) -> int:
    setup_logging()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    extractor = CNLBPExtractor(config.descriptor)
    img = extractor.prepare(load_image(args.image))
    families = compute_map_families(img, config.descriptor)

    written = 0
    for family, planes in families.items():
        for b, plane in enumerate(planes):
            stem = f"{family}_b{b}"
            if not cv2.imwrite(str(out / f"{stem}.pgm"), _scaled_gray(plane)):
                logger.error(f"Could not write {out / stem}.pgm")
                return 1
            _write_plane_csv(out / f"{stem}.csv", ([repr(v) for v in row] for row in plane.tolist()))
            for spec in config.descriptor.scales:
                codes = encode_image(plane, spec)
                _write_plane_csv(out / f"{stem}_P{spec.P}_R{spec.R:g}.codes.csv", codes.to_csv_rows())
            written += 1

    write_metadata(out / 'maps', config, {'image': str(args.image), 'planes': written})
    logger.info(f"Wrote {written} map plane(s) to {out}")
    return 0


def cmd_classify(args, config: CliConfig) -> int:
    out = Path(args.out)
    setup_logging(f"{out}.log")

    train_manifest = load_manifest(args.manifest)
    test_manifest = load_manifest(args.test_manifest) if args.test_manifest else None
    paths = list(dict.fromkeys(train_manifest.paths + (test_manifest.paths if test_manifest else [])))

    features: Dict[str, np.ndarray] = {}
    for path, vector, error in extract_many(paths, config.descriptor, config.workers):
        if error is not None:
            logger.error(f"Failed to extract {path}: {error}")
            continue
        features[path] = vector.values

    try:
        if test_manifest is not None or config.repeats == 1:
            report = evaluate(features, train_manifest, config.k, config.test_fraction,
                              config.seed, test_manifest).model_dump()
        else:
            report = evaluate_repeated(features, train_manifest, config.k, config.test_fraction,
                                       config.seed, config.repeats).model_dump()
    except ValueError as e:
        logger.error(f"Classification failed: {str(e)}")
        return 1

    report['config_digest'] = config.digest
    report['config'] = config.metadata()
    report['extraction_failures'] = len(paths) - len(features)
    with open(out, 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2, sort_keys=True)
    logger.info(f"Evaluation report written to {out}")
    return 0


def cmd_selftest(args, config: CliConfig) -> int:
    setup_logging(level=logging.WARNING)
    results = run_selftest()
    for result in results:
        status = 'PASS' if result.passed else 'FAIL'
        print(f"{status} {result.name}: {result.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def cmd_synth(args, config: CliConfig) -> int:
    setup_logging()
    size = parse_size(args.size)
    if size is None:
        logger.error("synth needs an explicit --size")
        return 1
    classes = [c.strip() for c in args.classes.split(',') if c.strip()]
    manifest = synth_textures(classes, args.per_class, size, config.seed, args.out, args.noise, args.bands)
    print(f"{len(manifest)} images, {len(manifest.classes)} classes -> {Path(args.out) / 'manifest.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="flat key=value config file (default: $CNLBP_CONFIG)")
    common.add_argument('--q', type=float, help="search radius")
    common.add_argument('--r', type=float, help="similarity threshold")
    common.add_argument('--s', type=float, help="gradient difference threshold")
    common.add_argument('--t', type=float, help="angle difference threshold (degrees)")
    common.add_argument('--L', type=int, help="maximum gray level")
    common.add_argument('--scales', help="P:R list, e.g. 8:1,16:2,24:3")
    common.add_argument('--families', help="comma-separated subset of TI,GI,CC,IDC,ODC,EC (default: all)")
    common.add_argument('--no-normalize', dest='normalize', action='store_const', const=False,
                        help="keep raw histogram counts")
    common.add_argument('--resize', help="WxH or none")
    common.add_argument('--ec-tol', dest='ec_tol', type=float)
    common.add_argument('--ec-max-iter', dest='ec_max_iter', type=int)
    common.add_argument('--ec-direction', dest='ec_direction', choices=['in', 'out'])
    common.add_argument('--workers', type=int)
    common.add_argument('--seed', type=int)

    parser = argparse.ArgumentParser(prog='cnlbp', description="CN-LBP texture descriptor toolkit")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('extract', parents=[common], help="compute feature vectors")
    p.add_argument('inputs', nargs='*', help="image files")
    p.add_argument('--manifest', help="path,label CSV of images")
    p.add_argument('--out', required=True)
    p.add_argument('--format', choices=['jsonl', 'csv'])

    p = sub.add_parser('graph-stats', parents=[common], help="pixel graph summary of one band")
    p.add_argument('image')
    p.add_argument('--band', type=int, default=0)
    p.add_argument('--dump', help="edge dump file, '-' for stdout")

    p = sub.add_parser('maps', parents=[common], help="export feature images and LBP code images")
    p.add_argument('image')
    p.add_argument('--out', required=True, help="output directory")

    p = sub.add_parser('classify', parents=[common], help="kNN evaluation on a manifest")
    p.add_argument('--manifest', required=True, help="training (or full) manifest")
    p.add_argument('--test-manifest', dest='test_manifest')
    p.add_argument('--test-fraction', dest='test_fraction', type=float)
    p.add_argument('--k', type=int)
    p.add_argument('--repeats', type=int)
    p.add_argument('--out', required=True, help="report JSON")

    sub.add_parser('selftest', parents=[common], help="run the oracle suite")

    p = sub.add_parser('synth', parents=[common], help="generate synthetic textures and a manifest")
    p.add_argument('--out', required=True, help="output directory")
    p.add_argument('--classes', default='hstripes,vstripes,checker,noise')
    p.add_argument('--per-class', dest='per_class', type=int, default=30)
    p.add_argument('--size', default='128x128')
    p.add_argument('--noise', type=int, default=10)
    p.add_argument('--bands', type=int, choices=[1, 3], default=1)
    return parser


COMMANDS = {
    'extract': cmd_extract,
    'graph-stats': cmd_graph_stats,
    'maps': cmd_maps,
    'classify': cmd_classify,
    'selftest': cmd_selftest,
    'synth': cmd_synth,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ('command', 'config')}
    if args.command == 'graph-stats':
        # graph-stats only resizes on request, never from the config file
        overrides.pop('resize', None)
    try:
        config = build_config(args.command, overrides, args.config)
    except SettingsError as e:
        print(f"Configuration error: {str(e)}", file=sys.stderr)
        return 2

    try:
        return COMMANDS[args.command](args, config)
    except Exception as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
