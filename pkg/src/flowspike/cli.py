"""Command-line entry point: ingest, featurize, synth, train, eval,
gradcheck.  Every subcommand is a thin wrapper over the library and exits
nonzero with a one-line diagnostic on any failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset, gradcheck, labels, metrics, pcap, snn, synth, training
from .config import ConfigError, RunConfig, build_config
from .features import build_histogram, windowize
from .rng import derive_rng

FLOW_INDEX_NAME = "flow_index.csv"
FLOW_INDEX_HEADER = ["packet_csv", "flow_id", "label", "n_packets"]
SPLIT_FILE_HEADER = ["path", "partition"]


class CliError(RuntimeError):
    pass


def _write_flow_index(out_dir: Path, rows: list[list[object]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FLOW_INDEX_HEADER)
    writer.writerows(rows)
    (out_dir / FLOW_INDEX_NAME).write_text(buf.getvalue())


def _read_flow_index(data_dir: Path) -> list[tuple[str, str, int]]:
    path = data_dir / FLOW_INDEX_NAME
    if not path.exists():
        raise CliError(f"no {FLOW_INDEX_NAME} in {data_dir}")
    rows = list(csv.reader(io.StringIO(path.read_text())))
    if not rows or rows[0] != FLOW_INDEX_HEADER:
        raise CliError(f"{FLOW_INDEX_NAME} header must be {','.join(FLOW_INDEX_HEADER)}")
    return [(r[0], r[1], int(r[2])) for r in rows[1:] if r]


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows, flow_labels, class_names = synth.standard_suite(
        cfg.seed, cfg.flows_per_class
    )
    index_rows: list[list[object]] = []
    per_class_flows: dict[int, list[pcap.Flow]] = {}
    for flow, label in zip(flows, flow_labels):
        per_class_flows.setdefault(label, []).append(flow)
    for label, class_flows in sorted(per_class_flows.items()):
        csv_name = f"{class_names[label]}.packets.csv"
        (out_dir / csv_name).write_text(pcap.write_packet_csv(class_flows))
        for flow in class_flows:
            index_rows.append([csv_name, flow.flow_id, label, len(flow.packets)])
    _write_flow_index(out_dir, index_rows)
    dataset.write_label_names(out_dir, class_names)
    print(f"wrote {len(flows)} flows over {len(class_names)} classes to {out_dir}")
    return 0


def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    manifest = labels.read_manifest_file(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = [Path(p) for p in args.inputs]
    for path in inputs:
        if not path.exists():
            raise CliError(f"input not found: {path}")
        if path.name not in manifest:
            raise CliError(f"{path.name} has no manifest entry")

    def ingest_one(path: Path) -> tuple[str, list[pcap.Flow], pcap.IngestStats | None]:
        if path.suffix.lower() == ".csv":
            flows = pcap.read_packet_csv(path.read_text())
            stats = None
        else:
            with open(path, "rb") as fh:
                flows, stats = pcap.flows_from_pcap(fh)
        stem = path.stem
        for flow in flows:
            flow.flow_id = f"{stem}/{flow.flow_id}"
        return stem, flows, stats

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        results = list(pool.map(ingest_one, inputs))

    index_rows: list[list[object]] = []
    total_flows = 0
    for path, (stem, flows, stats) in zip(inputs, results):
        label = manifest[path.name].index
        csv_name = f"{stem}.packets.csv"
        (out_dir / csv_name).write_text(pcap.write_packet_csv(flows))
        for flow in flows:
            index_rows.append([csv_name, flow.flow_id, label, len(flow.packets)])
        total_flows += len(flows)
        if stats is not None and stats.total:
            print(f"{path.name}: skipped {stats.total} non-flow frames ({stats})")
    _write_flow_index(out_dir, index_rows)
    dataset.write_label_names(out_dir, labels.LABEL_NAMES)
    print(f"wrote {total_flows} flows from {len(inputs)} captures to {out_dir}")
    return 0


def cmd_featurize(args: argparse.Namespace, cfg: RunConfig) -> int:
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = _read_flow_index(data_dir)
    hist_cfg = cfg.histogram
    label_by_flow = {flow_id: label for _, flow_id, label in index}
    csv_names = sorted({csv_name for csv_name, _, _ in index})

    def featurize_file(csv_name: str):
        flows = pcap.read_packet_csv((data_dir / csv_name).read_text())
        out = []
        for flow in flows:
            if flow.flow_id not in label_by_flow:
                raise CliError(f"{csv_name}: flow {flow.flow_id} missing from index")
            label = label_by_flow[flow.flow_id]
            for window in windowize(flow, hist_cfg):
                hist = build_histogram(window, hist_cfg)
                hist.label = label
                out.append((hist, flow.flow_id, window.t0))
        return out

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        per_file = list(pool.map(featurize_file, csv_names))

    triples = [t for chunk in per_file for t in chunk]
    if not triples:
        raise CliError("no non-empty windows produced")
    names = dataset.read_label_names(data_dir)
    dataset.save_dataset(out_dir, triples, names)
    print(f"wrote {len(triples)} histograms to {out_dir}")
    return 0


def _write_split_file(path: Path, split_map: dict[str, str]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SPLIT_FILE_HEADER)
    for sample_path in split_map:
        writer.writerow([sample_path, split_map[sample_path]])
    path.write_text(buf.getvalue())


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples, _names = dataset.load_samples(data_dir)
    if not samples:
        raise CliError(f"dataset {data_dir} is empty")
    refs = dataset.read_index(data_dir)
    split = training.split_dataset(samples, cfg.seed)
    n_classes = max(s.label for s in samples) + 1
    n_inputs = samples[0].shape[0]
    model = snn.SnnModel.initialize(
        n_inputs,
        cfg.hidden_size,
        n_classes,
        derive_rng(cfg.seed, "init"),
        beta_init=cfg.beta_init,
        weight_gain=cfg.weight_gain,
        surrogate_slope=cfg.surrogate_slope,
        mode=cfg.mode,
    )
    result = training.fit(model, split, cfg.train)
    snn.save_model(result.model, out_dir / "checkpoint.snn")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(training.EPOCH_LOG_HEADER)
    for row in result.history:
        writer.writerow(
            [
                row.epoch,
                f"{row.train_loss:.6f}",
                f"{row.val_loss:.6f}",
                f"{row.val_acc:.6f}",
                f"{row.lr:.8g}",
                f"{row.beta_hidden:.6f}",
                f"{row.beta_readout:.6f}",
            ]
        )
        print(
            f"epoch {row.epoch:3d}  train {row.train_loss:.4f}  "
            f"val {row.val_loss:.4f}  acc {row.val_acc:.4f}  lr {row.lr:.2g}  "
            f"beta_h {row.beta_hidden:.3f}"
        )
    (out_dir / "epochs.csv").write_text(buf.getvalue())

    id_to_part: dict[int, str] = {}
    for part_name, part in zip(
        training.PARTITION_NAMES, (split.train, split.val, split.test)
    ):
        for s in part:
            id_to_part[id(s)] = part_name
    split_map = {ref.path: id_to_part[id(sample)] for ref, sample in zip(refs, samples)}
    _write_split_file(out_dir / "split.csv", split_map)
    print(f"checkpoint and logs written to {out_dir}")
    return 0


_ABLATIONS = {"none", "rowshuffle", "colshuffle", "betazero"}


def _make_ablation(name: str, seed: int) -> training.Ablation:
    if name == "none":
        return None
    if name == "rowshuffle":
        return training.RowShuffle(seed)
    if name == "colshuffle":
        return training.ColumnShuffle(seed)
    if name == "betazero":
        return training.BetaZero()
    raise CliError(f"unknown ablation {name!r}")


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    model = snn.load_model(args.checkpoint)
    data_dir = Path(args.data)
    samples, names = dataset.load_samples(data_dir)
    if args.split:
        rows = list(csv.reader(io.StringIO(Path(args.split).read_text())))
        if not rows or rows[0] != SPLIT_FILE_HEADER:
            raise CliError(f"split file header must be {','.join(SPLIT_FILE_HEADER)}")
        keep = {r[0] for r in rows[1:] if r and r[1] == args.partition}
        refs = dataset.read_index(data_dir)
        samples = [s for ref, s in zip(refs, samples) if ref.path in keep]
    if not samples:
        raise CliError("no samples to evaluate")
    if names is None or len(names) < model.n_outputs:
        names = [f"class_{i}" for i in range(model.n_outputs)]
    report = training.evaluate(
        model,
        samples,
        _make_ablation(args.ablation, cfg.seed),
        class_names=names[: model.n_outputs],
        log1p=cfg.log1p_input,
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for stem, text in metrics.report_tables(report).items():
        (out_dir / f"{stem}.csv").write_text(text)
    (out_dir / "report.txt").write_text(metrics.human_report(report))
    overall = metrics.multiclass_accuracy(report.confusion)
    print(
        f"evaluated {report.n_samples} samples (ablation={args.ablation}): "
        f"accuracy {100.0 * overall:.2f}%"
    )
    return 0


def cmd_gradcheck(args: argparse.Namespace, cfg: RunConfig) -> int:
    results = gradcheck.run_gradcheck(args.instances, base_seed=cfg.seed)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: max rel err {r.max_rel_err:.3e} (tol {r.tolerance:g})")
        failures += 0 if r.passed else 1
    if failures:
        print(f"{failures}/{len(results)} gradient checks failed")
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowspike",
        description="Flow histograms + a spiking network for traffic classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--seed", type=int, help="root random seed (mandatory)")
        p.add_argument("--threads", type=int, help="worker thread cap")

    p = sub.add_parser("synth", help="generate the synthetic 4-class dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--flows-per-class", type=int, dest="flows_per_class")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="pcap/CSV captures -> packet CSVs + flow index")
    common(p)
    p.add_argument("inputs", nargs="+", help="capture files (.pcap or packet .csv)")
    p.add_argument("--manifest", required=True, help="capture_file,traffic_class,encryption CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="packet CSVs -> FH01 histogram dataset")
    common(p)
    p.add_argument("--data", required=True, help="ingest/synth output directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train on a histogram dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally ablated")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", help="split.csv from train; restricts evaluation")
    p.add_argument("--partition", default="test", choices=training.PARTITION_NAMES)
    p.add_argument("--ablation", default="none", choices=sorted(_ABLATIONS))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    return parser


_OVERRIDE_KEYS = ("seed", "threads", "flows_per_class", "epochs", "batch_size")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {
            key: getattr(args, key)
            for key in _OVERRIDE_KEYS
            if getattr(args, key, None) is not None
        }
        cfg = build_config(args.config, overrides)
        return args.func(args, cfg)
    except (
        CliError,
        ConfigError,
        OSError,
        dataset.DatasetError,
        labels.ManifestError,
        pcap.PcapError,
        pcap.RowError,
        snn.CheckpointError,
        training.EmptyClass,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
