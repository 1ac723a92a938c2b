"""Command-line entry points: prepare, synth, train, eval, sweep, defaults.

Run configuration lives in an INI document with one section per config
object ([train], [mask], [encoder], [predictor]) plus [data] and [output].
Flags shadow config keys; the seed falls back to $CL4CTR_SEED when neither
the flag nor the file sets it.

A data directory holds train/val/test.cl4d and meta.json (field ranges).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .augment import MaskSpec
from .data import (DataError, SynthConfig, build_vocabulary, encode_rows, frequency_cdf, load_dataset,
                   read_delimited, save_dataset, split, synth_generate)
from .fi_encoder import EncoderConfig
from .metrics import DEFAULT_BOUNDARIES, evaluate_probas, frequency_bucket_logloss
from .models import CTRModel, PredictorConfig
from .trainer import TrainConfig, TrainingDiverged, train

log = logging.getLogger("cl4ctr")

SPLITS = ("train", "val", "test")
SEED_ENV = "CL4CTR_SEED"
GRID = (1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 0.0)
SWEEP_DEFAULTS = {
    "alpha_beta_grid": GRID,
    "mask_proportion": tuple(round(0.1 * i, 1) for i in range(1, 10)),
    "embedding_size": (16, 32, 48, 64),
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

_SECTIONS = {"train": TrainConfig, "mask": MaskSpec, "encoder": EncoderConfig, "predictor": PredictorConfig}
_NESTED = {"mask", "encoder", "predictor"}


def _scalar_fields(cls) -> dict[str, dataclasses.Field]:
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in _NESTED}


def _parse(raw: str, type_str: str):
    raw = raw.strip()
    if "None" in type_str and raw.lower() in ("none", ""):
        return None
    if type_str.startswith("bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if type_str.startswith("int"):
        return int(raw)
    if type_str.startswith("float"):
        return float(raw)
    if type_str.startswith("tuple"):
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    return raw


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_dir: str | None = None
    out_dir: str = "runs/default"

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["data"] = {"dir": _format(self.data_dir)}
        cp["output"] = {"dir": self.out_dir}
        objs = {"train": self.train, "mask": self.train.mask, "encoder": self.train.encoder,
                "predictor": self.train.predictor}
        for sec, obj in objs.items():
            cp[sec] = {k: _format(getattr(obj, k)) for k in _scalar_fields(type(obj))}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, overrides: dict[str, str] | None = None) -> "RunConfig":
        """Parse INI text plus ``section.key -> raw`` overrides.

        Every problem is collected and reported together.
        """
        cp = configparser.ConfigParser()
        cp.read_string(text)
        raw: dict[str, dict[str, str]] = {s: dict(cp[s]) for s in cp.sections()}
        for k, v in (overrides or {}).items():
            sec, _, key = k.partition(".")
            raw.setdefault(sec, {})[key] = v
        errors: list[str] = []
        known = set(_SECTIONS) | {"data", "output"}
        for sec in raw:
            if sec not in known:
                errors.append(f"unknown section [{sec}]")
        values: dict[str, dict] = {}
        for sec, dc in _SECTIONS.items():
            fields = _scalar_fields(dc)
            values[sec] = {}
            for key, rv in raw.get(sec, {}).items():
                if key not in fields:
                    errors.append(f"unknown key {sec}.{key}")
                    continue
                try:
                    values[sec][key] = _parse(rv, str(fields[key].type))
                except ValueError as exc:
                    errors.append(f"{sec}.{key}: {exc}")
        for sec, allowed in (("data", {"dir"}), ("output", {"dir"})):
            for key in raw.get(sec, {}):
                if key not in allowed:
                    errors.append(f"unknown key {sec}.{key}")
        if "seed" not in values["train"] and os.environ.get(SEED_ENV):
            try:
                values["train"]["seed"] = int(os.environ[SEED_ENV])
            except ValueError:
                errors.append(f"${SEED_ENV} is not an integer")
        cfg = None
        try:
            cfg = TrainConfig(mask=MaskSpec(**values["mask"]), encoder=EncoderConfig(**values["encoder"]),
                              predictor=PredictorConfig(**values["predictor"]), **values["train"])
            cfg.validate()
        except (TypeError, ValueError) as exc:
            errors.extend(str(exc).split("; "))
        if errors:
            raise ConfigError("\n".join(errors))
        data_dir = raw.get("data", {}).get("dir")
        if data_dir is not None and data_dir.lower() in ("", "none"):
            data_dir = None
        return cls(cfg, data_dir, raw.get("output", {}).get("dir", cls.out_dir))


# ---------------------------------------------------------------------------
# data directories
# ---------------------------------------------------------------------------

def write_data_dir(out: Path, parts, field_ranges, meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in zip(SPLITS, parts):
        save_dataset(ds, out / f"{name}.cl4d")
    doc = {**meta, "field_ranges": [list(r) for r in field_ranges],
           "num_features": int(field_ranges[-1][1]), "sizes": {n: len(d) for n, d in zip(SPLITS, parts)}}
    (out / "meta.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_meta(data_dir: str | Path) -> dict:
    path = Path(data_dir) / "meta.json"
    if not path.is_file():
        raise DataError(f"{path}: missing (not a prepared data directory)")
    meta = json.loads(path.read_text())
    meta["field_ranges"] = [tuple(r) for r in meta["field_ranges"]]
    return meta


def load_data_dir(data_dir: str | Path):
    meta = read_meta(data_dir)
    return meta, [load_dataset(Path(data_dir) / f"{n}.cl4d", meta["field_ranges"]) for n in SPLITS]


def _check_data_dir(data_dir: str | None) -> list[str]:
    if data_dir is None:
        return ["data.dir is not set (use --data or [data] dir)"]
    missing = [n for n in ("meta.json",) + tuple(f"{s}.cl4d" for s in SPLITS)
               if not (Path(data_dir) / n).is_file()]
    return [f"{data_dir}: missing {', '.join(missing)}"] if missing else []


def _ratios(text: str) -> tuple[float, float, float]:
    vals = tuple(float(v) for v in text.split(","))
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated ratios")
    return vals


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    schema, rows = read_delimited(args.input, args.delimiter, args.label)
    vocab = build_vocabulary(rows, schema, args.min_count)
    ds = encode_rows(rows, vocab)
    parts = split(ds, args.ratios, seed=_seed(args.seed))
    out = Path(args.out)
    write_data_dir(out, parts, vocab.field_ranges,
                   {"source": Path(args.input).name, "fields": list(schema.fields), "min_count": args.min_count})
    vocab.save(out / "vocab.json")
    frequency_cdf(vocab).to_csv(out / "cdf.csv")
    print(f"F={schema.num_fields} M={vocab.num_features}")
    print("field sizes: " + " ".join(f"{n}={s}" for n, s in zip(schema.fields, vocab.field_sizes)))
    print("splits: " + " ".join(f"{n}={len(d)}" for n, d in zip(SPLITS, parts)))
    return 0


def cmd_synth(args) -> int:
    seed = _seed(args.seed)
    cfg = SynthConfig(num_fields=args.fields, features_per_field=args.features, zipf_exponent=args.zipf,
                      num_instances=args.instances, rank=args.rank, weight_scale=args.weight_scale,
                      noise=args.noise, seed=seed)
    sd = synth_generate(cfg)
    parts = split(sd.data, args.ratios, seed=seed)
    write_data_dir(Path(args.out), parts, sd.field_ranges, {"synth": dataclasses.asdict(cfg)})
    print(f"F={cfg.num_fields} M={sd.num_features} " + " ".join(f"{n}={len(d)}" for n, d in zip(SPLITS, parts)))
    return 0


def _seed(flag: int | None) -> int:
    if flag is not None:
        return flag
    return int(os.environ.get(SEED_ENV, 0))


_FLAG_KEYS = {
    "alpha": "train.alpha", "beta": "train.beta", "lr": "train.lr", "epochs": "train.max_epochs",
    "batch_size": "train.batch_size", "embed_dim": "train.embed_dim", "seed": "train.seed",
    "init_std": "train.init_std", "model": "predictor.kind", "encoder": "encoder.kind",
    "layers": "encoder.layers", "mask": "mask.method", "p": "mask.p",
}


def _checked_run_config(args) -> RunConfig:
    """Parsed config plus data-directory checks; all problems raised together."""
    errors: list[str] = []
    rc = None
    try:
        rc = _run_config(args)
        data_dir = rc.data_dir
    except ConfigError as exc:
        errors.extend(str(exc).splitlines())
        data_dir = getattr(args, "data", None)
    errors.extend(_check_data_dir(data_dir))
    if errors:
        raise ConfigError("\n".join(errors))
    return rc


def _run_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    overrides = {}
    for name, key in _FLAG_KEYS.items():
        v = getattr(args, name, None)
        if v is not None:
            overrides[key] = str(v)
    for item in getattr(args, "set", None) or []:
        k, sep, v = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        overrides[k.strip()] = v
    if getattr(args, "data", None):
        overrides["data.dir"] = args.data
    if getattr(args, "out", None):
        overrides["output.dir"] = args.out
    return RunConfig.from_ini(text, overrides)


def run_training(cfg: TrainConfig, data_dir: str, out_dir: str | None = None):
    """Train on a prepared data directory; optionally write report + checkpoint."""
    _, (tr, va, te) = load_data_dir(data_dir)
    res = train(cfg, tr, va, te)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "model.cl4"
        res.model.save(ckpt, extra={"seed": cfg.seed})
        res.report.checkpoint = str(ckpt)
        (out / "report.json").write_text(res.report.to_json() + "\n")
    return res


def cmd_train(args) -> int:
    try:
        rc = _checked_run_config(args)
    except ConfigError as exc:
        print("invalid configuration:\n" + str(exc), file=sys.stderr)
        return 2
    try:
        res = run_training(rc.train, rc.data_dir, rc.out_dir)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    r = res.report
    print(f"best epoch {r.best_epoch}/{r.stop_epoch} test AUC {r.test_auc} test Logloss {r.test_logloss}")
    if r.ssl_frozen:
        print("frozen SSL terms: " + ", ".join(r.ssl_frozen))
    print(Path(rc.out_dir) / "report.json")
    return 0


def _boundaries(text: str) -> tuple[float, ...]:
    return tuple(math.inf if v.strip().lower() in ("inf", "infinity") else float(v) for v in text.split(","))


def cmd_eval(args) -> int:
    model = CTRModel.load(args.checkpoint)
    data_path = Path(args.data)
    data_dir = Path(args.data_dir) if args.data_dir else data_path.parent
    meta = read_meta(data_dir)
    ranges = meta["field_ranges"]
    if list(model.table.field_ranges) != list(ranges):
        print(f"checkpoint has {model.table.num_features} features over {model.table.num_fields} fields; "
              f"data has {ranges[-1][1]} over {len(ranges)}", file=sys.stderr)
        return 2
    ds = load_dataset(data_path, ranges)
    counts = load_dataset(args.train or data_dir / "train.cl4d", ranges).feature_counts(ranges[-1][1])
    baseline = CTRModel.load(args.baseline) if args.baseline else None
    probas = model.predict(ds.X)
    res = evaluate_probas(probas, ds.y)
    buckets = frequency_bucket_logloss(probas, ds, counts, _boundaries(args.boundaries),
                                       baseline=None if baseline is None else baseline.predict(ds.X),
                                       statistic=args.statistic)
    doc = {"eval": res.to_dict(), "buckets": json.loads(buckets.to_json())}
    if res.auc is None:
        doc["eval"]["note"] = "AUC undefined: single-class labels"
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(text + "\n")
        buckets.to_csv(out / "buckets.csv")
    print(text)
    return 0


# -- sweeps -------------------------------------------------------------------

def sweep_cells(axis: str, values) -> list[tuple]:
    if axis == "alpha_beta_grid":
        return [(float(a), float(b)) for a, b in itertools.product(values, values)]
    if axis == "mask_proportion":
        return [(float(p),) for p in values]
    if axis == "embedding_size":
        return [(int(d),) for d in values]
    raise ValueError(f"unknown sweep axis {axis!r}")


def cell_config(base: TrainConfig, axis: str, cell: tuple) -> TrainConfig:
    d = base.to_dict()
    if axis == "alpha_beta_grid":
        d["alpha"], d["beta"] = cell
    elif axis == "mask_proportion":
        d["mask"]["p"] = cell[0]
    else:
        d["embed_dim"] = cell[0]
    return TrainConfig.from_dict(d)


def _run_cell(job):
    axis, cell, base_dict, data_dir = job
    row = {"setting": " ".join(repr(v) for v in cell)}
    try:
        res = run_training(cell_config(TrainConfig.from_dict(base_dict), axis, cell), data_dir)
        best = res.report.epochs[res.report.best_epoch - 1]
        row.update(val_auc=best["val_auc"], val_logloss=best["val_logloss"],
                   test_auc=res.report.test_auc, test_logloss=res.report.test_logloss, status="ok")
    except Exception as exc:          # a failed cell is recorded, the sweep goes on
        row.update(val_auc="", val_logloss="", test_auc="", test_logloss="",
                   status=f"error: {type(exc).__name__}: {exc}")
    return cell, row


SWEEP_COLUMNS = ("setting", "val_auc", "val_logloss", "test_auc", "test_logloss", "status")


def run_sweep(axis: str, values, base: TrainConfig, data_dir: str, jobs: int = 1) -> list[dict]:
    cells = sweep_cells(axis, values)
    jobs_in = [(axis, c, base.to_dict(), data_dir) for c in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, jobs_in))
    else:
        results = [_run_cell(j) for j in jobs_in]
    return [row for _, row in sorted(results, key=lambda cr: cr[0])]


def write_sweep_csv(rows: list[dict], path: str | Path | None) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    finally:
        if path:
            fh.close()


def cmd_sweep(args) -> int:
    problems = []
    rc = None
    try:
        rc = _checked_run_config(args)
    except ConfigError as exc:
        problems.extend(str(exc).splitlines())
    values = (tuple(float(v) for v in args.values.split(",")) if args.values
              else SWEEP_DEFAULTS[args.axis])
    if len(values) < 2:
        problems.append("a sweep needs at least 2 values")
    if problems:
        print("invalid configuration:\n" + "\n".join(problems), file=sys.stderr)
        return 2
    rows = run_sweep(args.axis, values, rc.train, rc.data_dir, args.jobs)
    write_sweep_csv(rows, args.csv)
    failed = sum(r["status"] != "ok" for r in rows)
    if failed:
        print(f"{failed} of {len(rows)} cells failed", file=sys.stderr)
    return 0


def cmd_defaults(args) -> int:
    sys.stdout.write(RunConfig().to_ini())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--data", help="prepared data directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--init-std", type=float)
    p.add_argument("--model", choices=("lr", "fm", "fwfm", "fmdnn"))
    p.add_argument("--encoder", choices=("transformer", "dnn", "crossnet"))
    p.add_argument("--layers", type=int)
    p.add_argument("--mask", choices=("random", "feature", "dimension"))
    p.add_argument("--p", type=float, help="mask proportion")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cl4ctr", description="Contrastive regularization for CTR models")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="encode a delimited file into a data directory")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--delimiter")
    p.add_argument("--label", default="label")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--ratios", type=_ratios, default=(0.7, 0.2, 0.1))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a synthetic long-tail data directory")
    p.add_argument("--out", required=True)
    p.add_argument("--fields", type=int, default=6)
    p.add_argument("--features", type=int, default=500)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--instances", type=int, default=200_000)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--weight-scale", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    _run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with frequency buckets")
    p.add_argument("checkpoint")
    p.add_argument("data", help="a .cl4d file")
    p.add_argument("--data-dir", help="directory with meta.json (default: the file's directory)")
    p.add_argument("--train", help="training split used for feature counts")
    p.add_argument("--baseline", help="baseline checkpoint for delta Logloss")
    p.add_argument("--boundaries", default=",".join(_format(b) for b in DEFAULT_BOUNDARIES))
    p.add_argument("--statistic", choices=("min", "mean"), default="min")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="one training run per setting, CSV out")
    _run_flags(p)
    p.add_argument("--axis", required=True, choices=tuple(SWEEP_DEFAULTS))
    p.add_argument("--values", help="comma-separated values (default: the standard grid)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("defaults", help="print the default run configuration")
    p.set_defaults(func=cmd_defaults)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (DataError, ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
