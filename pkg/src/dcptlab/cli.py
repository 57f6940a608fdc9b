"""Command-line entry point: data generation, training, evaluation, ablation, checks.

Exit codes: 0 success, 1 validation error, 2 I/O or format error,
3 numeric or check failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .degrade import GRIDS, JPEG, KINDS, DegradationSpec, apply
from .errors import ConfigError, ContractError, FormatError, NumericError, ParameterError
from .evaluation import JPEG_CONDITIONS, degradation_grid, write_report
from .gradcheck import DEFAULT_STEP, TOLERANCE, run_gradcheck
from .head import load_checkpoint, save_checkpoint
from .image import read_ppm, write_ppm
from .toyworld import DEFAULT_GENERATORS, extract_features, gen_dataset, load_dataset, write_dataset
from .training import DcptConfig, ablation_suite, train, write_epoch_log

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

MANIFEST_NAME = "manifest.json"
CHECKPOINT_NAME = "head.bin"
EPOCH_LOG_NAME = "epochs.csv"
REPORT_STEM = "grid"
ABLATION_STEM = "ablation"

# flag name -> DcptConfig field, for the train and ablate overrides
CONFIG_FLAGS = {
    "seed": "seed",
    "epochs": "epochs",
    "batch_size": "batch_size",
    "lr": "lr",
    "weight_decay": "weight_decay",
    "lambda_f": "lambda_f",
    "lambda_p": "lambda_p",
    "p_deg": "p_deg",
    "hidden_dim": "hidden_dim",
    "crop_size": "crop_size",
    "feat_point": "feat_consistency_point",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that code is reserved for I/O here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    started: str
    finished: str = ""
    artifacts: dict = field(default_factory=dict)
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        missing = [p for p in self.artifacts.values() if not (out_dir / p).exists()]
        if missing:
            raise FormatError(f"manifest lists missing artifacts: {', '.join(missing)}")
        path = out_dir / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_config(path, args) -> DcptConfig:
    """Defaults, then the JSON file, then any explicit flags."""
    values = {}
    if path is not None:
        try:
            values = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for flag, name in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    return DcptConfig.from_dict(values)


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file of config fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--lambda-f", type=float)
    p.add_argument("--lambda-p", type=float)
    p.add_argument("--p-deg", type=float)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--crop-size", type=int)
    p.add_argument("--feat-point", choices=("hidden", "backbone"))


def _load_data(path):
    root = Path(path)
    if not (root / "manifest.json").is_file():
        raise FileNotFoundError(f"no dataset manifest in {root}")
    return load_dataset(root)


def _echo(msg: str, quiet: bool = False):
    if not quiet:
        print(msg, flush=True)


# --- commands -----------------------------------------------------------


def cmd_gen_data(args) -> int:
    samples = gen_dataset(args.seed, args.n, args.generators, args.size)
    path = write_dataset(samples, _out_dir(args.out))
    _echo(f"wrote {len(samples)} images and {path}", args.quiet)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args)
    dataset = _load_data(args.data)
    out = _out_dir(args.out)
    manifest = RunManifest("train", cfg.to_dict(), cfg.seed, _now())
    _echo("config " + json.dumps(cfg.to_dict(), sort_keys=True), args.quiet)

    def report(e):
        _echo(f"epoch {e.epoch:3d}  total {e.total:.5f}  ce_clean {e.ce_clean:.5f}  "
              f"l_feat {e.l_feat:.5f}  l_pred {e.l_pred:.5f}  acc {e.train_acc:.4f}", args.quiet)

    result = train(cfg, dataset, extract_features, on_epoch=report)
    save_checkpoint(result.params, out / CHECKPOINT_NAME)
    write_epoch_log(result.log, out / EPOCH_LOG_NAME)
    manifest.artifacts = {"checkpoint": CHECKPOINT_NAME, "epoch_log": EPOCH_LOG_NAME}
    manifest.finished = _now()
    manifest.write(out)
    _echo(f"wrote {out / CHECKPOINT_NAME}", args.quiet)
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(args.checkpoint)
    dataset = _load_data(args.data)
    out = _out_dir(args.out)
    manifest = RunManifest("eval", {"checkpoint": str(args.checkpoint), "data": str(args.data)},
                           None, _now())
    try:
        report = degradation_grid(params, dataset, extract_features,
                                  meta={"checkpoint": Path(args.checkpoint).name})
    except ContractError as exc:
        raise FormatError(f"{args.checkpoint}: checkpoint does not match the extractor ({exc})") from None
    csv_path, json_path = write_report(report, out / REPORT_STEM)
    manifest.artifacts = {"report_csv": csv_path.name, "report_json": json_path.name}
    manifest.finished = _now()
    manifest.write(out)
    for c in report.conditions:
        _echo(f"{c:6s} acc {report.acc[c]:.4f}  auc {report.auc[c]:.4f}", args.quiet)
    _echo(f"degraded average acc {report.degraded_average:.4f}", args.quiet)
    return EXIT_OK


ABLATION_COLUMNS = ("variant", "lambda_f", "lambda_p", "p_deg", "seed", "Clean") + JPEG_CONDITIONS + ("jpeg_avg",)


def write_ablation(rows, out: Path) -> tuple[Path, Path]:
    csv_path, json_path = out / f"{ABLATION_STEM}.csv", out / f"{ABLATION_STEM}.json"
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in rows:
            acc = r.report.acc
            w.writerow([r.variant, repr(r.lambda_f), repr(r.lambda_p), repr(r.p_deg), r.seed]
                       + [repr(acc[c]) for c in ("Clean",) + JPEG_CONDITIONS] + [repr(r.jpeg_average)])
    payload = [{"variant": r.variant, "lambda_f": r.lambda_f, "lambda_p": r.lambda_p, "p_deg": r.p_deg,
                "seed": r.seed, "jpeg_avg": r.jpeg_average, "report": r.report.to_dict()} for r in rows]
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return csv_path, json_path


def cmd_ablate(args) -> int:
    cfg = _load_config(args.config, args)
    dataset = _load_data(args.data)
    if args.eval_data is None:
        print("warning: no --eval-data given; scoring on the training set", file=sys.stderr)
        eval_set = dataset
    else:
        eval_set = _load_data(args.eval_data)
    out = _out_dir(args.out)
    manifest = RunManifest("ablate", cfg.to_dict(), cfg.seed, _now())
    rows = ablation_suite(dataset, eval_set, extract_features, cfg)
    csv_path, json_path = write_ablation(rows, out)
    manifest.artifacts = {"ablation_csv": csv_path.name, "ablation_json": json_path.name}
    manifest.finished = _now()
    manifest.write(out)
    for r in rows:
        _echo(f"{r.variant:10s} lf {r.lambda_f:<4g} lp {r.lambda_p:<4g} clean {r.report.acc['Clean']:.4f}  "
              f"jpeg_avg {r.jpeg_average:.4f}", args.quiet)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.dim < 1 or args.hidden < 1 or args.configs < 1:
        raise ParameterError("--dim, --hidden and --configs must be >= 1")
    result = run_gradcheck(args.seed, args.dim, args.hidden, args.configs, h=args.step,
                           force_wrong=args.force_wrong)
    for name, err in result.per_combo.items():
        _echo(f"{name:16s} max rel err {err:.3e}", args.quiet)
    verdict = "PASS" if result.passed else "FAIL"
    print(f"{verdict} max relative error {result.max_error:.3e} over {result.n_configs} configs "
          f"(tolerance {TOLERANCE:g}, step {args.step:g})")
    return EXIT_OK if result.passed else EXIT_NUMERIC


def _parse_spec(kind: str, param: float, unsafe: bool) -> DegradationSpec:
    if kind == JPEG:
        if param != int(param):
            raise ParameterError(f"jpeg quality must be an integer, got {param:g}")
        param = int(param)
    spec = DegradationSpec(kind, param)
    if not unsafe and not spec.on_grid:
        legal = ", ".join(f"{v:g}" for v in GRIDS[kind])
        raise ParameterError(f"{kind} parameter {param:g} is off the grid {{{legal}}}; "
                             "pass --unsafe to allow it")
    return spec


def cmd_degrade(args) -> int:
    spec = _parse_spec(args.kind, args.param, args.unsafe)
    img = read_ppm(args.input)
    write_ppm(apply(spec, img), args.output)
    _echo(f"wrote {args.output} ({spec.label})", args.quiet)
    return EXIT_OK


# --- wiring -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dcptlab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-q", "--quiet", action="store_true", help="only print errors and verdicts")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic real/fake dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=2000, help="images per class")
    g.add_argument("--generators", type=int, default=DEFAULT_GENERATORS)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a head; writes checkpoint, epoch log, manifest")
    _add_config_flags(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on the degradation grid")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and score the four loss-component variants")
    _add_config_flags(a)
    a.add_argument("--data", required=True)
    a.add_argument("--eval-data", help="held-out dataset (defaults to --data)")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of the training gradient")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dim", type=int, default=8)
    c.add_argument("--hidden", type=int, default=4)
    c.add_argument("--configs", type=int, default=128)
    c.add_argument("--step", type=float, default=DEFAULT_STEP)
    c.add_argument("--force-wrong", action="store_true", help="perturb the analytic gradient (self-test)")
    c.set_defaults(func=cmd_gradcheck)

    d = sub.add_parser("degrade", help="apply one degradation to a PPM image")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", dest="output", required=True)
    d.add_argument("--kind", required=True, choices=KINDS)
    d.add_argument("--param", required=True, type=float)
    d.add_argument("--unsafe", action="store_true", help="allow parameters off the grid")
    d.set_defaults(func=cmd_degrade)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
