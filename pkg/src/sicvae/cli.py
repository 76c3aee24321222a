"""Command-line pipeline: synth, split, baseline, train, calibrate, adjust, verify, report.

Each subcommand reads its inputs from, and writes its outputs to, ``--out-dir``
under fixed file names, so the steps compose without hidden state. Every
artifact carries the hash of the resolved configuration and the seed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from .baseline import EmptyStratumError, badj_adjust, climatological_bias
from .data import (
    CubeFormatError,
    EmptySplitError,
    HindcastCube,
    Split,
    SplitSpec,
    SyntheticConfig,
    month_index,
    month_label,
    pairs_from_months,
    pairs_to_months,
    read_cube,
    synthetic_generate,
    temporal_split,
    write_cube,
)
from .grid import PolarGrid, make_land_mask
from .infer import DEFAULT_SCALES, calibrate_scale, generate_ensembles
from .model import CheckpointError, NetConfig, load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainingDivergedError, prepare_pairs, train, write_log
from .verify import MetricReport, ZeroVarianceError, compute_report

log = logging.getLogger("sicvae")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

FILES = {
    "hindcast": "hindcast.icecube",
    "obs": "obs.icecube",
    "split": "split.json",
    "badj": "badj.icecube",
    "model": "model.ckpt",
    "train_log": "train_log.csv",
    "calibration": "calibration.csv",
    "scale": "scale.json",
    "nadj": "nadj.icecube",
}


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


# ---------------------------------------------------------------- configuration


@dataclasses.dataclass
class GridSection:
    n_lat: int = 32
    n_lon: int = 64
    lat_start_deg: float = 50.0
    land_fraction: float = 0.1
    pole_hole_rows: int = 1
    land_seed: int = 0


@dataclasses.dataclass
class PeriodSection:
    first_init: str = "1980-01"
    last_init: str = "2020-12"
    obs_start: str = ""
    train_end: str = "2015-12"
    val_end: str = "2018-12"
    test_end: str = "2021-12"


@dataclasses.dataclass
class InferSection:
    members: int = 100
    scales: tuple = DEFAULT_SCALES
    calibration_members: int = 100
    rmse_tolerance: float = 0.05
    scale: float = 0.0  # 0 means "use the calibrated scale"
    seed: int = 0


SECTIONS = {
    "grid": GridSection,
    "period": PeriodSection,
    "synthetic": SyntheticConfig,
    "net": NetConfig,
    "train": TrainConfig,
    "infer": InferSection,
}


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"not a boolean: {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return tuple(kind(x) for x in re.split(r"[,\s]+", raw.strip()) if x)
    return raw.strip()


def _parse_month(text: str, what: str) -> int:
    m = re.fullmatch(r"(\d{4})-(\d{2})", text.strip())
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise ConfigError(f"{what}: expected YYYY-MM, got {text!r}")
    return month_index(int(m.group(1)), int(m.group(2)))


@dataclasses.dataclass
class Settings:
    grid: GridSection
    period: PeriodSection
    synthetic: SyntheticConfig
    net: NetConfig
    train: TrainConfig
    infer: InferSection
    seed: int

    def as_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        out["seed"] = self.seed
        return json.loads(json.dumps(out, default=list))

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}

    @property
    def provenance_line(self) -> str:
        return f"config_hash={self.config_hash} seed={self.seed}"

    def make_grid(self) -> PolarGrid:
        g = self.grid
        land = make_land_mask(g.n_lat, g.n_lon, g.land_fraction, g.pole_hole_rows, seed=g.land_seed)
        return PolarGrid(g.n_lat, g.n_lon, g.lat_start_deg, land_mask=land)

    def init_months(self) -> range:
        p = self.period
        first, last = _parse_month(p.first_init, "first_init"), _parse_month(p.last_init, "last_init")
        if last < first:
            raise ConfigError("last_init precedes first_init")
        return range(first, last + 1)

    def obs_start(self) -> int | None:
        return _parse_month(self.period.obs_start, "obs_start") if self.period.obs_start else None

    def split_spec(self) -> SplitSpec:
        p = self.period
        return SplitSpec(
            _parse_month(p.train_end, "train_end"), _parse_month(p.val_end, "val_end"), _parse_month(p.test_end, "test_end")
        )


def load_settings(path: str | None, args) -> Settings:
    parser = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    built = {}
    for name, cls in SECTIONS.items():
        defaults = {f.name: f.default for f in dataclasses.fields(cls)}
        values = dict(defaults)
        if parser.has_section(name):
            for key, raw in parser.items(name):
                if key not in defaults:
                    raise ConfigError(f"[{name}] unknown key {key!r}")
                try:
                    values[key] = _coerce(raw, defaults[key])
                except ValueError as exc:
                    raise ConfigError(f"[{name}] {key}: {exc}") from exc
        built[name] = values

    if args.grid:
        m = re.fullmatch(r"(\d+)x(\d+)", args.grid)
        if not m:
            raise ConfigError(f"--grid expects HxW, got {args.grid!r}")
        built["grid"]["n_lat"], built["grid"]["n_lon"] = int(m.group(1)), int(m.group(2))
    if args.members is not None:
        built["infer"]["members"] = args.members
    if args.scale is not None:
        built["infer"]["scale"] = args.scale
    if args.scales:
        try:
            built["infer"]["scales"] = tuple(float(x) for x in args.scales.split(",") if x)
        except ValueError as exc:
            raise ConfigError(f"--scales: {exc}") from exc
    seed = args.seed if args.seed is not None else built["synthetic"]["seed"]
    if args.seed is not None:
        built["synthetic"]["seed"] = seed
        built["train"]["seed"] = seed
        built["infer"]["seed"] = seed

    g = built["grid"]
    built["net"]["grid_shape"] = (2 * g["n_lat"], g["n_lon"] // 2)
    try:
        settings = Settings(
            grid=GridSection(**built["grid"]),
            period=PeriodSection(**built["period"]),
            synthetic=SyntheticConfig(**built["synthetic"]).validate(),
            net=NetConfig(**built["net"]),
            train=TrainConfig(**built["train"]),
            infer=InferSection(**built["infer"]),
            seed=seed,
        )
        if g["n_lon"] % 2:
            raise ValueError("grid n_lon must be even")
        if settings.infer.members < 1 or settings.infer.calibration_members < 2:
            raise ValueError("members must be >= 1 and calibration_members >= 2")
        if not settings.infer.scales or min(settings.infer.scales) <= 0:
            raise ValueError("scales must be a non-empty list of positive numbers")
        if settings.infer.scale < 0:
            raise ValueError("scale must be >= 0")
        settings.split_spec()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return settings


# ---------------------------------------------------------------- file helpers


def _out(args, key) -> Path:
    return Path(args.out_dir) / FILES[key]


def _need(path: Path) -> Path:
    if not path.is_file():
        raise DataError(f"missing input file {path}; run the producing subcommand first")
    return path


def _read_cube(path):
    return read_cube(_need(Path(path)))


def _write_json(path, payload, settings: Settings):
    path = Path(path)
    path.write_text(json.dumps({**payload, "provenance": settings.provenance}, indent=2, sort_keys=True))
    return path


def _read_json(path):
    return json.loads(_need(Path(path)).read_text())


def _load_split(args, hindcast) -> Split:
    d = _read_json(_out(args, "split"))
    parts = {k: pairs_from_months(d[k], hindcast.inits) for k in ("train", "val", "test")}
    return Split(dropped_no_obs=int(d.get("dropped_no_obs", 0)), **parts)


def _stamp(cube, settings: Settings, **meta):
    cube.meta = {**cube.meta, **settings.provenance, **meta}
    return cube


# ---------------------------------------------------------------- subcommands


def cmd_synth(args, settings: Settings):
    hc, ob, _ = synthetic_generate(settings.synthetic, settings.make_grid(), settings.init_months(), obs_start=settings.obs_start())
    write_cube(_stamp(hc, settings), _out(args, "hindcast"))
    write_cube(_stamp(ob, settings), _out(args, "obs"))
    log.info("wrote %d initializations on a %dx%d grid", len(hc.inits), *hc.grid.shape)


def cmd_split(args, settings: Settings):
    hc, ob = _read_cube(_out(args, "hindcast")), _read_cube(_out(args, "obs"))
    split = temporal_split(hc, ob, settings.split_spec())
    payload = {k: pairs_to_months(split[k], hc.inits).tolist() for k in ("train", "val", "test")}
    payload["dropped_no_obs"] = split.dropped_no_obs
    payload["counts"] = {k: len(split[k]) for k in ("train", "val", "test")}
    spec = settings.split_spec()
    payload["boundaries"] = {k: month_label(getattr(spec, k)) for k in ("train_end", "val_end", "test_end")}
    _write_json(_out(args, "split"), payload, settings)
    log.info("split sizes %s, dropped %d", payload["counts"], split.dropped_no_obs)


def cmd_baseline(args, settings: Settings):
    hc, ob = _read_cube(_out(args, "hindcast")), _read_cube(_out(args, "obs"))
    split = _load_split(args, hc)
    adj = badj_adjust(hc, climatological_bias(hc, ob, split.train))
    write_cube(_stamp(adj, settings), _out(args, "badj"))


def cmd_train(args, settings: Settings):
    hc, ob = _read_cube(_out(args, "hindcast")), _read_cube(_out(args, "obs"))
    split = _load_split(args, hc)
    result = train(
        prepare_pairs(hc, ob, split.train),
        prepare_pairs(hc, ob, split.val),
        settings.net,
        settings.train,
        progress=lambda row: log.info("epoch %d val_total %.5f", row["epoch"], row["val_total"]),
    )
    extra = {**settings.provenance, "best_epoch": result.best_epoch, "stopped_early": result.stopped_early}
    save_checkpoint(result.model, _out(args, "model"), extra)
    write_log(result.log, _out(args, "train_log"), settings.provenance_line)


def _load_model(args):
    try:
        model, _ = load_checkpoint(_need(_out(args, "model")))
    except CheckpointError as exc:
        raise DataError(str(exc)) from exc
    return model


def cmd_calibrate(args, settings: Settings):
    hc, ob = _read_cube(_out(args, "hindcast")), _read_cube(_out(args, "obs"))
    split = _load_split(args, hc)
    model = _load_model(args)
    inf = settings.infer
    res = calibrate_scale(
        model, hc, ob, split.val, inf.scales, n_members=inf.calibration_members, rmse_tolerance=inf.rmse_tolerance, seed=inf.seed
    )
    res.write_csv(_out(args, "calibration"), settings.provenance_line)
    _write_json(_out(args, "scale"), {"scale": res.scale, "candidates": list(inf.scales)}, settings)
    log.info("selected prior scale %s", res.scale)


def cmd_adjust(args, settings: Settings):
    hc = _read_cube(_out(args, "hindcast"))
    split = _load_split(args, hc)
    model = _load_model(args)
    scale = settings.infer.scale or float(_read_json(_out(args, "scale"))["scale"])
    cubes, _ = generate_ensembles(model, hc, split.test, settings.infer.members, (scale,), settings.infer.seed)
    write_cube(_stamp(cubes[scale], settings), _out(args, "nadj"))


def _verify_targets(args):
    if args.cube:
        return [Path(c) for c in args.cube]
    found = [_out(args, k) for k in ("badj", "nadj") if _out(args, k).is_file()]
    if not found:
        raise DataError("no cube to verify: pass --cube or run baseline/adjust first")
    return found


def cmd_verify(args, settings: Settings):
    ob = _read_cube(_out(args, "obs"))
    month_pairs = np.asarray(_read_json(_out(args, "split"))[args.part], dtype=np.int64).reshape(-1, 2)
    for path in _verify_targets(args):
        cube = _read_cube(path)
        if not isinstance(cube, HindcastCube):
            raise DataError(f"{path} is not an ensemble cube")
        try:
            pairs = pairs_from_months(month_pairs, cube.inits)
        except KeyError as exc:
            raise DataError(f"{path}: {exc}") from exc
        rep = compute_report(cube, ob, pairs, seed=settings.infer.seed)
        rep.meta = {"cube": path.name, "kind": cube.meta.get("kind", "unknown"), "part": args.part}
        rep.write(args.out_dir, f"verify_{path.stem}", settings.provenance_line)
        log.info("%s: mean |SOE-1| %.3f", path.name, rep.summary()["mean_abs_soe_minus_1"])


def _write_rows(path, fields, rows, provenance):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {provenance}\n")
        wr = csv.writer(fh)
        wr.writerow(fields)
        wr.writerows(rows)
    return path


def cmd_report(args, settings: Settings):
    out = Path(args.out_dir)
    names = args.products.split(",")
    reps = {}
    for name in names:
        if not (out / f"verify_{name}_metrics.csv").is_file():
            raise DataError(f"no verification report for {name!r}; run verify first")
        reps[name] = MetricReport.from_files(out, f"verify_{name}")
    leads = sorted(set.intersection(*(set(r.leads.tolist()) for r in reps.values())))
    prov = settings.provenance_line

    def col(name, field):
        r = reps[name]
        lookup = dict(zip(r.leads.tolist(), r.column(field)))
        return [lookup[lead] for lead in leads]

    written = []
    rows = []
    for name, r in reps.items():
        for lead in leads:
            cdf = np.asarray(r.rank_cdfs[lead])
            for k, v in enumerate(cdf):
                rows.append([name, lead, k / (len(cdf) - 1) if len(cdf) > 1 else 0.0, v])
    written.append(_write_rows(out / "fig1a_rank_cdf.csv", ["product", "lead", "normalized_rank", "cdf"], rows, prov))

    fields = ["lead"] + [f"soe_{n}" for n in names]
    rows = [[lead] + [col(n, "soe")[i] for n in names] for i, lead in enumerate(leads)]
    written.append(_write_rows(out / "fig1b_soe.csv", fields, rows, prov))

    rows = []
    for name, r in reps.items():
        for lead in leads:
            for ens_q, obs_q in np.asarray(r.qq[lead]):
                rows.append([name, lead, obs_q, ens_q])
    written.append(_write_rows(out / "fig1c_qq.csv", ["product", "lead", "obs_quantile", "ens_quantile"], rows, prov))

    panels = {
        "fig1d_rmse_spread.csv": ("rmse_grid", "spread"),
        "fig1e_sia_sie.csv": ("rmse_sia", "rmse_sie"),
        "fig1f_iiee.csv": ("mean_iiee", "pattern_corr"),
    }
    for fname, metrics in panels.items():
        fields = ["lead"] + [f"{m}_{n}" for m in metrics for n in names]
        rows = [[lead] + [col(n, m)[i] for m in metrics for n in names] for i, lead in enumerate(leads)]
        written.append(_write_rows(out / fname, fields, rows, prov))

    summary = {name: {k: v for k, v in r.summary().items() if k.startswith("mean_")} for name, r in reps.items()}
    _write_json(out / "report_summary.json", {"products": summary, "files": [p.name for p in written]}, settings)
    log.info("wrote %d figure data files", len(written))


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "adjust": cmd_adjust,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="seed for data, training and sampling")
    common.add_argument("--out-dir", default=".", help="directory holding all artifacts")
    common.add_argument("--grid", help="grid size HxW (latitudes x longitudes)")
    common.add_argument("--members", type=int, help="members per corrected forecast")
    common.add_argument("--scale", type=float, help="prior scale for adjust (overrides calibration)")
    common.add_argument("--scales", help="comma-separated candidate prior scales")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sicvae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "verify":
            p.add_argument("--cube", action="append", help="cube file to verify (repeatable)")
            p.add_argument("--part", default="test", choices=("train", "val", "test"))
        if name == "report":
            p.add_argument("--products", default="badj,nadj", help="comma-separated verified cube names")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        settings = load_settings(args.config, args)
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, settings)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CubeFormatError, EmptySplitError, EmptyStratumError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, ZeroVarianceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
