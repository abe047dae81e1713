"""Command-line front end: synth, train, evaluate, explain, subgroup, compare, systems.

Every command writes its artifacts under ``--out`` together with a
``manifest.json`` (inputs, config hash, seed, sha256 of every artifact).
Configuration comes from an optional JSON document (``--config``); flags win
over file values.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from . import __version__
from .cohort import Wave, apply_exclusions, load_wave, pair_waves
from .errors import AgeVelocityError, AlignmentError, ConfigError
from .evaluation import (
    STRATIFIERS,
    TEST_WAVE,
    TRAIN_WAVE,
    ba_delta,
    extreme_agers,
    format_reports,
    r2,
    reports_to_nested,
    rmse,
    subgroup_eval,
    system_analysis,
    temporal_evaluate,
)
from .explain import shap_values, summarize
from .features import SLOPE_POLICIES, build_temporal_design, load_system_map
from .models import MODEL_TYPES, ModelSpec, load_model, save_model
from .synthgen import SynthConfig, default_config_dict, write_cohort

log = logging.getLogger("agevelocity")

COMMANDS = ("synth", "train", "evaluate", "explain", "subgroup", "compare", "systems")
SEX_CHOICES = ("F", "M", "both")
# keys that locate files rather than change results; left out of the config hash
PATH_KEYS = ("wave1", "wave2", "out", "model_path", "system_map", "synth_config")


@dataclass
class RunConfig:
    wave1: str | None = None
    wave2: str | None = None
    out: str = "out"
    model: str = "gbm"
    params: dict = field(default_factory=dict)  # {"gbm": {...}, "rf": {...}, "enet": {...}}
    slope_columns: list | None = None
    slope_policy: str = "median"
    stratifier: str = "age"
    seed: int = 7
    system_map: str | None = None
    sex: str = "both"
    exclude: list = field(default_factory=list)
    model_path: str | None = None
    decile: float = 0.1
    n_permutations: int = 10_000
    explain_wave: int = 1
    synth: dict = field(default_factory=dict)  # overrides applied to the default synthetic config
    synth_config: str | None = None  # or a full synthetic config file

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**doc)

    def validate(self, command: str) -> None:
        if self.model not in MODEL_TYPES:
            raise ConfigError(f"model must be one of {MODEL_TYPES}")
        if self.slope_policy not in SLOPE_POLICIES:
            raise ConfigError(f"slope_policy must be one of {SLOPE_POLICIES}")
        if self.sex not in SEX_CHOICES:
            raise ConfigError(f"sex must be one of {SEX_CHOICES}")
        if self.stratifier not in STRATIFIERS:
            raise ConfigError(f"stratifier must be one of {sorted(STRATIFIERS)}")
        if not 0 < self.decile < 0.5:
            raise ConfigError("decile must be in (0, 0.5)")
        if self.explain_wave not in (1, 2):
            raise ConfigError("explain_wave must be 1 or 2")
        unknown = sorted(set(self.params) - set(MODEL_TYPES))
        if unknown:
            raise ConfigError(f"params has unknown model keys {unknown}")
        if command != "synth":
            for key in ("wave1", "wave2"):
                value = getattr(self, key)
                if value is None:
                    raise ConfigError(f"--{key} is required for {command}")
                if not Path(value).is_file():
                    raise ConfigError(f"{key} file not found: {value}")
        if command in ("evaluate", "explain"):
            if self.model_path is None:
                raise ConfigError(f"--model-path is required for {command}")
            if not Path(self.model_path).exists():
                raise ConfigError(f"model path not found: {self.model_path}")
        for key in ("system_map", "synth_config"):
            value = getattr(self, key)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"{key} file not found: {value}")

    @property
    def sexes(self) -> tuple:
        return ("F", "M") if self.sex == "both" else (self.sex,)

    def config_hash(self) -> str:
        doc = {k: v for k, v in dataclasses.asdict(self).items() if k not in PATH_KEYS}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def spec(self, kind: str | None = None) -> ModelSpec:
        kind = kind or self.model
        return ModelSpec(kind, dict(self.params.get(kind, {}))).with_seed(substream(self.seed, kind))


def substream(seed: int, name: str) -> int:
    """Named 63-bit seed derived from the top-level seed."""
    digest = hashlib.blake2b(f"{seed}/{name}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, command: str, out: Path, artifacts: dict, inputs: dict) -> Path:
    doc = {
        "tool": "agevelocity",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "config": dataclasses.asdict(cfg),
        "inputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in sorted(inputs.items())},
        "artifacts": {k: sha256_file(p) for k, p in sorted(artifacts.items())},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, frame: pd.DataFrame, index=False) -> Path:
    frame.to_csv(path, index=index, float_format="%.17g", lineterminator="\n")
    return path


# --------------------------------------------------------------------------
# shared steps
# --------------------------------------------------------------------------


def load_design(cfg: RunConfig):
    """Read both waves, pair, exclude and build the temporal feature design."""
    meta = load_system_map(cfg.system_map)
    w1 = load_wave(cfg.wave1, Wave.WAVE1)
    w2 = load_wave(cfg.wave2, Wave.WAVE2)
    cohort = pair_waves(w1, w2)
    if cfg.exclude:
        cohort = apply_exclusions(cohort, cfg.exclude)
    for key in ("dropped_wave1_only", "dropped_wave2_only"):
        if cohort.log.get(key):
            log.warning("%s: %d ids", key, len(cohort.log[key]))
    design = build_temporal_design(cohort, cfg.slope_columns, cfg.slope_policy, meta)
    train, test = design.train, design.test
    if cfg.sex != "both":
        train, test = train.for_sex(cfg.sex), test.for_sex(cfg.sex)
    return cohort, design, train, test


def _inputs(cfg: RunConfig) -> dict:
    return {"wave1": cfg.wave1, "wave2": cfg.wave2}


def load_models(cfg: RunConfig, names) -> dict:
    """sex -> model from a train output directory or a single model file."""
    path = Path(cfg.model_path)
    if path.is_dir():
        models = {}
        for sex in cfg.sexes:
            f = path / f"model_{sex}.json"
            if not f.is_file():
                raise ConfigError(f"no model for sex {sex} in {path}")
            models[sex] = load_model(f)
    else:
        if cfg.sex == "both":
            raise ConfigError("a single model file needs --sex F or --sex M")
        models = {cfg.sex: load_model(path)}
    for sex, m in models.items():
        if list(m.feature_names) != list(names):
            extra = sorted(set(names) - set(m.feature_names))
            missing = sorted(set(m.feature_names) - set(names))
            raise AlignmentError(
                f"model for sex {sex} was fit on a different feature schema (missing={missing}, unexpected={extra})"
            )
    return models


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig) -> dict:
    if cfg.synth_config:
        doc = json.loads(Path(cfg.synth_config).read_text())
    else:
        doc = default_config_dict()
    doc.update(cfg.synth)
    doc["seed"] = cfg.seed
    synth = SynthConfig.from_dict(doc)
    out = Path(cfg.out)
    paths = write_cohort(out, synth)
    inputs = {"synth_config": cfg.synth_config} if cfg.synth_config else {}
    write_manifest(cfg, "synth", out, paths, inputs)
    return paths


def cmd_train(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, design, train, test = load_design(cfg)
    spec = cfg.spec()
    artifacts = {}
    reports = []
    for sex in cfg.sexes:
        tr = train.for_sex(sex)
        if len(tr) == 0:
            raise ConfigError(f"no participants of sex {sex}")
        model = spec.fit(tr, tr.target)
        artifacts[f"model_{sex}"] = out / f"model_{sex}.json"
        save_model(model, artifacts[f"model_{sex}"])
        pred = model.predict(tr)
        reports.append({"sex": sex, "wave": TRAIN_WAVE, "r2": r2(tr.target, pred), "rmse": rmse(tr.target, pred), "n": len(tr)})
    doc = {cfg.model: {r["sex"]: {r["wave"]: {k: r[k] for k in ("r2", "rmse", "n")}} for r in reports}}
    artifacts["train_report"] = _write_json(out / "train_report.json", doc)
    for name, matrix in (("features_wave1", train), ("features_wave2", test)):
        artifacts[name] = out / f"{name}.csv"
        matrix.to_csv(artifacts[name])
        artifacts[name + "_meta"] = artifacts[name].with_suffix(".json")
    write_manifest(cfg, "train", out, artifacts, _inputs(cfg))
    return artifacts


def _evaluate_models(cfg, train, test, models):
    res = temporal_evaluate(train, test, cfg.spec(), sexes=cfg.sexes, models=models)
    if res.audit["wave2_target_reads_during_fit"] != 0:
        raise AgeVelocityError("wave-2 target was read during fitting")
    return res


def cmd_evaluate(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, design, train, test = load_design(cfg)
    models = load_models(cfg, train.names)
    res = _evaluate_models(cfg, train, test, models)
    artifacts = {
        "report": _write_json(out / "report.json", reports_to_nested(res.reports)),
        "report_text": out / "report.txt",
    }
    artifacts["report_text"].write_text(format_reports(res.reports) + "\n")
    d1 = ba_delta(train.ids, res.predictions[TRAIN_WAVE], train.target, TRAIN_WAVE)
    d2 = ba_delta(train.ids, res.predictions[TEST_WAVE], test.target, TEST_WAVE)
    artifacts["ba_deltas"] = _write_csv(out / "ba_deltas.csv", pd.concat([d1, d2], ignore_index=True))
    base = train.select_kinds(["baseline"])
    baseline = pd.DataFrame(base.values, index=pd.Index(base.ids, name="id"), columns=base.names)
    ea = extreme_agers(d1, d2, baseline, cfg.decile, cfg.n_permutations, substream(cfg.seed, "permutation"))
    artifacts["extreme_agers"] = _write_csv(out / "extreme_agers.csv", ea.comparison)
    members = pd.DataFrame(
        {
            "id": ea.fastest + ea.slowest,
            "group": ["fastest"] * len(ea.fastest) + ["slowest"] * len(ea.slowest),
            "delta_change": [ea.change[i] for i in ea.fastest + ea.slowest],
        }
    )
    artifacts["extreme_agers_members"] = _write_csv(out / "extreme_agers_members.csv", members)
    artifacts["audit"] = _write_json(out / "audit.json", res.audit)
    write_manifest(cfg, "evaluate", out, artifacts, {**_inputs(cfg), **_model_inputs(cfg)})
    print(format_reports(res.reports))
    return artifacts


def _model_inputs(cfg):
    path = Path(cfg.model_path)
    if path.is_dir():
        return {f"model_{s}": path / f"model_{s}.json" for s in cfg.sexes}
    return {"model": path}


def cmd_explain(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, design, train, test = load_design(cfg)
    models = load_models(cfg, train.names)
    matrix = train if cfg.explain_wave == 1 else test
    tables, points = [], []
    for sex in cfg.sexes:
        X = matrix.for_sex(sex)
        phi, phi0 = shap_values(models[sex], X)
        s = summarize((phi, phi0), X.names, X.values)
        s.points["row_id"] = X.ids[s.points["row_id"].to_numpy(dtype=int)]
        tables.append(s.table.assign(sex=sex))
        points.append(s.points.assign(sex=sex))
        log.info("sex %s top features: %s", sex, ", ".join(s.top(5)))
    table = pd.concat(tables, ignore_index=True)[["sex", "feature", "mean_abs_phi", "rank", "sign_consistency"]]
    pts = pd.concat(points, ignore_index=True)[["sex", "row_id", "feature", "rank", "phi", "value"]]
    artifacts = {
        "shap_summary": _write_csv(out / "shap_summary.csv", table),
        "shap_points": _write_csv(out / "shap_points.csv", pts),
    }
    write_manifest(cfg, "explain", out, artifacts, {**_inputs(cfg), **_model_inputs(cfg)})
    return artifacts


def cmd_subgroup(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, design, train, test = load_design(cfg)
    res = subgroup_eval(train, test, cfg.stratifier, cfg.spec(), sexes=cfg.sexes)
    doc = {
        "stratifier": cfg.stratifier,
        "reports": reports_to_nested(res.reports),
        "sizes": {f"{k[0]}/{k[1]}": v for k, v in res.sizes.items()},
        "skipped": [f"{k[0]}/{k[1]}" for k in res.skipped],
        "audit": res.audit,
    }
    artifacts = {"subgroup_report": _write_json(out / "subgroup_report.json", doc), "report_text": out / "subgroup_report.txt"}
    artifacts["report_text"].write_text(format_reports(res.reports) + "\n")
    write_manifest(cfg, "subgroup", out, artifacts, _inputs(cfg))
    print(format_reports(res.reports))
    return artifacts


def cmd_compare(cfg: RunConfig) -> dict:
    """All three model families on identical splits, ranked by test R^2 per sex."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, design, train, test = load_design(cfg)
    reports = []
    for kind in MODEL_TYPES:
        res = temporal_evaluate(train, test, cfg.spec(kind), sexes=cfg.sexes)
        reports.extend(res.reports)
    ranking = {}
    for sex in cfg.sexes:
        rows = [r for r in reports if r.sex == sex and r.wave == TEST_WAVE]
        ranking[sex] = [{"model": r.model, "r2": r.r2, "rmse": r.rmse} for r in sorted(rows, key=lambda r: -r.r2)]
    doc = {"models": reports_to_nested(reports), "ranking": ranking}
    artifacts = {"compare": _write_json(out / "compare.json", doc), "report_text": out / "compare.txt"}
    artifacts["report_text"].write_text(format_reports(reports) + "\n")
    write_manifest(cfg, "compare", out, artifacts, _inputs(cfg))
    print(format_reports(reports))
    return artifacts


def cmd_systems(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, design, train, test = load_design(cfg)
    res = system_analysis(train, test, cfg.spec(), sexes=cfg.sexes)
    artifacts = {"system_r2": _write_csv(out / "system_r2.csv", res.r2)}
    for sex, corr in res.corr.items():
        artifacts[f"system_corr_{sex}"] = _write_csv(out / f"system_corr_{sex}.csv", corr.rename_axis("system"), index=True)
    artifacts["system_corr_diff"] = _write_csv(out / "system_corr_diff.csv", res.diff.rename_axis("system"), index=True)
    scores = pd.concat([s.assign(sex=sex) for sex, s in res.scores.items()])
    artifacts["system_scores"] = _write_csv(out / "system_scores.csv", scores, index=True)
    write_manifest(cfg, "systems", out, artifacts, _inputs(cfg))
    return artifacts


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "subgroup": cmd_subgroup,
    "compare": cmd_compare,
    "systems": cmd_systems,
}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agevelocity", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__doc__.splitlines()[0] if HANDLERS[name].__doc__ else None)
        p.add_argument("--config", help="JSON run configuration; flags override its values")
        p.add_argument("--seed", type=int, help="top-level seed for every random substream")
        p.add_argument("--out", help="output directory")
        p.add_argument("--sex", choices=SEX_CHOICES)
        p.add_argument("--model", choices=MODEL_TYPES)
        p.add_argument("--slope-policy", choices=SLOPE_POLICIES)
        p.add_argument("--wave1", help="wave-1 CSV")
        p.add_argument("--wave2", help="wave-2 CSV")
        p.add_argument("--model-path", help="train output directory or a single model JSON")
        p.add_argument("--stratifier", choices=sorted(STRATIFIERS))
        p.add_argument("--exclude", action="append", metavar="CRITERION", help="exclusion flag to apply (repeatable)")
        p.add_argument("--system-map", help="JSON map of column -> system tag and unit")
        p.add_argument("--n-permutations", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    flags = {
        "seed": args.seed,
        "out": args.out,
        "sex": args.sex,
        "model": args.model,
        "slope_policy": args.slope_policy,
        "wave1": args.wave1,
        "wave2": args.wave2,
        "model_path": args.model_path,
        "stratifier": args.stratifier,
        "exclude": args.exclude,
        "system_map": args.system_map,
        "n_permutations": args.n_permutations,
    }
    doc.update({k: v for k, v in flags.items() if v is not None})
    cfg = RunConfig.from_dict(doc)
    cfg.validate(args.command)
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        HANDLERS[args.command](cfg)
    except AgeVelocityError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        print(json.dumps(err), file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
