"""Experiment runner: multi-seed evaluation, success-rate statistics, and
table/chart emission for the tuning and ablation studies.

Per offset condition, each of the trained models is rolled out a fixed
number of times with the offset's sign randomized per rollout; success
rates average over all model-rollout pairs and the SEM is computed across
the per-model success rates.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datapipe import NormStats, build_manifest, load_manifest, load_training_arrays
from .rollout import RolloutConfig, RolloutResult, rollout
from .sim import InsertionSim, JointGeometry, SimConfig, SimStatus, make_sim
from .training import (
    Checkpoint,
    PolicyConfig,
    load_checkpoint,
    save_checkpoint,
    train,
)

__all__ = [
    "OffsetStats",
    "ExperimentReport",
    "evaluate",
    "sim_config_from_dict",
    "train_seeds",
    "run_experiment_suite",
    "write_report_files",
    "emit_report",
]


@dataclass
class OffsetStats:
    offset: float
    per_model_sr: list[float]
    avg_sr: float
    sem: float


@dataclass
class ExperimentReport:
    name: str
    offsets: list[OffsetStats]
    avg_total_sr: float
    rollout_rows: list[dict]
    rollout_config: RolloutConfig
    notes: dict

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "offsets": [dataclasses.asdict(o) for o in self.offsets],
            "avg_total_sr": self.avg_total_sr,
            "rollout_rows": self.rollout_rows,
            "rollout_config": self.rollout_config.to_dict(),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(
            name=d["name"],
            offsets=[OffsetStats(**o) for o in d["offsets"]],
            avg_total_sr=d["avg_total_sr"],
            rollout_rows=d["rollout_rows"],
            rollout_config=RolloutConfig.from_dict(d["rollout_config"]),
            notes=d.get("notes", {}),
        )


def _sem(per_model_sr: list[float]) -> float:
    if len(per_model_sr) < 2:
        return 0.0
    return float(np.std(per_model_sr, ddof=1) / np.sqrt(len(per_model_sr)))


def evaluate(
    checkpoints: list[Checkpoint],
    sim_config: SimConfig,
    stats: NormStats,
    cfg: RolloutConfig,
    name: str = "experiment",
) -> ExperimentReport:
    """Roll out every model at every offset condition and aggregate rates.

    Offset signs are randomized per rollout from the experiment rng and
    logged in the per-rollout rows for replay. Deterministic given ``cfg.seed``.
    """
    if len(checkpoints) != cfg.models_per_config:
        raise ValueError(
            f"need exactly {cfg.models_per_config} checkpoints, got {len(checkpoints)}"
        )
    ref = checkpoints[0].config
    for cp in checkpoints[1:]:
        if dataclasses.replace(cp.config, seed=ref.seed) != ref:
            raise ValueError("checkpoints were trained with differing configs")

    rng = np.random.default_rng(cfg.seed)
    offset_stats: list[OffsetStats] = []
    rows: list[dict] = []
    for offset in cfg.offsets:
        per_model = []
        for mi, cp in enumerate(checkpoints):
            successes = 0
            for rep in range(cfg.rollouts_per_model):
                sign = 1.0 if rng.random() < 0.5 else -1.0
                sim_seed = int(rng.integers(0, 2**63 - 1))
                ddim_seed = int(rng.integers(0, 2**63 - 1))
                sim = make_sim(sim_config, sign * offset, seed=sim_seed)
                result = rollout(sim, cp, stats, cfg, np.random.default_rng(ddim_seed))
                ok = result.outcome is SimStatus.SUCCESS
                successes += int(ok)
                rows.append(
                    {
                        "experiment": name,
                        "offset_mm": offset,
                        "signed_offset_mm": sign * offset,
                        "model_seed": cp.config.seed,
                        "repeat": rep,
                        "outcome": result.outcome.value,
                        "steps": result.steps,
                        "final_depth_mm": round(result.final_depth, 4),
                        "sim_seed": sim_seed,
                        "sampler_seed": ddim_seed,
                    }
                )
            per_model.append(successes / cfg.rollouts_per_model)
        offset_stats.append(
            OffsetStats(
                offset=offset,
                per_model_sr=per_model,
                avg_sr=float(np.mean(per_model)),
                sem=_sem(per_model),
            )
        )
    avg_total = float(np.mean([o.avg_sr for o in offset_stats]))
    return ExperimentReport(
        name=name,
        offsets=offset_stats,
        avg_total_sr=avg_total,
        rollout_rows=rows,
        rollout_config=cfg,
        notes={"models": [cp.config.seed for cp in checkpoints]},
    )


# -- config plumbing ----------------------------------------------------------


def sim_config_from_dict(d: dict | None) -> SimConfig:
    d = dict(d or {})
    geo = JointGeometry(**d.pop("geometry", {}))
    return SimConfig(geometry=geo, **d)


def train_seeds(
    manifest: dict,
    base_config: PolicyConfig,
    seeds: list[int],
    out_dir: str | Path,
    episode_subset: int | None = None,
) -> list[Checkpoint]:
    """Train (or reload) one checkpoint per seed against a dataset manifest.

    Existing checkpoint files whose config matches are reused, which lets a
    suite share models across ablations. ``episode_subset`` truncates the
    episode list (demo-quantity sweeps) before windowing; the truncated
    manifest keeps the full-dataset normalization stats so ablations stay
    comparable.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    work = dict(manifest)
    if episode_subset is not None:
        episodes = sorted(manifest["episodes"], key=lambda e: e["path"])
        train_eps = [e for e in episodes if e["split"] == "train"][:episode_subset]
        val_eps = [e for e in episodes if e["split"] == "val"]
        n_val = max(1, round(len(train_eps) * 0.1))
        work["episodes"] = train_eps + val_eps[:n_val]

    arrays = None
    checkpoints = []
    for seed in seeds:
        config = dataclasses.replace(base_config, seed=seed)
        path = out_dir / f"policy_seed{seed}.npz"
        if path.exists():
            cp = load_checkpoint(path)
            if cp.config == config and cp.norm_stats_hash == manifest["norm_stats_hash"]:
                checkpoints.append(cp)
                continue
        if arrays is None:
            arrays = load_training_arrays(work, config.t_o_p, config.t_o_f, config.t_p)
        cp = train(*arrays, config, norm_stats_hash=manifest["norm_stats_hash"])
        save_checkpoint(cp, path)
        np.savetxt(
            out_dir / f"loss_seed{seed}.csv",
            cp.history,
            fmt=("%d", "%.10f", "%.10f"),
            delimiter=",",
            header="epoch,train_mse,val_mse",
            comments="",
        )
        checkpoints.append(cp)
    return checkpoints


def run_experiment_suite(suite: dict | str | Path, out_dir: str | Path) -> dict:
    """Execute every experiment in a suite manifest; failures are recorded
    and the suite continues. Returns {experiment name: report or error}.
    """
    if not isinstance(suite, dict):
        suite = json.loads(Path(suite).read_text())
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    results: dict[str, dict] = {}
    if not suite.get("experiments"):
        (out_dir / "suite_summary.json").write_text(json.dumps({"experiments": {}}, indent=2) + "\n")
        return results

    manifest = load_manifest(suite["dataset_manifest"])
    stats = NormStats.from_dict(manifest["norm_stats"])
    sim_config = sim_config_from_dict(suite.get("sim"))
    seeds = suite.get("seeds", [0, 1, 2, 3])
    base_policy = PolicyConfig.from_dict(suite.get("base_policy", {}))
    base_rollout = suite.get("base_rollout", {})

    model_cache: dict[str, list[Checkpoint]] = {}
    for exp in suite["experiments"]:
        name = exp["name"]
        try:
            policy_cfg = PolicyConfig.from_dict({**base_policy.to_dict(), **exp.get("policy", {})})
            rollout_cfg = RolloutConfig.from_dict({**base_rollout, **exp.get("rollout", {})})
            reuse = exp.get("reuse_models")
            if reuse is not None:
                checkpoints = model_cache[reuse]
            else:
                checkpoints = train_seeds(
                    manifest,
                    policy_cfg,
                    seeds,
                    out_dir / name,
                    episode_subset=exp.get("demo_count"),
                )
                model_cache[name] = checkpoints
            report = evaluate(checkpoints, sim_config, stats, rollout_cfg, name=name)
            write_report_files(report, out_dir / name)
            results[name] = {"status": "ok", "avg_total_sr": report.avg_total_sr}
        except Exception as exc:  # record and continue with the other rows
            results[name] = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
    summary = {"experiments": results}
    (out_dir / "suite_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return results


# -- report emission ----------------------------------------------------------

ROLLOUT_FIELDS = [
    "experiment",
    "offset_mm",
    "signed_offset_mm",
    "model_seed",
    "repeat",
    "outcome",
    "steps",
    "final_depth_mm",
    "sim_seed",
    "sampler_seed",
]


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def write_report_files(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    report_json = out_dir / "report.json"
    report_json.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    paths["json"] = report_json
    for fmt in ("csv", "md", "svg"):
        paths[fmt] = emit_report(report, out_dir, fmt)
    return paths


def emit_report(report: ExperimentReport, out_dir: str | Path, fmt: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        lines = [",".join(ROLLOUT_FIELDS)]
        for row in report.rollout_rows:
            lines.append(",".join(_fmt(row[k]) for k in ROLLOUT_FIELDS))
        rollouts = out_dir / "rollouts.csv"
        rollouts.write_text("\n".join(lines) + "\n")

        lines = ["experiment,offset_mm,avg_sr_pct,sem_pct," + ",".join(
            f"model{i}_sr" for i in range(len(report.offsets[0].per_model_sr))
        )]
        for o in report.offsets:
            per_model = ",".join(_fmt(sr) for sr in o.per_model_sr)
            lines.append(
                f"{report.name},{_fmt(o.offset)},{_fmt(100 * o.avg_sr)},{_fmt(100 * o.sem)},{per_model}"
            )
        lines.append(f"{report.name},total,{_fmt(100 * report.avg_total_sr)},,")
        path = out_dir / "summary.csv"
        path.write_text("\n".join(lines) + "\n")
        return path
    if fmt == "md":
        lines = [
            f"# {report.name}",
            "",
            "| Offset (mm) | Avg SR (%) | SEM (%) | Per-model SR |",
            "|---|---|---|---|",
        ]
        for o in report.offsets:
            per_model = ", ".join(f"{sr:.2f}" for sr in o.per_model_sr)
            lines.append(f"| {o.offset:g} | {100 * o.avg_sr:.1f} | {100 * o.sem:.1f} | {per_model} |")
        lines += ["", f"**Avg total SR: {100 * report.avg_total_sr:.1f}%**", ""]
        path = out_dir / "report.md"
        path.write_text("\n".join(lines))
        return path
    if fmt == "svg":
        return _emit_svg(report, out_dir / "chart.svg")
    raise ValueError(f"unknown report format {fmt!r}")


def _emit_svg(report: ExperimentReport, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    offsets = [o.offset for o in report.offsets]
    srs = [100 * o.avg_sr for o in report.offsets]
    sems = [100 * o.sem for o in report.offsets]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(range(len(offsets)), srs, yerr=sems, capsize=4, color="#4878a8")
    ax.set_xticks(range(len(offsets)), [f"{o:g} mm" for o in offsets])
    ax.set_ylabel("Avg SR (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"{report.name} (total {100 * report.avg_total_sr:.0f}%)")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
