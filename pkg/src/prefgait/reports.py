"""Analysis report bundle built from session logs and optional traces.

Emits delimited tables (final torque curves, weight trajectories, feature
distribution, per-profile power ratios, chosen-vs-discarded PR, stance/swing
ratios, kinematic synergies) plus rendered PNG figures of the same content.
Missing traces degrade to a partial report with the omissions listed in the
summary, never an error.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .gait import GaitTrace, SIDES, load_trace_csv, segment_cycles, synergy_export
from .metrics import chosen_vs_discarded_pr, feature_stats, trace_metrics
from .profiles import (
    FAMILIARIZATION_PROFILE,
    FEATURE_NAMES,
    TorqueProfileFeatures,
    interpolate,
)
from .sessionlog import SessionRecord, read_log

FIGURE_DPI = 150


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return x


def _session_name(path) -> str:
    return Path(path).stem


def _find_trace(traces_dir, session_name: str, profile_idx: int):
    """trace files live under <dir>/<session>/profile_<i>.csv or flat."""
    if traces_dir is None:
        return None
    base = Path(traces_dir)
    for candidate in (
        base / session_name / f"profile_{profile_idx}.csv",
        base / f"profile_{profile_idx}.csv",
    ):
        if candidate.exists():
            return candidate
    return None


def analyze_logs(log_paths, out_dir, traces_dir=None, resolution: int = 1000) -> dict:
    """Build the full report bundle; returns the summary dict.

    Raises:
        ValueError: no logs given, or a log holds no events.
    """
    if not log_paths:
        raise ValueError("at least one session log is required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig_dir = out / "figures"
    fig_dir.mkdir(exist_ok=True)

    sessions = []
    for path in log_paths:
        record = SessionRecord.from_events(read_log(path))
        sessions.append((_session_name(path), record))

    summary: dict = {"sessions": {}, "omissions": []}

    # Final torque curves (familiarization profile included for reference)
    curve_rows = []
    fam = interpolate(FAMILIARIZATION_PROFILE, resolution)
    for p, t in zip(fam.phase, fam.torque_nm):
        curve_rows.append(["familiarization", _fmt(float(p)), _fmt(float(t))])
    finals: list[tuple[str, TorqueProfileFeatures]] = []
    for name, record in sessions:
        if record.finished is None:
            continue
        features = TorqueProfileFeatures.from_dict(record.finished["final_features"])
        finals.append((name, features))
        curve = interpolate(features, resolution, record.config.ranges)
        for p, t in zip(curve.phase, curve.torque_nm):
            curve_rows.append([name, _fmt(float(p)), _fmt(float(t))])
    _write_csv(out / "final_torque_curves.csv",
               ["session", "phase", "torque_nm"], curve_rows)

    # Weight trajectories from the logged belief snapshots
    weight_rows = []
    for name, record in sessions:
        for i, snap in enumerate(record.snapshots):
            samples = np.array(snap["samples"])
            mean = samples.mean(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 1e-12:
                mean = mean / norm
            weight_rows.append([name, i + 1, *[_fmt(float(v)) for v in mean]])
    _write_csv(out / "weight_trajectory.csv",
               ["session", "iteration", *[f"w{i+1}" for i in range(6)]],
               weight_rows)

    # Feature distribution across sessions' final profiles
    if len(finals) >= 2:
        stats = feature_stats([f for _, f in finals])
        _write_csv(out / "feature_stats.csv", ["feature", "mean", "std"],
                   [[n, m, s] for n, m, s in stats.rounded_rows()])
        summary["feature_stats"] = {
            n: {"mean": m, "std": s} for n, m, s in stats.rounded_rows()
        }
    else:
        summary["omissions"].append(
            {"report": "feature_stats", "reason": "fewer than 2 finished sessions"}
        )

    # Per-profile metrics from traces, chosen-vs-discarded PR, stance/swing
    pr_rows, cd_rows, ss_rows, synergy_rows = [], [], [], []
    for name, record in sessions:
        chosen = record.chosen_indices()
        metrics_by_idx = {}
        for idx in sorted(record.presented_indices()):
            trace_path = _find_trace(traces_dir, name, idx)
            if trace_path is None:
                continue
            trace = load_trace_csv(trace_path)
            metrics_by_idx[idx] = trace_metrics(trace)
            _append_synergy_rows(synergy_rows, name, idx, trace)
        for idx, tm in sorted(metrics_by_idx.items()):
            pr_rows.append([
                name, idx, int(idx in chosen), _fmt(tm.pr_mean), tm.n_cycles,
                tm.n_degenerate,
            ])
            ss_rows.append([
                name, idx, _fmt(tm.stance_swing_mean), _fmt(tm.stance_swing_std),
            ])
        try:
            cd = chosen_vs_discarded_pr(record, metrics_by_idx)
        except ValueError:
            summary["omissions"].append(
                {"session": name, "report": "chosen_vs_discarded",
                 "reason": "log records no presented queries"}
            )
            continue
        cd_rows.append([name, _fmt(cd.chosen_mean_pr), _fmt(cd.discarded_mean_pr)])
        summary["sessions"].setdefault(name, {})["chosen_vs_discarded"] = {
            "chosen_mean_pr": cd.chosen_mean_pr,
            "discarded_mean_pr": cd.discarded_mean_pr,
        }
        for omission in cd.omissions:
            summary["omissions"].append({"session": name, **omission})

    _write_csv(out / "pr_by_profile.csv",
               ["session", "profile_index", "chosen", "pr_mean", "n_cycles",
                "n_degenerate"], pr_rows)
    _write_csv(out / "pr_chosen_vs_discarded.csv",
               ["session", "chosen_mean_pr", "discarded_mean_pr"], cd_rows)
    _write_csv(out / "stance_swing.csv",
               ["session", "profile_index", "stance_swing_mean",
                "stance_swing_std"], ss_rows)
    _write_csv(out / "synergy.csv",
               ["session", "profile_index", "cycle", "phase", "hip_deg",
                "knee_deg"], synergy_rows)

    for name, record in sessions:
        entry = summary["sessions"].setdefault(name, {})
        entry["comparisons"] = len(record.choices)
        if record.finished is not None:
            entry["final_index"] = record.finished["final_index"]
            entry["final_features"] = record.finished["final_features"]
        if record.validation:
            keep = sum(1 for v in record.validation if v["kept"])
            entry["validation"] = {"keep": keep,
                                   "lose": len(record.validation) - keep}

    _render_figures(fig_dir, sessions, finals, weight_rows, cd_rows, ss_rows,
                    synergy_rows, resolution)
    summary["figures"] = sorted(p.name for p in fig_dir.glob("*.png"))

    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def _append_synergy_rows(rows, name, idx, trace: GaitTrace):
    for side in SIDES:
        if trace.contact is None or side not in trace.contact:
            continue
        cycles = segment_cycles(trace, side)
        if not cycles:
            continue
        table = synergy_export(trace, cycles)
        for cycle_i, phase, hip, knee in table:
            rows.append([name, idx, int(cycle_i), _fmt(float(phase)),
                         _fmt(float(hip)), _fmt(float(knee))])
        break  # one side suffices for the phase plot


def _render_figures(fig_dir, sessions, finals, weight_rows, cd_rows, ss_rows,
                    synergy_rows, resolution):
    # Final preferred torque profiles, familiarization in gray
    fig, ax = plt.subplots(figsize=(7, 4))
    fam = interpolate(FAMILIARIZATION_PROFILE, resolution)
    ax.plot(fam.phase * 100, fam.torque_nm, color="0.6", lw=2,
            label="familiarization")
    for name, features in finals:
        curve = interpolate(features, resolution)
        ax.plot(curve.phase * 100, curve.torque_nm, lw=1.2, label=name)
    ax.set_xlabel("gait cycle [%]")
    ax.set_ylabel("torque [Nm]")
    ax.axhline(0, color="k", lw=0.5)
    if len(finals) <= 10:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(fig_dir / "final_torques.png", dpi=FIGURE_DPI)
    plt.close(fig)

    # Normalized weight trajectories per session
    if weight_rows:
        names = sorted({r[0] for r in weight_rows})
        fig, axes = plt.subplots(
            len(names), 1, figsize=(7, 2.2 * len(names)), squeeze=False
        )
        for ax, name in zip(axes[:, 0], names):
            rows = [r for r in weight_rows if r[0] == name]
            iters = [r[1] for r in rows]
            for k in range(6):
                ax.plot(iters, [float(r[2 + k]) for r in rows],
                        label=f"w{k+1}", lw=1.0)
            ax.set_title(name, fontsize=8)
            ax.set_xlabel("comparison")
            ax.set_ylabel("weight")
        axes[0, 0].legend(fontsize=6, ncol=6)
        fig.tight_layout()
        fig.savefig(fig_dir / "weight_trajectories.png", dpi=FIGURE_DPI)
        plt.close(fig)

    # Chosen vs discarded PR dots
    if cd_rows:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for i, (name, chosen_pr, discarded_pr) in enumerate(cd_rows):
            if chosen_pr != "" and not math.isnan(float(chosen_pr)):
                ax.plot(i - 0.1, float(chosen_pr), "o", color="C0")
            if discarded_pr != "" and not math.isnan(float(discarded_pr)):
                ax.plot(i + 0.1, float(discarded_pr), "o", color="C0", alpha=0.35)
        ax.set_xticks(range(len(cd_rows)))
        ax.set_xticklabels([r[0] for r in cd_rows], rotation=30, fontsize=7)
        ax.set_ylabel("power ratio")
        ax.set_title("chosen (filled) vs discarded (light)", fontsize=9)
        fig.tight_layout()
        fig.savefig(fig_dir / "pr_chosen_discarded.png", dpi=FIGURE_DPI)
        plt.close(fig)

    # Stance/swing ratios
    if ss_rows:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        names = sorted({r[0] for r in ss_rows})
        for i, name in enumerate(names):
            vals = [float(r[2]) for r in ss_rows if r[0] == name and r[2] != ""]
            ax.errorbar([i] * len(vals), vals, fmt="o", ms=3, alpha=0.7)
        ax.axhline(1.0, color="0.7", lw=0.8, ls="--")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, fontsize=7)
        ax.set_ylabel("stance/swing ratio")
        fig.tight_layout()
        fig.savefig(fig_dir / "stance_swing.png", dpi=FIGURE_DPI)
        plt.close(fig)

    # Hip-knee synergy phase plots
    if synergy_rows:
        names = sorted({r[0] for r in synergy_rows})
        fig, axes = plt.subplots(
            1, len(names), figsize=(3.2 * len(names), 3.2), squeeze=False
        )
        for ax, name in zip(axes[0], names):
            rows = [r for r in synergy_rows if r[0] == name]
            by_key = {}
            for _name, idx, cycle_i, phase, hip, knee in rows:
                by_key.setdefault((idx, cycle_i), []).append(
                    (float(phase), float(hip), float(knee))
                )
            for pts in by_key.values():
                pts.sort()
                ax.plot([p[1] for p in pts], [p[2] for p in pts],
                        lw=0.6, alpha=0.5, color="C0")
            ax.set_title(name, fontsize=8)
            ax.set_xlabel("hip [deg]")
            ax.set_ylabel("knee [deg]")
        fig.tight_layout()
        fig.savefig(fig_dir / "synergies.png", dpi=FIGURE_DPI)
        plt.close(fig)
