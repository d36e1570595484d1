"""Static report emission: record files, leaderboards, curve tables, figures.

All delimited outputs are deterministic byte-for-byte for a given store;
timestamps live only in run_meta.json. Figures are rendered with the
Agg backend next to the CSV data they visualize.
"""
from __future__ import annotations

import csv
import html
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import EnvelopeStore  # noqa: E402

FORMATS = ("csv", "json", "html")
ENVELOPE_ID = "envelope"


def write_jsonl(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def write_meta(path, meta: dict) -> None:
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _leaderboard_rows(entries, models):
    rows = []
    for e in entries:
        row = {"rank": e.rank, "attack": e.attack_id, "norm": e.norm,
               "global_optimality": e.global_optimality,
               "median_queries": e.median_queries}
        for m in models:
            row[f"local_{m}"] = e.local_scores[m]
        rows.append(row)
    return rows


def emit_leaderboards(out_dir, leaderboards, zoo_models,
                      formats=FORMATS) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for norm in sorted(leaderboards):
        entries = leaderboards[norm]["entries"]
        incomplete = leaderboards[norm]["incomplete"]
        models = sorted(zoo_models[norm])
        rows = _leaderboard_rows(entries, models)
        stem = out_dir / f"leaderboard_l{norm}"
        if "csv" in formats:
            path = stem.with_suffix(".csv")
            fields = ["rank", "attack", "norm", "global_optimality",
                      "median_queries"] + [f"local_{m}" for m in models]
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=fields)
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: repr(v) if isinstance(v, float)
                                     else v for k, v in row.items()})
            written.append(path)
        if "json" in formats:
            path = stem.with_suffix(".json")
            with open(path, "w") as fh:
                json.dump({"norm": norm, "entries": rows,
                           "incomplete": incomplete},
                          fh, indent=2, sort_keys=True)
                fh.write("\n")
            written.append(path)
        if "html" in formats:
            path = stem.with_suffix(".html")
            path.write_text(_render_html(norm, rows, incomplete, models))
            written.append(path)
    return written


def _render_html(norm, rows, incomplete, models) -> str:
    cols = ["rank", "attack", "global_optimality", "median_queries"] + \
           [f"local_{m}" for m in models]
    head = "".join(f"<th>{html.escape(c)}</th>" for c in cols)
    body = []
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"<td>{v:.6f}</td>" if isinstance(v, float)
                         else f"<td>{html.escape(str(v))}</td>")
        body.append("<tr>" + "".join(cells) + "</tr>")
    note = ""
    if incomplete:
        note = ("<p>Unranked (incomplete zoo coverage): "
                + html.escape(", ".join(incomplete)) + "</p>")
    return (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        f"<title>Attack leaderboard (l{norm})</title>"
        "<style>table{border-collapse:collapse}"
        "td,th{border:1px solid #999;padding:4px 8px;"
        "font-family:monospace}</style></head><body>"
        f"<h1>Attack leaderboard &mdash; &#8467;<sub>{norm}</sub></h1>"
        f"<table><thead><tr>{head}</tr></thead>"
        f"<tbody>{''.join(body)}</tbody></table>{note}</body></html>\n")


def curve_table(store: EnvelopeStore, model: str, norm: str,
                eps_max: float) -> list[tuple[str, float, float]]:
    """Long-form (attack, eps, robust_accuracy) rows at every step point."""
    rows = []
    curves = {ENVELOPE_ID: store.envelope_curve(model, norm, eps_max)}
    for attack_id in store.attacks(model, norm):
        curves[attack_id] = store.attack_curve(model, norm, attack_id,
                                               eps_max)
    for name in sorted(curves):
        curve = curves[name]
        rows.append((name, 0.0, curve.robust_accuracy(0.0)))
        for sp in curve.step_points():
            if sp == 0.0:
                continue
            rows.append((name, sp, curve.robust_accuracy(sp)))
    return rows


def emit_curves(out_dir, store: EnvelopeStore, eps_max_map) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    for norm in store.norms():
        for model in store.models(norm):
            eps_max = eps_max_map[(model, norm)]
            rows = curve_table(store, model, norm, eps_max)
            path = out_dir / f"curves_{model}_{norm}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["attack", "eps", "robust_accuracy"])
                for name, eps, ra in rows:
                    writer.writerow([name, repr(float(eps)),
                                     repr(float(ra))])
            written.append(path)
    return written


def render_figures(out_dir, store: EnvelopeStore, eps_max_map,
                   leaderboards, zoo_models) -> list[Path]:
    fig_dir = Path(out_dir) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for norm in store.norms():
        for model in store.models(norm):
            eps_max = eps_max_map[(model, norm)]
            fig, ax = plt.subplots(figsize=(6, 4))
            for attack_id in store.attacks(model, norm):
                curve = store.attack_curve(model, norm, attack_id, eps_max)
                xs, ys = _step_path(curve, eps_max)
                ax.step(xs, ys, where="post", label=attack_id, alpha=0.8)
            env = store.envelope_curve(model, norm, eps_max)
            xs, ys = _step_path(env, eps_max)
            ax.step(xs, ys, where="post", label=ENVELOPE_ID,
                    color="black", linewidth=2)
            ax.set_xlabel(f"perturbation budget (l{norm})")
            ax.set_ylabel("robust accuracy")
            ax.set_title(f"{model} (l{norm})")
            ax.set_xlim(0, eps_max)
            ax.set_ylim(-0.02, 1.02)
            ax.legend(fontsize=7)
            fig.tight_layout()
            path = fig_dir / f"curves_{model}_{norm}.png"
            fig.savefig(path, dpi=120)
            plt.close(fig)
            written.append(path)
    for norm in sorted(leaderboards):
        entries = leaderboards[norm]["entries"]
        if not entries:
            continue
        fig, ax = plt.subplots(figsize=(6, 3.2))
        names = [e.attack_id for e in entries]
        vals = [e.global_optimality for e in entries]
        ypos = list(range(len(names)))
        ax.barh(ypos, vals)
        ax.set_yticks(ypos)
        ax.set_yticklabels(names)
        ax.invert_yaxis()
        ax.set_xlabel("global optimality")
        ax.set_xlim(0, 1)
        ax.set_title(f"Leaderboard (l{norm})")
        fig.tight_layout()
        path = fig_dir / f"leaderboard_l{norm}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def _step_path(curve, eps_max):
    xs = [0.0]
    ys = [curve.robust_accuracy(0.0)]
    for sp in curve.step_points():
        xs.append(sp)
        ys.append(curve.robust_accuracy(sp))
    xs.append(eps_max)
    ys.append(ys[-1])
    return xs, ys


def emit_all(out_dir, result, formats=FORMATS) -> list[Path]:
    """Write every report artifact for a RunResult-like object."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    write_jsonl(out_dir / "records.jsonl", result.records)
    written.append(out_dir / "records.jsonl")
    if getattr(result, "perturbations", None) is not None:
        write_jsonl(out_dir / "perturbations.jsonl", result.perturbations)
        written.append(out_dir / "perturbations.jsonl")
    write_meta(out_dir / "run_meta.json", result.meta)
    written.append(out_dir / "run_meta.json")
    written += emit_leaderboards(out_dir, result.leaderboards,
                                 result.zoo_models, formats)
    written += emit_curves(out_dir, result.store, result.eps_max_map)
    written += render_figures(out_dir, result.store, result.eps_max_map,
                              result.leaderboards, result.zoo_models)
    return written
