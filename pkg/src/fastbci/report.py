"""Adaptation-report CSV files, figures and summary tables."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .errors import DataFormatError
from .evaluate import AdaptationReport
from .svgplot import Series, line_chart, panel_grid

CSV_COLUMNS = [
    "source_activity", "target_activity", "strategy", "norm", "iteration",
    "mean_test_acc", "std_test_acc", "mean_train_acc", "std_train_acc",
    "runs", "subjects", "seed",
]

# published within-activity accuracies (percent) for the stock protocol,
# before and after the 10 fine-tuning iterations
REFERENCE_ACCURACY = {
    1: (83.18, 0.0, 85.88, 0.6),
    2: (85.91, 0.0, 86.28, 0.63),
    3: (72.73, 0.0, 79.81, 1.07),
    4: (67.73, 0.0, 71.22, 1.2),
}

_INT_FIELDS = {"source_activity", "target_activity", "iteration", "runs", "seed"}
_FLOAT_FIELDS = {"mean_test_acc", "std_test_acc", "mean_train_acc", "std_train_acc"}


def write_report_csv(report: AdaptationReport, path, config_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    spec = report.spec
    meta = (f"# optimizer={spec.optimizer} lr={spec.lr:g} steps={spec.steps} "
            f"k_support={spec.k_support} k_query={spec.k_query}")
    if config_hash:
        meta += f" config_hash={config_hash}"
    if report.skipped_subjects:
        meta += " skipped=" + "|".join(str(s) for s in report.skipped_subjects)
    subjects = "|".join(str(s) for s in report.subject_ids)
    buf = io.StringIO()
    buf.write(meta + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for it in range(report.iterations + 1):
        writer.writerow([
            report.source_activity, report.target_activity, report.strategy,
            report.norm, it,
            f"{report.mean_test[it]:.10g}", f"{report.std_test[it]:.10g}",
            f"{report.mean_train[it]:.10g}", f"{report.std_train[it]:.10g}",
            report.runs, subjects, report.base_seed,
        ])
    path.write_text(buf.getvalue())
    return path


def read_report_csv(path) -> tuple[list[dict], dict]:
    """Rows (typed dicts) plus the '#' metadata key=value pairs."""
    path = Path(path)
    meta: dict[str, str] = {}
    lines = []
    for line in path.read_text().splitlines():
        if line.startswith("#"):
            for token in line[1:].split():
                if "=" in token:
                    key, value = token.split("=", 1)
                    meta[key] = value
        elif line.strip():
            lines.append(line)
    if not lines:
        raise DataFormatError(f"{path}: empty report")
    reader = csv.DictReader(lines)
    if reader.fieldnames != CSV_COLUMNS:
        raise DataFormatError(f"{path}: unexpected columns {reader.fieldnames}")
    rows = []
    for raw in reader:
        if any(v is None or v == "" for k, v in raw.items() if k != "subjects"):
            raise DataFormatError(f"{path}: malformed row {raw}")
        row = dict(raw)
        try:
            for k in _INT_FIELDS:
                row[k] = int(row[k])
            for k in _FLOAT_FIELDS:
                row[k] = float(row[k])
        except ValueError as exc:
            raise DataFormatError(f"{path}: malformed row {raw}") from exc
        rows.append(row)
    return rows, meta


# ----------------------------------------------------------------------
# figures

def _series_label(row: dict) -> str:
    return f"{row['strategy']}/{row['norm']}-norm"


def _group_rows(all_rows: list[dict]) -> dict:
    """(source, target) -> label -> sorted iteration rows."""
    groups: dict[tuple[int, int], dict[str, list[dict]]] = {}
    for row in all_rows:
        pair = (row["source_activity"], row["target_activity"])
        groups.setdefault(pair, {}).setdefault(_series_label(row), []).append(row)
    for by_label in groups.values():
        for rows in by_label.values():
            rows.sort(key=lambda r: r["iteration"])
    return groups


def _panel(by_label: dict[str, list[dict]], which: str) -> list[Series]:
    out = []
    for label in sorted(by_label):
        rows = by_label[label]
        out.append(Series(
            name=label,
            xs=[r["iteration"] for r in rows],
            ys=[r[f"mean_{which}_acc"] for r in rows],
            stds=[r[f"std_{which}_acc"] for r in rows],
        ))
    return out


def render_plots(csv_paths, out_dir) -> list[Path]:
    """One figure per (source, target) activity pair, test and train curves;
    multi-pair inputs additionally get a tiled overview figure."""
    all_rows = []
    for p in csv_paths:
        rows, _ = read_report_csv(p)
        all_rows.extend(rows)
    groups = _group_rows(all_rows)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for (src, tgt), by_label in sorted(groups.items()):
        stem = f"A{src}_to_A{tgt}" if src != tgt else f"A{src}"
        for which, title_word in (("test", "testing"), ("train", "training")):
            title = (f"{title_word} accuracy, activity {src}" if src == tgt else
                     f"{title_word} accuracy, activity {src} to {tgt}")
            svg = line_chart(_panel(by_label, which), title,
                             "fine-tuning iteration", "accuracy")
            target = out_dir / f"{stem}_{which}.svg"
            target.write_text(svg)
            written.append(target)
    if len(groups) > 1:
        panels = []
        for (src, tgt), by_label in sorted(groups.items()):
            panels.append((f"A{src} to A{tgt}", _panel(by_label, "test")))
        target = out_dir / "cross_activity_grid.svg"
        target.write_text(panel_grid(panels, "fine-tuning iteration", "accuracy"))
        written.append(target)
    return written


# ----------------------------------------------------------------------
# summary table

def compare_table(report_csvs, include_reference: bool = True) -> tuple[str, str]:
    """Markdown and CSV summaries of before/after-adaptation accuracy.

    All inputs must share the protocol (iteration count, runs, support/query
    sizes when recorded).
    """
    loaded = [read_report_csv(p) for p in report_csvs]
    if not loaded:
        raise ValueError("compare_table needs at least one report")

    protocols = set()
    for rows, meta in loaded:
        max_iter = max(r["iteration"] for r in rows)
        protocols.add((max_iter, rows[0]["runs"],
                       meta.get("k_support"), meta.get("k_query")))
    if len(protocols) != 1:
        raise DataFormatError(f"mismatched protocols across reports: {protocols}")
    (max_iter, runs, _, _) = protocols.pop()

    entries = []
    for rows, _ in loaded:
        first = min(rows, key=lambda r: r["iteration"])
        last = max(rows, key=lambda r: r["iteration"])
        entries.append({
            "activity": f"{first['source_activity']}"
                        if first["source_activity"] == first["target_activity"]
                        else f"{first['source_activity']}->{first['target_activity']}",
            "model": f"{first['strategy']}/{first['norm']}-norm",
            "before": (100 * first["mean_test_acc"], 100 * first["std_test_acc"]),
            "after": (100 * last["mean_test_acc"], 100 * last["std_test_acc"]),
        })
    if include_reference:
        seen = {e["activity"] for e in entries}
        for act, (b, bs, a, as_) in sorted(REFERENCE_ACCURACY.items()):
            if str(act) in seen:
                entries.append({"activity": str(act), "model": "reference",
                                "before": (b, bs), "after": (a, as_)})
    entries.sort(key=lambda e: (e["activity"], e["model"]))

    def cell(pair):
        return f"{pair[0]:.2f} ± {pair[1]:.2f}"

    md = [f"| Activity | Model | Before adaptation | After adaptation "
          f"({max_iter} iters) |",
          "|---|---|---|---|"]
    csv_lines = ["activity,model,before_mean,before_std,after_mean,after_std"]
    for e in entries:
        md.append(f"| {e['activity']} | {e['model']} | {cell(e['before'])} "
                  f"| {cell(e['after'])} |")
        csv_lines.append(
            f"{e['activity']},{e['model']},{e['before'][0]:.4f},"
            f"{e['before'][1]:.4f},{e['after'][0]:.4f},{e['after'][1]:.4f}")
    return "\n".join(md) + "\n", "\n".join(csv_lines) + "\n"
