import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import pandas as pd

import config
from errors import InputError
from evaluator import GroundTruth, ScoredBox
from integral import Rect

logger = logging.getLogger(__name__)


def file_digest(path):
    """SHA-256 of a file's bytes, hex encoded."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Reproducibility header embedded in every report."""
    command: str
    params: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    tool_version: str = config.TOOL_VERSION
    seed: int = None

    def add_input(self, label, path):
        if path and os.path.isfile(path):
            self.inputs[label] = file_digest(path)
        return self

    def to_dict(self):
        return asdict(self)

    def header_lines(self):
        lines = [f"# command: {self.command}", f"# tool_version: {self.tool_version}"]
        if self.seed is not None:
            lines.append(f"# seed: {self.seed}")
        for k in sorted(self.params):
            lines.append(f"# param {k}: {self.params[k]}")
        for k in sorted(self.inputs):
            lines.append(f"# input {k}: sha256 {self.inputs[k]}")
        return lines


class ReportHandler:
    """Writes tabular reports with their manifest; the format follows the file extension."""

    def __init__(self):
        self.supported_formats = {
            "csv": "CSV File",
            "json": "JSON File",
            "xlsx": "Excel File",
            "txt": "Text File",
        }

    def format_of(self, filename):
        ext = os.path.splitext(filename)[1].lower().lstrip(".")
        if ext not in self.supported_formats:
            raise InputError(
                f"unsupported report format '.{ext}', use one of {', '.join(self.supported_formats)}")
        return ext

    def save_table(self, frame, filename, manifest, summary=None, sheet_name="Data"):
        fmt = self.format_of(filename)
        folder = os.path.dirname(os.path.abspath(filename))
        os.makedirs(folder, exist_ok=True)
        if fmt == "csv":
            self._save_csv(filename, frame, manifest)
        elif fmt == "json":
            self._save_json(filename, frame, manifest, summary)
        elif fmt == "xlsx":
            self._save_excel(filename, frame, manifest, summary, sheet_name)
        else:
            self._save_text(filename, frame, manifest, summary)
        logger.info("wrote %d rows to %s", len(frame), filename)
        return filename

    def save_summary(self, summary, filename, manifest):
        """Structured summary as JSON, manifest first."""
        with open(filename, "w", encoding="utf-8") as f:
            json.dump({"manifest": manifest.to_dict(), "summary": _plain(summary)}, f, indent=2)
            f.write("\n")
        return filename

    def _save_csv(self, filename, frame, manifest):
        with open(filename, "w", newline="", encoding="utf-8") as csvfile:
            for line in manifest.header_lines():
                csvfile.write(line + "\n")
            frame.to_csv(csvfile, index=False)

    def _save_json(self, filename, frame, manifest, summary):
        data = {"manifest": manifest.to_dict()}
        if summary is not None:
            data["summary"] = _plain(summary)
        data["rows"] = _plain(frame.to_dict(orient="records"))
        with open(filename, "w", encoding="utf-8") as jsonfile:
            json.dump(data, jsonfile, indent=2, ensure_ascii=False)
            jsonfile.write("\n")

    def _save_excel(self, filename, frame, manifest, summary, sheet_name):
        with pd.ExcelWriter(filename, engine="openpyxl") as writer:
            frame.to_excel(writer, sheet_name=sheet_name, index=False)
            if summary:
                pd.DataFrame({"Metric": list(summary), "Value": [str(v) for v in summary.values()]}) \
                    .to_excel(writer, sheet_name="Summary", index=False)
            meta = manifest.to_dict()
            rows = [{"Property": k, "Value": str(v)} for k, v in meta.items() if not isinstance(v, dict)]
            rows += [{"Property": f"param {k}", "Value": str(v)} for k, v in sorted(meta["params"].items())]
            rows += [{"Property": f"input {k}", "Value": v} for k, v in sorted(meta["inputs"].items())]
            pd.DataFrame(rows).to_excel(writer, sheet_name="Metadata", index=False)

    def _save_text(self, filename, frame, manifest, summary):
        with open(filename, "w", encoding="utf-8") as f:
            f.write("\n".join(manifest.header_lines()) + "\n\n")
            if summary:
                width = max(len(k) for k in summary)
                for k, v in summary.items():
                    f.write(f"{k:<{width}}  {v}\n")
                f.write("\n")
            f.write(frame.to_string(index=False) + "\n")

    def load_table(self, filename):
        fmt = self.format_of(filename)
        if fmt == "csv":
            return pd.read_csv(filename, comment="#")
        if fmt == "json":
            with open(filename, "r", encoding="utf-8") as f:
                return pd.DataFrame(json.load(f).get("rows", []))
        if fmt == "xlsx":
            return pd.read_excel(filename, sheet_name=0)
        raise InputError(f"{filename}: text reports cannot be read back")


def _plain(value):
    """numpy scalars and enums to JSON-friendly values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()
    if hasattr(value, "value") and value.__class__.__module__ != "builtins":
        return value.value
    return value


# ─── report frames ─────────────────────────────────────────────────────────
DETECTION_COLUMNS = ["image_id", "x", "y", "w", "h", "level", "score"]


def detections_frame(image_id, detections):
    return pd.DataFrame(
        [{"image_id": image_id, "x": d.bbox.x, "y": d.bbox.y, "w": d.bbox.w, "h": d.bbox.h,
          "score": d.score, "level": d.level} for d in detections],
        columns=DETECTION_COLUMNS)


def schedule_frame(schedule, report):
    rows = []
    for s, r in zip(schedule.layers, report.layers):
        plan = s.plan
        rows.append({
            "layer": s.name, "op": s.op,
            "input_home": "+".join(s.input_homes), "output_home": s.output_home,
            "weight_home": s.weight_home or "",
            "transfer_class": s.transfer_class.value,
            "channel_groups": plan.channel_groups if plan else 0,
            "tile_rows": plan.tile_rows if plan else 0,
            "passes": plan.passes if plan else 0,
            "l1_working_set": plan.working_set if plan else 0,
            "macs": r.macs,
            "compute_cycles": r.compute_cycles,
            "transfer_cycles": r.transfer_cycles,
            "total_cycles": r.total_cycles,
        })
    return pd.DataFrame(rows)


def comparison_frame(comparison):
    return pd.DataFrame([
        {"budget": b.label, "l1_bytes": b.l1_bytes, "l2_bytes": b.l2_bytes,
         "total_cycles": r.total_cycles, "wall_time_s": r.wall_time_s,
         "mac_per_cycle": r.mac_per_cycle, "l2_resident_share": r.l2_resident_share}
        for b, r in zip(comparison.budgets, comparison.reports)
    ])


def train_log_frame(log):
    return pd.DataFrame([asdict(row) for row in log])


def ledger_frame(ledger):
    return pd.DataFrame([{"phase": k, "joules": v} for k, v in ledger.phases.items()])


# ─── box files ─────────────────────────────────────────────────────────────
def _read_boxes(path, need_score=False):
    try:
        frame = pd.read_csv(path, comment="#", dtype={"image_id": str})
    except (OSError, pd.errors.ParserError) as e:
        raise InputError(f"cannot read box file {path}: {e}") from None
    except pd.errors.EmptyDataError:
        raise InputError(f"{path}: empty box file") from None
    missing = {"image_id", "x", "y", "w", "h"} - set(frame.columns)
    if missing:
        raise InputError(f"{path}: missing columns {sorted(missing)}")
    if need_score and "score" not in frame.columns:
        frame["score"] = 0.0
    return frame


def load_ground_truth(path):
    """image_id,x,y,w,h rows grouped per image."""
    frame = _read_boxes(path)
    out = []
    for image_id, group in frame.groupby("image_id", sort=True):
        boxes = tuple(Rect(int(r.x), int(r.y), int(r.w), int(r.h)) for r in group.itertuples())
        out.append(GroundTruth(str(image_id), boxes))
    return out


def load_predictions(path):
    """image_id,x,y,w,h[,score] rows; a missing score column means 0."""
    frame = _read_boxes(path, need_score=True)
    return [ScoredBox(str(r.image_id), Rect(int(r.x), int(r.y), int(r.w), int(r.h)), float(r.score))
            for r in frame.itertuples()]
