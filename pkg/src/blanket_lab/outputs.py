"""Record streams, CSV summaries, SVG figures and manifests."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
import tempfile

import numpy as np

from . import __version__
from .rng import SEED_SCHEME

RECORD_SCHEMA = "blanket-lab/records/v1"
SUMMARY_SCHEMA = "blanket-lab/summary/v1"
MANIFEST_NAME = "manifest.json"


def _plain(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def write_jsonl(rows, path):
    with open(path, "w", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(_plain(r), sort_keys=True) + "\n")


def read_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(rows, fields, path, schema):
    """CSV with a ``# schema: <id>`` comment line, then the header."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema}\n")
        w = csv.DictWriter(fh, fieldnames=list(fields), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _plain(r.get(k)) for k in fields})


def read_csv(path):
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            raise ValueError("missing schema comment")
        return first.split(":", 1)[1].strip(), list(csv.DictReader(fh))


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


PLOT_IDS = re.compile(r'id="((?:ecdf-step|data|fit|trace)[^"]*)"')


def svg_structure(path) -> str:
    """Digest of the ordered plot-element ids of an SVG written by this module."""
    with open(path) as fh:
        ids = PLOT_IDS.findall(fh.read())
    return hashlib.sha256("\n".join(ids).encode()).hexdigest()


def _file_entry(out_dir, f):
    path = os.path.join(out_dir, f)
    entry = {"sha256": sha256(path),
             "byte_identical": not f.endswith(".svg") and not f.startswith("timings")}
    if f.endswith(".svg"):
        entry["structure"] = svg_structure(path)
    return entry


def write_manifest(out_dir, config: dict, files, extra=None):
    """Atomically write the manifest listing ``files`` (relative names) with checksums.

    Figures and wall-clock timings are not byte-reproducible; figures carry a
    structural digest instead.
    """
    body = {"tool": "blanket-lab", "version": __version__, "seed_scheme": SEED_SCHEME,
            "config": _plain(config),
            "files": {f: _file_entry(out_dir, f) for f in sorted(files)}}
    if extra:
        body.update(_plain(extra))
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest-", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, os.path.join(out_dir, MANIFEST_NAME))
    return os.path.join(out_dir, MANIFEST_NAME)


def read_manifest(path):
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST_NAME)
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------- plots

def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "blanket-lab"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def ecdf_steps(sample):
    """Horizontal ECDF segments (x_left, x_right, height) for a sorted finite sample."""
    x = np.sort(np.asarray(sample, dtype=np.float64))
    x = x[np.isfinite(x)]
    k = len(x)
    if k == 0:
        return []
    right_end = x[-1] + max(0.05 * (x[-1] - x[0]), 1e-9 + 0.05 * abs(x[-1]))
    vals, counts = np.unique(x, return_counts=True)
    cum = np.cumsum(counts) / k
    ends = np.concatenate([vals[1:], [right_end]])
    return [(float(a), float(b), float(h)) for a, b, h in zip(vals, ends, cum)]


def plot_ecdf(samples: dict, path, xlabel="rescaled blanket time"):
    """One step segment per distinct value, each tagged ``ecdf-step-<label>-<i>``."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for j, (label, s) in enumerate(samples.items()):
        color = f"C{j % 10}"
        for i, (a, b, h) in enumerate(ecdf_steps(s)):
            ax.plot([a, b], [h, h], color=color, lw=1.2, gid=f"ecdf-step-{j}-{i}",
                    label=str(label) if i == 0 else None)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("ECDF")
    ax.set_ylim(0, 1.05)
    if samples:
        ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return path


def plot_loglog(sizes, medians, slope, intercept, path, ylabel="median blanket time"):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.asarray(sizes, dtype=np.float64)
    ax.loglog(x, medians, "o", gid="data")
    ax.loglog(x, np.exp(intercept) * x ** slope, "-", gid="fit", label=f"slope {slope:.3f}")
    ax.set_xlabel("size")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return path


def plot_trace(times, values, path, ylabel="value"):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.step(times, values, where="post", gid="trace")
    ax.set_xlabel("time")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return path
