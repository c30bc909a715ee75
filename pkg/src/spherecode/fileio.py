"""On-disk formats for vectors, codes, trees, embeddings and run logs.

Binary vector sets use a tiny self-describing container (magic ``CVM1``,
little-endian u32 row/column counts, float32 row-major payload).  Codes,
manifests and metrics are line-oriented text so they diff cleanly; the
code tree is JSON with its centroids stored in a CVM1 sidecar.  Writers
accept an optional config hash and embed it as a ``# config=...`` comment
(text formats) or a ``.meta.json`` sidecar (the binary format stays pure).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tokenizer import CodeTree, TreeNode

CVM_MAGIC = b"CVM1"


# ---------------------------------------------------------------- vectors

def write_code_vectors(path, h: np.ndarray, config_hash: str = "") -> None:
    """Write an (m, d) vector set as CVM1 (float32 row-major payload)."""
    h = np.asarray(h)
    if h.ndim != 2:
        raise ValueError("need an (m, d) array")
    m, d = h.shape
    with open(path, "wb") as fh:
        fh.write(CVM_MAGIC)
        fh.write(struct.pack("<II", m, d))
        fh.write(np.ascontiguousarray(h, dtype="<f4").tobytes())
    if config_hash:
        meta = {"config": config_hash}
        Path(str(path) + ".meta.json").write_text(
            json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
        )


def read_code_vectors(path) -> np.ndarray:
    """Read a CVM1 file back as float64 (values are exactly the stored f32)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CVM_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}, expected {CVM_MAGIC!r}")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated header")
    m, d = struct.unpack("<II", raw[4:12])
    expect = 12 + 4 * m * d
    if len(raw) != expect:
        raise ValueError(
            f"{path}: payload is {len(raw) - 12} bytes, expected {expect - 12} "
            f"for m={m}, d={d}"
        )
    body = np.frombuffer(raw, dtype="<f4", offset=12)
    return body.reshape(m, d).astype(np.float64)


def write_matrix_csv(path, h: np.ndarray, config_hash: str = "") -> None:
    """Plain comma-separated matrix rows (full float precision)."""
    h = np.asarray(h, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        for row in h:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append([float(x) for x in line.split(",")])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float64)


# ------------------------------------------------------------------ codes

def write_codes(
    path, codes: dict[int, tuple[int, ...]], l: int, v: int, config_hash: str = ""
) -> None:
    """Identity code table: ``#l=<l> v=<v> m=<m>`` then one row per identity."""
    m = len(codes)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#l={l} v={v} m={m}\n")
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        fh.write("identity_id," + ",".join(f"c_{j + 1}" for j in range(l)) + "\n")
        for ident in sorted(codes):
            code = codes[ident]
            if len(code) != l:
                raise ValueError(
                    f"identity {ident}: code length {len(code)} != l={l}"
                )
            fh.write(f"{ident}," + ",".join(str(c) for c in code) + "\n")


def read_codes(path) -> tuple[dict[int, tuple[int, ...]], int, int]:
    """Returns ``(codes, l, v)``; validates header shape and token ranges."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing #l=.. v=.. m=.. header")
        try:
            fields = dict(
                part.split("=") for part in header.lstrip("#").split()
            )
            l, v, m = int(fields["l"]), int(fields["v"]), int(fields["m"])
        except (ValueError, KeyError) as exc:
            raise ValueError(f"{path}: malformed header {header!r}") from exc
        codes: dict[int, tuple[int, ...]] = {}
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("identity_id"):
                continue
            parts = line.split(",")
            if len(parts) != l + 1:
                raise ValueError(f"{path}: bad row {line!r} for l={l}")
            ident = int(parts[0])
            code = tuple(int(c) for c in parts[1:])
            if any(c < 0 or c >= v for c in code):
                raise ValueError(f"{path}: token out of range in row {line!r}")
            if ident in codes:
                raise ValueError(f"{path}: duplicate identity {ident}")
            codes[ident] = code
    if len(codes) != m:
        raise ValueError(f"{path}: header says m={m} but file has {len(codes)} rows")
    return codes, l, v


# ------------------------------------------------------------------- tree

def save_tree(path, tree: CodeTree, config_hash: str = "") -> None:
    """Tree structure as JSON; centroids in a CVM1 sidecar next to it."""
    centroids: list[np.ndarray] = []

    def encode(node: TreeNode) -> dict:
        idx = len(centroids)
        centroids.append(node.centroid)
        out: dict = {"centroid": idx}
        if node.leaf_order is not None:
            out["leaf_order"] = [int(i) for i in node.leaf_order]
        else:
            out["children"] = {
                str(tok): encode(child) for tok, child in sorted(node.children.items())
            }
        return out

    root = encode(tree.root)
    path = Path(path)
    sidecar = path.name + ".centroids.cvm"
    doc = {
        "format": "code-tree-v1",
        "l": tree.l,
        "v": tree.v,
        "m": tree.m,
        "centroid_file": sidecar,
        "root": root,
    }
    if config_hash:
        doc["config"] = config_hash
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    write_code_vectors(path.parent / sidecar, np.stack(centroids))


def load_tree(path) -> CodeTree:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != "code-tree-v1":
        raise ValueError(f"{path}: not a code-tree file")
    cents = read_code_vectors(path.parent / doc["centroid_file"])

    def decode_node(obj: dict, depth: int) -> TreeNode:
        if "leaf_order" in obj:
            order = np.asarray(obj["leaf_order"], dtype=np.intp)
            return TreeNode(
                depth=depth,
                centroid=cents[obj["centroid"]],
                members=np.sort(order),
                leaf_order=order,
            )
        children = {
            int(tok): decode_node(child, depth + 1)
            for tok, child in obj["children"].items()
        }
        members = np.sort(
            np.concatenate([c.members for c in children.values()])
        )
        return TreeNode(
            depth=depth,
            centroid=cents[obj["centroid"]],
            members=members,
            children=children,
        )

    root = decode_node(doc["root"], 0)
    return CodeTree(l=int(doc["l"]), v=int(doc["v"]), m=int(doc["m"]), root=root)


# ------------------------------------------------------------- embeddings

def write_embeddings_csv(
    path, sample_ids, labels, vectors: np.ndarray, config_hash: str = ""
) -> None:
    """Rows of ``sample_id,label,e_1,...,e_d`` with a column header."""
    vectors = np.asarray(vectors, dtype=np.float64)
    d = vectors.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        fh.write("sample_id,label," + ",".join(f"e_{j + 1}" for j in range(d)) + "\n")
        for sid, lab, row in zip(sample_ids, labels, vectors):
            fh.write(f"{int(sid)},{int(lab)}," + ",".join(repr(float(x)) for x in row) + "\n")


def read_embeddings_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(sample_ids, labels, vectors)``."""
    ids, labels, rows = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("sample_id"):
                continue
            parts = line.split(",")
            ids.append(int(parts[0]))
            labels.append(int(parts[1]))
            rows.append([float(x) for x in parts[2:]])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return (
        np.asarray(ids),
        np.asarray(labels),
        np.asarray(rows, dtype=np.float64),
    )


def write_embeddings_binary(path, sample_ids, labels, vectors: np.ndarray) -> None:
    """CVM1 vectors plus a JSON index sidecar mapping rows to ids/labels."""
    write_code_vectors(path, vectors)
    index = {
        "sample_ids": [int(s) for s in sample_ids],
        "labels": [int(x) for x in labels],
    }
    Path(str(path) + ".index.json").write_text(
        json.dumps(index) + "\n", encoding="utf-8"
    )


def read_embeddings_binary(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    vectors = read_code_vectors(path)
    index = json.loads(Path(str(path) + ".index.json").read_text(encoding="utf-8"))
    ids = np.asarray(index["sample_ids"])
    labels = np.asarray(index["labels"])
    if ids.shape[0] != vectors.shape[0]:
        raise ValueError(f"{path}: index rows != vector rows")
    return ids, labels, vectors


# ------------------------------------------------- manifests, logs, tables

def write_manifest(path, counts, config_hash: str = "") -> None:
    """Per-identity sample counts: ``identity,count`` rows."""
    counts = np.asarray(counts)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# identities={counts.size} samples={int(counts.sum())}")
        if config_hash:
            fh.write(f" config={config_hash}")
        fh.write("\nidentity,count\n")
        for ident, c in enumerate(counts):
            fh.write(f"{ident},{int(c)}\n")


def read_manifest(path) -> np.ndarray:
    counts = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("identity"):
                continue
            ident, c = line.split(",")
            counts[int(ident)] = int(c)
    return np.asarray([counts[i] for i in range(len(counts))])


def write_separation_csv(path, reports, epochs=None, config_hash: str = "") -> None:
    """Separation trajectory: ``epoch,min,mean,max`` per logged epoch."""
    if epochs is None:
        epochs = range(len(reports))
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        fh.write("epoch,min,mean,max\n")
        for epoch, rep in zip(epochs, reports):
            fh.write(
                f"{epoch},{rep.min_dist:.10g},{rep.mean_dist:.10g},"
                f"{rep.max_dist:.10g}\n"
            )


def write_metrics_ndjson(path, records, config_hash: str = "") -> None:
    """One JSON object per line; key order fixed for reproducible bytes."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            if config_hash:
                rec = {**rec, "config": config_hash}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_metrics_ndjson(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
