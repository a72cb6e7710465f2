"""Readers and writers for graph, data, config and result files.

Indices in all files are 1-based. Floats are written with ``repr`` so
every emitted CSV parses back to identical values.
"""
import csv
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dense_inla.errors import InvalidData, ParseError
from dense_inla.gmrf import GraphSpec

# --------------------------------------------------------------------------
# Graph files
# --------------------------------------------------------------------------


def _int(tok, line):
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok!r}", line=line) from None


def parse_graph_text(text) -> GraphSpec:
    """Parse ``n`` followed by lines ``node count neighbours...``."""
    lines = [(i + 1, ln.split()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, t) for i, t in lines if t and not t[0].startswith("#")]
    if not lines:
        raise ParseError("empty graph file", line=1)
    first_line, head = lines[0]
    if len(head) != 1:
        raise ParseError("first line must hold the node count only", line=first_line)
    n = _int(head[0], first_line)
    if n < 1:
        raise ParseError("node count must be positive", line=first_line)
    adj = [None] * n
    for ln, toks in lines[1:]:
        if len(toks) < 2:
            raise ParseError("expected 'node count neighbours...'", line=ln)
        node, count = _int(toks[0], ln), _int(toks[1], ln)
        nbs = [_int(t, ln) for t in toks[2:]]
        if not 1 <= node <= n:
            raise ParseError(f"node {node} outside 1..{n}", line=ln)
        if count != len(nbs):
            raise ParseError(f"node {node} declares {count} neighbours but lists {len(nbs)}", line=ln)
        if adj[node - 1] is not None:
            raise ParseError(f"node {node} listed twice", line=ln)
        if any(not 1 <= j <= n for j in nbs):
            raise ParseError(f"node {node} has a neighbour outside 1..{n}", line=ln)
        adj[node - 1] = tuple(j - 1 for j in nbs)
    missing = [i + 1 for i, a in enumerate(adj) if a is None]
    if missing:
        raise ParseError(f"nodes without a line: {missing}", line=lines[-1][0])
    return GraphSpec(n, tuple(adj))


def parse_graph_file(path) -> GraphSpec:
    return parse_graph_text(Path(path).read_text())


def format_graph(g: GraphSpec) -> str:
    out = [str(g.n_nodes)]
    for i, nb in enumerate(g.adjacency):
        out.append(" ".join(str(v) for v in [i + 1, len(nb)] + [j + 1 for j in nb]))
    return "\n".join(out) + "\n"


def write_graph_file(path, g: GraphSpec):
    Path(path).write_text(format_graph(g))


# --------------------------------------------------------------------------
# Data CSV
# --------------------------------------------------------------------------


@dataclass(eq=False)
class DataTable:
    time: np.ndarray
    space: np.ndarray
    y: np.ndarray
    E: np.ndarray
    Z: np.ndarray

    @property
    def K(self):
        return self.Z.shape[1]


def _float(tok, line, col):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"column {col!r}: expected a number, got {tok!r}", line=line) from None


def read_data_csv(path, offset="E") -> DataTable:
    """Read ``time, space, y[, offset], z1..zK``; ``offset=None`` means E = 1."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty data file", line=1)
    header = [h.strip() for h in rows[0]]
    for col in ("time", "space", "y"):
        if col not in header:
            raise InvalidData(f"data file lacks the {col!r} column")
    if offset is not None and offset not in header:
        raise InvalidData(f"offset column {offset!r} not found in the data header {header}")
    zcols = sorted((h for h in header if re.fullmatch(r"z\d+", h)), key=lambda h: int(h[1:]))
    if [int(h[1:]) for h in zcols] != list(range(1, len(zcols) + 1)):
        raise InvalidData(f"covariate columns must be z1..zK, got {zcols}")
    idx = {h: i for i, h in enumerate(header)}
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]
    out = {c: [] for c in ["time", "space", "y", "E"] + zcols}
    for ln, r in body:
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", line=ln)
        out["time"].append(_int(r[idx["time"]].strip(), ln))
        out["space"].append(_int(r[idx["space"]].strip(), ln))
        out["y"].append(_float(r[idx["y"]], ln, "y"))
        out["E"].append(_float(r[idx[offset]], ln, offset) if offset is not None else 1.0)
        for z in zcols:
            out[z].append(_float(r[idx[z]], ln, z))
    d = len(body)
    Z = np.array([out[z] for z in zcols], dtype=float).T.reshape(d, len(zcols))
    return DataTable(
        np.array(out["time"], dtype=np.int64),
        np.array(out["space"], dtype=np.int64),
        np.array(out["y"], dtype=float),
        np.array(out["E"], dtype=float),
        Z,
    )


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_data_csv(path, table: DataTable):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "space", "y", "E"] + [f"z{k + 1}" for k in range(table.K)])
        for r in range(table.y.size):
            w.writerow(
                [int(table.time[r]), int(table.space[r]), _fmt(table.y[r]), _fmt(table.E[r])]
                + [_fmt(z) for z in table.Z[r]]
            )


# --------------------------------------------------------------------------
# Result CSVs
# --------------------------------------------------------------------------

MARGINAL_COLUMNS = ("element", "block", "index", "mean", "sd", "q025", "q50", "q975")


def marginal_rows(summary):
    rows = []
    for e, (blk, idx) in enumerate(summary.labels):
        rows.append(
            {
                "element": e + 1,
                "block": blk,
                "index": idx,
                "mean": float(summary.mean[e]),
                "sd": float(summary.sd[e]),
                "q025": float(summary.q025[e]),
                "q50": float(summary.q50[e]),
                "q975": float(summary.q975[e]),
            }
        )
    return rows


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], str) else _fmt(r[c]) for c in columns])


def read_rows(path, int_columns=("element", "index")):
    """Read a result CSV back into dicts; ints and floats are restored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        out = []
        for ln, r in enumerate(reader, start=2):
            row = {}
            for k, v in r.items():
                if k in int_columns:
                    row[k] = _int(v, ln)
                else:
                    try:
                        row[k] = float(v)
                    except ValueError:
                        row[k] = v
            out.append(row)
    return out


# --------------------------------------------------------------------------
# Run config
# --------------------------------------------------------------------------

BLOCK_TYPES = {
    "intercept",
    "rw1",
    "rw2",
    "iid",
    "besag",
    "besag1",
    "interaction1",
    "interaction2",
    "interaction3",
    "interaction4",
}


@dataclass
class BlockDecl:
    type: str
    options: dict
    line: int


@dataclass
class RunConfig:
    """Parsed run configuration.

    ``blocks`` mirrors the model formula: intercept, a temporal random walk,
    a temporal iid, a Besag block, a spatial iid and one interaction.
    """

    blocks: list = field(default_factory=list)
    likelihood: str = "poisson"
    offset: str = "E"
    strategy: str = "GA"
    prior: str = "pc_joint"
    U1: float = 0.5
    U2: float = 1.0 / 0.31
    a1: float = 0.99
    a2: float = 0.01
    threads: int = 1
    seed: int = 0
    n: int = None
    out: str = None
    base_dir: Path = None

    def block(self, kind):
        hits = [b for b in self.blocks if b.type.startswith(kind)]
        return hits[0] if hits else None

    @property
    def rw_order(self):
        return int(self.block("rw").type[-1])

    @property
    def interaction_kind(self):
        return int(self.block("interaction").type[-1])

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() or self.base_dir is None else self.base_dir / p


_FLOAT_KEYS = ("U1", "U2", "a1", "a2")
_INT_KEYS = ("threads", "seed", "n")
_STR_KEYS = ("likelihood", "offset", "strategy", "prior", "out")


def parse_config_text(text, base_dir=None) -> RunConfig:
    """Parse ``key = value`` lines; ``block = TYPE opt=val ...`` may repeat."""
    cfg = RunConfig(base_dir=Path(base_dir) if base_dir is not None else None)
    seen = set()
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", line=ln)
        key, value = (t.strip() for t in line.split("=", 1))
        if key == "block":
            toks = value.split()
            if not toks:
                raise ParseError("block needs a type", line=ln)
            btype = toks[0].lower()
            if btype not in BLOCK_TYPES:
                raise ParseError(f"unknown block type {toks[0]!r}", line=ln)
            opts = {}
            for t in toks[1:]:
                if "=" not in t:
                    raise ParseError(f"block option must be key=value, got {t!r}", line=ln)
                k, v = t.split("=", 1)
                if k not in ("rankdef", "Q", "structure"):
                    raise ParseError(f"unknown block option {k!r}", line=ln)
                opts["structure" if k == "Q" else k] = v
            if "rankdef" in opts:
                opts["rankdef"] = _int(opts["rankdef"], ln)
            cfg.blocks.append(BlockDecl(btype, opts, ln))
            continue
        if key in seen:
            raise ParseError(f"duplicate key {key!r}", line=ln)
        seen.add(key)
        if key in _FLOAT_KEYS:
            setattr(cfg, key, _float(value, ln, key))
        elif key in _INT_KEYS:
            setattr(cfg, key, _int(value, ln))
        elif key in _STR_KEYS:
            setattr(cfg, key, value)
        else:
            raise ParseError(f"unknown key {key!r}", line=ln)
    if cfg.offset.lower() == "none":
        cfg.offset = None
    _validate_config(cfg)
    return cfg


def _validate_config(cfg):
    types = [b.type for b in cfg.blocks]

    def need(count, pred, what):
        got = sum(pred(t) for t in types)
        if got != count:
            line = cfg.blocks[-1].line if cfg.blocks else 1
            raise ParseError(f"model needs exactly {count} {what} block(s), found {got}", line=line)

    need(1, lambda t: t == "intercept", "intercept")
    need(1, lambda t: t.startswith("rw"), "RW1/RW2")
    need(1, lambda t: t.startswith("besag"), "besag")
    need(2, lambda t: t == "iid", "iid")
    need(1, lambda t: t.startswith("interaction"), "interaction1..4")
    if cfg.likelihood.lower() != "poisson":
        raise ParseError(f"unsupported likelihood {cfg.likelihood!r}", line=1)
    if cfg.strategy != "GA":
        raise ParseError(f"unsupported strategy {cfg.strategy!r}", line=1)
    if cfg.threads < 1:
        raise ParseError("threads must be >= 1", line=1)


def parse_config_file(path) -> RunConfig:
    path = Path(path)
    return parse_config_text(path.read_text(), base_dir=path.parent)


def read_matrix_file(path) -> np.ndarray:
    """Whitespace-separated dense matrix, one row per line."""
    rows = []
    for ln, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        toks = raw.split()
        if toks:
            rows.append([_float(t, ln, "structure") for t in toks])
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ParseError("structure file must be a rectangular matrix", line=len(rows) or 1)
    return np.array(rows)
