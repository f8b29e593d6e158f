"""Grid topology, DC measurement model, and case file parsing.

A case is a set of buses (one marked as the angle reference) and branches
with positive per-unit reactance. Measurements are the branch active power
flows under the DC approximation: the flow on branch l = (i, j) is
(angle_i - angle_j) / x_l, so the full vector is z = H x + e where x holds
the non-reference bus angles.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .seeding import derive_rng


class CaseFormatError(ValueError):
    """A case file failed to parse or violated a structural rule."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Bus:
    id: int
    is_reference: bool = False
    base_angle: float = 0.0  # radians


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    reactance: float  # per unit, strictly positive


@dataclass(frozen=True)
class GridCase:
    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]

    def __post_init__(self):
        _validate_case(self)

    @property
    def m(self) -> int:
        """Measurement count: one power flow per branch."""
        return len(self.branches)

    @property
    def n(self) -> int:
        """State dimension: bus count minus the reference."""
        return len(self.buses) - 1

    @property
    def reference_bus(self) -> int:
        return next(b.id for b in self.buses if b.is_reference)

    @property
    def state_bus_ids(self) -> tuple[int, ...]:
        """Non-reference bus ids, ascending; column order of H."""
        return tuple(sorted(b.id for b in self.buses if not b.is_reference))

    def base_state(self) -> np.ndarray:
        """Base angles of the non-reference buses, in column order of H."""
        angle = {b.id: b.base_angle for b in self.buses}
        return np.array([angle[i] for i in self.state_bus_ids], dtype=float)


def _validate_case(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    if len(ids) != len(set(ids)):
        dup = sorted(i for i in set(ids) if ids.count(i) > 1)
        raise CaseFormatError(f"duplicate bus id {dup[0]}")
    refs = [b.id for b in case.buses if b.is_reference]
    if len(refs) == 0:
        raise CaseFormatError("no reference bus")
    if len(refs) > 1:
        raise CaseFormatError(f"multiple reference buses: {refs}")
    if len(case.branches) == 0:
        raise CaseFormatError("case has no branches")
    known = set(ids)
    for br in case.branches:
        if br.from_bus not in known or br.to_bus not in known:
            raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise CaseFormatError(f"branch {br.from_bus}-{br.to_bus} is a self loop")
        if not (br.reactance > 0.0):
            raise CaseFormatError(
                f"branch {br.from_bus}-{br.to_bus} has nonpositive reactance {br.reactance}"
            )
    # connectivity: walk the undirected branch graph from the reference bus
    adjacency: dict[int, set[int]] = {i: set() for i in ids}
    for br in case.branches:
        adjacency[br.from_bus].add(br.to_bus)
        adjacency[br.to_bus].add(br.from_bus)
    seen = {refs[0]}
    stack = [refs[0]]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    if seen != known:
        missing = sorted(known - seen)
        raise CaseFormatError(f"disconnected case: buses {missing} unreachable from the reference")


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------

def parse_case(text: str, fmt: str | None = None, name: str = "case") -> GridCase:
    """Parse case ``text`` in ``native-json`` or ``matpower-subset`` format.

    With fmt=None the format is sniffed: JSON if the first non-blank
    character is '{', matpower-subset otherwise.
    """
    if fmt is None:
        stripped = text.lstrip()
        fmt = "native-json" if stripped.startswith("{") else "matpower-subset"
    if fmt == "native-json":
        return _parse_native_json(text, name)
    if fmt == "matpower-subset":
        return _parse_matpower_subset(text, name)
    raise CaseFormatError(f"unknown case format {fmt!r}")


def _parse_native_json(text: str, default_name: str) -> GridCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(f"invalid JSON: {exc.msg}", line=exc.lineno, column=exc.colno) from exc
    if not isinstance(doc, dict):
        raise CaseFormatError("top-level JSON value must be an object")
    try:
        buses = tuple(
            Bus(
                id=int(entry["id"]),
                is_reference=bool(entry.get("ref", False)),
                base_angle=float(entry.get("angle", 0.0)),
            )
            for entry in doc["buses"]
        )
        branches = tuple(
            Branch(
                from_bus=int(entry["from"]),
                to_bus=int(entry["to"]),
                reactance=float(entry["x"]),
            )
            for entry in doc["branches"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseFormatError(f"malformed case document: {exc!r}") from exc
    return GridCase(name=str(doc.get("name", default_name)), buses=buses, branches=branches)


def serialize_case(case: GridCase) -> str:
    """Native-JSON text for ``case``; parse_case(serialize_case(c)) == c."""
    doc = {
        "name": case.name,
        "buses": [
            {"id": b.id, "ref": b.is_reference, "angle": b.base_angle} for b in case.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "x": br.reactance} for br in case.branches
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


_MATRIX_RE = re.compile(r"mpc\.(bus|branch)\s*=\s*\[(.*?)\];", re.DOTALL)


def _parse_matpower_subset(text: str, name: str) -> GridCase:
    """Parse the bus and branch tables of a matpower-style case file.

    Only bus id, bus type (3 = reference), branch from/to, and branch
    reactance (4th branch column) are read; any further columns and '%'
    comments are ignored.
    """
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    for match in _MATRIX_RE.finditer(text):
        kind = match.group(1)
        body = match.group(2)
        start_line = text[: match.start(2)].count("\n") + 1
        rows: list[tuple[int, list[float]]] = []
        for offset, raw in enumerate(body.split("\n")):
            line_no = start_line + offset
            stripped = raw.split("%", 1)[0].strip().rstrip(";").strip()
            if not stripped:
                continue
            fields = stripped.split()
            try:
                rows.append((line_no, [float(f) for f in fields]))
            except ValueError:
                bad = next(f for f in fields if not _is_number(f))
                raise CaseFormatError(
                    f"invalid numeric field {bad!r} in mpc.{kind}",
                    line=line_no,
                    column=raw.find(bad) + 1,
                ) from None
        tables[kind] = rows
    if "bus" not in tables:
        raise CaseFormatError("missing mpc.bus table")
    if "branch" not in tables:
        raise CaseFormatError("missing mpc.branch table")

    buses = []
    for line_no, row in tables["bus"]:
        if len(row) < 2:
            raise CaseFormatError("bus row needs at least id and type columns", line=line_no)
        buses.append(Bus(id=int(row[0]), is_reference=int(row[1]) == 3))
    branches = []
    for line_no, row in tables["branch"]:
        if len(row) < 4:
            raise CaseFormatError(
                "branch row needs at least from, to, r, x columns", line=line_no
            )
        branches.append(Branch(from_bus=int(row[0]), to_bus=int(row[1]), reactance=row[3]))
    return GridCase(name=name, buses=tuple(buses), branches=tuple(branches))


def _is_number(field: str) -> bool:
    try:
        float(field)
        return True
    except ValueError:
        return False


def load_case(path: str) -> GridCase:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    name = re.sub(r"\.(json|m)$", "", path.rsplit("/", 1)[-1])
    return parse_case(text, name=name)


def load_bundled_case(name: str) -> GridCase:
    """Load one of the packaged cases: ``case3``, ``case14``, ``case118``."""
    base = resources.files("fdialab") / "cases"
    for suffix in (".json", ".m"):
        candidate = base / f"{name}{suffix}"
        if candidate.is_file():
            return parse_case(candidate.read_text(encoding="utf-8"), name=name)
    raise CaseFormatError(f"no bundled case named {name!r}")


# ---------------------------------------------------------------------------
# measurement model
# ---------------------------------------------------------------------------

def build_h(case: GridCase) -> np.ndarray:
    """Branch-flow measurement matrix, shape (m, n).

    Row l for branch (i, j) with reactance x carries +1/x in bus i's column
    and -1/x in bus j's column; the reference bus column is omitted and the
    remaining columns are ordered by ascending bus id.
    """
    col = {bus_id: idx for idx, bus_id in enumerate(case.state_bus_ids)}
    h = np.zeros((case.m, case.n))
    for row, br in enumerate(case.branches):
        inv_x = 1.0 / br.reactance
        if br.from_bus in col:
            h[row, col[br.from_bus]] = inv_x
        if br.to_bus in col:
            h[row, col[br.to_bus]] = -inv_x
    return h


def operating_state(case: GridCase, mean_flow: float = 1.0) -> np.ndarray:
    """A fixed synthetic operating point for ``case``.

    Case files carry topology and reactances but no solved flows, so the
    sampler needs a deterministic, case-specific center with realistic
    branch loading. We draw one random branch-flow target (seeded by the
    case name only), take the least-squares state that best explains it --
    which keeps the angle profile smooth across the network -- and rescale
    so the mean absolute branch flow equals ``mean_flow``. Repeat calls
    return the identical vector.
    """
    if mean_flow <= 0:
        raise ValueError("mean_flow must be positive")
    h = build_h(case)
    rng = derive_rng(0, "operating-state", case.name)
    target = rng.uniform(-1.0, 1.0, size=case.m)
    state, *_ = np.linalg.lstsq(h, target, rcond=None)
    flows = h @ state
    scale = np.abs(flows).mean()
    if scale == 0.0:
        raise CaseFormatError(f"case {case.name!r} admits no nonzero flow profile")
    return state * (mean_flow / scale)


def flow_center(case: GridCase, mean_flow: float = 1.0) -> np.ndarray:
    """Branch flows at the operating point: the translation datasets subtract."""
    return build_h(case) @ operating_state(case, mean_flow)


def sample_states(case: GridCase, count: int, spread: float, rng_seed: int) -> np.ndarray:
    """Draw ``count`` states: the operating point + iid uniform(-spread, spread).

    ``spread`` (radians) models short-horizon load variation around the
    operating point; it is small relative to the operating angles.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    center = operating_state(case)
    return center[None, :] + rng.uniform(-spread, spread, size=(count, case.n))


def measure(h: np.ndarray, x: np.ndarray, noise_sigma: float, rng_seed: int) -> np.ndarray:
    """One measurement vector z = H x + e with e ~ N(0, noise_sigma^2 I)."""
    return measure_batch(h, np.asarray(x, dtype=float)[None, :], noise_sigma, rng_seed)[0]


def measure_batch(h: np.ndarray, states: np.ndarray, noise_sigma: float, rng_seed: int) -> np.ndarray:
    """Row-wise measurements for a (count, n) block of states."""
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    states = np.asarray(states, dtype=float)
    z = states @ h.T
    if noise_sigma > 0:
        rng = np.random.default_rng(rng_seed)
        z = z + rng.normal(0.0, noise_sigma, size=z.shape)
    return z
