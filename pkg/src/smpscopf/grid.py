"""Network data model: parsing, validation, per-unit conversion and
per-contingency admittance views.

Physical units follow the case document: MW, MVAr, ohm, microsiemens,
ampere, kV, MWh and EUR/MWh.
"""
from __future__ import annotations

import math
from dataclasses import MISSING, dataclass, field, fields, replace
from typing import Any, Optional, Sequence

import numpy as np
import yaml
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


class CaseError(ValueError):
    """Base class for case-document problems."""


class CaseParseError(CaseError):
    """The document does not match the expected schema."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class CaseValidationError(CaseError):
    def __init__(self, diagnostics: Sequence["Diagnostic"]):
        self.diagnostics = list(diagnostics)
        lines = "\n".join(f"  {d}" for d in self.diagnostics)
        super().__init__(f"{len(self.diagnostics)} validation error(s):\n{lines}")


class IslandingError(CaseError):
    def __init__(self, state: int, isolated: Sequence[str]):
        self.state = state
        self.isolated = list(isolated)
        super().__init__(
            f"contingency state {state} islands bus(es) {', '.join(self.isolated)}"
        )


@dataclass(frozen=True)
class Bus:
    id: str
    v_min: float
    v_max: float
    p_load: float = 0.0
    q_load: float = 0.0
    lc_cost: Optional[float] = None
    is_slack_angle_ref: bool = False


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    b_sh: float
    i_max: float
    v_nom: float


@dataclass(frozen=True)
class Generator:
    id: str
    bus: str
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp: float
    cost_a: float = 0.0
    cost_b: float = 0.0
    cost_c: float = 0.0
    redispatch_cost: Optional[float] = None
    p_market: Optional[tuple[float, ...]] = None


@dataclass(frozen=True)
class StorageUnit:
    id: str
    bus: str
    soc_min: float
    soc_max: float
    p_ch_max: float
    p_dis_max: float
    eta_ch: float
    eta_dis: float
    soc_initial: float
    cost: float


@dataclass(frozen=True)
class FlexibleLoad:
    id: str
    bus: str
    p_inc_max: float
    p_dec_max: float
    cost: float


@dataclass(frozen=True)
class ResPlant:
    id: str
    bus: str
    capacity: float
    gc_cost: Optional[float] = None


@dataclass(frozen=True)
class ContingencySpec:
    """Operating states. ``outages[0]`` is ``None`` (intact network), every
    other entry names the single out-of-service branch of that state."""

    outages: tuple[Optional[str], ...] = (None,)

    def __len__(self) -> int:
        return len(self.outages)

    def label(self, k: int) -> str:
        return "base" if self.outages[k] is None else f"{self.outages[k]} out"


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    storage: tuple[StorageUnit, ...] = ()
    flexible_loads: tuple[FlexibleLoad, ...] = ()
    res_plants: tuple[ResPlant, ...] = ()
    contingencies: ContingencySpec = field(default_factory=ContingencySpec)

    def bus_position(self, bus_id: str) -> int:
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise KeyError(bus_id)

    def branch_position(self, branch_id: str) -> int:
        for i, br in enumerate(self.branches):
            if br.id == branch_id:
                return i
        raise KeyError(branch_id)

    def without(self, storage: bool = False, flexible_loads: bool = False) -> "Network":
        return replace(
            self,
            storage=() if storage else self.storage,
            flexible_loads=() if flexible_loads else self.flexible_loads,
        )

    def with_res_capacity(self, capacity: float) -> "Network":
        """Set every RES plant to ``capacity`` MW."""
        plants = tuple(replace(p, capacity=float(capacity)) for p in self.res_plants)
        return replace(self, res_plants=plants)


# --------------------------------------------------------------------------
# parsing

_SECTIONS = {
    "buses": Bus,
    "branches": Branch,
    "generators": Generator,
    "storage": StorageUnit,
    "flexible_loads": FlexibleLoad,
    "res_plants": ResPlant,
}

# document key -> dataclass attribute
_ALIASES = {"from": "from_bus", "to": "to_bus"}


def _record(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise CaseParseError(path, f"expected a mapping, got {type(raw).__name__}")
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        attr = _ALIASES.get(key, key)
        if attr not in names:
            raise CaseParseError(f"{path}.{key}", "unknown field")
        kwargs[attr] = value
    required = [
        f.name
        for f in fields(cls)
        if f.default is MISSING and f.default_factory is MISSING
    ]
    for name in required:
        if name not in kwargs:
            raise CaseParseError(path, f"missing field '{name}'")
    for f in fields(cls):
        if f.name not in kwargs:
            continue
        v = kwargs[f.name]
        try:
            if f.name in ("id", "bus", "from_bus", "to_bus"):
                kwargs[f.name] = str(v)
            elif f.name == "is_slack_angle_ref":
                if not isinstance(v, bool):
                    raise TypeError("expected true/false")
            elif f.name == "p_market":
                if v is not None:
                    kwargs[f.name] = tuple(float(p) for p in v)
            elif v is not None:
                kwargs[f.name] = float(v)
        except (TypeError, ValueError) as exc:
            raise CaseParseError(f"{path}.{f.name}", str(exc)) from None
    return cls(**kwargs)


def parse_case(text: str, validate: bool = True) -> Network:
    """Parse a YAML case document into a :class:`Network`.

    Raises :class:`CaseParseError` on schema problems and
    :class:`CaseValidationError` when the parsed data break an invariant.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise CaseParseError("$", f"malformed document ({exc})") from None
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise CaseParseError("$", "top level must be a mapping")
    for key in doc:
        if key not in _SECTIONS and key not in ("contingencies", "name", "units"):
            raise CaseParseError(f"$.{key}", "unknown section")

    parts: dict[str, tuple] = {}
    for section, cls in _SECTIONS.items():
        rows = doc.get(section) or []
        if not isinstance(rows, list):
            raise CaseParseError(f"$.{section}", "expected a list")
        items = []
        for i, raw in enumerate(rows):
            if cls not in (Bus, Branch) and isinstance(raw, dict) and "id" not in raw:
                raw = {"id": f"{section[0].upper()}{i + 1}", **raw}
            if cls is Branch and isinstance(raw, dict) and "id" not in raw:
                raw = {"id": f"L{i + 1}", **raw}
            items.append(_record(cls, raw, f"$.{section}[{i}]"))
        parts[section] = tuple(items)

    outages: list[Optional[str]] = [None]
    raw_k = doc.get("contingencies") or []
    if not isinstance(raw_k, list):
        raise CaseParseError("$.contingencies", "expected a list of branch ids")
    for i, item in enumerate(raw_k):
        if isinstance(item, dict):
            if "branch" not in item:
                raise CaseParseError(f"$.contingencies[{i}]", "missing field 'branch'")
            item = item["branch"]
        outages.append(str(item))

    net = Network(contingencies=ContingencySpec(tuple(outages)), **parts)
    if validate:
        diags = validate_network(net)
        if diags:
            raise CaseValidationError(diags)
    return net


def load_case(path) -> Network:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Diagnostic:
    element: str
    rule: str

    def __str__(self) -> str:
        return f"{self.element}: {self.rule}"


def validate_network(net: Network) -> list[Diagnostic]:
    """Check every type invariant; an empty list means the network is valid."""
    out: list[Diagnostic] = []

    def bad(element, rule):
        out.append(Diagnostic(element, rule))

    if not net.buses:
        bad("network", "no buses")
    ids = [b.id for b in net.buses]
    known = set(ids)
    if len(known) != len(ids):
        bad("network", "duplicate bus ids")
    n_ref = sum(b.is_slack_angle_ref for b in net.buses)
    if net.buses and n_ref != 1:
        bad("network", f"exactly one angle-reference bus required, found {n_ref}")

    for b in net.buses:
        el = f"bus {b.id}"
        if not (0 < b.v_min < b.v_max):
            bad(el, f"requires 0 < v_min < v_max (got {b.v_min}, {b.v_max})")
        if b.p_load < 0:
            bad(el, "p_load must be >= 0")
        if b.lc_cost is not None and b.lc_cost < 0:
            bad(el, "lc_cost must be >= 0")

    br_ids = [br.id for br in net.branches]
    if len(set(br_ids)) != len(br_ids):
        bad("network", "duplicate branch ids")
    for br in net.branches:
        el = f"branch {br.id}"
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                bad(el, f"references unknown bus {end}")
        if br.from_bus == br.to_bus:
            bad(el, "from and to bus coincide")
        if br.x == 0:
            bad(el, "x must be nonzero")
        if br.i_max <= 0:
            bad(el, "i_max must be > 0")
        if br.v_nom <= 0:
            bad(el, "v_nom must be > 0")

    for g in net.generators:
        el = f"generator {g.id}"
        if g.bus not in known:
            bad(el, f"references unknown bus {g.bus}")
        if g.p_min > g.p_max:
            bad(el, "p_min > p_max")
        if g.q_min > g.q_max:
            bad(el, "q_min > q_max")
        if g.ramp < 0:
            bad(el, "ramp must be >= 0")

    for e in net.storage:
        el = f"storage {e.id}"
        if e.bus not in known:
            bad(el, f"references unknown bus {e.bus}")
        if not (0 <= e.soc_min <= e.soc_initial <= e.soc_max):
            bad(el, "requires 0 <= soc_min <= soc_initial <= soc_max")
        if e.p_ch_max <= 0 or e.p_dis_max <= 0:
            bad(el, "power limits must be > 0")
        for name in ("eta_ch", "eta_dis"):
            eta = getattr(e, name)
            if not (0 < eta <= 1):
                bad(el, f"{name} must lie in (0, 1] (got {eta})")

    for f in net.flexible_loads:
        el = f"flexible load {f.id}"
        if f.bus not in known:
            bad(el, f"references unknown bus {f.bus}")
        if f.p_inc_max <= 0 or f.p_dec_max <= 0:
            bad(el, "shift limits must be > 0")

    for r in net.res_plants:
        el = f"res plant {r.id}"
        if r.bus not in known:
            bad(el, f"references unknown bus {r.bus}")
        if r.capacity < 0:
            bad(el, "capacity must be >= 0")

    outages = net.contingencies.outages
    if not outages or outages[0] is not None:
        bad("contingencies", "state 0 (intact network) missing")
    seen = set()
    for k, o in enumerate(outages[1:], start=1):
        if o not in br_ids:
            bad(f"contingency {k}", f"removed branch {o} does not exist")
        if o in seen:
            bad(f"contingency {k}", f"duplicate state for branch {o}")
        seen.add(o)

    if not out and net.buses:
        for k in range(len(outages)):
            isolated = _isolated_buses(net, k)
            if isolated:
                bad(f"contingency {k}", f"islands bus(es) {', '.join(isolated)}")
    return out


def _isolated_buses(net: Network, state: int) -> list[str]:
    n = len(net.buses)
    if n <= 1:
        return []
    removed = net.contingencies.outages[state]
    pos = {b.id: i for i, b in enumerate(net.buses)}
    rows, cols = [], []
    for br in net.branches:
        if br.id == removed:
            continue
        rows.append(pos[br.from_bus])
        cols.append(pos[br.to_bus])
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    main = labels[pos[_reference_id(net)]] if any(
        b.is_slack_angle_ref for b in net.buses
    ) else np.bincount(labels).argmax()
    return [net.buses[i].id for i in range(n) if labels[i] != main]


def _reference_id(net: Network) -> str:
    for b in net.buses:
        if b.is_slack_angle_ref:
            return b.id
    return net.buses[0].id


# --------------------------------------------------------------------------
# per unit


@dataclass(frozen=True)
class NormalizedNetwork:
    """Per-unit arrays of a :class:`Network`.

    Branch admittances are the series admittance ``g + jb = 1/(r + jx)`` and
    half of the total line charging on each end. Costs stay in EUR/MWh (and
    EUR/MWh^2 for ``cost_a``); multiply by ``base_mva`` when the decision
    variable is in per unit.
    """

    source: Network
    base_mva: float
    ref_bus: int
    # buses
    v_min: np.ndarray
    v_max: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    lc_cost: np.ndarray  # nan where the document leaves it unset
    # branches
    br_from: np.ndarray
    br_to: np.ndarray
    r: np.ndarray
    x: np.ndarray
    b_sh: np.ndarray
    i_max: np.ndarray
    g: np.ndarray
    b: np.ndarray
    b_sh_half: np.ndarray
    # generators
    gen_bus: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    ramp: np.ndarray
    cost_a: np.ndarray
    cost_b: np.ndarray
    cost_c: np.ndarray
    # storage
    ess_bus: np.ndarray
    soc_min: np.ndarray
    soc_max: np.ndarray
    p_ch_max: np.ndarray
    p_dis_max: np.ndarray
    eta_ch: np.ndarray
    eta_dis: np.ndarray
    soc_initial: np.ndarray
    ess_cost: np.ndarray
    # flexible loads
    fl_bus: np.ndarray
    p_inc_max: np.ndarray
    p_dec_max: np.ndarray
    fl_cost: np.ndarray
    # res
    res_bus: np.ndarray
    res_capacity: np.ndarray
    gc_cost: np.ndarray

    @property
    def n_bus(self) -> int:
        return len(self.v_min)

    @property
    def n_branch(self) -> int:
        return len(self.br_from)

    @property
    def n_gen(self) -> int:
        return len(self.gen_bus)

    @property
    def n_ess(self) -> int:
        return len(self.ess_bus)

    @property
    def n_fl(self) -> int:
        return len(self.fl_bus)

    @property
    def n_res(self) -> int:
        return len(self.res_bus)

    @property
    def contingencies(self) -> ContingencySpec:
        return self.source.contingencies


def _arr(values, dtype=float) -> np.ndarray:
    return np.asarray(list(values), dtype=dtype)


def to_per_unit(net: Network, base_mva: float = 100.0) -> NormalizedNetwork:
    if not base_mva > 0:
        raise ValueError("base_mva must be positive")
    S = float(base_mva)
    pos = {b.id: i for i, b in enumerate(net.buses)}
    ref = next((i for i, b in enumerate(net.buses) if b.is_slack_angle_ref), 0)

    v_nom = _arr(br.v_nom for br in net.branches)
    if np.any(v_nom <= 0):
        raise ValueError("every branch needs v_nom > 0")
    z_base = v_nom**2 / S
    r = _arr(br.r for br in net.branches) / z_base
    x = _arr(br.x for br in net.branches) / z_base
    b_sh = _arr(br.b_sh for br in net.branches) * 1e-6 * z_base
    i_base = S * 1e3 / (math.sqrt(3.0) * v_nom)  # A
    i_max = _arr(br.i_max for br in net.branches) / i_base
    zz = r**2 + x**2
    nan = float("nan")

    G, E, F, R = net.generators, net.storage, net.flexible_loads, net.res_plants
    return NormalizedNetwork(
        source=net,
        base_mva=S,
        ref_bus=ref,
        v_min=_arr(b.v_min for b in net.buses),
        v_max=_arr(b.v_max for b in net.buses),
        p_load=_arr(b.p_load for b in net.buses) / S,
        q_load=_arr(b.q_load for b in net.buses) / S,
        lc_cost=_arr(nan if b.lc_cost is None else b.lc_cost for b in net.buses),
        br_from=_arr((pos[br.from_bus] for br in net.branches), int),
        br_to=_arr((pos[br.to_bus] for br in net.branches), int),
        r=r,
        x=x,
        b_sh=b_sh,
        i_max=i_max,
        g=r / zz,
        b=-x / zz,
        b_sh_half=0.5 * b_sh,
        gen_bus=_arr((pos[g.bus] for g in G), int),
        p_min=_arr(g.p_min for g in G) / S,
        p_max=_arr(g.p_max for g in G) / S,
        q_min=_arr(g.q_min for g in G) / S,
        q_max=_arr(g.q_max for g in G) / S,
        ramp=_arr(g.ramp for g in G) / S,
        cost_a=_arr(g.cost_a for g in G),
        cost_b=_arr(g.cost_b for g in G),
        cost_c=_arr(g.cost_c for g in G),
        ess_bus=_arr((pos[e.bus] for e in E), int),
        soc_min=_arr(e.soc_min for e in E) / S,
        soc_max=_arr(e.soc_max for e in E) / S,
        p_ch_max=_arr(e.p_ch_max for e in E) / S,
        p_dis_max=_arr(e.p_dis_max for e in E) / S,
        eta_ch=_arr(e.eta_ch for e in E),
        eta_dis=_arr(e.eta_dis for e in E),
        soc_initial=_arr(e.soc_initial for e in E) / S,
        ess_cost=_arr(e.cost for e in E),
        fl_bus=_arr((pos[f.bus] for f in F), int),
        p_inc_max=_arr(f.p_inc_max for f in F) / S,
        p_dec_max=_arr(f.p_dec_max for f in F) / S,
        fl_cost=_arr(f.cost for f in F),
        res_bus=_arr((pos[p.bus] for p in R), int),
        res_capacity=_arr(p.capacity for p in R) / S,
        gc_cost=_arr(nan if p.gc_cost is None else p.gc_cost for p in R),
    )


def to_physical(nn: NormalizedNetwork) -> Network:
    """Inverse of :func:`to_per_unit` (element ids and costs come from
    ``nn.source``; every physical quantity is rebuilt from the arrays)."""
    S = nn.base_mva
    src = nn.source
    v_nom = np.array([br.v_nom for br in src.branches])
    z_base = v_nom**2 / S
    i_base = S * 1e3 / (math.sqrt(3.0) * v_nom)

    buses = tuple(
        replace(
            b,
            v_min=float(nn.v_min[i]),
            v_max=float(nn.v_max[i]),
            p_load=float(nn.p_load[i] * S),
            q_load=float(nn.q_load[i] * S),
        )
        for i, b in enumerate(src.buses)
    )
    branches = tuple(
        replace(
            br,
            r=float(nn.r[i] * z_base[i]),
            x=float(nn.x[i] * z_base[i]),
            b_sh=float(nn.b_sh[i] / z_base[i] * 1e6),
            i_max=float(nn.i_max[i] * i_base[i]),
        )
        for i, br in enumerate(src.branches)
    )
    gens = tuple(
        replace(
            g,
            p_min=float(nn.p_min[i] * S),
            p_max=float(nn.p_max[i] * S),
            q_min=float(nn.q_min[i] * S),
            q_max=float(nn.q_max[i] * S),
            ramp=float(nn.ramp[i] * S),
        )
        for i, g in enumerate(src.generators)
    )
    storage = tuple(
        replace(
            e,
            soc_min=float(nn.soc_min[i] * S),
            soc_max=float(nn.soc_max[i] * S),
            p_ch_max=float(nn.p_ch_max[i] * S),
            p_dis_max=float(nn.p_dis_max[i] * S),
            soc_initial=float(nn.soc_initial[i] * S),
        )
        for i, e in enumerate(src.storage)
    )
    fls = tuple(
        replace(
            f,
            p_inc_max=float(nn.p_inc_max[i] * S),
            p_dec_max=float(nn.p_dec_max[i] * S),
        )
        for i, f in enumerate(src.flexible_loads)
    )
    res = tuple(
        replace(p, capacity=float(nn.res_capacity[i] * S))
        for i, p in enumerate(src.res_plants)
    )
    return replace(
        src,
        buses=buses,
        branches=branches,
        generators=gens,
        storage=storage,
        flexible_loads=fls,
        res_plants=res,
    )


# --------------------------------------------------------------------------
# contingency views


@dataclass(frozen=True)
class AdmittanceView:
    state: int
    branches: np.ndarray  # positions of in-service branches
    from_bus: np.ndarray
    to_bus: np.ndarray
    g: np.ndarray
    b: np.ndarray
    b_sh_half: np.ndarray
    i_max: np.ndarray
    g_sum: np.ndarray  # per bus: sum of series conductances to neighbours
    b_sum: np.ndarray  # per bus: sum of (half shunt + series susceptance)


def admittance_view(nn: NormalizedNetwork, state: int) -> AdmittanceView:
    """In-service branches and nodal admittance sums for one operating state.

    Raises :class:`IslandingError` if the outage disconnects any bus.
    """
    spec = nn.contingencies
    if not 0 <= state < len(spec):
        raise IndexError(f"no contingency state {state}")
    isolated = _isolated_buses(nn.source, state)
    if isolated:
        raise IslandingError(state, isolated)
    removed = spec.outages[state]
    keep = np.array(
        [br.id != removed for br in nn.source.branches], dtype=bool
    )
    idx = np.flatnonzero(keep)
    fb, tb = nn.br_from[idx], nn.br_to[idx]
    g, b, bsh = nn.g[idx], nn.b[idx], nn.b_sh_half[idx]
    n = nn.n_bus
    g_sum = np.bincount(fb, g, n) + np.bincount(tb, g, n)
    b_sum = np.bincount(fb, b + bsh, n) + np.bincount(tb, b + bsh, n)
    return AdmittanceView(
        state=state,
        branches=idx,
        from_bus=fb,
        to_bus=tb,
        g=g,
        b=b,
        b_sh_half=bsh,
        i_max=nn.i_max[idx],
        g_sum=g_sum,
        b_sum=b_sum,
    )
