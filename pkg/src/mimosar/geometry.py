"""Array layouts, TDM virtual elements, scan grids and the midpoint phase term.

Coordinates are meters in the aperture plane z = 0: x is the scan
(azimuth) direction, y the direction of the virtual array.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, LayoutError

Point = tuple[float, float]


@dataclass(frozen=True)
class AntennaLayout:
    tx_positions: tuple[Point, ...]
    rx_positions: tuple[Point, ...]
    name: str = ""

    def __post_init__(self):
        tx = tuple((float(x), float(y)) for x, y in self.tx_positions)
        rx = tuple((float(x), float(y)) for x, y in self.rx_positions)
        if not tx or not rx:
            raise LayoutError("layout needs at least one tx and one rx antenna")
        if not all(math.isfinite(v) for p in tx + rx for v in p):
            raise LayoutError("antenna positions must be finite")
        object.__setattr__(self, "tx_positions", tx)
        object.__setattr__(self, "rx_positions", rx)

    @property
    def n_tx(self):
        return len(self.tx_positions)

    @property
    def n_rx(self):
        return len(self.rx_positions)

    def full_tdm_order(self):
        """Every tx fires in turn while all rx listen (tx-major order)."""
        return [(t, r) for t in range(self.n_tx) for r in range(self.n_rx)]


@dataclass(frozen=True)
class VirtualElement:
    """One TDM channel. ``separation`` is ``tx - rx``; the antennas sit at
    ``midpoint +/- separation / 2``."""

    channel_id: int
    tx_index: int
    rx_index: int
    midpoint: Point
    separation: Point

    @property
    def tx_position(self) -> Point:
        return (self.midpoint[0] + self.separation[0] / 2, self.midpoint[1] + self.separation[1] / 2)

    @property
    def rx_position(self) -> Point:
        return (self.midpoint[0] - self.separation[0] / 2, self.midpoint[1] - self.separation[1] / 2)

    @property
    def is_monostatic(self):
        return self.separation == (0.0, 0.0)


def make_element(channel_id, tx_index, rx_index, tx: Point, rx: Point) -> VirtualElement:
    mid = ((tx[0] + rx[0]) / 2, (tx[1] + rx[1]) / 2)
    sep = (tx[0] - rx[0], tx[1] - rx[1])
    return VirtualElement(int(channel_id), int(tx_index), int(rx_index), mid, sep)


def virtual_elements(layout: AntennaLayout, tdm_order=None) -> list[VirtualElement]:
    """One virtual element per (tx, rx) pair, in firing order."""
    if tdm_order is None:
        tdm_order = layout.full_tdm_order()
    elements = []
    for ch, (t, r) in enumerate(tdm_order):
        if not (0 <= t < layout.n_tx and 0 <= r < layout.n_rx):
            raise LayoutError(f"TDM pair ({t}, {r}) does not index the layout "
                              f"({layout.n_tx} tx, {layout.n_rx} rx)")
        elements.append(make_element(ch, t, r, layout.tx_positions[t], layout.rx_positions[r]))
    return elements


def dedupe_elements(elements, tol, axis=None) -> list[VirtualElement]:
    """Keep the first element of every group of coincident midpoints.

    With ``axis`` set to ``"x"`` or ``"y"`` only that midpoint coordinate is
    compared, which is how a 1-D array is thinned when some transmitters sit
    off the array line.
    """
    if tol < 0:
        raise DomainError("dedupe tolerance must be non-negative")
    if axis not in (None, "x", "y"):
        raise DomainError(f"axis must be None, 'x' or 'y', got {axis!r}")
    kept: list[VirtualElement] = []
    kept_xy: list[Point] = []
    for e in elements:
        mx, my = e.midpoint
        dup = False
        for kx, ky in kept_xy:
            if axis == "x":
                d = abs(mx - kx)
            elif axis == "y":
                d = abs(my - ky)
            else:
                d = math.hypot(mx - kx, my - ky)
            if d <= tol:
                dup = True
                break
        if not dup:
            kept.append(e)
            kept_xy.append((mx, my))
    return kept


def midpoint_phase(elem: VirtualElement, k, z_ref, exact=False):
    """Excess two-way phase of a bistatic pair over its midpoint monostat.

    For a reflector straight ahead of the midpoint at range ``z_ref`` the
    bistatic path exceeds ``2 z_ref`` by ``Phi / k``. The default is the
    second-order expansion ``k ((dx/2)^2 + (dy/2)^2) / z_ref``; ``exact``
    evaluates the two square roots.
    """
    if not z_ref > 0:
        raise DomainError(f"z_ref must be positive, got {z_ref}")
    k = np.asarray(k, dtype=float)
    h2 = (elem.separation[0] / 2) ** 2 + (elem.separation[1] / 2) ** 2
    if exact:
        # sqrt(h2 + z^2) - z, written to avoid cancellation for small h
        excess = 2 * h2 / (math.sqrt(h2 + z_ref ** 2) + z_ref)
    else:
        excess = h2 / z_ref
    return k * excess


@dataclass(frozen=True)
class ApertureScan:
    x_positions: tuple[float, ...]
    y_positions: tuple[float, ...] = (0.0,)
    tolerance: float = 1e-9

    def __post_init__(self):
        xs = tuple(float(v) for v in self.x_positions)
        ys = tuple(float(v) for v in self.y_positions)
        if not xs or not ys:
            raise ConfigError("scan needs at least one position per axis")
        for name, arr in (("x", xs), ("y", ys)):
            if len(arr) > 1:
                d = np.diff(arr)
                if np.any(d <= 0):
                    raise ConfigError(f"{name} scan positions must be strictly increasing")
                if np.ptp(d) > self.tolerance + 1e-12 * abs(d).max():
                    raise ConfigError(f"{name} scan positions are not uniformly spaced")
        object.__setattr__(self, "x_positions", xs)
        object.__setattr__(self, "y_positions", ys)

    @property
    def x_step(self):
        xs = self.x_positions
        return (xs[-1] - xs[0]) / (len(xs) - 1) if len(xs) > 1 else 0.0

    @property
    def y_step(self):
        ys = self.y_positions
        return (ys[-1] - ys[0]) / (len(ys) - 1) if len(ys) > 1 else 0.0

    @property
    def x_extent(self):
        return self.x_positions[-1] - self.x_positions[0]

    @property
    def y_extent(self):
        return self.y_positions[-1] - self.y_positions[0]

    @property
    def shape(self):
        return (len(self.y_positions), len(self.x_positions))


def scan_positions(x_count, x_step, y_count=1, y_step=None, centered=True) -> ApertureScan:
    """Uniform two-axis scanner grid, centred on the origin by default."""
    if int(x_count) < 1 or int(y_count) < 1:
        raise ConfigError("scan counts must be positive")
    if not x_step > 0:
        raise ConfigError("x step must be positive")
    if y_step is None:
        y_step = x_step
    if not y_step > 0:
        raise ConfigError("y step must be positive")

    def axis(n, step):
        i = np.arange(int(n), dtype=float)
        if centered:
            i -= (int(n) - 1) / 2
        return tuple(i * step)

    return ApertureScan(axis(x_count, x_step), axis(y_count, y_step))


def expand_channels(elements, scan: ApertureScan) -> list[VirtualElement]:
    """Replicate the array at every scanner elevation; channels renumbered
    elevation-major."""
    if scan.y_positions == (0.0,):
        return [replace(e, channel_id=i) for i, e in enumerate(elements)]
    out = []
    for y in scan.y_positions:
        for e in elements:
            out.append(replace(e, channel_id=len(out), midpoint=(e.midpoint[0], e.midpoint[1] + y)))
    return out


def antenna_arrays(elements):
    """``(tx, rx)`` position arrays of shape (n_chan, 2)."""
    tx = np.array([e.tx_position for e in elements], dtype=float).reshape(-1, 2)
    rx = np.array([e.rx_position for e in elements], dtype=float).reshape(-1, 2)
    return tx, rx


def monostatic_elements(elements) -> list[VirtualElement]:
    return [replace(e, separation=(0.0, 0.0)) for e in elements]


# -- layout files -----------------------------------------------------------

def parse_layout(text, name="") -> AntennaLayout:
    """Parse ``tx|rx index x_mm y_mm`` lines; ``#`` starts a comment."""
    tx: dict[int, Point] = {}
    rx: dict[int, Point] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4 or parts[0] not in ("tx", "rx"):
            raise LayoutError(f"layout line {lineno}: expected 'tx|rx index x_mm y_mm'")
        try:
            idx = int(parts[1])
            pos = (float(parts[2]) * 1e-3, float(parts[3]) * 1e-3)
        except ValueError as exc:
            raise LayoutError(f"layout line {lineno}: {exc}") from None
        table = tx if parts[0] == "tx" else rx
        if idx in table:
            raise LayoutError(f"layout line {lineno}: duplicate {parts[0]} index {idx}")
        table[idx] = pos
    for label, table in (("tx", tx), ("rx", rx)):
        if sorted(table) != list(range(len(table))):
            raise LayoutError(f"{label} indices must be 0..n-1 without gaps")
    return AntennaLayout(tuple(tx[i] for i in range(len(tx))),
                         tuple(rx[i] for i in range(len(rx))), name=name)


def read_layout(path) -> AntennaLayout:
    path = Path(path)
    return parse_layout(path.read_text(), name=path.stem)


def format_layout(layout: AntennaLayout) -> str:
    lines = [f"# {layout.name}" if layout.name else "# antenna layout", "# kind index x_mm y_mm"]
    for kind, table in (("tx", layout.tx_positions), ("rx", layout.rx_positions)):
        for i, (x, y) in enumerate(table):
            lines.append(f"{kind} {i} {x * 1e3!r} {y * 1e3!r}")
    return "\n".join(lines) + "\n"


BUILTIN_LAYOUTS = {"tidep-01012": "tidep01012.layout"}


def builtin_layout(name="tidep-01012") -> AntennaLayout:
    try:
        fname = BUILTIN_LAYOUTS[name]
    except KeyError:
        raise LayoutError(f"unknown built-in layout {name!r}") from None
    text = resources.files("mimosar").joinpath("data", fname).read_text()
    return parse_layout(text, name=name)
