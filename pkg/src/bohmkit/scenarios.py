"""Scenario configuration: schema, parsing, validation and state builders.

Configs are plain-text key = value sections (INI style).  `describe_schema`
renders the full schema; `parse_config` validates a file and reports every
problem at once, naming the nearest valid key for unknown ones.  The builder
functions turn a validated config into grids, states and operators, and are
shared by the command-line runner and the test scenarios.
"""

import configparser
import difflib
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fileio import config_hash_of
from .wavefield import Grid, Wavefunction, PotentialSpec, HamiltonianSpec, \
    build_hamiltonian, gaussian_packet

KINDS = ("evolve", "trajectories", "cwf", "observable", "weakvalue",
         "strongmeasure", "correlate", "work", "dwell", "current", "unravel",
         "diagnose")

SI_HBAR = 1.054571817e-34


@dataclass
class Key:
    kind: str                   # int | float | bool | str | choice | list
    required: bool = False
    default: object = None
    choices: tuple = ()
    minimum: float = None
    positive: bool = False
    help: str = ""


def _k(kind, **kw):
    return Key(kind, **kw)


SCHEMA = {
    "scenario": {
        "kind": _k("choice", required=True, choices=KINDS,
                   help="what to run"),
        "seed": _k("int", default=1234, minimum=0, help="master RNG seed"),
    },
    "natural-units": {},
    "si-units": {
        "hbar": _k("float", default=SI_HBAR, positive=True),
    },
    "grid": {
        "x_min": _k("float", required=True),
        "x_max": _k("float", required=True),
        "x_points": _k("int", required=True, minimum=16),
        "y_min": _k("float"),
        "y_max": _k("float"),
        "y_points": _k("int", minimum=16),
    },
    "masses": {
        "x": _k("float", default=1.0, positive=True),
        "y": _k("float", default=1.0, positive=True),
    },
    "initial": {
        "type": _k("choice", required=True,
                   choices=("gaussian", "two_gaussian", "eigenstate",
                            "superposition", "uniform")),
        "center": _k("float", default=0.0),
        "center_x": _k("float", default=0.0),
        "center_y": _k("float", default=0.0),
        "width": _k("float", default=1.0, positive=True),
        "momentum": _k("float", default=0.0),
        "momentum_x": _k("float", default=0.0),
        "momentum_y": _k("float", default=0.0),
        "phase_curvature": _k("float", default=0.0,
                              help="adds exp(i a (x-center)^2)"),
        "separation": _k("float", default=1.5,
                         help="two_gaussian branch offset"),
        "index": _k("int", default=0, minimum=0,
                    help="eigenstate number"),
        "coeffs": _k("list", default=(1.0,),
                     help="superposition coefficients over eigenstates"),
    },
    "potential": {
        "type": _k("choice", default="free",
                   choices=("free", "harmonic", "barrier")),
        "omega": _k("float", default=1.0, positive=True),
        "height": _k("float", default=1.0),
        "center": _k("float", default=0.0),
        "width": _k("float", default=1.0, positive=True),
        "coupling": _k("choice", default="none",
                       choices=("none", "bilinear")),
        "coupling_strength": _k("float", default=0.0),
    },
    "evolution": {
        "dt": _k("float", required=True, positive=True),
        "steps": _k("int", required=True, minimum=1),
        "store_every": _k("int", default=1, minimum=1),
    },
    "ensemble": {
        "count": _k("int", required=True, minimum=1),
        "substeps": _k("int", default=1, minimum=1),
        "stored": _k("int", default=200, minimum=1,
                     help="trajectories written to disk"),
    },
    "conditional": {
        "trajectories": _k("int", default=4, minimum=1),
        "include_drift": _k("bool", default=True,
                            help="drive slices with the advection residue"),
        "store_every": _k("int", default=0, minimum=0),
    },
    "observable": {
        "operator": _k("choice", required=True,
                       choices=("position", "momentum", "kinetic",
                                "hamiltonian", "position_squared")),
        "step": _k("int", default=-1, help="stored step index to evaluate"),
    },
    "weakvalue": {
        "operator": _k("choice", default="momentum",
                       choices=("position", "momentum")),
        "strength": _k("float", required=True, positive=True),
        "compare_strength": _k("float", default=0.0),
        "pointer_width": _k("float", default=1.0, positive=True),
        "window": _k("float", default=1.0, positive=True),
        "steps": _k("int", default=64, minimum=1),
        "bin_center": _k("float", required=True),
        "bin_width": _k("float", required=True, positive=True),
        "runs": _k("int", default=100000, minimum=1),
    },
    "strongmeasure": {
        "amplitudes": _k("list", required=True,
                         help="system level amplitudes"),
        "operator_diag": _k("list", required=True,
                            help="eigenvalues of the measured operator"),
        "strength": _k("float", required=True, positive=True),
        "pointer_width": _k("float", default=1.0, positive=True),
        "window": _k("float", default=1.0, positive=True),
        "steps": _k("int", default=48, minimum=1),
        "runs": _k("int", default=10000, minimum=1),
    },
    "correlate": {
        "operator_a": _k("choice", required=True,
                         choices=("position", "momentum", "kinetic",
                                  "hamiltonian", "position_squared"),
                         help="evaluated at the later step"),
        "operator_b": _k("choice", required=True,
                         choices=("position", "momentum", "kinetic",
                                  "hamiltonian", "position_squared")),
        "step_1": _k("int", default=0),
        "step_2": _k("int", default=-1),
    },
    "work": {
        "step_start": _k("int", default=0),
        "step_end": _k("int", default=-1),
        "windows": _k("int", default=1, minimum=1,
                      help="telescoping sub-windows"),
    },
    "region": {
        "lo": _k("float", required=True),
        "hi": _k("float", required=True),
    },
    "current": {
        "device_lo": _k("float", required=True),
        "device_hi": _k("float", required=True),
        "surfaces": _k("list", default=(0.5,),
                       help="surface positions for the direct oracle"),
        "charge": _k("float", default=1.0),
        "permittivity": _k("float", default=1.0, positive=True),
        "mode": _k("choice", default="uniform",
                   choices=("ensemble", "uniform")),
        "velocity": _k("float", default=1.0,
                       help="uniform-mode carrier speed"),
        "transit_steps": _k("int", default=400, minimum=4),
    },
    "collision": {
        "model": _k("choice", required=True,
                    choices=("damping", "partial_swap")),
        "angle": _k("float", required=True),
        "steps": _k("int", default=20, minimum=1),
        "records": _k("int", default=5000, minimum=1),
        "stored": _k("int", default=25, minimum=1,
                     help="per-record histories written to disk"),
        "dt": _k("float", default=1.0, positive=True),
        "initial": _k("list", default=(0.0, 1.0),
                      help="system level amplitudes"),
        "drift": _k("choice", default="none", choices=("none", "rabi")),
        "drift_rate": _k("float", default=0.0),
        "dimension_cap": _k("int", default=2**14, minimum=4,
                            help="fresh-ancilla oracle joint dimension cap"),
    },
}

KIND_SECTIONS = {
    "evolve": ("grid", "initial", "evolution"),
    "trajectories": ("grid", "initial", "evolution", "ensemble"),
    "cwf": ("grid", "initial", "evolution", "conditional"),
    "observable": ("grid", "initial", "evolution", "ensemble", "observable"),
    "weakvalue": ("grid", "initial", "weakvalue"),
    "strongmeasure": ("strongmeasure",),
    "correlate": ("grid", "initial", "evolution", "ensemble", "correlate"),
    "work": ("grid", "initial", "evolution", "ensemble", "work"),
    "dwell": ("grid", "initial", "evolution", "ensemble", "region"),
    "current": ("current",),
    "unravel": ("collision",),
    "diagnose": ("collision",),
}


def _coerce(raw, key):
    if key.kind == "int":
        val = int(raw)
    elif key.kind == "float":
        val = float(raw)
    elif key.kind == "bool":
        low = raw.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {raw!r}")
        val = low in ("true", "1", "yes")
    elif key.kind == "choice":
        val = raw.strip()
        if val not in key.choices:
            near = difflib.get_close_matches(val, key.choices, n=1)
            hint = f"; did you mean '{near[0]}'?" if near else ""
            raise ValueError(
                f"'{val}' is not one of {', '.join(key.choices)}{hint}")
    elif key.kind == "list":
        val = tuple(float(tok) for tok in raw.replace(";", ",").split(",")
                    if tok.strip())
        if not val:
            raise ValueError("empty list")
    else:
        val = raw.strip()
    if key.minimum is not None and np.isscalar(val) and val < key.minimum:
        raise ValueError(f"must be >= {key.minimum}, got {val}")
    if key.positive and np.isscalar(val) and not val > 0:
        raise ValueError(f"must be positive, got {val}")
    return val


@dataclass
class ScenarioConfig:
    kind: str
    seed: int
    sections: dict
    config_hash: str
    units: str = "natural"
    hbar: float = 1.0
    text: str = ""

    def get(self, section, key=None):
        if key is None:
            return self.sections.get(section, {})
        return self.sections[section][key]

    def has(self, section):
        return section in self.sections


def validate_text(text):
    """Returns (config or None, list of error strings)."""
    errors = []
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        return None, [f"parse error: {exc}"]

    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            near = difflib.get_close_matches(name, SCHEMA.keys(), n=1)
            hint = f"; did you mean [{near[0]}]?" if near else ""
            errors.append(f"unknown section [{name}]{hint}")
            continue
        spec = SCHEMA[name]
        values = {}
        for key_name, raw in parser.items(name):
            if key_name not in spec:
                near = difflib.get_close_matches(key_name, spec.keys(), n=1)
                hint = f"; nearest valid key is '{near[0]}'" if near else ""
                errors.append(f"[{name}] unknown key '{key_name}'{hint}")
                continue
            try:
                values[key_name] = _coerce(raw, spec[key_name])
            except ValueError as exc:
                errors.append(f"[{name}] {key_name}: {exc}")
        for key_name, key in spec.items():
            if key_name not in values:
                if key.required:
                    errors.append(f"[{name}] missing required key "
                                  f"'{key_name}'")
                elif key.default is not None:
                    values[key_name] = key.default
        sections[name] = values

    if "scenario" not in sections:
        errors.append("missing required section [scenario]")
        return None, errors
    kind = sections["scenario"].get("kind")
    if kind in KIND_SECTIONS:
        for needed in KIND_SECTIONS[kind]:
            if needed not in sections:
                errors.append(
                    f"scenario kind '{kind}' requires section [{needed}]")
        if kind == "cwf" and "grid" in sections:
            g = sections["grid"]
            if not all(k in g for k in ("y_min", "y_max", "y_points")):
                errors.append("cwf scenarios need a 2D grid "
                              "(y_min, y_max, y_points)")
        if kind == "current" and "current" in sections \
                and sections["current"].get("mode", "uniform") == "ensemble":
            for needed in ("grid", "initial", "evolution", "ensemble"):
                if needed not in sections:
                    errors.append("current scenarios in ensemble mode "
                                  f"require section [{needed}]")
    if "natural-units" in sections and "si-units" in sections:
        errors.append("both [natural-units] and [si-units] given; "
                      "choose exactly one unit system")
    if "grid" in sections:
        g = sections["grid"]
        have_y = [k for k in ("y_min", "y_max", "y_points") if k in g]
        if have_y and len(have_y) != 3:
            errors.append("grid: give all of y_min, y_max, y_points or none")
        if "x_min" in g and "x_max" in g and g["x_max"] <= g["x_min"]:
            errors.append("grid: x_max must exceed x_min")
        if len(have_y) == 3 and g["y_max"] <= g["y_min"]:
            errors.append("grid: y_max must exceed y_min")
    if errors:
        return None, errors

    units = "si" if "si-units" in sections else "natural"
    hbar = sections.get("si-units", {}).get("hbar", 1.0) if units == "si" \
        else 1.0
    cfg = ScenarioConfig(kind, sections["scenario"]["seed"], sections,
                         config_hash_of(text), units, hbar, text)
    return cfg, []


def parse_config(path):
    with io.open(path, "r") as fh:
        text = fh.read()
    cfg, errors = validate_text(text)
    if errors:
        raise ConfigurationError("\n".join(errors))
    return cfg


def describe_schema():
    out = ["Scenario configs are INI-style 'key = value' sections.",
           "Scenario kinds: " + ", ".join(KINDS), ""]
    for name, spec in SCHEMA.items():
        out.append(f"[{name}]")
        if not spec:
            out.append("  (no keys)")
        for key_name, key in spec.items():
            bits = [key.kind]
            if key.required:
                bits.append("required")
            elif key.default is not None:
                bits.append(f"default={key.default}")
            if key.choices:
                bits.append("one of: " + "|".join(str(c)
                                                  for c in key.choices))
            if key.minimum is not None:
                bits.append(f">= {key.minimum}")
            if key.positive:
                bits.append("> 0")
            if key.help:
                bits.append(key.help)
            out.append(f"  {key_name} = <{'; '.join(bits)}>")
        out.append("")
    out.append("Sections required per kind:")
    for kind, needed in KIND_SECTIONS.items():
        out.append(f"  {kind}: scenario + {', '.join(needed)}")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# builders shared by the runner and the test scenarios


def build_grid(cfg):
    g = cfg.get("grid")
    if "y_points" in g and "y_min" in g:
        return Grid.box((g["x_min"], g["x_max"], g["x_points"]),
                        (g["y_min"], g["y_max"], g["y_points"]))
    return Grid.line(g["x_min"], g["x_max"], g["x_points"])


def build_masses(cfg, ndim):
    m = cfg.get("masses")
    if ndim == 1:
        return (m.get("x", 1.0),)
    return (m.get("x", 1.0), m.get("y", 1.0))


def build_potential(cfg, masses, hbar):
    p = cfg.get("potential")
    kind = p.get("type", "free")
    spec = PotentialSpec()
    if kind == "harmonic":
        omega = p.get("omega", 1.0)
        spec.u_x = lambda x: 0.5 * masses[0] * omega**2 * x**2
        if len(masses) > 1:
            spec.u_y = lambda y: 0.5 * masses[1] * omega**2 * y**2
    elif kind == "barrier":
        height, center, width = (p.get("height", 1.0), p.get("center", 0.0),
                                 p.get("width", 1.0))
        spec.u_x = lambda x: np.where(np.abs(x - center) <= 0.5 * width,
                                      height, 0.0)
    if p.get("coupling", "none") == "bilinear" and len(masses) > 1:
        k = p.get("coupling_strength", 0.0)
        spec.u_xy = lambda x, y: k * x * y
    return spec


def eigenstates_1d(grid, potential_spec, mass, hbar, count):
    """Lowest eigenvectors of the discrete 1D Hamiltonian, grid-normalized."""
    from scipy.linalg import eigh_tridiagonal
    h = grid.spacings[0]
    u = potential_spec.on_grid(grid)
    diag = hbar**2 / (mass * h * h) + u
    off = np.full(grid.shape[0] - 1, -hbar**2 / (2.0 * mass * h * h))
    vals, vecs = eigh_tridiagonal(diag, off,
                                  select="i", select_range=(0, count - 1))
    states = []
    for i in range(count):
        v = vecs[:, i] / np.sqrt(np.sum(vecs[:, i] ** 2) * h)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        states.append(Wavefunction(grid, v.astype(complex)))
    return vals, states


def build_initial(cfg, grid, masses, hbar):
    ini = cfg.get("initial")
    kind = ini["type"]
    if kind == "gaussian":
        if grid.ndim == 1:
            psi = gaussian_packet(grid, ini.get("center", 0.0),
                                  ini.get("width", 1.0),
                                  ini.get("momentum", 0.0))
            a = ini.get("phase_curvature", 0.0)
            if a:
                x = grid.nodes(0)
                amps = psi.amplitudes * np.exp(
                    1j * a * (x - ini.get("center", 0.0)) ** 2)
                psi = Wavefunction(grid, amps).normalize()
            return psi
        return gaussian_packet(
            grid, (ini.get("center_x", 0.0), ini.get("center_y", 0.0)),
            ini.get("width", 1.0),
            (ini.get("momentum_x", 0.0), ini.get("momentum_y", 0.0)))
    if kind == "two_gaussian":
        if grid.ndim != 2:
            raise ConfigurationError("two_gaussian initial state needs a "
                                     "2D grid")
        s = ini.get("separation", 1.5)
        w = ini.get("width", 1.0)
        x, y = grid.meshes()

        def g(u, c):
            return np.exp(-(u - c) ** 2 / (4.0 * w**2))

        amps = g(x, -s) * g(y, -s) + g(x, s) * g(y, s)
        return Wavefunction(grid, amps).normalize()
    if kind == "uniform":
        amps = np.ones(grid.shape, dtype=complex)
        return Wavefunction(grid, amps).normalize()
    if kind in ("eigenstate", "superposition"):
        if grid.ndim != 1:
            raise ConfigurationError(f"{kind} initial state needs a 1D grid")
        pot = build_potential(cfg, masses, hbar)
        if kind == "eigenstate":
            n = ini.get("index", 0)
            _, states = eigenstates_1d(grid, pot, masses[0], hbar, n + 1)
            return states[n]
        coeffs = np.asarray(ini.get("coeffs", (1.0,)), dtype=complex)
        _, states = eigenstates_1d(grid, pot, masses[0], hbar, len(coeffs))
        amps = sum(c * s.amplitudes for c, s in zip(coeffs, states))
        return Wavefunction(grid, amps).normalize()
    raise ConfigurationError(f"unhandled initial state type {kind!r}")


def build_hamiltonian_from(cfg):
    grid = build_grid(cfg)
    masses = build_masses(cfg, grid.ndim)
    pot = build_potential(cfg, masses, cfg.hbar)
    spec = HamiltonianSpec(masses, pot, cfg.hbar)
    return grid, masses, build_hamiltonian(spec, grid)
