"""Sky/array data model and noise-free visibility synthesis.

Array conventions:

* A Jones set is a complex ndarray of shape (D, M, 2, 2); the per-path
  parameter vector is the row-major flattening ``[J11, J12, J21, J22]``.
* Baselines are the ordered pairs (p, q) with p < q, 0-based, in
  lexicographic order (0,1), (0,2), ..., (M-2, M-1); B = M(M-1)/2.
* A visibility batch stores one 4-vector per baseline (column-major
  vectorization of the 2x2 correlation), shape (B, 4).
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .algebra import vec2
from .errors import ConfigError
from .serialize import complex_to_pairs, pairs_to_complex


@lru_cache(maxsize=None)
def baseline_pairs(m: int) -> np.ndarray:
    """(B, 2) read-only array of antenna pairs in lexicographic order, p < q."""
    pairs = np.array([(p, q) for p in range(m) for q in range(p + 1, m)], dtype=int)
    pairs.flags.writeable = False
    return pairs


@lru_cache(maxsize=None)
def pair_to_index(m: int) -> np.ndarray:
    """(M, M) read-only lookup mapping (p, q), p < q, to its baseline row."""
    idx = np.full((m, m), -1, dtype=int)
    for b, (p, q) in enumerate(baseline_pairs(m)):
        idx[p, q] = b
    idx.flags.writeable = False
    return idx


@dataclass(frozen=True)
class AntennaArray:
    """Antenna (u, v) positions in units of wavelength, shape (M, 2)."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 2:
            raise ConfigError("antennas", "need an (M >= 2, 2) position table")
        if not np.all(np.isfinite(pos)):
            raise ConfigError("antennas", "positions must be finite")
        object.__setattr__(self, "positions", pos)

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    @property
    def n_baselines(self) -> int:
        return self.m * (self.m - 1) // 2

    def gram(self) -> np.ndarray:
        """2x2 Gram matrix of positions; must be nonsingular for offset fits."""
        u, v = self.positions[:, 0], self.positions[:, 1]
        return np.array([[u @ u, u @ v], [u @ v, v @ v]])


@dataclass(frozen=True)
class SourceModel:
    """Known calibrator coherencies (D, 2, 2), optional beams (D, M, 2, 2)."""

    coherencies: np.ndarray
    beams: np.ndarray | None = None

    def __post_init__(self):
        coh = np.asarray(self.coherencies, dtype=complex)
        if coh.ndim != 3 or coh.shape[1:] != (2, 2) or coh.shape[0] < 1:
            raise ConfigError("sources", "coherencies must have shape (D >= 1, 2, 2)")
        herm = np.max(np.abs(coh - np.conj(np.swapaxes(coh, -1, -2))))
        if herm > 1e-10 * max(1.0, np.max(np.abs(coh))):
            raise ConfigError("sources", "each coherency must be Hermitian")
        eigs = np.linalg.eigvalsh(coh)
        if np.min(eigs) < -1e-10 * max(1.0, np.max(np.abs(eigs))):
            raise ConfigError("sources", "each coherency must be PSD")
        object.__setattr__(self, "coherencies", coh)
        if self.beams is not None:
            b = np.asarray(self.beams, dtype=complex)
            if b.shape[0] != coh.shape[0] or b.shape[2:] != (2, 2):
                raise ConfigError("sources.beams", "beams must have shape (D, M, 2, 2)")
            object.__setattr__(self, "beams", b)

    @property
    def d(self) -> int:
        return self.coherencies.shape[0]

    def c_vecs(self) -> np.ndarray:
        """(D, 4) column-major vectorizations of the coherencies."""
        return vec2(self.coherencies)

    def beam(self, i: int, p: int) -> np.ndarray:
        if self.beams is None:
            return np.eye(2, dtype=complex)
        return self.beams[i, p]


@dataclass(frozen=True)
class StructuredParams:
    """Physical parameters of the structured (compact-array) Jones model.

    faraday: (D,) rotation angles in (-pi/2, pi/2]
    gains:   (M, 2) complex per-antenna electronic gains
    offsets: (D, 2) apparent-direction shifts (eta, zeta), radians per
             wavelength unit of antenna position

    The canonical flat ordering is [faraday_1..D, gains_1..M, offsets_1..D].
    """

    faraday: np.ndarray
    gains: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.faraday, dtype=float)
        g = np.asarray(self.gains, dtype=complex)
        al = np.asarray(self.offsets, dtype=float)
        if th.ndim != 1:
            raise ConfigError("faraday", "expected a (D,) angle vector")
        if g.ndim != 2 or g.shape[1] != 2:
            raise ConfigError("gains", "expected an (M, 2) complex table")
        if al.shape != (th.shape[0], 2):
            raise ConfigError("offsets", "expected a (D, 2) real table")
        if not (np.all(np.isfinite(th)) and np.all(np.isfinite(g)) and np.all(np.isfinite(al))):
            raise ConfigError("structured", "parameters must be finite")
        if np.any(th <= -np.pi / 2 - 1e-12) or np.any(th > np.pi / 2 + 1e-12):
            raise ConfigError("faraday", "angles must lie in (-pi/2, pi/2]")
        object.__setattr__(self, "faraday", th)
        object.__setattr__(self, "gains", g)
        object.__setattr__(self, "offsets", al)

    @property
    def d(self) -> int:
        return self.faraday.shape[0]

    @property
    def m(self) -> int:
        return self.gains.shape[0]

    def to_real_vector(self) -> np.ndarray:
        """Flat real vector [faraday | Re/Im gains (x then y) | offsets]."""
        g = np.column_stack(
            [self.gains[:, 0].real, self.gains[:, 0].imag,
             self.gains[:, 1].real, self.gains[:, 1].imag]
        ).reshape(-1)
        return np.concatenate([self.faraday, g, self.offsets.reshape(-1)])

    def to_json_obj(self):
        return {
            "faraday": self.faraday.tolist(),
            "gains": complex_to_pairs(self.gains),
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_json_obj(cls, obj):
        return cls(
            faraday=np.asarray(obj["faraday"], dtype=float),
            gains=pairs_to_complex(obj["gains"]),
            offsets=np.asarray(obj["offsets"], dtype=float),
        )


@dataclass
class VisibilityBatch:
    """Per-baseline 4-vector measurements, baseline-ordered, shape (B, 4)."""

    data: np.ndarray
    n_antennas: int

    def __post_init__(self):
        d = np.asarray(self.data, dtype=complex)
        b = self.n_antennas * (self.n_antennas - 1) // 2
        if d.shape != (b, 4):
            raise ConfigError("visibilities", f"expected shape ({b}, 4) for M={self.n_antennas}")
        self.data = d

    @property
    def n_baselines(self) -> int:
        return self.data.shape[0]

    def pairs(self) -> np.ndarray:
        return baseline_pairs(self.n_antennas)

    def to_json_obj(self):
        return {
            "n_antennas": self.n_antennas,
            "baselines": self.pairs().tolist(),
            "data": complex_to_pairs(self.data),
        }

    @classmethod
    def from_json_obj(cls, obj):
        return cls(data=pairs_to_complex(obj["data"]), n_antennas=int(obj["n_antennas"]))


def rotation(theta: float) -> np.ndarray:
    """2x2 polarization-plane rotation."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def build_structured_jones(
    params: StructuredParams,
    sources: SourceModel,
    array: AntennaArray,
    i: int,
    p: int,
) -> np.ndarray:
    """Jones matrix for path (source i, antenna p): gain * beam * phase * rotation.

    The scalar phase is exp{j (eta_i u_p + zeta_i v_p)}; the rotation angle is
    the per-source Faraday angle shared by all antennas.
    """
    g = np.diag(params.gains[p])
    h = sources.beam(i, p)
    phi = params.offsets[i] @ array.positions[p]
    z = np.exp(1j * phi)
    f = rotation(params.faraday[i])
    return g @ h @ (z * f)


def structured_jones_all(
    params: StructuredParams, sources: SourceModel, array: AntennaArray
) -> np.ndarray:
    """(D, M, 2, 2) Jones set synthesized from structured parameters."""
    d, m = params.d, params.m
    out = np.empty((d, m, 2, 2), dtype=complex)
    for i in range(d):
        for p in range(m):
            out[i, p] = build_structured_jones(params, sources, array, i, p)
    return out


def synth_baseline(jones: np.ndarray, sources: SourceModel, p: int, q: int) -> np.ndarray:
    """Noise-free visibility 4-vector for baseline (p, q), p < q.

    Equals vec2 of sum_i J_{i,p} C_i J_{i,q}^H.
    """
    if not p < q:
        raise ValueError("baseline requires p < q")
    v = np.zeros((2, 2), dtype=complex)
    for i in range(sources.d):
        v += jones[i, p] @ sources.coherencies[i] @ jones[i, q].conj().T
    return vec2(v)


def synth_per_source(jones: np.ndarray, sources: SourceModel) -> np.ndarray:
    """(D, B, 4) per-source visibility contributions over all baselines."""
    d, m = jones.shape[:2]
    pairs = baseline_pairs(m)
    jp = jones[:, pairs[:, 0]]          # (D, B, 2, 2)
    jq = jones[:, pairs[:, 1]]
    coh = sources.coherencies[:, None]  # (D, 1, 2, 2)
    v = jp @ coh @ np.conj(np.swapaxes(jq, -1, -2))
    return vec2(v)


def synth_all(jones: np.ndarray, sources: SourceModel) -> VisibilityBatch:
    """Noise-free visibility batch over all baselines in canonical order."""
    contrib = synth_per_source(jones, sources)
    return VisibilityBatch(data=contrib.sum(axis=0), n_antennas=jones.shape[1])


@dataclass(frozen=True)
class Scene:
    """A simulation scene: antenna layout, sources, and the truth Jones set.

    ``structured_truth`` is set when the truth was specified physically; the
    expanded ``jones_truth`` is always available.
    """

    array: AntennaArray
    sources: SourceModel
    jones_truth: np.ndarray
    structured_truth: StructuredParams | None = field(default=None)

    @property
    def d(self) -> int:
        return self.sources.d

    @property
    def m(self) -> int:
        return self.array.m

    def to_json_obj(self):
        obj = {
            "antennas": self.array.positions.tolist(),
            "sources": [
                {"coherency": complex_to_pairs(self.sources.coherencies[i])}
                for i in range(self.sources.d)
            ],
        }
        if self.sources.beams is not None:
            for i, src in enumerate(obj["sources"]):
                src["beams"] = complex_to_pairs(self.sources.beams[i])
        if self.structured_truth is not None:
            obj["truth"] = {"kind": "structured", **self.structured_truth.to_json_obj()}
        else:
            obj["truth"] = {"kind": "unstructured", "jones": complex_to_pairs(self.jones_truth)}
        return obj

    @classmethod
    def from_json_obj(cls, obj):
        try:
            array = AntennaArray(np.asarray(obj["antennas"], dtype=float))
        except KeyError:
            raise ConfigError("antennas", "missing antenna table")
        if "sources" not in obj or not obj["sources"]:
            raise ConfigError("sources", "missing source list")
        coh = np.stack([pairs_to_complex(s["coherency"]) for s in obj["sources"]])
        beams = None
        if all("beams" in s for s in obj["sources"]):
            beams = np.stack([pairs_to_complex(s["beams"]) for s in obj["sources"]])
        sources = SourceModel(coherencies=coh, beams=beams)
        truth = obj.get("truth")
        if truth is None:
            raise ConfigError("truth", "missing truth block")
        kind = truth.get("kind")
        if kind == "unstructured":
            jones = pairs_to_complex(truth["jones"])
            if jones.shape != (sources.d, array.m, 2, 2):
                raise ConfigError("truth.jones", f"expected shape ({sources.d}, {array.m}, 2, 2)")
            return cls(array=array, sources=sources, jones_truth=jones)
        if kind == "structured":
            params = StructuredParams.from_json_obj(truth)
            if params.d != sources.d or params.m != array.m:
                raise ConfigError("truth", "structured truth dimensions disagree with scene")
            jones = structured_jones_all(params, sources, array)
            return cls(array=array, sources=sources, jones_truth=jones, structured_truth=params)
        raise ConfigError("truth.kind", "must be 'unstructured' or 'structured'")
