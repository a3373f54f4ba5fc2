"""Preset scenes and the JSON scenario-file schema.

Scenario file (JSON object)::

    {
      "name": "my-scene",
      "preset": "cos3",                     # optional base preset, other keys override it
      "h": 0.05,
      "mfp_mult": 8,                        # or "volume": {"sigma_a": .., "sigma_s": .., "phase": ..,
                                            #               "regions": [[xmin, xmax, ymin, ymax, sa, ss], ...]}
      "pieces": [{"kind": "line", "params": [x0, y0, x1, y1], "material": "wall"},
                 {"kind": "arc", "params": [cx, cy, r, th0, th1], "material": "detector"},
                 {"kind": "cos3", "params": [x0, x1, c, amp], "material": "ground"}],
      "materials": {"wall": {"alpha": 0.5, "kernel": "lambertian"}, "detector": {"g0": 1.0}},
      "source": {"material": "sky-source", "base": 1.0, "amp": 0.0, "period": 0.0, "direction": [0, -1]}
    }

Pieces are listed counterclockwise and must close up.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

from .geometry import BoundaryProfile, Piece
from .medium import Region, SourceSpec, SurfaceMaterial, VolumeCoefficients
from .scene import Scene

PI = math.pi
DIAMETER = 2 * PI
DETECTOR = (3.0, 3.0359)   # right-wall detector, sized so the flat analog hit rate is about 2.4e-3
SOURCE_HALF = 2.5
TOP = 4.0
PRESETS = ("flat", "cos3", "cos3-lambert", "circle")


def _right_wall(y0):
    d0, d1 = DETECTOR
    return [Piece.line(PI, y0, PI, d0, "wall"), Piece.line(PI, d0, PI, d1, "detector"), Piece.line(PI, d1, PI, TOP, "wall")]


def _top():
    s = SOURCE_HALF
    return [Piece.line(PI, TOP, s, TOP, "sky"), Piece.line(s, TOP, -s, TOP, "sky-source"), Piece.line(-s, TOP, -PI, TOP, "sky")]


def _base_materials():
    return {"wall": SurfaceMaterial(), "sky": SurfaceMaterial(), "sky-source": SurfaceMaterial(),
            "absorber": SurfaceMaterial(), "detector": SurfaceMaterial(g0=1.0)}


def flat_profile() -> BoundaryProfile:
    s = SOURCE_HALF
    pcs = [Piece.line(-PI, 2, -s, 2, "absorber"), Piece.line(-s, 2, s, 2, "ground"), Piece.line(s, 2, PI, 2, "absorber")]
    pcs += _right_wall(2.0) + _top() + [Piece.line(-PI, TOP, -PI, 2, "wall")]
    return BoundaryProfile(pcs, "flat")


def cos3_profile() -> BoundaryProfile:
    s = SOURCE_HALF
    pcs = [Piece.cos3(-PI, -s, 1, 1, "absorber"), Piece.cos3(-s, 1.0, 1, 1, "mountain-a"),
           Piece.cos3(1.0, s, 1, 1, "mountain-b"), Piece.cos3(s, PI, 1, 1, "absorber")]
    pcs += _right_wall(0.0) + _top() + [Piece.line(-PI, TOP, -PI, 0.0, "wall")]
    return BoundaryProfile(pcs, "cos3")


def circle_profile(half_det=0.25, half_src=0.6) -> BoundaryProfile:
    up = PI / 2
    pcs = [Piece.arc(0, 0, 1, -half_det, half_det, "detector"), Piece.arc(0, 0, 1, half_det, up - half_src, "wall"),
           Piece.arc(0, 0, 1, up - half_src, up + half_src, "source-wall"),
           Piece.arc(0, 0, 1, up + half_src, 2 * PI - half_det, "wall")]
    return BoundaryProfile(pcs, "circle")


def preset(name: str, h: float = 0.05, mfp_mult: float | None = None) -> Scene:
    """Build a preset scene; mfp_mult (multiples of the domain diameter) sets the volume coefficients."""
    if name == "flat":
        mats = _base_materials() | {"ground": SurfaceMaterial(alpha=1.0)}
        src = SourceSpec("sky-source")
        prof = flat_profile()
        mult = math.inf if mfp_mult is None else mfp_mult
    elif name == "cos3":
        mats = _base_materials() | {"mountain-a": SurfaceMaterial(0.35, 0.25, 0.05),
                                    "mountain-b": SurfaceMaterial(0.75, 0.25, 0.05)}
        src = SourceSpec("sky-source", 1.0, 0.25, 0.07)
        prof = cos3_profile()
        mult = 8.0 if mfp_mult is None else mfp_mult
    elif name == "cos3-lambert":
        mats = _base_materials() | {"mountain-a": SurfaceMaterial(1.0), "mountain-b": SurfaceMaterial(1.0)}
        src = SourceSpec("sky-source")
        prof = cos3_profile()
        mult = math.inf if mfp_mult is None else mfp_mult
    elif name == "circle":
        mats = {"detector": SurfaceMaterial(g0=1.0), "wall": SurfaceMaterial(0.5), "source-wall": SurfaceMaterial(0.5)}
        src = SourceSpec("source-wall")
        prof = circle_profile()
        mult = math.inf if mfp_mult is None else mfp_mult
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return Scene(name, prof, mats, VolumeCoefficients.from_mfp(mult, DIAMETER), src, h, mult)


_KINDS = {"line": Piece.line, "arc": Piece.arc, "cos3": Piece.cos3}


_TOP_KEYS = {"name", "preset", "h", "mfp_mult", "diameter", "volume", "pieces", "materials", "source"}


def _build(what: str, cls, kw: dict):
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{what}: {exc}") from None


def scene_from_dict(d: dict, h: float | None = None, mfp_mult: float | None = None) -> Scene:
    d = dict(d)
    unknown = sorted(set(d) - _TOP_KEYS)
    if unknown:
        raise ValueError(f"unknown scenario keys: {unknown}")
    h = h if h is not None else d.get("h", 0.05)
    mult = mfp_mult if mfp_mult is not None else d.get("mfp_mult")
    base = preset(d["preset"], h, mult) if "preset" in d else None
    if "pieces" in d:
        pieces = []
        for n, p in enumerate(d["pieces"]):
            if p.get("kind") not in _KINDS:
                raise ValueError(f"pieces[{n}].kind: unknown piece kind {p.get('kind')!r}")
            if "params" not in p or "material" not in p:
                raise ValueError(f"pieces[{n}]: needs 'params' and 'material'")
            try:
                pieces.append(_KINDS[p["kind"]](*p["params"], p["material"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"pieces[{n}].params: {exc}") from None
        prof = BoundaryProfile(pieces, d.get("name", "custom"))
    elif base is not None:
        prof = base.profile
    else:
        raise ValueError("scenario needs either 'preset' or 'pieces'")
    mats = dict(base.materials) if base is not None else {}
    for k, m in d.get("materials", {}).items():
        mats[k] = _build(f"materials.{k}", SurfaceMaterial, m)
    if "source" in d:
        s = dict(d["source"])
        if "direction" in s:
            s["direction"] = tuple(s["direction"])
        src = _build("source", SourceSpec, s)
    elif base is not None:
        src = base.source
    else:
        raise ValueError("scenario needs a 'source' entry")
    if "volume" in d:
        v = dict(d["volume"])
        regions = tuple(_build("volume.regions", Region, dict(zip(Region.__dataclass_fields__, r)))
                        for r in v.pop("regions", []))
        vol = _build("volume", VolumeCoefficients, {**v, "regions": regions})
        mult = math.nan
    elif mult is not None:
        vol = VolumeCoefficients.from_mfp(float(mult), d.get("diameter", DIAMETER))
    elif base is not None:
        vol, mult = base.volume, base.mfp_mult
    else:
        vol, mult = VolumeCoefficients(), math.inf
    return Scene(d.get("name", base.name if base else "custom"), prof, mats, vol, src, h, float(mult))


def load_scenario(spec: str, h: float | None = None, mfp_mult: float | None = None) -> Scene:
    """A preset name or a path to a JSON scenario file."""
    if spec in PRESETS:
        return preset(spec, 0.05 if h is None else h, mfp_mult)
    path = Path(spec)
    if not path.exists():
        raise ValueError(f"{spec!r} is neither a preset ({', '.join(PRESETS)}) nor a scenario file")
    with open(path) as fh:
        return scene_from_dict(json.load(fh), h, mfp_mult)
