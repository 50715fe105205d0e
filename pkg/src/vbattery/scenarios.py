"""Standard resource mix: models, prefilters and ideal actuators.

Bands are given in cycles per hour and converted to rad/s. By default every
TCL class is split into a few heterogeneous subgroups (parameters sampled
from the class ranges), each with its own identified model and prefilter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .filters import FilterDesign, design_local_filter
from .grid import ResourceClass
from .loads import build_class_model, sample_tcl_params
from .lti import bandpass_companion_lowpass, butterworth_highpass, cyc_per_hr
from .markov import ControlledModel

logger = logging.getLogger(__name__)

#: Service band per class, cycles per hour.
CLASS_BANDS_CPH = {"ac": (1.0, 5.0), "fwh": (1.0 / 3.0, 2.0), "swh": (1.0 / 9.0, 1.0), "pool": (1.0 / 24.0, 1.0 / 3.0)}
TCL_CLASSES = ("ac", "fwh", "swh")
LOAD_CLASSES = TCL_CLASSES + ("pool",)

DEFAULT_POPULATION = {"ac": 1e6, "fwh": 5e6, "swh": 5e6, "pool": 1e6}
DEFAULT_SHARES = {"ac": 1.0, "fwh": 1.0, "swh": 1.0, "pool": 0.25, "hp": 1.0, "lp": 0.25}


def class_band(name: str) -> tuple[float, float]:
    lo, hi = CLASS_BANDS_CPH[name]
    return cyc_per_hr(lo), cyc_per_hr(hi)


@dataclass
class ClassDesign:
    name: str
    model: ControlledModel
    design: FilterDesign
    n_loads: float
    #: Fraction of the class share carried by this subgroup.
    weight: float = 1.0


@dataclass
class ResourceMix:
    designs: list[ClassDesign]
    shares: dict = field(default_factory=lambda: dict(DEFAULT_SHARES))
    include_hp: bool = True
    include_lp: bool = True

    def classes(self) -> list[ResourceClass]:
        out = []
        for d in self.designs:
            base = d.name.split("_")[0]
            out.append(ResourceClass(d.name, d.model, d.design.local, d.n_loads,
                                     d.weight * self.shares.get(base, 1.0)))
        if self.include_hp:
            out.append(ResourceClass("hp", None, butterworth_highpass(class_band("ac")[1], order=1),
                                     share=self.shares["hp"], mileage=True))
        if self.include_lp:
            out.append(ResourceClass("lp", None, bandpass_companion_lowpass(*class_band("pool")),
                                     share=self.shares["lp"]))
        return out


def design_class(name: str, model: ControlledModel, n_loads: float, band=None) -> ClassDesign:
    base = name.split("_")[0]
    band = class_band(base) if band is None else band
    return ClassDesign(name, model, design_local_filter(model.linearization.freqresp, band), n_loads)


def build_mix(seed=0, subgroups: int = 1, populations=None, classes=LOAD_CLASSES, shares=None,
              include_hp: bool = True, include_lp: bool = True) -> ResourceMix:
    """Identify models and design prefilters for the standard mix.

    With ``subgroups == 1`` each TCL class uses its nominal (mid-range)
    parameters; otherwise ``subgroups`` parameter sets are sampled per class
    and the population is split evenly between them.
    """
    pops = dict(DEFAULT_POPULATION)
    pops.update(populations or {})
    ss = np.random.SeedSequence(seed)
    designs = []
    for name, child in zip(classes, ss.spawn(len(classes))):
        if name == "pool":
            designs.append(design_class("pool", build_class_model("pool"), pops["pool"]))
            continue
        if subgroups <= 1:
            m = build_class_model(name, seed=child)
            designs.append(design_class(name, m, pops[name]))
            continue
        for g, gseed in enumerate(child.spawn(subgroups)):
            pseed, iseed = gseed.spawn(2)
            p = sample_tcl_params(name, pseed)
            m = build_class_model(name, params=p, seed=iseed)
            m.name = f"{name}_{g}"
            d = design_class(m.name, m, pops[name] / subgroups)
            d.weight = 1.0 / subgroups
            designs.append(d)
    sh = dict(DEFAULT_SHARES)
    sh.update(shares or {})
    return ResourceMix(designs, sh, include_hp, include_lp)
