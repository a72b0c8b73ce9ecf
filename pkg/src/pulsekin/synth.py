"""Synthetic family-structured pulse data and skin-model RGB traces.

Stands in for license-gated video data at desk scale. Kin structure enters
through three channels, all controlled by ``kin_similarity``: waveform
morphology (systolic peak plus dicrotic notch, family base plus scaled
member deviation), heart rate (a member inherits the family rate or redraws
independently), and the per-ROI pulse-strength map. At kin_similarity 1
members are identical, at 0 they are independent draws, which is what makes
the generator usable as a causal oracle for the whole pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .registry import RELATION_ROLES, KinRegistry, RegistryPair, Subject
from .seeding import rng_for
from .trace import RgbTrace, bandpass, write_trace

HR_BAND_HZ = (0.65, 4.0)

# Morphology: family base parameters come from narrow ranges while member
# deviations are wide, so that at kin_similarity 0 the within-family
# correlation of any morphology parameter stays near zero (deviation variance
# dominates). Heart rate instead uses a mixture rule (see _family_spec):
# a member shares the family rate with probability kin_similarity and is an
# independent draw otherwise, which makes rates exactly independent at 0.
BASE_HR_RANGE = (0.9, 1.9)
BASE_NOTCH_RANGE = (0.25, 0.55)
BASE_WIDTH_RANGE = (0.45, 0.75)
HR_JITTER_STD = 0.2
NOTCH_DEV_STD = 0.27
WIDTH_DEV_STD = 0.26

# Per-ROI pulse-strength map (vascular geography). Families share a base map
# under the same mixture rule as heart rate: per cell, a member inherits the
# family value with probability kin_similarity, else draws fresh. Whole-face
# averaging erases this signal entirely, which is what separates the
# multi-channel input from the holistic single channel.
GAIN_MAP_RANGE = (0.3, 1.7)
GAIN_MAP_JITTER_STD = 0.15

_SYSTOLIC_PHASE = 0.18
_NOTCH_PHASE = 0.45

# Background flicker is chromatic (bluish, screen-like), so chrominance
# methods cannot cancel it the way they cancel shared intensity noise.
_FLICKER_CHROMA = (0.4, 0.7, 1.0)

# Motion/lighting artifact: one in-band broadband process per video, hitting
# every cell with its own amplitude, in a warm chromatic direction. A
# multi-channel consumer can null it with cross-channel contrasts; a
# premixed whole-face average cannot.
_MOTION_CHROMA = (1.0, 0.7, 0.45)


@dataclass(frozen=True)
class FamilySpec:
    """One family: base morphology, per-member heart rates, sharing strength."""

    family_id: str
    heart_rate_hz: tuple[float, ...]
    notch_amp: float
    width_ratio: float
    kin_similarity: float
    noise_snr_db: float | None = 10.0
    relation: str = "F-S"
    phase: float = 0.0  # family base beat phase, fraction of a cycle

    def __post_init__(self):
        if self.n_members < 2:
            raise ValueError("a family needs at least 2 members")
        for hr in self.heart_rate_hz:
            if not HR_BAND_HZ[0] <= hr <= HR_BAND_HZ[1]:
                raise ValueError(f"heart rate {hr} Hz outside {HR_BAND_HZ}")
        if not 0.0 <= self.kin_similarity <= 1.0:
            raise ValueError("kin_similarity must lie in [0, 1]")

    @property
    def n_members(self) -> int:
        return len(self.heart_rate_hz)


@dataclass(frozen=True)
class SkinModelSpec:
    """Optical skin model mapping a pulse waveform to per-ROI RGB traces.

    The pulsatile gain is green-dominant (R:G:B = 0.3:1.0:0.6 by default).
    ``specular_gain`` injects intensity noise identical across a ROI's three
    channels; ``skin_fraction``/``roi_gain_spread``/``sensor_noise`` add
    per-ROI heterogeneity and are all inactive by default. Non-skin cells
    (the 1 - skin_fraction remainder: hair, background) carry no pulse and,
    when ``flicker_gain`` is set, a chromatic periodic flicker at a random
    in-band frequency, the classic distractor that whole-face averaging
    mixes into the pulse estimate.
    """

    base_rgb: tuple[float, float, float] = (140.0, 110.0, 95.0)
    pulse_gain_rgb: tuple[float, float, float] = (0.0009, 0.003, 0.0018)
    specular_gain: float = 0.0
    rois: int = 100
    fps: float = 50.0
    duration_s: float = 10.0
    roi_gain_spread: float = 0.0
    skin_fraction: float = 1.0
    sensor_noise: float = 0.0
    flicker_gain: float = 0.0
    motion_gain: float = 0.0

    def __post_init__(self):
        if min(self.pulse_gain_rgb) < 0 or self.specular_gain < 0:
            raise ValueError("gains must be non-negative")
        if self.duration_s < 2.5:
            raise ValueError("duration must be at least 2.5 s")
        if self.fps <= 2 * HR_BAND_HZ[1]:
            raise ValueError(f"fps must exceed {2 * HR_BAND_HZ[1]} Hz")
        if not 0.0 < self.skin_fraction <= 1.0:
            raise ValueError("skin_fraction must lie in (0, 1]")

    @property
    def frames(self) -> int:
        return int(round(self.duration_s * self.fps))


class MemberMorphology(NamedTuple):
    heart_rate_hz: float
    notch_amp: float
    width_ratio: float
    phase: float


def member_morphology(
    spec: FamilySpec, member: int, rng: np.random.Generator
) -> MemberMorphology:
    """Draw one member's waveform parameters: family base plus scaled deviation."""
    share = 1.0 - spec.kin_similarity
    notch = float(np.clip(spec.notch_amp + share * rng.normal(0.0, NOTCH_DEV_STD), 0.02, 0.95))
    width = float(np.clip(spec.width_ratio + share * rng.normal(0.0, WIDTH_DEV_STD), 0.25, 0.95))
    phase = float((spec.phase + share * rng.uniform(-0.5, 0.5)) % 1.0)
    return MemberMorphology(spec.heart_rate_hz[member], notch, width, phase)


def _wrapped(phi: np.ndarray, mu: float) -> np.ndarray:
    return (phi - mu + 0.5) % 1.0 - 0.5


def synth_pulse(
    spec: FamilySpec,
    member: int,
    rng: np.random.Generator,
    fps: float = 50.0,
    duration_s: float = 10.0,
) -> np.ndarray:
    """Periodic pulse waveform for one family member, unit variance.

    Each beat is a systolic Gaussian plus a smaller, wider dicrotic bump.
    Gaussian noise is added at ``spec.noise_snr_db`` (None disables it).
    """
    morph = member_morphology(spec, member, rng)
    n = int(round(duration_s * fps))
    t = np.arange(n) / fps
    phi = (t * morph.heart_rate_hz + morph.phase) % 1.0
    sigma_sys = 0.05 + 0.05 * morph.width_ratio
    sigma_dia = sigma_sys / morph.width_ratio
    wave = np.exp(-0.5 * (_wrapped(phi, _SYSTOLIC_PHASE) / sigma_sys) ** 2)
    wave += morph.notch_amp * np.exp(-0.5 * (_wrapped(phi, _NOTCH_PHASE) / sigma_dia) ** 2)
    wave = (wave - wave.mean()) / wave.std()
    if spec.noise_snr_db is not None and np.isfinite(spec.noise_snr_db):
        noise_std = 10.0 ** (-spec.noise_snr_db / 20.0)
        wave = wave + rng.normal(0.0, noise_std, n)
    return wave


def synth_rgb_trace(
    pulse: np.ndarray,
    spec: SkinModelSpec,
    rng: np.random.Generator,
    subject_id: str = "s0",
    video_id: str = "v0",
    roi_gains: np.ndarray | None = None,
) -> RgbTrace:
    """Render a pulse waveform into a per-ROI RGB trace.

    RGB(t) = base_rgb * (1 + pulse_gain_rgb * g_roi * pulse(t)
                           + specular_gain * s_roi(t) + sensor_noise * n(t))
    with the intensity noise s_roi(t) identical across the ROI's channels.
    ``roi_gains`` overrides the random per-ROI gain draw; the dataset builder
    uses it to give family members a shared vascular strength map.
    """
    pulse = np.asarray(pulse, dtype=np.float64)
    if pulse.shape != (spec.frames,):
        raise ValueError(f"pulse length {pulse.shape} != spec frames {spec.frames}")
    n, r = spec.frames, spec.rois
    if roi_gains is not None:
        gains = np.asarray(roi_gains, dtype=np.float64).copy()
        if gains.shape != (r,):
            raise ValueError(f"roi_gains shape {gains.shape} != ({r},)")
    else:
        gains = 1.0 + spec.roi_gain_spread * rng.uniform(-1.0, 1.0, r)
    gains = np.clip(gains, 0.0, None)
    n_skin = max(1, int(round(spec.skin_fraction * r)))
    skin = np.zeros(r, dtype=bool)
    skin[rng.permutation(r)[:n_skin]] = True
    gains[~skin] = 0.0
    specular = rng.standard_normal((n, r)) if spec.specular_gain > 0 else np.zeros((n, r))
    base = np.asarray(spec.base_rgb)
    pg = np.asarray(spec.pulse_gain_rgb)
    modulation = (
        1.0
        + pg[None, None, :] * (gains[None, :, None] * pulse[:, None, None])
        + spec.specular_gain * specular[:, :, None]
    )
    if spec.flicker_gain > 0 and not skin.all():
        n_bg = int((~skin).sum())
        # independent in-band tone per background cell: whole-face averaging
        # turns these into broadband clutter around the pulse
        freqs = rng.uniform(0.7, 2.2, n_bg)
        phases = rng.uniform(0, 2 * np.pi, n_bg)
        t = np.arange(n) / spec.fps
        flick = np.sin(2 * np.pi * freqs[None, :] * t[:, None] + phases[None, :])
        chroma = np.array(_FLICKER_CHROMA)
        modulation[:, ~skin, :] += spec.flicker_gain * flick[:, :, None] * chroma
    if spec.motion_gain > 0:
        artifact = bandpass(rng.standard_normal(n), spec.fps, 0.7, 3.0)
        artifact /= artifact.std()
        amp = rng.exponential(1.0, r)
        chroma = np.array(_MOTION_CHROMA)
        modulation += spec.motion_gain * (
            artifact[:, None, None] * amp[None, :, None] * chroma
        )
    if spec.sensor_noise > 0:
        modulation = modulation + spec.sensor_noise * rng.standard_normal((n, r, 3))
    data = base[None, None, :] * modulation
    return RgbTrace(subject_id=subject_id, video_id=video_id, fps=spec.fps, data=data)


def member_gain_map(
    base_map: np.ndarray, kin_similarity: float, rng: np.random.Generator
) -> np.ndarray:
    """One member's per-ROI pulse gains: inherit or redraw, cell by cell."""
    n = base_map.size
    shared = rng.random(n) < kin_similarity
    jitter = (1.0 - kin_similarity) * GAIN_MAP_JITTER_STD * rng.normal(size=n)
    fresh = rng.uniform(*GAIN_MAP_RANGE, n)
    return np.clip(np.where(shared, base_map + jitter, fresh), 0.05, None)


def _family_spec(
    relation: str,
    fam_idx: int,
    kin_similarity: float,
    noise_snr_db: float | None,
    rng: np.random.Generator,
    n_members: int = 2,
) -> FamilySpec:
    base_hr = rng.uniform(*BASE_HR_RANGE)
    rates = []
    for _ in range(n_members):
        # draw all three variates unconditionally to keep rng streams aligned
        shared = rng.random() < kin_similarity
        jitter = (1.0 - kin_similarity) * HR_JITTER_STD * rng.normal()
        fresh = rng.uniform(*BASE_HR_RANGE)
        hr = base_hr + jitter if shared else fresh
        rates.append(float(np.clip(hr, 0.7, 2.2)))
    rates = tuple(rates)
    tag = relation.replace("-", "")
    return FamilySpec(
        family_id=f"fam_{tag}_{fam_idx:03d}",
        heart_rate_hz=rates,
        notch_amp=rng.uniform(*BASE_NOTCH_RANGE),
        width_ratio=rng.uniform(*BASE_WIDTH_RANGE),
        kin_similarity=kin_similarity,
        noise_snr_db=noise_snr_db,
        relation=relation,
        phase=rng.uniform(0.0, 1.0),
    )


def synth_registry(
    n_families: int,
    relations: tuple[str, ...] = ("F-S",),
    kin_similarity: float = 0.9,
    noise_snr_db: float | None = 10.0,
    seed: int = 0,
) -> tuple[KinRegistry, list[FamilySpec]]:
    """Build family specs and the matching registry without rendering traces."""
    if n_families < 4:
        raise ValueError("need at least 4 families per relation")
    subjects, pairs, specs = [], [], []
    for relation in relations:
        roles = RELATION_ROLES[relation]
        for fam_idx in range(n_families):
            rng = rng_for(seed, "family", relation, fam_idx)
            spec = _family_spec(relation, fam_idx, kin_similarity, noise_snr_db, rng)
            specs.append(spec)
            tag = relation.replace("-", "")
            ids = [f"sub_{tag}_{fam_idx:03d}{ab}" for ab in ("a", "b")]
            for sid, role in zip(ids, roles):
                subjects.append(Subject(id=sid, family=spec.family_id, role=role))
            pairs.append(RegistryPair(a=ids[0], b=ids[1], relation=relation, kin=True))
    return KinRegistry(subjects=subjects, pairs=pairs), specs


def synth_dataset(
    out_dir: str | Path,
    n_families: int,
    relations: tuple[str, ...] = ("F-S",),
    kin_similarity: float = 0.9,
    noise_snr_db: float | None = 10.0,
    skin: SkinModelSpec | None = None,
    seed: int = 0,
) -> KinRegistry:
    """Generate a full synthetic dataset: trace files plus registry JSON.

    Deterministic given ``seed``: every member's waveform and trace come from
    a seed chain keyed by (seed, relation, family, member).
    """
    out_dir = Path(out_dir)
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    skin = skin or SkinModelSpec()
    registry, specs = synth_registry(
        n_families, relations, kin_similarity, noise_snr_db, seed
    )
    by_family = {s.family_id: s for s in specs}
    base_maps = {
        fam: rng_for(seed, "gainmap", fam).uniform(*GAIN_MAP_RANGE, skin.rois)
        for fam in by_family
    }
    members_seen: dict[str, int] = {}
    for subject in registry.subjects:
        spec = by_family[subject.family]
        member = members_seen.get(subject.family, 0)
        members_seen[subject.family] = member + 1
        rng = rng_for(seed, "member", spec.relation, subject.family, member)
        pulse = synth_pulse(spec, member, rng, fps=skin.fps, duration_s=skin.duration_s)
        gains = member_gain_map(base_maps[subject.family], kin_similarity, rng)
        video_id = f"vid_{subject.id}"
        trace = synth_rgb_trace(
            pulse, skin, rng, subject_id=subject.id, video_id=video_id, roi_gains=gains
        )
        write_trace(trace, traces_dir / f"{video_id}.csv")
    registry.save(out_dir / "registry.json")
    return registry
