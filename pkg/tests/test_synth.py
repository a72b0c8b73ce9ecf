import numpy as np

from pulsekin.registry import load_registry
from pulsekin.rppg import estimate_hr, extract_chrom, extract_green, extract_pos
from pulsekin.seeding import rng_for
from pulsekin.synth import (
    FamilySpec,
    SkinModelSpec,
    member_morphology,
    synth_dataset,
    synth_pulse,
    synth_registry,
    synth_rgb_trace,
)
from pulsekin.trace import PreprocSpec, bandpass, ingest_trace


class TestSynthPulse:
    def test_full_similarity_members_identical(self):
        spec = FamilySpec("f", (1.2, 1.2), 0.3, 0.5, kin_similarity=1.0, noise_snr_db=None)
        w0 = synth_pulse(spec, 0, rng_for("a"))
        w1 = synth_pulse(spec, 1, rng_for("b"))
        assert np.array_equal(w0, w1)

    def test_zero_similarity_morphology_uncorrelated(self):
        notch_p, notch_c, width_p, width_c = [], [], [], []
        for fam in range(200):
            rng = rng_for("mc", fam)
            spec = FamilySpec(
                "f", (1.2, 1.2),
                notch_amp=rng.uniform(0.25, 0.55),
                width_ratio=rng.uniform(0.45, 0.75),
                kin_similarity=0.0, noise_snr_db=None,
            )
            mp = member_morphology(spec, 0, rng_for("mc-p", fam))
            mc = member_morphology(spec, 1, rng_for("mc-c", fam))
            notch_p.append(mp.notch_amp)
            notch_c.append(mc.notch_amp)
            width_p.append(mp.width_ratio)
            width_c.append(mc.width_ratio)
        assert abs(np.corrcoef(notch_p, notch_c)[0, 1]) < 0.15
        assert abs(np.corrcoef(width_p, width_c)[0, 1]) < 0.15

    def test_high_similarity_morphology_strongly_correlated(self):
        notch_p, notch_c = [], []
        for fam in range(200):
            rng = rng_for("hc", fam)
            spec = FamilySpec(
                "f", (1.2, 1.2),
                notch_amp=rng.uniform(0.25, 0.55),
                width_ratio=rng.uniform(0.45, 0.75),
                kin_similarity=0.9, noise_snr_db=None,
            )
            notch_p.append(member_morphology(spec, 0, rng_for("hc-p", fam)).notch_amp)
            notch_c.append(member_morphology(spec, 1, rng_for("hc-c", fam)).notch_amp)
        assert np.corrcoef(notch_p, notch_c)[0, 1] > 0.6

    def test_spectral_peak_matches_heart_rate(self):
        for k in range(25):
            rng = rng_for("peak", k)
            hr = rng.uniform(0.7, 2.2)
            spec = FamilySpec(
                "f", (hr, hr),
                notch_amp=rng.uniform(0.05, 0.9),
                width_ratio=rng.uniform(0.25, 0.95),
                kin_similarity=1.0, noise_snr_db=None,
            )
            wave = synth_pulse(spec, 0, rng_for("peak-m", k), fps=50.0, duration_s=10.0)
            est = estimate_hr(wave, 50.0)
            assert abs(est.bpm / 60.0 - hr) <= 0.1  # 1/duration

    def test_snr_scaling(self):
        spec_hi = FamilySpec("f", (1.2, 1.2), 0.4, 0.6, 1.0, noise_snr_db=20.0)
        spec_lo = FamilySpec("f", (1.2, 1.2), 0.4, 0.6, 1.0, noise_snr_db=0.0)
        clean = synth_pulse(
            FamilySpec("f", (1.2, 1.2), 0.4, 0.6, 1.0, noise_snr_db=None),
            0, rng_for("snr"),
        )
        hi = synth_pulse(spec_hi, 0, rng_for("snr"))
        lo = synth_pulse(spec_lo, 0, rng_for("snr"))
        assert np.std(hi - clean) < np.std(lo - clean)


class TestSkinModel:
    def test_frame_count(self):
        spec = SkinModelSpec(fps=50.0, duration_s=4.0, rois=7)
        pulse = np.zeros(spec.frames) + 0.1 * np.sin(np.arange(spec.frames))
        tr = synth_rgb_trace(pulse, spec, rng_for("fc"))
        assert tr.frames == 200 and tr.rois == 7

    def test_green_roundtrip_recovers_pulse(self):
        fam = FamilySpec("f", (1.2, 1.2), 0.4, 0.6, 1.0, noise_snr_db=None)
        pulse = synth_pulse(fam, 0, rng_for("rt-p"), fps=50.0, duration_s=10.0)
        skin = SkinModelSpec(duration_s=10.0, rois=1, specular_gain=0.0)
        tr = synth_rgb_trace(pulse, skin, rng_for("rt-t"))
        out = extract_green(tr, 0)
        assert np.corrcoef(out, pulse)[0, 1] > 0.95
        assert np.corrcoef(out, bandpass(pulse, 50.0))[0, 1] > 0.999

    def test_specular_only_rejected_by_chrom_and_pos(self):
        skin = SkinModelSpec(
            duration_s=10.0, rois=1, specular_gain=0.01,
            pulse_gain_rgb=(0.0, 0.0, 0.0),
        )
        tr = synth_rgb_trace(np.zeros(skin.frames), skin, rng_for("spec"))
        pp = PreprocSpec(normalize=False)
        assert np.max(np.abs(extract_chrom(tr, 0, preproc=pp))) < 1e-6
        assert np.max(np.abs(extract_pos(tr, 0, preproc=pp))) < 1e-6

    def test_every_trace_passes_ingest_validation(self, tmp_path):
        synth_dataset(
            tmp_path, n_families=4, relations=("F-S", "S-S"),
            skin=SkinModelSpec(duration_s=4.0, rois=5), seed=3,
        )
        files = sorted((tmp_path / "traces").glob("*.csv"))
        assert len(files) == 16
        for f in files:
            ingest_trace(f)  # raises on any invariant violation


class TestDataset:
    def test_counts(self, tmp_path):
        reg = synth_dataset(
            tmp_path, n_families=10, relations=("F-S",),
            skin=SkinModelSpec(duration_s=4.0, rois=3), seed=1,
        )
        assert len(reg.subjects) == 20
        assert len(reg.kin_pairs("F-S")) == 10

    def test_determinism(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        skin = SkinModelSpec(duration_s=4.0, rois=3)
        synth_dataset(a_dir, n_families=4, skin=skin, seed=9)
        synth_dataset(b_dir, n_families=4, skin=skin, seed=9)
        for fa in sorted((a_dir / "traces").glob("*.csv")):
            fb = b_dir / "traces" / fa.name
            assert fa.read_bytes() == fb.read_bytes()
        assert (a_dir / "registry.json").read_bytes() == (b_dir / "registry.json").read_bytes()

    def test_registry_families_match_kin_pairs(self, tmp_path):
        reg = synth_dataset(
            tmp_path, n_families=5, relations=("M-D",),
            skin=SkinModelSpec(duration_s=4.0, rois=2), seed=2,
        )
        loaded = load_registry(tmp_path / "registry.json")
        for pair in loaded.pairs:
            assert pair.kin
            assert loaded.family_of(pair.a) == loaded.family_of(pair.b)
        by_family = {}
        for s in loaded.subjects:
            by_family.setdefault(s.family, []).append(s.id)
        for members in by_family.values():
            assert any(
                {p.a, p.b} == set(members) for p in loaded.pairs
            ), "every family is annotated as a kin pair"

    def test_registry_only_variant(self):
        reg, specs = synth_registry(20, relations=("F-S", "B-B"), seed=5)
        assert len(reg.subjects) == 80
        assert len(specs) == 40
        assert {s.relation for s in specs} == {"F-S", "B-B"}
