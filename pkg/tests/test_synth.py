import numpy as np
import pytest

from otseg import (
    AccuracyModel,
    SyntheticSpec,
    ValidationError,
    flatten_to_pixelset,
    generate_manifest,
    generate_pair,
    generate_pair_exports,
    load_manifest,
    load_task_export,
)
from otseg.synth import parse_generation_spec


def sweep_specs(noises, pixels=800, seed=5):
    return [
        SyntheticSpec(
            name=f"src-{i}", class_count=4, feature_dim=4, pixels=pixels,
            cluster_separation=3.0, label_noise=noise, seed=seed + i,
        )
        for i, noise in enumerate(noises)
    ]


class TestGeneratePair:
    def test_deterministic_per_seed(self):
        spec = SyntheticSpec(name="a", pixels=300, seed=11)
        s1, t1, r1 = generate_pair(spec)
        s2, t2, r2 = generate_pair(spec)
        assert np.array_equal(s1.features, s2.features)
        assert np.array_equal(t1.labels, t2.labels)
        assert r1 == r2

    def test_different_seeds_differ(self):
        a = generate_pair(SyntheticSpec(name="a", pixels=300, seed=1))
        b = generate_pair(SyntheticSpec(name="a", pixels=300, seed=2))
        assert not np.array_equal(a[0].features, b[0].features)

    def test_relatedness_formula(self):
        assert SyntheticSpec(name="x", label_noise=0.0, label_map_scramble=0.0).relatedness == 1.0
        assert SyntheticSpec(name="x", label_noise=1.0).relatedness == 0.0
        assert SyntheticSpec(name="x", label_noise=0.5, label_map_scramble=0.5).relatedness == 0.25

    def test_clean_pair_shares_distribution(self):
        spec = SyntheticSpec(name="x", class_count=3, pixels=4000, seed=0,
                             cluster_separation=4.0)
        source, target, relatedness = generate_pair(spec)
        assert relatedness == 1.0
        # per-class feature means should agree between the two draws
        for cls in range(3):
            mu_s = source.features[source.labels == cls].mean(axis=0)
            mu_t = target.features[target.labels == cls].mean(axis=0)
            assert np.linalg.norm(mu_s - mu_t) < 0.5

    def test_full_noise_breaks_label_feature_link(self):
        spec = SyntheticSpec(name="x", class_count=3, pixels=3000, seed=0,
                             cluster_separation=6.0, label_noise=1.0)
        _, target, relatedness = generate_pair(spec)
        assert relatedness == 0.0
        # labels are uniform regardless of cluster: per-class means collapse
        global_mean = target.features.mean(axis=0)
        for cls in range(3):
            mu = target.features[target.labels == cls].mean(axis=0)
            assert np.linalg.norm(mu - global_mean) < 1.0

    def test_labels_stay_in_alphabet(self):
        spec = SyntheticSpec(name="x", class_count=5, pixels=1000, seed=3,
                             label_noise=0.3, label_map_scramble=0.5)
        source, target, _ = generate_pair(spec)
        assert int(source.labels.max()) < 5
        assert int(target.labels.max()) < 5

    def test_exports_round_trip(self, tmp_path):
        source, target, _ = generate_pair_exports(SyntheticSpec(name="x", pixels=200, seed=9))
        from otseg import save_task_export

        save_task_export(source, tmp_path / "s.otseg")
        loaded = load_task_export(tmp_path / "s.otseg")
        assert np.array_equal(loaded.features, source.features)
        pixels = flatten_to_pixelset(loaded)
        assert pixels.pixel_count == 200

    def test_spec_validation(self):
        with pytest.raises(ValidationError):
            SyntheticSpec(name="x", class_count=1)
        with pytest.raises(ValidationError):
            SyntheticSpec(name="x", label_noise=1.5)
        with pytest.raises(ValidationError):
            SyntheticSpec(name="x", pixels=0)


class TestGenerateManifest:
    def test_writes_exports_and_manifest(self, tmp_path):
        specs = sweep_specs([0.0, 0.3, 0.6, 0.9])
        manifest, path = generate_manifest(specs, AccuracyModel(), tmp_path)
        assert path.is_file()
        reloaded = load_manifest(path)
        assert len(reloaded.records) == 4
        for record in reloaded.records:
            assert load_task_export(record.source_export_path).class_count == 4
            assert load_task_export(record.target_export_path).class_count == 4

    def test_accuracy_is_affine_in_relatedness(self, tmp_path):
        specs = sweep_specs([0.0, 0.5, 1.0])
        model = AccuracyModel(slope=0.4, intercept=0.5, jitter_sigma=0.0)
        manifest, _ = generate_manifest(specs, model, tmp_path)
        by_source = {r.source_id: r.transfer_accuracy for r in manifest.records}
        assert abs(by_source["src-0"] - 0.9) <= 1e-12
        assert abs(by_source["src-1"] - 0.7) <= 1e-12
        assert abs(by_source["src-2"] - 0.5) <= 1e-12

    def test_jitter_is_seeded(self, tmp_path):
        specs = sweep_specs([0.0, 0.5, 1.0])
        m1, _ = generate_manifest(specs, AccuracyModel(jitter_sigma=0.05, seed=4), tmp_path / "a")
        m2, _ = generate_manifest(specs, AccuracyModel(jitter_sigma=0.05, seed=4), tmp_path / "b")
        m3, _ = generate_manifest(specs, AccuracyModel(jitter_sigma=0.05, seed=5), tmp_path / "c")
        acc1 = [r.transfer_accuracy for r in m1.records]
        acc2 = [r.transfer_accuracy for r in m2.records]
        acc3 = [r.transfer_accuracy for r in m3.records]
        assert acc1 == acc2
        assert acc1 != acc3

    def test_needs_three_specs(self, tmp_path):
        with pytest.raises(ValidationError):
            generate_manifest(sweep_specs([0.0, 1.0]), AccuracyModel(), tmp_path)

    def test_unique_names_required(self, tmp_path):
        specs = sweep_specs([0.0, 0.5, 1.0])
        specs.append(specs[0])
        with pytest.raises(ValidationError):
            generate_manifest(specs, AccuracyModel(), tmp_path)


class TestParseGenerationSpec:
    def test_minimal_spec(self):
        specs, accuracy, target_id = parse_generation_spec(
            {"specs": [{"pixels": 100}, {"pixels": 100}, {"pixels": 100}]}
        )
        assert [s.name for s in specs] == ["src-00", "src-01", "src-02"]
        assert target_id == "synthetic-target"
        assert accuracy.jitter_sigma == 0.0

    def test_seed_override_is_reproducible(self):
        data = {"specs": [{"seed": 1}, {"seed": 2}, {"seed": 3}]}
        a, _, _ = parse_generation_spec(data, seed_override=77)
        b, _, _ = parse_generation_spec(data, seed_override=77)
        c, _, _ = parse_generation_spec(data, seed_override=78)
        assert [s.seed for s in a] == [s.seed for s in b]
        assert [s.seed for s in a] != [s.seed for s in c]

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError, match="unknown"):
            parse_generation_spec({"specs": [{"pixel_count": 5}]})

    def test_non_object_rejected(self):
        with pytest.raises(ValidationError):
            parse_generation_spec([1, 2, 3])
