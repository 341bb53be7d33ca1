# -*- coding: utf-8 -*-
"""
Test MHD ingestion, preprocessing, annotations, augmentation and synthetic data.
"""

import os

import numpy as np
import pytest

from lung_dpn.config.settings import ClassifierConfig, DataConfig
from lung_dpn.data.annotations import (
    AnnotationRecord,
    Consensus,
    consensus,
    consensus_label,
    kfold_split,
    read_manifest,
    voxel_box,
    write_manifest,
)
from lung_dpn.data.augment import (
    ClassificationDraw,
    DetectionDraw,
    apply_classification_draw,
    apply_detection_draw,
    flip_voxels,
)
from lung_dpn.data.synth import synth_crops, synth_generate, write_synth_dataset
from lung_dpn.data.volume import (
    Volume,
    parse_mhd,
    preprocess,
    read_mhd,
    resample_isotropic,
    voxel_to_world,
    world_to_voxel,
    write_mhd,
)
from lung_dpn.detection.boxes import Box3
from lung_dpn.errors import DataError, DimensionError, DomainError, MhdParseError, SynthesisError
from lung_dpn.utils.file_utils import find_mhd_files, get_file_hash, read_csv, series_id_of


def mhd_header(dims="2 2 2", element_type="MET_SHORT", spacing="1 1 1", offset="0 0 0"):
    return (
        "ObjectType = Image\nNDims = 3\n"
        f"DimSize = {dims}\nElementType = {element_type}\n"
        f"ElementSpacing = {spacing}\nOffset = {offset}\nElementDataFile = scan.raw\n"
    )


@pytest.mark.unit
class TestMhd:
    """Test the MetaImage reader and writer."""

    def test_short_volume(self):
        """Test that 16 bytes of MET_SHORT 100 decode to eight voxels of 100."""
        raw = np.full(8, 100, dtype="<i2").tobytes()
        volume = parse_mhd(mhd_header(), raw)
        assert volume.shape == (2, 2, 2)
        assert np.all(volume.voxels == 100.0)
        assert volume.spacing == (1.0, 1.0, 1.0) and volume.origin == (0.0, 0.0, 0.0)

    def test_axis_order(self):
        """Test that x varies fastest in the raw payload."""
        raw = np.arange(24, dtype="<i2").tobytes()
        volume = parse_mhd(mhd_header(dims="4 3 2"), raw)
        assert volume.shape == (2, 3, 4)
        assert volume.voxels[1, 2, 3] == 23.0
        assert volume.extent_xyz == (4, 3, 2)

    def test_truncated_payload(self):
        """Test that a short payload reports expected and actual byte counts."""
        with pytest.raises(MhdParseError) as excinfo:
            parse_mhd(mhd_header(), b"\x00" * 10)
        assert "10 bytes" in str(excinfo.value) and "16" in str(excinfo.value)

    @pytest.mark.parametrize(
        "header",
        [
            mhd_header(element_type="MET_COMPLEX"),
            mhd_header(spacing="1 1"),
            mhd_header().replace("NDims = 3", "NDims = 2"),
            mhd_header().replace("DimSize = 2 2 2\n", ""),
        ],
        ids=["element-type", "spacing", "ndims", "missing-key"],
    )
    def test_malformed_headers(self, header):
        """Test that malformed headers raise a parse error."""
        with pytest.raises(MhdParseError):
            parse_mhd(header, np.zeros(8, dtype="<i2").tobytes())

    def test_write_read(self, tmp_path):
        """Test that a written volume reads back with its geometry."""
        volume = Volume(np.random.default_rng(0).random((3, 4, 5)), (0.7, 0.7, 2.5), (-10.0, 5.0, 1.5))
        path = os.path.join(tmp_path, "scan-1.mhd")
        write_mhd(path, volume, "MET_DOUBLE")
        back = read_mhd(path)
        assert np.array_equal(back.voxels, volume.voxels)
        assert back.spacing == volume.spacing and back.origin == volume.origin
        assert find_mhd_files(str(tmp_path)) == [path]
        assert series_id_of(path) == "scan-1"

    def test_identical_writes_hash_alike(self, tmp_path):
        """Test that rewriting the same volume gives the same raw file hash."""
        volume = Volume(np.arange(24.0).reshape(2, 3, 4))
        hashes = []
        for name in ("a.mhd", "b.mhd"):
            write_mhd(os.path.join(tmp_path, name), volume, "MET_FLOAT")
            hashes.append(get_file_hash(os.path.join(tmp_path, name.replace(".mhd", ".raw"))))
        assert hashes[0] is not None and hashes[0] == hashes[1]
        assert get_file_hash(os.path.join(tmp_path, "nothing.raw")) is None

    def test_missing_raw_file(self, tmp_path):
        """Test that a header pointing to a missing file raises."""
        path = os.path.join(tmp_path, "lonely.mhd")
        with open(path, "w") as f:
            f.write(mhd_header())
        with pytest.raises(MhdParseError):
            read_mhd(path)

    def test_missing_header_file(self, tmp_path):
        """Test that a missing header raises a parse error."""
        with pytest.raises(MhdParseError):
            read_mhd(os.path.join(tmp_path, "missing.mhd"))

    def test_volume_must_be_3d(self):
        """Test that a 2-D array is not a volume."""
        with pytest.raises(DimensionError):
            Volume(np.zeros((3, 3)))


@pytest.mark.unit
class TestPreprocessing:
    """Test intensity normalisation and coordinate transforms."""

    def test_hu_window(self):
        """Test the clip bounds, the midpoint and scanner padding."""
        volume = Volume(np.array([-1200.0, 600.0, -300.0, -3000.0, 2000.0]).reshape(1, 1, 5))
        out = preprocess(volume).voxels.ravel()
        assert np.allclose(out, [0.0, 1.0, 0.5, 0.0, 1.0]), f"Unexpected values {out}"

    def test_mask_zeroes_background(self):
        """Test that voxels outside the lung mask become 0."""
        mask = np.array([True, False]).reshape(1, 1, 2)
        out = preprocess(Volume(np.full((1, 1, 2), 600.0), mask=mask)).voxels.ravel()
        assert out.tolist() == [1.0, 0.0]

    def test_world_to_voxel(self):
        """Test the affine example and its inverse."""
        volume = Volume(np.zeros((2, 2, 2)), (0.5, 0.5, 2.0), (-100.0, -100.0, -100.0))
        voxel = world_to_voxel((0.0, 0.0, 0.0), volume)
        assert np.allclose(voxel, [200, 200, 50])
        assert np.allclose(voxel_to_world(voxel, volume), [0.0, 0.0, 0.0])
        identity = Volume(np.zeros((2, 2, 2)))
        assert np.allclose(world_to_voxel((3.0, 4.0, 5.0), identity), [3.0, 4.0, 5.0])

    def test_isotropic_resampling(self):
        """Test that 2 mm slices double along z at 1 mm."""
        volume = Volume(np.random.default_rng(0).random((5, 6, 6)), (1.0, 1.0, 2.0))
        out = resample_isotropic(volume, 1.0)
        assert out.shape == (10, 6, 6)
        assert out.spacing == (1.0, 1.0, 1.0)


@pytest.mark.unit
class TestAnnotations:
    """Test consensus labelling, the manifest and fold splitting."""

    @pytest.mark.parametrize(
        "scores,label",
        [
            ((4, 5, 4), Consensus.POSITIVE),
            ((3, 3), Consensus.EXCLUDED),
            ((0, 2), Consensus.NEGATIVE),
            ((0, 0), Consensus.EXCLUDED),
        ],
    )
    def test_consensus_rule(self, scores, label):
        """Test the > 3 / < 3 / = 3 rule with zeros discarded."""
        assert consensus_label(scores) == label

    def test_consensus_reason(self):
        """Test that excluded results say why."""
        assert "3" in consensus((3, 3)).reason

    def test_invalid_scores(self):
        """Test that scores outside 0..5 are refused."""
        with pytest.raises(DomainError):
            AnnotationRecord("a", (0, 0, 0), 5.0, (6,))

    def test_manifest_roundtrip(self, tmp_path):
        """Test that records survive the manifest CSV with score padding."""
        records = [
            AnnotationRecord("a", (1.5, 2.0, 3.0), 6.0, (4, 5)),
            AnnotationRecord("b", (0.0, 0.0, 0.0), 4.0, (1, 2, 2, 1)),
        ]
        path = os.path.join(tmp_path, "manifest.csv")
        write_manifest(path, records)
        back = read_manifest(path)
        assert [r.series_id for r in back] == ["a", "b"]
        assert back[0].scores == (4, 5, 0, 0)
        assert back[0].consensus.label == Consensus.POSITIVE
        assert back[1].world == (0.0, 0.0, 0.0)

    def test_voxel_box(self):
        """Test that annotation diameters are converted by the mean spacing."""
        volume = Volume(np.zeros((4, 4, 4)), (0.5, 0.5, 0.5), (-1.0, -1.0, -1.0))
        box = voxel_box(AnnotationRecord("a", (0.0, 0.5, 1.0), 4.0), volume)
        assert (box.x, box.y, box.z, box.d) == (2.0, 3.0, 4.0, 8.0)

    def test_kfold_partition(self):
        """Test that every series lands in exactly one fold."""
        ids = [f"s{i}" for i in range(23)] + ["s0"]
        folds = kfold_split(ids, 5, seed=3)
        flat = [s for fold in folds for s in fold]
        assert sorted(flat) == sorted(set(ids))
        assert max(map(len, folds)) - min(map(len, folds)) <= 1
        assert kfold_split(ids, 5, seed=3) == folds

    def test_kfold_errors(self):
        """Test too few series and too few folds."""
        with pytest.raises(DataError):
            kfold_split(["a", "b"], 3)
        with pytest.raises(DomainError):
            kfold_split(["a", "b"], 1)

    def test_malformed_csv(self, tmp_path):
        """Test that empty or unparseable CSV files raise a data error."""
        empty = os.path.join(tmp_path, "empty.csv")
        open(empty, "w").close()
        with pytest.raises(DataError):
            read_csv(empty, ["seriesuid"])
        ragged = os.path.join(tmp_path, "ragged.csv")
        with open(ragged, "w") as f:
            f.write("seriesuid,coordX\na,1\nb,2,3,4\n")
        with pytest.raises(DataError):
            read_csv(ragged, ["seriesuid"])


@pytest.mark.unit
class TestAugmentation:
    """Test detector and classifier augmentation."""

    def test_identity_draw(self, rng):
        """Test that the identity draw leaves voxels and boxes unchanged."""
        voxels = rng.random((8, 8, 8))
        box = Box3(3.0, 4.0, 5.0, 2.0)
        out, boxes = apply_detection_draw(voxels, [box], DetectionDraw())
        assert np.array_equal(out, voxels) and boxes == [box]

    def test_x_flip(self, rng):
        """Test that an x-flip moves x = 10 to 37 in a 48-wide volume."""
        voxels = np.zeros((48, 48, 48))
        voxels[20, 20, 10] = 1.0
        out, boxes = apply_detection_draw(voxels, [Box3(10, 20, 20, 4)], DetectionDraw((True, False, False)))
        assert boxes[0].x == 37 and (boxes[0].y, boxes[0].z) == (20, 20)
        assert out[20, 20, 37] == 1.0

    def test_scale_multiplies_diameter(self):
        """Test that scale 1.25 turns d = 8 into d = 10 about the centre."""
        voxels = np.zeros((49, 49, 49))
        out, boxes = apply_detection_draw(voxels, [Box3(24, 24, 24, 8)], DetectionDraw(scale=1.25))
        assert boxes[0].d == pytest.approx(10.0)
        assert boxes[0].x == pytest.approx(24.0)
        assert out.shape == voxels.shape

    def test_scale_drops_boxes_leaving_volume(self):
        """Test that a box pushed outside by scaling is removed."""
        _, boxes = apply_detection_draw(np.zeros((20, 20, 20)), [Box3(1, 10, 10, 2)], DetectionDraw(scale=1.25))
        assert boxes == []

    def test_flip_is_involution(self, rng):
        """Test that flipping twice restores the volume."""
        voxels = rng.random((4, 5, 6))
        flips = (True, False, True)
        assert np.array_equal(flip_voxels(flip_voxels(voxels, flips), flips), voxels)

    def test_classification_identity_normalises(self, rng):
        """Test that the centred draw only z-scores the crop."""
        crop = rng.random((32, 32, 32))
        out = apply_classification_draw(crop, ClassificationDraw(), mean=0.5, std=2.0)
        assert np.allclose(out, (crop - 0.5) / 2.0)

    def test_classification_offset_translation(self, rng):
        """Test that the extreme corner offsets differ by a 4-voxel shift."""
        crop = rng.random((32, 32, 32))
        low = apply_classification_draw(crop, ClassificationDraw(offset=(0, 0, 0)))
        high = apply_classification_draw(crop, ClassificationDraw(offset=(4, 4, 4)))
        assert np.array_equal(high[:-4, :-4, :-4], low[4:, 4:, 4:])

    def test_zero_patch(self, rng):
        """Test that the zero patch clears exactly 64 voxels."""
        crop = rng.random((32, 32, 32)) + 0.1
        out = apply_classification_draw(crop, ClassificationDraw(zero_corner=(5, 6, 7)))
        assert int(np.sum(out == 0.0)) == 64
        assert np.all(out[5:9, 6:10, 7:11] == 0.0)

    def test_wrong_crop_size(self):
        """Test that crops must match the configured extent."""
        with pytest.raises(DimensionError):
            apply_classification_draw(np.zeros((16, 16, 16)), ClassificationDraw(), config=ClassifierConfig())


@pytest.mark.unit
class TestSynth:
    """Test the planted-nodule generator."""

    def test_empty(self):
        """Test that n = 0 gives no volumes."""
        assert synth_generate(0, 48) == []

    def test_nodule_contrast(self, synth_volumes):
        """Test that nodule centres are brighter than the background 99th percentile."""
        for synth in synth_volumes:
            assert synth.boxes, f"{synth.series_id} has no nodules"
            for box in synth.boxes:
                c = np.floor(box.center + 0.5).astype(int)
                value = synth.volume.voxels[c[2], c[1], c[0]]
                nodule_free = synth.volume.voxels.copy()
                for other in synth.boxes:
                    o = np.floor(other.center + 0.5).astype(int)
                    r = int(np.ceil(other.d))
                    nodule_free[
                        max(o[2] - r, 0) : o[2] + r + 1,
                        max(o[1] - r, 0) : o[1] + r + 1,
                        max(o[0] - r, 0) : o[0] + r + 1,
                    ] = np.nan
                assert value > np.nanpercentile(nodule_free, 99)

    def test_deterministic(self, desk_config):
        """Test that one seed gives bitwise-identical volumes, serial or parallel."""
        a = synth_generate(3, 48, desk_config.data, seed=5)
        b = synth_generate(3, 48, desk_config.data, seed=5, n_jobs=2)
        for x, y in zip(a, b):
            assert x.series_id == y.series_id
            assert np.array_equal(x.volume.voxels, y.volume.voxels)
            assert x.boxes == y.boxes

    def test_labels_follow_scores(self, synth_volumes):
        """Test that rater scores agree with the planted class."""
        for synth in synth_volumes:
            for label, record in zip(synth.labels, synth.records()):
                expected = Consensus.POSITIVE if label else Consensus.NEGATIVE
                assert record.consensus.label == expected

    def test_extent_too_small(self):
        """Test that volumes smaller than twice the largest nodule are refused."""
        with pytest.raises(SynthesisError):
            synth_generate(1, 20, DataConfig())

    def test_write_dataset(self, tmp_path, synth_volumes):
        """Test that the dataset writes one MHD per volume and a manifest."""
        manifest = write_synth_dataset(str(tmp_path), synth_volumes[:2])
        assert len(find_mhd_files(str(tmp_path))) == 2
        records = read_manifest(manifest)
        assert len(records) == sum(len(v.boxes) for v in synth_volumes[:2])
        back = read_mhd(os.path.join(tmp_path, f"{synth_volumes[0].series_id}.mhd"))
        assert np.allclose(back.voxels, synth_volumes[0].volume.voxels, atol=1e-6)

    def test_crops_balanced(self, crop_set):
        """Test that synthetic crops alternate benign and malignant."""
        assert crop_set.crops.shape == (40, 32, 32, 32)
        assert crop_set.pixels.shape == (40, 16, 16, 16)
        assert crop_set.labels.sum() == 20
        assert crop_set.labels[:4].tolist() == [0.0, 1.0, 0.0, 1.0]
