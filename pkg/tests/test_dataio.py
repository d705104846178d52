"""I/O: KITTI text parsing/writing, binary container, config handling, fuzz."""

import json
import math
import os

import numpy as np
import pytest

from m3dkit import dataio
from m3dkit.dataio import (
    ConfigError,
    ContainerFormatError,
    FeatureDumpEntry,
    KittiParseError,
    RunConfig,
    apply_overrides,
    config_from_dict,
    format_kitti_label,
    load_config,
    load_head_set,
    load_tensors,
    parse_kitti_calib,
    parse_kitti_label_line,
    read_teacher_features,
    save_config,
    save_head_set,
    save_tensors,
    write_teacher_features,
)
from m3dkit.heads import random_head_set

EXAMPLE_LINE = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59"


class TestLabelParse:
    def test_example_line_fields(self):
        obj = parse_kitti_label_line(EXAMPLE_LINE)
        assert obj.cls == "Car"
        assert obj.truncation == 0.0 and obj.occlusion == 0
        assert obj.alpha == -1.58
        assert (obj.box2d.x1, obj.box2d.y1, obj.box2d.x2, obj.box2d.y2) == (587.01, 173.33, 614.12, 200.12)
        assert obj.box3d.dims == (1.65, 1.67, 3.64)
        assert obj.box3d.z == 46.70
        # stored location is the bottom-face center; centroid is h/2 above it
        assert obj.box3d.center[1] == pytest.approx(1.71 - 1.65 / 2, abs=1e-12)
        assert obj.box3d.yaw == pytest.approx(-1.59, abs=1e-12)
        assert obj.score is None

    def test_prediction_line_has_score(self):
        obj = parse_kitti_label_line(EXAMPLE_LINE + " 0.87")
        assert obj.score == 0.87

    def test_write_parse_is_fixed_point(self):
        line1 = format_kitti_label(parse_kitti_label_line(EXAMPLE_LINE))
        assert line1 == EXAMPLE_LINE
        assert format_kitti_label(parse_kitti_label_line(line1)) == line1

    def test_fixed_point_on_random_lines(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            h = rng.uniform(0.5, 3)
            fields = [
                "Car",
                f"{rng.uniform(0, 1):.2f}",
                str(int(rng.integers(0, 4))),
                f"{rng.uniform(-math.pi, math.pi):.2f}",
                f"{rng.uniform(0, 500):.2f}",
                f"{rng.uniform(0, 200):.2f}",
                f"{rng.uniform(500, 1000):.2f}",
                f"{rng.uniform(200, 370):.2f}",
                f"{h:.2f}",
                f"{rng.uniform(0.5, 3):.2f}",
                f"{rng.uniform(1, 6):.2f}",
                f"{rng.uniform(-20, 20):.2f}",
                f"{rng.uniform(-3, 3):.2f}",
                f"{rng.uniform(2, 80):.2f}",
                f"{rng.uniform(-math.pi, math.pi):.2f}",
            ]
            line = " ".join(fields)
            once = format_kitti_label(parse_kitti_label_line(line))
            twice = format_kitti_label(parse_kitti_label_line(once))
            assert once == twice

    def test_malformed_14_field_line_names_location(self):
        short = " ".join(EXAMPLE_LINE.split()[:14])
        with pytest.raises(KittiParseError) as err:
            parse_kitti_label_line(short, lineno=7, path="labels/000001.txt")
        assert "000001.txt:7" in str(err.value)

    def test_non_numeric_field_is_located_error(self):
        bad = EXAMPLE_LINE.replace("46.70", "fortysix")
        with pytest.raises(KittiParseError):
            parse_kitti_label_line(bad, lineno=3)

    def test_fuzz_10k_mutations_never_crash(self):
        rng = np.random.default_rng(1)
        base = EXAMPLE_LINE + " 0.55"
        alphabet = list("abcXYZ019.,-+e \t")
        parsed = errored = 0
        for _ in range(10_000):
            chars = list(base)
            for _ in range(int(rng.integers(1, 6))):
                op = rng.integers(3)
                pos = int(rng.integers(len(chars)))
                if op == 0:
                    chars[pos] = str(rng.choice(alphabet))
                elif op == 1 and len(chars) > 2:
                    del chars[pos]
                else:
                    chars.insert(pos, str(rng.choice(alphabet)))
            line = "".join(chars)
            if not line.strip():
                continue
            try:
                parse_kitti_label_line(line, lineno=1, path="fuzz.txt")
                parsed += 1
            except KittiParseError as exc:
                assert exc.lineno == 1 and exc.path == "fuzz.txt"
                errored += 1
        assert parsed + errored == 10_000 or parsed + errored >= 9_990
        assert errored > 0


class TestCalib:
    def test_slot_mapping(self, tmp_path):
        p2 = "P2: 700.0 0.0 620.5 0.0 0.0 700.0 187.5 0.0 0.0 0.0 1.0 0.0"
        path = tmp_path / "calib.txt"
        path.write_text(f"P0: 1 0 0 0 0 1 0 0 0 0 1 0\n{p2}\nExtra: 1 2 3\n")
        k = parse_kitti_calib(str(path))
        assert (k.fx, k.fy, k.cx, k.cy) == (700.0, 700.0, 620.5, 187.5)

    def test_missing_p2_rejected(self, tmp_path):
        path = tmp_path / "calib.txt"
        path.write_text("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n")
        with pytest.raises(KittiParseError):
            parse_kitti_calib(str(path))

    def test_baseline_offset_warns(self, tmp_path, caplog):
        p2 = "P2: 700.0 0.0 620.5 -337.2 0.0 700.0 187.5 0.0 0.0 0.0 1.0 0.0"
        path = tmp_path / "calib.txt"
        path.write_text(p2 + "\n")
        with caplog.at_level("WARNING"):
            parse_kitti_calib(str(path))
        assert any("baseline" in r.message for r in caplog.records)


class TestContainer:
    def test_bitwise_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        tensors = {
            "a/w": rng.normal(0, 1, (4, 3, 3, 3)).astype(np.float32),
            "a/b": rng.normal(0, 1, 4).astype(np.float32),
            "z": rng.normal(0, 1, (2, 2)).astype(np.float32),
        }
        path = tmp_path / "weights.m3dt"
        save_tensors(str(path), tensors)
        loaded = load_tensors(str(path))
        assert list(loaded) == list(tensors)
        for name in tensors:
            assert np.array_equal(loaded[name], tensors[name])
            assert loaded[name].dtype == np.float32
        # file-level bitwise: rewrite of the load reproduces the bytes
        path2 = tmp_path / "weights2.m3dt"
        save_tensors(str(path2), loaded)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ContainerFormatError):
            load_tensors(str(path))

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "trunc.m3dt"
        save_tensors(str(path), {"x": np.zeros(8, dtype=np.float32)})
        data = path.read_bytes()
        path.write_bytes(data[:-4])
        with pytest.raises(ContainerFormatError):
            load_tensors(str(path))

    def test_head_set_roundtrip(self, tmp_path):
        hs = random_head_set(np.random.default_rng(3), 8, 3)
        path = tmp_path / "heads.m3dt"
        save_head_set(str(path), hs)
        loaded = load_head_set(str(path))
        assert np.array_equal(loaded.cls.w3, hs.cls.w3)
        for name in hs.regression:
            assert np.array_equal(loaded.regression[name].w1b, hs.regression[name].w1b)


class TestTeacherFeatures:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        entries = [
            FeatureDumpEntry(0, 0, rng.normal(0, 1, 64).astype(np.float32), 12.5),
            FeatureDumpEntry(0, 1, rng.normal(0, 1, 64).astype(np.float32), 30.0),
            FeatureDumpEntry(3, 0, rng.normal(0, 1, 64).astype(np.float32), 8.25),
        ]
        path = tmp_path / "teacher.m3dt"
        write_teacher_features(str(path), entries)
        back = read_teacher_features(str(path))
        assert [(e.image_index, e.instance_index) for e in back] == [(0, 0), (0, 1), (3, 0)]
        for orig, got in zip(entries, back):
            assert np.array_equal(got.feat.astype(np.float32), orig.feat)
            assert got.z == np.float32(orig.z)

    def test_wrong_vector_length_rejected(self, tmp_path):
        path = tmp_path / "bad.m3dt"
        with pytest.raises(ValueError):
            write_teacher_features(str(path), [FeatureDumpEntry(0, 0, np.zeros(32), 5.0)])
        # a crafted file with a 32-vector must fail on read too
        save_tensors(str(path), {"n000000/i0000/feat": np.zeros(32, dtype=np.float32),
                                 "n000000/i0000/z": np.array([5.0], dtype=np.float32)})
        with pytest.raises(ContainerFormatError):
            read_teacher_features(str(path))

    def test_empty_dump_is_valid(self, tmp_path):
        path = tmp_path / "empty.m3dt"
        write_teacher_features(str(path), [])
        assert read_teacher_features(str(path)) == []


class TestRunConfig:
    def test_paper_defaults(self):
        cfg = RunConfig()
        assert (cfg.match_alpha, cfg.match_beta, cfg.match_gamma) == (0.5, 1.0, 1.0)
        assert cfg.distill_epsilon == 0.1
        assert cfg.cgi_topk == 50
        assert cfg.loss_weights.distill == 0.1

    def test_json_roundtrip(self, tmp_path):
        cfg = RunConfig(match_alpha=0.7, cgi_topk=200, classes=("Car",))
        path = tmp_path / "config.json"
        save_config(str(path), cfg)
        loaded = load_config(str(path))
        assert loaded == cfg

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError) as err:
            config_from_dict({"match_alfa": 0.5})
        assert "match_alfa" in str(err.value)

    def test_env_var_override(self, tmp_path, monkeypatch):
        cfg = RunConfig(cgi_topk=7)
        path = tmp_path / "env_config.json"
        save_config(str(path), cfg)
        monkeypatch.setenv(dataio.CONFIG_ENV_VAR, str(path))
        assert load_config().cgi_topk == 7

    def test_cli_style_overrides(self):
        cfg = apply_overrides(RunConfig(), ["match_gamma=0.0", "cgi_topk=25"])
        assert cfg.match_gamma == 0.0 and cfg.cgi_topk == 25
        with pytest.raises(ConfigError):
            apply_overrides(RunConfig(), ["nope=1"])

    def test_version_gate(self):
        with pytest.raises(ConfigError):
            config_from_dict({"version": 99})
