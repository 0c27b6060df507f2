import numpy as np
import pytest

from garmdyn import containers
from garmdyn.config import DEFAULTS, format_config, load_config, parse_config_file
from garmdyn.simulate import build_capsule_body, make_motion_script


def test_gseq_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.normal(size=(5, 17, 3)).astype(np.float32)
    path = tmp_path / "seq.gseq"
    containers.write_gseq(path, frames)
    back = containers.read_gseq(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, frames)
    # write the read-back again: byte-identical files
    path2 = tmp_path / "seq2.gseq"
    containers.write_gseq(path2, back)
    assert path.read_bytes() == path2.read_bytes()


def test_gseq_header_validation(tmp_path):
    path = tmp_path / "bad.gseq"
    path.write_bytes(b"NOPE" + b"\0" * 12)
    with pytest.raises(ValueError, match="magic"):
        containers.read_gseq(path)
    good = tmp_path / "trunc.gseq"
    containers.write_gseq(good, np.zeros((2, 3, 3), dtype=np.float32))
    data = good.read_bytes()
    good.write_bytes(data[:-4])
    with pytest.raises(ValueError, match="payload"):
        containers.read_gseq(good)


def test_motion_clip_round_trip(tmp_path):
    frames = make_motion_script("mix", 9, amplitude_deg=25)
    path = tmp_path / "clip.gmot"
    containers.write_motion_clip(path, frames)
    back = containers.read_motion_clip(path)
    assert len(back) == 9
    for a, b in zip(frames, back):
        np.testing.assert_allclose(a.joint_rotations, b.joint_rotations, atol=1e-6)
        np.testing.assert_allclose(a.root_translation, b.root_translation, atol=1e-6)


def test_body_round_trip(tmp_path):
    body, _ = build_capsule_body(segments=6)
    path = tmp_path / "body.json"
    containers.save_body(path, body)
    back = containers.load_body(path)
    np.testing.assert_allclose(back.canonical_vertices, body.canonical_vertices)
    np.testing.assert_array_equal(back.faces, body.faces)
    np.testing.assert_array_equal(back.joint_parents, body.joint_parents)
    np.testing.assert_allclose(back.joint_skinning_weights, body.joint_skinning_weights)


def test_config_defaults_and_paper_values():
    cfg = load_config()
    assert (cfg["gen.lambda_laplacian"], cfg["gen.lambda_unposed"], cfg["gen.lambda_template"]) == (3.5, 0.1, 0.05)
    assert cfg["gen.lambda_kl"] == 1e-3
    assert (cfg["motion.lambda_laplacian"], cfg["motion.lambda_latent"]) == (1.5, 0.5)
    assert cfg["gen.epochs"] == 500 and cfg["gen.lr"] == 1e-4 and cfg["gen.batch_size"] == 56
    assert cfg["motion.epochs"] == 300 and cfg["motion.lr"] == 1e-4 and cfg["motion.batch_size"] == 1
    assert cfg["motion.tbptt_window"] == 50
    assert cfg["detail.epochs"] == 100 and cfg["detail.lr"] == 2e-4 and cfg["detail.batch_size"] == 8
    assert cfg["collision.epsilon"] == 1e-3
    assert cfg["gen.weight_decay"] == 1e-3
    assert cfg["motion.hidden_size"] == 500
    assert cfg["detail.edgeconv_dims"] == "3,8,10"
    assert cfg["data.train_fraction"] == 0.7


def test_config_overlay_and_strictness(tmp_path):
    overlay = tmp_path / "exp.cfg"
    overlay.write_text("gen.epochs = 7\nmotion.scheduled_sampling = true  # flag\n")
    cfg = load_config([str(overlay)])
    assert cfg["gen.epochs"] == 7
    assert cfg["motion.scheduled_sampling"] is True
    bad = tmp_path / "bad.cfg"
    bad.write_text("gen.epochz = 7\n")
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_file(str(bad))
    with pytest.raises(ValueError, match="unknown config key"):
        load_config(overrides={"nope": 1})


def test_config_layering_order(tmp_path):
    a = tmp_path / "a.cfg"
    b = tmp_path / "b.cfg"
    a.write_text("seed = 1\ngen.lr = 0.01\n")
    b.write_text("seed = 2\n")
    cfg = load_config([str(a), str(b)])
    assert cfg["seed"] == 2 and cfg["gen.lr"] == 0.01


def test_config_format_round_trip(tmp_path):
    cfg = load_config(overrides={"seed": 11, "sim.fps": 24.0})
    path = tmp_path / "echo.cfg"
    path.write_text(format_config(cfg))
    again = load_config([str(path)])
    assert again == cfg


def test_config_bool_parse_errors(tmp_path):
    bad = tmp_path / "b.cfg"
    bad.write_text("motion.scheduled_sampling = maybe\n")
    with pytest.raises(ValueError, match="boolean"):
        parse_config_file(str(bad))


def test_defaults_cover_every_key_once():
    assert len(DEFAULTS) == len(set(DEFAULTS))
