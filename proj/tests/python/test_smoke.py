"""End-to-end smoke tests for the python bindings."""

import math

import numpy as np
import pytest
from PIL import Image

import dhhqa


def write_sphere(directory, name, rings=10, segments=14, radius=1.0):
    """Write a small textured UV-sphere bundle (obj + mtl + png)."""
    verts, uvs, normals = [], [], []

    def add(theta, phi):
        n = (
            math.sin(theta) * math.cos(phi),
            math.cos(theta),
            math.sin(theta) * math.sin(phi),
        )
        verts.append(tuple(radius * c for c in n))
        normals.append(n)
        uvs.append((phi / (2 * math.pi), 1.0 - theta / math.pi))

    add(0.0, 0.0)
    for i in range(1, rings):
        for j in range(segments + 1):
            add(math.pi * i / rings, 2 * math.pi * j / segments)
    add(math.pi, 0.0)
    bottom = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * (segments + 1) + j

    faces = []
    for j in range(segments):
        faces.append((0, ring(1, j + 1), ring(1, j)))
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append((a, b, c))
            faces.append((b, d, c))
    for j in range(segments):
        faces.append((bottom, ring(rings - 1, j), ring(rings - 1, j + 1)))

    obj_path = directory / f"{name}.obj"
    with open(obj_path, "w") as f:
        f.write(f"mtllib {name}.mtl\n")
        for v in verts:
            f.write("v %.9g %.9g %.9g\n" % v)
        for t in uvs:
            f.write("vt %.9g %.9g\n" % t)
        for n in normals:
            f.write("vn %.9g %.9g %.9g\n" % n)
        f.write("usemtl material0\n")
        for a, b, c in faces:
            f.write(f"f {a + 1}/{a + 1}/{a + 1} {b + 1}/{b + 1}/{b + 1} {c + 1}/{c + 1}/{c + 1}\n")
    (directory / f"{name}.mtl").write_text(f"newmtl material0\nmap_Kd {name}.png\n")

    x, y = np.meshgrid(np.arange(64), np.arange(64))
    checker = (((x // 8) + (y // 8)) % 2 * 200 + 30).astype(np.uint8)
    Image.fromarray(np.stack([checker, 255 - checker, checker], axis=-1)).save(
        directory / f"{name}.png"
    )
    return str(obj_path)


@pytest.fixture()
def sphere_obj(tmp_path):
    return write_sphere(tmp_path, "head")


def test_mesh_loading_and_rendering(sphere_obj):
    mesh = dhhqa.load_mesh(sphere_obj)
    assert mesh.n_vertices > 100
    assert mesh.n_faces > 200
    # discretized sphere: the bbox diagonal sits just under the ideal 2*sqrt(3)
    assert mesh.bbox_diagonal() == pytest.approx(2 * math.sqrt(3), rel=0.02)
    # vertex-mean center; duplicated seam vertices pull it slightly off origin
    assert np.allclose(dhhqa.geometric_center(mesh), (0, 0, 0), atol=0.1)

    img, mask = dhhqa.render_front(mesh, resolution=128)
    assert img.shape == (128, 128, 3)
    assert mask.shape == (128, 128)
    # an inscribed sphere covers roughly pi/4 of the frame
    assert 0.6 < mask.mean() < 0.85
    img2, _ = dhhqa.render_front(mesh, resolution=128)
    assert np.array_equal(img, img2)


def test_distortion_and_fr_metrics(sphere_obj):
    mesh = dhhqa.load_mesh(sphere_obj)
    ref = dhhqa.mesh_to_pointcloud(mesh, 4000, seed=1)
    assert len(ref) == 4000
    assert ref.points.shape == (4000, 3)

    assert "geometry_noise" in dhhqa.DISTORTION_KINDS
    noisy = dhhqa.apply_distortion(mesh, "geometry_noise", level=3, seed=7)
    dist = dhhqa.mesh_to_pointcloud(noisy, 4000, seed=2)
    score = dhhqa.p2point_mse(ref, dist)
    assert score["direction"] == "symmetric"
    assert score["value"] > 0
    # heavier noise must measure worse
    heavier = dhhqa.mesh_to_pointcloud(
        dhhqa.apply_distortion(mesh, "geometry_noise", level=4, seed=7), 4000, seed=2
    )
    assert dhhqa.p2point_mse(ref, heavier)["value"] > score["value"]

    same = dhhqa.psnr_yuv(ref, ref)
    assert same["infinite"]


def test_statistics_and_folds():
    assert dhhqa.srcc([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)
    assert dhhqa.krcc([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)
    assert dhhqa.plcc([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert dhhqa.accuracy([0, 1, 1], [0, 1, 0]) == pytest.approx(2 / 3)

    folds = dhhqa.make_folds([f"c{i}" for i in range(10)], k=5, seed=3)
    assert len(folds) == 5
    tested = [c for _, _, test in folds for c in test]
    assert sorted(tested) == sorted(f"c{i}" for i in range(10))


def test_crop_patches_respects_geometry(sphere_obj):
    img, _ = dhhqa.render_front(dhhqa.load_mesh(sphere_obj), resolution=96)
    patches = dhhqa.crop_patches(img, k=4, patch_size=32, seed=5)
    assert len(patches) == 4
    for pixels, x, y in patches:
        assert pixels.shape == (32, 32, 3)
        assert 0 <= x <= 64 and 0 <= y <= 64
        assert np.array_equal(pixels, img[y : y + 32, x : x + 32])


def test_train_and_predict_roundtrip(tmp_path):
    meshes = [write_sphere(tmp_path, f"head{i}", rings=8 + i % 3) for i in range(5)]
    corpus = tmp_path / "corpus"
    n = dhhqa.build_corpus(meshes, str(corpus), seed=11, resolution=64)
    assert n == 140

    config = """{
      "vit": {"image_size": 16, "vit_patch_size": 8, "embed_dim": 16, "n_blocks": 1,
              "n_heads": 2, "mlp_ratio": 2},
      "train": {"epochs": 1, "batch_size": 8, "crop_size": 16, "min_foreground": 0.1, "seed": 3}
    }"""
    ckpt = str(tmp_path / "model.ckpt")
    log = dhhqa.train_fold(str(corpus / "manifest.csv"), 0, config, ckpt)
    assert len(log) == 1
    epoch, loss, _, _ = log[0]
    assert epoch == 1 and np.isfinite(loss)

    pred = dhhqa.predict(ckpt, meshes[0], k_crops=2, seed=4, crop_size=16)
    assert np.isfinite(pred["quality_score"])
    assert pred["predicted_class"] in dhhqa.DISTORTION_KINDS
    assert sum(pred["class_probs"]) == pytest.approx(1.0)
