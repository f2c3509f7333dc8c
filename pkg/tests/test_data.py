import struct

import numpy as np
import pytest

from src.data import Dataset, gen_data, load_idx
from src.errors import DimensionError, IdxFormatError


@pytest.fixture
def idx_files(tmp_path):
    """两张 2×2 图像及其标签"""
    pixels = bytes([0, 51, 102, 255, 255, 0, 0, 153])
    images = tmp_path / "images.idx"
    labels = tmp_path / "labels.idx"
    images.write_bytes(struct.pack(">IIII", 0x803, 2, 2, 2) + pixels)
    labels.write_bytes(struct.pack(">II", 0x801, 2) + bytes([7, 1]))
    return images, labels


@pytest.mark.parametrize("kind", ["blobs", "two_moons", "linear_teacher"])
def test_gen_data_is_deterministic(kind):
    """测试相同种子生成相同数据"""
    a = gen_data(kind, 20, 3, seed=4)
    b = gen_data(kind, 20, 3, seed=4)
    assert np.array_equal(a.inputs, b.inputs)
    assert np.array_equal(a.labels, b.labels)
    assert a.inputs.shape == (20, 3)


def test_gen_data_rejects_bad_sizes():
    """测试 n = 0 或 d = 0 报错"""
    with pytest.raises(ValueError):
        gen_data("blobs", 0, 2)
    with pytest.raises(ValueError):
        gen_data("blobs", 10, 0)
    with pytest.raises(ValueError):
        gen_data("two_moons", 10, 1)
    with pytest.raises(ValueError):
        gen_data("spirals", 10, 2)


def test_blobs_are_balanced_classification():
    """测试 blobs 的类别编号与 one-hot 目标"""
    data = gen_data("blobs", 30, 2, seed=1, classes=3)
    assert data.is_classification
    assert data.num_classes == 3
    assert np.bincount(data.labels).tolist() == [10, 10, 10]
    targets = data.targets()
    assert targets.shape == (30, 3)
    assert np.array_equal(np.argmax(targets, axis=1), data.labels)


def test_linear_teacher_without_noise_is_exact():
    """测试无噪声时标签严格等于教师映射"""
    data = gen_data("linear_teacher", 25, 4, seed=2, noise=0.0, outputs=2)
    assert not data.is_classification
    assert np.allclose(data.labels, data.inputs @ data.teacher.T, atol=1e-15)
    assert data.arrays()[1].shape == (25, 2)


def test_dataset_save_and_load(tmp_path):
    """测试 npz 保存后完整还原"""
    data = gen_data("linear_teacher", 10, 3, seed=6)
    path = tmp_path / "dataset.npz"
    data.save(path)
    restored = Dataset.load(path)
    assert np.array_equal(restored.inputs, data.inputs)
    assert np.array_equal(restored.labels, data.labels)
    assert np.array_equal(restored.teacher, data.teacher)
    assert restored.meta["name"] == "linear_teacher"


def test_dataset_checks_label_count():
    """测试输入与标签数量不一致"""
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int))
    with pytest.raises(DimensionError):
        Dataset(np.zeros((2, 2)), np.array([0.5, 1.5]))


def test_head_keeps_first_samples(blobs):
    """测试截取前若干样本"""
    head = blobs.head(5)
    assert head.n == 5
    assert np.array_equal(head.inputs, blobs.inputs[:5])
    assert head.num_classes == blobs.num_classes


def test_load_idx(idx_files):
    """测试解析 IDX 图像与标签"""
    data = load_idx(*idx_files)
    assert data.inputs.shape == (2, 4)
    assert np.allclose(data.inputs[0], [0.0, 0.2, 0.4, 1.0])
    assert data.labels.tolist() == [7, 1]
    assert data.num_classes == 10
    assert data.meta["rows"] == 2


def test_load_idx_limit(idx_files):
    """测试只读取前 limit 个样本"""
    data = load_idx(*idx_files, limit=1)
    assert data.n == 1
    assert data.labels.tolist() == [7]


def test_load_idx_bad_magic(idx_files):
    """测试魔数错误"""
    images, labels = idx_files
    images.write_bytes(struct.pack(">IIII", 0x801, 2, 2, 2) + bytes(8))
    with pytest.raises(IdxFormatError, match="0x00000803"):
        load_idx(images, labels)


def test_load_idx_truncated(idx_files):
    """测试文件被截断"""
    images, labels = idx_files
    images.write_bytes(images.read_bytes()[:-1])
    with pytest.raises(IdxFormatError):
        load_idx(images, labels)
    labels.write_bytes(b"\x00\x00")
    with pytest.raises(IdxFormatError):
        load_idx(images, labels)


def test_load_idx_count_mismatch(idx_files):
    """测试图像与标签数量不一致"""
    images, labels = idx_files
    labels.write_bytes(struct.pack(">II", 0x801, 3) + bytes([7, 1, 2]))
    with pytest.raises(IdxFormatError):
        load_idx(images, labels)
