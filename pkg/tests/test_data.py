import itertools
import math

import numpy as np
import pytest

from plkan import (Dataset, TaskSpec, gen_determinant, gen_tetrahedra,
                   load_dataset, pearson_pct, save_dataset)
from plkan.data import (DatasetFormatError, UndefinedCorrelationError,
                        determinants, tetra_face_areas, dataset_filename,
                        TETRA_FACES)


# -- oracles ------------------------------------------------------------------

def cofactor_det(m):
    """Recursive cofactor expansion along the first row."""
    m = [list(row) for row in m]
    n = len(m)
    if n == 1:
        return m[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        total += ((-1.0) ** j) * m[0][j] * cofactor_det(minor)
    return total


def heron_area(a, b, c):
    """Numerically stable Heron's formula (sorted-side variant)."""
    x, y, z = sorted((a, b, c), reverse=True)
    inner = (x + (y + z)) * (z - (x - y)) * (z + (x - y)) * (x + (y - z))
    return 0.25 * math.sqrt(max(inner, 0.0))


def heron_face_areas(verts):
    areas = []
    for (a, b, c) in TETRA_FACES:
        ea = np.linalg.norm(verts[b] - verts[a])
        eb = np.linalg.norm(verts[c] - verts[b])
        ec = np.linalg.norm(verts[a] - verts[c])
        areas.append(heron_area(ea, eb, ec))
    return np.array(areas)


# -- determinants -------------------------------------------------------------

def test_determinant_identity():
    assert determinants(np.eye(4)) == 1.0


def test_determinant_diagonal():
    assert determinants(np.diag([1.0, 2.0, 3.0, 4.0])) == pytest.approx(24.0)


def test_determinant_row_swap_changes_sign():
    m = np.eye(4)
    m[[0, 1]] = m[[1, 0]]
    assert determinants(m) == pytest.approx(-1.0)


@pytest.mark.parametrize("dim", [4, 5])
def test_determinant_matches_cofactor_oracle(dim):
    rng = np.random.default_rng(100 + dim)
    mats = rng.uniform(0, 1, (100, dim, dim))
    got = determinants(mats)
    for i in range(100):
        assert got[i] == pytest.approx(cofactor_det(mats[i]), rel=1e-9, abs=1e-12)


def test_determinant_singular():
    m = np.ones((4, 4))
    assert determinants(m) == 0.0


def test_gen_determinant_layout_and_values():
    ds = gen_determinant(4, 50, seed=5)
    assert (ds.input_dim, ds.output_dim, ds.record_count) == (16, 1, 50)
    # inputs are the row-major matrix entries
    for i in range(50):
        m = ds.inputs[i].reshape(4, 4)
        assert ds.targets[i, 0] == pytest.approx(cofactor_det(m), rel=1e-9)


def test_gen_determinant_deterministic():
    a = gen_determinant(5, 20, seed=3)
    b = gen_determinant(5, 20, seed=3)
    np.testing.assert_array_equal(a.records, b.records)


def test_gen_determinant_range_respected():
    ds = gen_determinant(4, 100, seed=1, value_range=(2.0, 3.0))
    assert ds.inputs.min() >= 2.0 and ds.inputs.max() <= 3.0


def test_gen_determinant_rejects_bad_args():
    with pytest.raises(ValueError):
        gen_determinant(3, 10, seed=0)
    with pytest.raises(ValueError):
        gen_determinant(4, 0, seed=0)
    with pytest.raises(ValueError):
        gen_determinant(4, 10, seed=0, value_range=(1.0, 1.0))


# -- tetrahedra ---------------------------------------------------------------

def test_tetra_degenerate_zero_area():
    verts = np.tile([0.3, 0.4, 0.5], (4, 1))
    assert np.array_equal(tetra_face_areas(verts), np.zeros(4))


def test_tetra_unit_corner():
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
    areas = tetra_face_areas(verts)
    # face opposite vertex 0 is the diagonal face, others are right triangles
    assert areas[0] == pytest.approx(math.sqrt(3) / 2, rel=1e-12)
    np.testing.assert_allclose(areas[1:], 0.5, rtol=1e-12)
    np.testing.assert_allclose(areas, heron_face_areas(verts), rtol=1e-9)


def test_tetra_matches_heron_oracle():
    rng = np.random.default_rng(77)
    for _ in range(100):
        verts = rng.uniform(0, 1, (4, 3))
        np.testing.assert_allclose(tetra_face_areas(verts),
                                   heron_face_areas(verts),
                                   rtol=1e-9, atol=1e-12)


def test_tetra_relabeling_permutes_outputs():
    rng = np.random.default_rng(42)
    verts = rng.uniform(0, 1, (4, 3))
    base = tetra_face_areas(verts)
    for perm in itertools.permutations(range(4)):
        relabeled = tetra_face_areas(verts[list(perm)])
        # face opposite new vertex i is the face opposite old vertex perm[i]
        np.testing.assert_allclose(relabeled, base[list(perm)],
                                   rtol=1e-12, atol=1e-15)


def test_gen_tetrahedra_dims():
    ds = gen_tetrahedra(30, seed=2)
    assert (ds.input_dim, ds.output_dim) == (12, 4)
    verts = ds.inputs[0].reshape(4, 3)
    np.testing.assert_allclose(ds.targets[0], tetra_face_areas(verts), rtol=1e-12)


# -- pearson ------------------------------------------------------------------

def test_pearson_perfect_positive():
    a = np.array([1.0, 2.0, 5.0, 7.5])
    assert pearson_pct(a, 2 * a + 3) == pytest.approx(100.0, abs=1e-10)


def test_pearson_perfect_negative():
    a = np.array([1.0, 2.0, 5.0, 7.5])
    assert pearson_pct(a, -a) == pytest.approx(-100.0, abs=1e-10)


def test_pearson_matches_textbook_formula():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    b = np.array([1.0, 2.0, 3.0, 5.0])
    n = 4
    num = n * (a * b).sum() - a.sum() * b.sum()
    den = math.sqrt(n * (a * a).sum() - a.sum() ** 2) * \
        math.sqrt(n * (b * b).sum() - b.sum() ** 2)
    assert pearson_pct(a, b) == pytest.approx(100 * num / den, abs=1e-10)


def test_pearson_constant_vector_raises():
    with pytest.raises(UndefinedCorrelationError):
        pearson_pct([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        pearson_pct([1.0, 2.0, 3.0], [4.0, 4.0, 4.0])


def test_pearson_affine_invariance():
    rng = np.random.default_rng(5)
    a = rng.normal(size=500)
    b = rng.normal(size=500)
    base = pearson_pct(a, b)
    assert pearson_pct(3.5 * a + 1.0, b) == pytest.approx(base, abs=1e-10)
    assert pearson_pct(a, 0.2 * b - 7.0) == pytest.approx(base, abs=1e-10)


def test_pearson_length_checks():
    with pytest.raises(ValueError):
        pearson_pct([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        pearson_pct([1.0], [1.0])


# -- dataset container --------------------------------------------------------

def test_dataset_validates_shape_and_finiteness():
    with pytest.raises(ValueError):
        Dataset(2, 1, np.zeros((5, 4)))
    bad = np.zeros((3, 3))
    bad[1, 1] = np.inf
    with pytest.raises(ValueError):
        Dataset(2, 1, bad)


def test_dataset_ranges():
    records = np.array([[0.0, 1.0, -2.0], [0.5, 2.0, 6.0]])
    ds = Dataset(2, 1, records)
    assert ds.input_range() == (0.0, 2.0)
    lo, hi = ds.target_range(margin=0.05)
    assert lo == pytest.approx(-2.0 - 0.4) and hi == pytest.approx(6.0 + 0.4)


def test_taskspec_generates_disjoint_streams():
    spec = TaskSpec("det4", 40, 20, seed=9)
    train, val = spec.generate()
    assert train.record_count == 40 and val.record_count == 20
    assert not np.array_equal(train.records[:20], val.records)
    again_train, again_val = spec.generate()
    np.testing.assert_array_equal(train.records, again_train.records)
    np.testing.assert_array_equal(val.records, again_val.records)


def test_taskspec_rejects_unknown_kind():
    with pytest.raises(ValueError):
        TaskSpec("det6", 10, 10, seed=0)


# -- files --------------------------------------------------------------------

def test_csv_roundtrip_bit_exact(tmp_path):
    ds = gen_determinant(4, 200, seed=8)
    path = tmp_path / dataset_filename("det4", "train", 200)
    save_dataset(ds, path)
    loaded = load_dataset(path)
    assert (loaded.input_dim, loaded.output_dim) == (16, 1)
    np.testing.assert_array_equal(loaded.records, ds.records)


def test_csv_rewrites_identically(tmp_path):
    ds = gen_tetrahedra(50, seed=4)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset(ds, p1)
    save_dataset(load_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_binary_roundtrip_and_cross_format(tmp_path):
    ds = gen_tetrahedra(1000, seed=12)
    csv_path = tmp_path / "t.csv"
    bin_path = tmp_path / "t.bin"
    save_dataset(ds, csv_path)
    save_dataset(ds, bin_path)
    from_csv = load_dataset(csv_path)
    from_bin = load_dataset(bin_path)
    np.testing.assert_array_equal(from_bin.records, ds.records)
    np.testing.assert_array_equal(from_csv.records, from_bin.records)


def test_csv_malformed_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DatasetFormatError, match="line 1"):
        load_dataset(path)


def test_csv_ragged_row_reports_line(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("x1,x2,z1\n1,2,3\n4,5\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(path)


def test_csv_non_numeric_reports_line(tmp_path):
    path = tmp_path / "nonnum.csv"
    path.write_text("x1,z1\n1,2\n1,zap\n")
    with pytest.raises(DatasetFormatError, match="line 3"):
        load_dataset(path)


def test_binary_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(DatasetFormatError):
        load_dataset(path)


def test_binary_truncated_payload(tmp_path):
    ds = gen_determinant(4, 10, seed=1)
    path = tmp_path / "t.bin"
    save_dataset(ds, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(DatasetFormatError, match="payload"):
        load_dataset(path)
