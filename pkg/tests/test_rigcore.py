import json

import numpy as np
import pytest

from heterskin import rigcore
from heterskin.rigcore import Mesh, Rig, RigError, Skeleton, WeightRows

from conftest import chain_skeleton
from oracles import brute_force_dedup


def _square_mesh():
    verts = np.array([[0.0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    return Mesh(verts, tris)


class TestMesh:
    def test_triangle_index_out_of_range(self):
        with pytest.raises(RigError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 7]]))

    def test_repeated_index_in_triangle(self):
        with pytest.raises(RigError):
            Mesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))

    def test_non_finite_coordinate(self):
        verts = np.zeros((3, 3))
        verts[1, 2] = np.inf
        with pytest.raises(RigError):
            Mesh(verts, np.array([[0, 1, 2]]))

    def test_edges_sorted_unique(self):
        mesh = _square_mesh()
        edges = mesh.edges()
        assert edges.shape[1] == 2
        assert np.all(edges[:, 0] < edges[:, 1])
        assert len(np.unique(edges, axis=0)) == len(edges)
        expected = {(0, 1), (1, 2), (0, 2), (2, 3), (0, 3)}
        assert set(map(tuple, edges)) == expected


class TestSkeleton:
    def test_chain_bones(self):
        skel = chain_skeleton([[0, 0, 0], [0, 1, 0], [0, 2, 0]])
        # two real bones then one helper at the leaf
        assert skel.bones.tolist() == [[0, 1], [1, 2], [2, 2]]

    def test_single_joint(self):
        skel = chain_skeleton([[0, 0, 0]])
        assert skel.bones.tolist() == [[0, 0]]

    def test_star_bone_count(self):
        skel = chain_skeleton(
            [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], parents=[-1, 0, 0, 0]
        )
        # 3 real + 3 helpers
        assert len(skel.bones) == 6
        assert sum(1 for a, b in skel.bones if a == b) == 3

    def test_helper_flags(self):
        skel = chain_skeleton([[0, 0, 0], [0, 1, 0]])
        helper = skel.is_helper()
        assert not helper[0]
        assert helper[1]

    def test_cycle_rejected(self):
        with pytest.raises(RigError):
            Skeleton.build(["a", "b"], np.zeros((2, 3)), [1, 0])

    def test_two_roots_rejected(self):
        with pytest.raises(RigError):
            Skeleton.build(["a", "b"], np.zeros((2, 3)), [-1, -1])

    def test_bone_count_formula_random_trees(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(2, 12))
            parents = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
            skel = Skeleton.build(
                [f"j{i}" for i in range(n)], rng.standard_normal((n, 3)), parents
            )
            leaves = n - len(set(p for p in parents if p >= 0))
            assert len(skel.bones) == (n - 1) + leaves


class TestAddHelperBones:
    def test_chain(self):
        bones = rigcore.add_helper_bones([-1, 0, 1])
        assert bones.tolist() == [[0, 1], [1, 2], [2, 2]]

    def test_single_root(self):
        assert rigcore.add_helper_bones([-1]).tolist() == [[0, 0]]

    def test_root_with_three_leaves(self):
        bones = rigcore.add_helper_bones([-1, 0, 0, 0])
        assert bones.tolist() == [[0, 1], [0, 2], [0, 3], [1, 1], [2, 2], [3, 3]]


class TestWeightRows:
    def test_row_sum_enforced(self):
        with pytest.raises(RigError):
            WeightRows.from_pairs([[(0, 0.5), (1, 0.3)]], num_bones=2)

    def test_renormalize_within_tolerance(self):
        w = WeightRows.from_pairs([[(0, 0.50005), (1, 0.5)]], num_bones=2)
        assert abs(w.values[0].sum() - 1.0) < 1e-12

    def test_negative_weight_rejected(self):
        with pytest.raises(RigError):
            WeightRows.from_pairs([[(0, -0.1), (1, 1.1)]], num_bones=2)

    def test_dense_round_trip(self):
        dense = np.array([[0.25, 0.75, 0.0], [0.0, 0.5, 0.5]])
        w = WeightRows.from_dense(dense)
        assert np.array_equal(w.to_dense(), dense)


class TestMergeDuplicates:
    def test_identity_when_no_duplicates(self):
        mesh = _square_mesh()
        merged, mapping = rigcore.merge_duplicate_vertices(mesh)
        assert np.array_equal(mapping, np.arange(4))
        assert np.array_equal(merged.vertices, mesh.vertices)
        assert np.array_equal(merged.triangles, mesh.triangles)

    def test_exact_duplicate_pair(self):
        verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 0]])
        tris = np.array([[0, 1, 2], [0, 3, 2]])
        merged, mapping = rigcore.merge_duplicate_vertices(Mesh(verts, tris))
        assert len(merged.vertices) == 3
        assert mapping[1] == mapping[3]

    def test_degenerate_triangles_dropped(self):
        verts = np.array([[0.0, 0, 0], [1, 0, 0], [1, 0, 0]])
        tris = np.array([[0, 1, 2]])
        merged, _ = rigcore.merge_duplicate_vertices(Mesh(verts, tris))
        assert len(merged.triangles) == 0

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(10):
            base = rng.uniform(0, 1, size=(30, 3))
            dup_of = rng.integers(0, 30, size=8)
            verts = np.vstack([base, base[dup_of]])
            tris = np.array([[i, i + 1, i + 2] for i in range(0, 36, 3)])
            mesh = Mesh(verts, tris)
            merged, mapping = rigcore.merge_duplicate_vertices(mesh, tol=1e-6)
            groups = brute_force_dedup(verts, 1e-6)
            # same partition: two old vertices merge iff the oracle groups them
            for i in range(len(verts)):
                for j in range(i + 1, len(verts)):
                    assert (mapping[i] == mapping[j]) == (groups[i] == groups[j])
            assert len(merged.vertices) == len(np.unique(groups))

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        verts = np.repeat(rng.uniform(0, 1, size=(10, 3)), 2, axis=0)
        tris = np.array([[0, 2, 4], [1, 3, 5], [6, 8, 10]])
        once, _ = rigcore.merge_duplicate_vertices(Mesh(verts, tris))
        twice, mapping = rigcore.merge_duplicate_vertices(once)
        assert np.array_equal(mapping, np.arange(len(once.vertices)))
        assert np.array_equal(once.vertices, twice.vertices)


class TestRigIO:
    def test_minimal_bundle(self, tmp_path):
        mesh = Mesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))
        skel = chain_skeleton([[0, 0, 0], [0, 1, 0]])
        rig = Rig(mesh=mesh, skeleton=skel)
        path = tmp_path / "rig.json"
        rigcore.save_rig(rig, path)
        loaded = rigcore.load_rig(path)
        assert len(loaded.mesh.vertices) == 3
        assert len(loaded.skeleton.bones) == 2

    def test_out_of_range_triangle_in_file(self, tmp_path):
        doc = {
            "name": "bad",
            "vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
            "triangles": [[0, 1, 7]],
            "joints": [{"name": "r", "position": [0, 0, 0], "parent": -1}],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(RigError):
            rigcore.load_rig(path)

    def test_bad_weight_row_sum_in_file(self, tmp_path):
        doc = {
            "name": "bad",
            "vertices": [[0, 0, 0], [1, 0, 0], [0, 1, 0]],
            "triangles": [[0, 1, 2]],
            "joints": [{"name": "r", "position": [0, 0, 0], "parent": -1}],
            "weights": [[[0, 0.5]], [[0, 1.0]], [[0, 1.0]]],
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(RigError):
            rigcore.load_rig(path)

    def test_round_trip_exact(self, tmp_path, small_rig):
        p1 = tmp_path / "a.json"
        p2 = tmp_path / "b.json"
        rigcore.save_rig(small_rig, p1)
        again = rigcore.load_rig(p1)
        rigcore.save_rig(again, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(again.mesh.vertices, small_rig.mesh.vertices)
        assert np.array_equal(again.skeleton.positions, small_rig.skeleton.positions)
        for a, b in zip(again.weights.values, small_rig.weights.values):
            assert np.array_equal(a, b)

    def test_obj_import(self, tmp_path):
        path = tmp_path / "tri.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
        mesh = rigcore.load_obj_mesh(path)
        assert len(mesh.vertices) == 3
        assert mesh.triangles.tolist() == [[0, 1, 2]]


class TestMergeRig:
    def test_weights_follow_surviving_vertex(self):
        verts = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 0]])
        tris = np.array([[0, 1, 2], [0, 3, 2]])
        skel = chain_skeleton([[0, 0, 0], [0, 1, 0]])
        w = WeightRows.from_pairs(
            [[(0, 1.0)], [(1, 1.0)], [(0, 1.0)], [(0, 0.5), (1, 0.5)]], num_bones=2
        )
        rig = Rig(mesh=Mesh(verts, tris), skeleton=skel, weights=w)
        merged, mapping = rigcore.merge_rig(rig)
        assert len(merged.mesh.vertices) == 3
        # vertex 3 merged into vertex 1: the survivor's weights win
        survivor = mapping[3]
        assert merged.weights.values[survivor].tolist() == [1.0]
