import json
import random

import pytest

from molforge.errors import InvalidGraph, LengthMismatch
from molforge.molgraph import (
    Atom,
    Bond,
    Fingerprint,
    MolecularGraph,
    allowed_valences,
    canonical_key,
    canonical_order,
    check_valence,
    descriptors,
    graph_from_json,
    implicit_hydrogens,
    induced_subgraph,
    morgan_fingerprint,
    relabel,
    replace_attachment_points,
    tanimoto,
    to_graph_json,
)


def C(**kw):
    return Atom("C", **kw)


def benzene():
    atoms = [Atom("C", aromatic=True, explicit_h=1) for _ in range(6)]
    bonds = [(i, (i + 1) % 6, 1.5) for i in range(6)]
    return MolecularGraph(atoms, bonds)


def ethanol():
    # CCO with implicit H made explicit
    return MolecularGraph(
        [Atom("C", explicit_h=3), Atom("C", explicit_h=2), Atom("O", explicit_h=1)],
        [(0, 1, 1.0), (1, 2, 1.0)],
    )


class TestConstruction:
    def test_empty_graph_rejected(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([])

    def test_self_bond_rejected(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([C(), C()], [(0, 0, 1.0)])

    def test_out_of_range_bond_rejected(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([C(), C()], [(0, 2, 1.0)])

    def test_duplicate_bond_rejected(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([C(), C()], [(0, 1, 1.0), (1, 0, 2.0)])

    def test_bad_order_rejected(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([C(), C()], [(0, 1, 2.5)])

    def test_unsupported_element_rejected(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([Atom("Xe")])

    def test_aromatic_bond_needs_aromatic_atoms(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([C(aromatic=True), C()], [(0, 1, 1.5)])

    def test_aromatic_flag_limited_to_ring_capable_elements(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([Atom("F", aromatic=True)])

    def test_attachment_point_needs_exactly_one_bond(self):
        with pytest.raises(InvalidGraph):
            MolecularGraph([Atom("*"), C()])
        with pytest.raises(InvalidGraph):
            MolecularGraph(
                [Atom("*"), C(), C()], [(0, 1, 1.0), (0, 2, 1.0)]
            )
        # exactly one is fine
        MolecularGraph([Atom("*"), C(explicit_h=3)], [(0, 1, 1.0)])

    def test_bond_endpoints_normalised(self):
        g = MolecularGraph([C(), C()], [(1, 0, 2.0)])
        assert g.bonds[0] == Bond(0, 1, 2.0)

    def test_immutable_equality_and_hash(self):
        a, b = ethanol(), ethanol()
        assert a == b and hash(a) == hash(b)


class TestRings:
    def test_chain_has_no_ring_bonds(self):
        g = ethanol()
        assert g.ring_bonds == frozenset()
        assert g.ring_atoms == frozenset()

    def test_benzene_all_bonds_in_ring(self):
        g = benzene()
        assert len(g.ring_bonds) == 6
        assert g.ring_atoms == frozenset(range(6))
        assert g.smallest_rings == (frozenset(range(6)),)

    def test_ring_with_tail(self):
        # cyclopropane with a methyl tail: ring bonds exclude the tail bond
        g = MolecularGraph(
            [C(explicit_h=2), C(explicit_h=2), C(explicit_h=1), C(explicit_h=3)],
            [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (2, 3, 1.0)],
        )
        assert g.ring_bonds == frozenset({(0, 1), (1, 2), (0, 2)})
        assert g.ring_atoms == frozenset({0, 1, 2})

    def test_fused_rings_counted_by_cyclomatic_number(self):
        # naphthalene: 11 bonds, 10 atoms, 1 component -> 2 rings
        atoms = [Atom("C", aromatic=True, explicit_h=1 if i not in (4, 9) else 0) for i in range(10)]
        bonds = [(i, i + 1, 1.5) for i in range(9)] + [(9, 0, 1.5), (4, 9, 1.5)]
        g = MolecularGraph(atoms, bonds)
        assert descriptors(g)["ring_count"] == 2
        assert descriptors(g)["aromatic_ring_count"] == 2

    def test_disconnected_components(self):
        g = MolecularGraph([C(explicit_h=4), C(explicit_h=4)], [])
        assert g.components == ((0,), (1,))


class TestValence:
    def test_charge_adjustment_for_nitrogen(self):
        assert allowed_valences(Atom("N", formal_charge=1)) == (4,)
        assert allowed_valences(Atom("N", formal_charge=-1)) == (2,)

    def test_charge_adjustment_for_carbon_symmetric(self):
        assert allowed_valences(Atom("C", formal_charge=1)) == (3,)
        assert allowed_valences(Atom("C", formal_charge=-1)) == (3,)

    def test_sulfur_multiple_valences(self):
        assert allowed_valences(Atom("S")) == (2, 4, 6)

    def test_overbonded_carbon_flagged(self):
        g = MolecularGraph([C(explicit_h=3), C(explicit_h=3)], [(0, 1, 3.0)])
        report = check_valence(g)
        assert not report.valid
        assert {idx for idx, _ in report.violations} == {0, 1}

    def test_valid_molecules_pass(self):
        assert check_valence(ethanol()).valid
        assert check_valence(benzene()).valid

    def test_pyrrole_nitrogen_passes_without_kekulization(self):
        # [nH] with two aromatic ring bonds: lenient count 1+1+1 = 3 <= 3
        atoms = [Atom("N", aromatic=True, explicit_h=1)] + [
            Atom("C", aromatic=True, explicit_h=1) for _ in range(4)
        ]
        bonds = [(i, (i + 1) % 5, 1.5) for i in range(5)]
        assert check_valence(MolecularGraph(atoms, bonds)).valid

    def test_brute_force_agreement_on_random_graphs(self):
        # independent verdict: plain order sum (aromatic bond = 1) + explicit H
        # must not exceed the largest allowed valence
        rng = random.Random(20240811)
        elements = ["C", "N", "O", "S", "P", "F", "Cl"]
        for _ in range(300):
            n = rng.randint(1, 10)
            atoms = [
                Atom(rng.choice(elements), formal_charge=rng.choice([0, 0, 0, 1, -1]))
                for _ in range(n)
            ]
            bonds = []
            used = set()
            for _ in range(rng.randint(0, n * 2)):
                i, j = rng.randrange(n), rng.randrange(n)
                if i == j:
                    continue
                key = (min(i, j), max(i, j))
                if key in used:
                    continue
                used.add(key)
                bonds.append((key[0], key[1], rng.choice([1.0, 2.0, 3.0])))
            try:
                g = MolecularGraph(atoms, bonds)
            except InvalidGraph:
                continue
            expected = True
            for idx, atom in enumerate(atoms):
                total = sum(o for (a, b, o) in bonds if idx in (a, b)) + atom.explicit_h
                base = {"C": (4,), "N": (3,), "O": (2,), "S": (2, 4, 6),
                        "P": (3, 5), "F": (1,), "Cl": (1,)}[atom.element]
                if atom.element == "C":
                    allowed = {max(0, 4 - abs(atom.formal_charge))}
                else:
                    allowed = {max(0, v + atom.formal_charge) for v in base}
                if total > max(allowed):
                    expected = False
            assert check_valence(g).valid == expected


class TestImplicitHydrogens:
    def test_plain_carbon(self):
        assert implicit_hydrogens("C", False, []) == 4
        assert implicit_hydrogens("C", False, [1.0, 1.0]) == 2
        assert implicit_hydrogens("C", False, [2.0, 1.0, 1.0]) == 0

    def test_aromatic_ring_members(self):
        assert implicit_hydrogens("C", True, [1.5, 1.5]) == 1  # benzene CH
        assert implicit_hydrogens("C", True, [1.5, 1.5, 1.5]) == 0  # fusion carbon
        assert implicit_hydrogens("N", True, [1.5, 1.5]) == 0  # pyridine N
        assert implicit_hydrogens("O", True, [1.5, 1.5]) == 0  # furan O
        assert implicit_hydrogens("S", True, [1.5, 1.5]) == 0  # thiophene S
        assert implicit_hydrogens("C", True, [1.5, 1.5, 1.0]) == 0  # substituted

    def test_sulfur_steps_to_higher_valence(self):
        assert implicit_hydrogens("S", False, [1.0]) == 1  # thiol S
        assert implicit_hydrogens("S", False, [2.0, 2.0, 1.0]) == 1

    def test_halogens_and_star(self):
        assert implicit_hydrogens("F", False, []) == 1
        assert implicit_hydrogens("*", False, [1.0]) == 0


class TestCanonicalKey:
    def test_permutation_invariance_stress(self):
        # one molecule, many relabelings, exactly one key
        g = MolecularGraph(
            [
                Atom("C", explicit_h=3),
                Atom("C", explicit_h=1),
                Atom("O", explicit_h=1),
                Atom("C", explicit_h=2),
                Atom("N", explicit_h=2),
            ],
            [(0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0), (3, 4, 1.0)],
        )
        rng = random.Random(7)
        keys = set()
        for _ in range(1000):
            perm = list(range(len(g)))
            rng.shuffle(perm)
            keys.add(canonical_key(relabel(g, perm)))
        assert len(keys) == 1

    def test_symmetric_molecule_permutations(self):
        g = benzene()
        rng = random.Random(11)
        keys = set()
        for _ in range(200):
            perm = list(range(6))
            rng.shuffle(perm)
            keys.add(canonical_key(relabel(g, perm)))
        assert len(keys) == 1

    def test_distinguishes_constitutional_isomers(self):
        # n-butane vs isobutane
        n_butane = MolecularGraph(
            [C(explicit_h=3), C(explicit_h=2), C(explicit_h=2), C(explicit_h=3)],
            [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)],
        )
        isobutane = MolecularGraph(
            [C(explicit_h=3), C(explicit_h=1), C(explicit_h=3), C(explicit_h=3)],
            [(0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0)],
        )
        assert canonical_key(n_butane) != canonical_key(isobutane)

    def test_distinguishes_charge_and_h_count(self):
        a = MolecularGraph([Atom("N", explicit_h=3)])
        b = MolecularGraph([Atom("N", formal_charge=1, explicit_h=4)])
        assert canonical_key(a) != canonical_key(b)

    def test_canonical_order_is_permutation(self):
        g = ethanol()
        order = canonical_order(g)
        assert sorted(order) == [0, 1, 2]


class TestFingerprints:
    def test_isomorphic_graphs_same_fingerprint(self):
        g = ethanol()
        perm = [2, 0, 1]
        assert morgan_fingerprint(g) == morgan_fingerprint(relabel(g, perm))

    def test_self_similarity_is_one(self):
        fp = morgan_fingerprint(benzene())
        assert tanimoto(fp, fp) == 1.0

    def test_different_molecules_similarity_below_one(self):
        a = morgan_fingerprint(ethanol())
        b = morgan_fingerprint(benzene())
        assert 0.0 <= tanimoto(a, b) < 1.0

    def test_empty_fingerprints_similarity_one(self):
        a = Fingerprint(frozenset())
        b = Fingerprint(frozenset())
        assert tanimoto(a, b) == 1.0

    def test_mismatched_sizes_rejected(self):
        a = Fingerprint(frozenset({1}), n_bits=2048)
        b = Fingerprint(frozenset({1}), n_bits=1024)
        with pytest.raises(LengthMismatch):
            tanimoto(a, b)

    def test_attachment_points_excluded(self):
        plain = ethanol()
        capped = MolecularGraph(
            [
                Atom("C", explicit_h=3),
                Atom("C", explicit_h=1),
                Atom("O", explicit_h=1),
                Atom("*"),
            ],
            [(0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0)],
        )
        # star neighbor keeps its star-free degree, so environments can shift;
        # what must hold: the star itself contributes no bits. Check via a
        # single-atom graph with and without a star cap at radius 0.
        lone = MolecularGraph([Atom("C", explicit_h=4)])
        starred = MolecularGraph([Atom("C", explicit_h=3), Atom("*")], [(0, 1, 1.0)])
        # explicit_h differs, so compare atom environment counts instead
        fp = morgan_fingerprint(starred, radius=0)
        assert len(fp.bits) == 1

    def test_radius_zero_counts_atom_types(self):
        fp = morgan_fingerprint(ethanol(), radius=0)
        # three atoms but two share (C, ...) only if invariants match; here
        # CH3 and CH2 differ in explicit_h and degree, so three distinct bits
        assert len(fp.bits) == 3

    def test_bit_range_respected(self):
        fp = morgan_fingerprint(benzene(), n_bits=64)
        assert all(0 <= b < 64 for b in fp.bits)


class TestDescriptors:
    def test_ethanol_values(self):
        d = descriptors(ethanol())
        # C2H6O = 2*12.011 + 6*1.008 + 15.999
        assert d["molecular_weight"] == pytest.approx(46.069, abs=1e-3)
        assert d["ring_count"] == 0
        # both C-C and C-O have a terminal heavy atom on one side
        assert d["rotatable_bonds"] == 0
        assert d["h_donors"] == 1
        assert d["h_acceptors"] == 1
        assert d["attachment_points"] == 0

    def test_benzene_values(self):
        d = descriptors(benzene())
        assert d["molecular_weight"] == pytest.approx(78.114, abs=1e-3)
        assert d["ring_count"] == 1
        assert d["aromatic_ring_count"] == 1
        assert d["rotatable_bonds"] == 0
        assert d["h_donors"] == 0

    def test_rotatable_excludes_terminal_and_ring(self):
        # toluene: ring-to-methyl bond is terminal on the methyl side
        atoms = [Atom("C", aromatic=True, explicit_h=1) for _ in range(5)]
        atoms.append(Atom("C", aromatic=True))
        atoms.append(Atom("C", explicit_h=3))
        bonds = [(i, (i + 1) % 6, 1.5) for i in range(6)] + [(5, 6, 1.0)]
        assert descriptors(MolecularGraph(atoms, bonds))["rotatable_bonds"] == 0

    def test_charged_nitrogen_not_acceptor(self):
        g = MolecularGraph([Atom("N", formal_charge=1, explicit_h=4)])
        d = descriptors(g)
        assert d["h_acceptors"] == 0
        assert d["h_donors"] == 1

    def test_attachment_points_counted(self):
        g = MolecularGraph(
            [Atom("*"), Atom("C", explicit_h=2), Atom("*")],
            [(0, 1, 1.0), (1, 2, 1.0)],
        )
        assert descriptors(g)["attachment_points"] == 2
        assert g.is_polymer_context


class TestPolymerHelpers:
    def test_replace_attachment_points(self):
        g = MolecularGraph(
            [Atom("*"), Atom("C", explicit_h=2), Atom("*")],
            [(0, 1, 1.0), (1, 2, 1.0)],
        )
        monomer = replace_attachment_points(g)
        assert len(monomer) == 1
        assert monomer.atoms[0] == Atom("C", explicit_h=4)
        assert not monomer.is_polymer_context

    def test_noop_without_stars(self):
        g = ethanol()
        assert replace_attachment_points(g) is g


class TestGraphJson:
    def test_round_trip(self):
        g = benzene()
        doc = to_graph_json(g)
        again = graph_from_json(json.loads(json.dumps(doc)))
        assert again == g

    def test_defaults_fill_in(self):
        g = graph_from_json({"atoms": [{"el": "C"}]})
        assert g.atoms[0] == Atom("C")

    def test_malformed_rejected(self):
        with pytest.raises(InvalidGraph):
            graph_from_json({"atoms": [{"charge": 0}]})
        with pytest.raises(InvalidGraph):
            graph_from_json({"atoms": [{"el": "C"}], "bonds": [[0, 1]]})


class TestSubgraph:
    def test_induced_subgraph(self):
        g = ethanol()
        sub = induced_subgraph(g, [1, 2])
        assert len(sub) == 2
        assert sub.bonds == (Bond(0, 1, 1.0),)
