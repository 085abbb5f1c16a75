import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charcone.errors import CyclicDependency
from charcone.schematic import (
    BASES,
    LETTERS,
    PClass,
    SchematicPoly,
    commute,
    derive,
    determination_check,
    lemma_violations,
    load_ledger,
    ode_inputs,
    order_of,
    pure_transversal_top,
    term,
)

terms = st.builds(
    lambda b, w: term(b, *w), st.sampled_from(sorted(BASES)), st.lists(st.sampled_from(LETTERS), max_size=3)
)
monomials = st.lists(terms, min_size=1, max_size=3).map(tuple)
polys = st.lists(monomials, max_size=3).map(lambda ms: SchematicPoly.of(*ms))


def test_order_of_terms():
    assert order_of(term("kappa", "T")) == (1, 2)
    assert order_of(term("rho", "L", "X1")) == (2, 0)
    assert order_of(term("kappa_inv")) == (0, 1)


def test_order_of_products_takes_the_max():
    p = SchematicPoly.of((term("rho", "T", "T"), term("v", "X1", "L", "X2")))
    assert order_of(p) == (3, 2)
    assert order_of(SchematicPoly()) == (0, 0)


def test_derive_leibniz_example():
    p = derive(SchematicPoly.of((term("rho"), term("v"))), "X1")
    assert p == SchematicPoly.of((term("rho", "X1"), term("v")), (term("rho"), term("v", "X1")))


def test_unit_normal_derivation_injects_inverse_kappa():
    p = derive(term("s"), "Th")
    assert p == SchematicPoly.of((term("kappa_inv"), term("s", "T")))
    assert order_of(p) == (1, 1)


def test_unknown_letters_and_bases_are_rejected():
    with pytest.raises(ValueError):
        derive(term("rho"), "Y")
    with pytest.raises(ValueError):
        term("pressure")
    with pytest.raises(ValueError):
        term("rho", "Th")


def test_commute_with_transversal_gives_tangential_words():
    out = commute(["T"])
    assert {t.word for t in out} == {("X1",), ("X2",)}
    assert all(t.coeff == PClass(1, 1) for t in out)
    assert commute(["X1"]) == [] and commute(["L"]) == []


def test_class_derivation_counts_transversal_letters():
    assert PClass(1, 1).derive("T") == PClass(2, 2)
    assert PClass(1, 1).derive("L") == PClass(2, 1)
    assert PClass(2, 0) + PClass(1, 1) == PClass(2, 1)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_no_pure_transversal_top_word_for_T(k):
    assert pure_transversal_top(["T"] * k) == []


def test_unit_normal_words_keep_a_first_order_coefficient():
    # with That the top-order pure words survive, but only with a P(1,1) factor
    for k in (1, 2, 3):
        top = pure_transversal_top(["Th"] * k)
        assert top and all(t.coeff == PClass(1, 1) for t in top)


def test_commutator_lemma_exhaustive_to_length_four():
    assert lemma_violations(4) == []


def test_determination_small_cases():
    assert determination_check(2, 1).passed
    rep = determination_check(3, 2)
    assert rep.passed
    assert rep.order.index("density-kappa-system[k=0]") < rep.order.index("density-kappa-system[k=1]")


def test_ode_consumes_only_lower_orders():
    rep = determination_check(3, 2)
    inputs = ode_inputs(rep, "density-kappa-system", 1)
    assert inputs and max(inputs.values()) <= 1


def test_injected_cycle_is_reported():
    ledger = copy.deepcopy(load_ledger())
    for e in ledger["stages"]:
        if e["id"] == "velocity-normal":
            e["refs"].append({"q": "kappa", "dk": 1})
    with pytest.raises(CyclicDependency) as err:
        determination_check(3, 2, ledger)
    assert "velocity-normal[k=0]" in err.value.cycle
    assert not determination_check(3, 2, ledger, raise_on_fail=False).passed


def test_report_text_and_graph():
    rep = determination_check(1, 1)
    assert rep.text().startswith("determination order for ord <= 1, T-order <= 1: PASS")
    g = rep.graph()
    assert g["passed"] and set(g["order"]) == set(g["nodes"])


@settings(max_examples=60, deadline=None)
@given(polys, polys, polys)
def test_semiring_laws(a, b, c):
    assert a + b == b + a and a * b == b * a
    assert (a + b) + c == a + (b + c) and (a * b) * c == a * (b * c)
    assert a * (b + c) == a * b + a * c


@settings(max_examples=60, deadline=None)
@given(polys, polys, st.sampled_from(LETTERS))
def test_leibniz_rule(a, b, d):
    assert derive(a * b, d) == derive(a, d) * b + a * derive(b, d)


@settings(max_examples=60, deadline=None)
@given(terms, st.sampled_from(LETTERS))
def test_derivation_raises_orders_by_one(t, d):
    n, k = order_of(t)
    assert order_of(derive(t, d)) == (n + 1, k + (d == "T"))
