import json

import numpy as np
import pandas as pd
import pytest

from metagam import predict_term, strip_rawdata
from metagam.exceptions import PrivacyViolation, SchemaViolation, VersionMismatch
from metagam.gam import fit_random_intercept
from metagam.strip import (
    FORMAT_VERSION,
    audit_privacy,
    canonical_json,
    deserialize,
    load,
    load_full,
    save,
    save_full,
    serialize,
    to_document,
    validate_document,
)
from dataclasses import replace


def test_prediction_equality(cohort_models, stripped_models, rng):
    _, models = cohort_models
    grid = pd.DataFrame({"x": rng.uniform(0, 1, 50), "z": rng.uniform(0, 1, 50)})
    for full, sm in zip(models, stripped_models):
        back = deserialize(serialize(sm))
        for term in ("s(x)", "s(z)"):
            a = predict_term(full, term, grid, include_intercept=True)
            b = predict_term(back, term, grid, include_intercept=True)
            assert np.max(np.abs(a.fit - b.fit)) < 1e-12
            assert np.max(np.abs(a.se - b.se)) < 1e-12
        assert back.term_pvalues == full.term_pvalues


def test_canonical_idempotent(stripped_models):
    for sm in stripped_models:
        data = serialize(sm)
        assert serialize(deserialize(data)) == data
        assert canonical_json(json.loads(data)) == data


def test_file_roundtrip(stripped_models, tmp_path):
    path = save(stripped_models[0], tmp_path / "a.metagam.json")
    assert serialize(load(path)) == serialize(stripped_models[0])


def test_full_roundtrip(cohort_models, tmp_path):
    model = cohort_models[1][0]
    back = load_full(save_full(model, tmp_path / "a.gam.json"))
    np.testing.assert_array_equal(back.residuals, model.residuals)
    np.testing.assert_array_equal(back.coefficients, model.coefficients)


def test_no_individual_data(stripped_models):
    for sm in stripped_models:
        audit_privacy(sm)
        doc = to_document(sm)
        assert not {"residuals", "fitted_values", "groups", "data"} & set(doc)


def test_audit_catches_leak(stripped_models):
    sm = stripped_models[0]
    leaky = replace(sm, covariate_deciles={**sm.covariate_deciles, "x": tuple(range(sm.n))})
    with pytest.raises(PrivacyViolation):
        audit_privacy(leaky)


def test_random_effects_removed(rng):
    subj = np.repeat(np.arange(20), 8)
    x = rng.uniform(0, 1, 160)
    data = pd.DataFrame({"x": x, "s": subj.astype(str), "y": x + rng.normal(0, 1, 20)[subj]})
    m = fit_random_intercept(data, "y ~ s(x, k=5) + (1|s)")
    sm = strip_rawdata(m)
    assert all(b.kind != "random" for b in sm.blocks)
    assert len(sm.coefficients) == len(m.coefficients) - 20
    audit_privacy(deserialize(serialize(sm)))


@pytest.mark.parametrize("mutate,pointer", [
    (lambda d: d.pop("blocks"), "/blocks"),
    (lambda d: d.__setitem__("scale", "big"), "/scale"),
    (lambda d: d["covariance"].pop(), "/covariance"),
    (lambda d: d["blocks"][1].__setitem__("start", 0), "/blocks/1"),
])
def test_schema_violations(stripped_models, mutate, pointer):
    doc = to_document(stripped_models[0])
    mutate(doc)
    with pytest.raises(SchemaViolation) as exc:
        validate_document(doc)
    assert exc.value.pointer == pointer


def test_version_mismatch(stripped_models):
    doc = to_document(stripped_models[0])
    doc["format_version"] = FORMAT_VERSION + 1
    with pytest.raises(VersionMismatch):
        validate_document(doc)


def test_not_json():
    with pytest.raises(SchemaViolation):
        deserialize(b"{not json")


def test_no_sample_length_arrays():
    from metagam import fit_gam

    r = np.random.default_rng(11)
    x = r.uniform(0, 1, 800)
    model = fit_gam(pd.DataFrame({"x": x, "y": np.sin(6 * x) + r.normal(0, .3, 800)}), "y ~ s(x, k=10)")
    doc = json.loads(serialize(strip_rawdata(model)))

    def lengths(node):
        if isinstance(node, list):
            yield len(node)
            for v in node:
                yield from lengths(v)
        elif isinstance(node, dict):
            for v in node.values():
                yield from lengths(v)

    assert 800 not in set(lengths(doc))


def test_docs_schema_matches_package():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1]
    docs = root / "docs" / "stripped_model.schema.json"
    pkg = root / "src" / "metagam" / "schemas" / "stripped_model.schema.json"
    assert json.loads(docs.read_text()) == json.loads(pkg.read_text())
