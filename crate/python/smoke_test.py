"""Smoke test for the pyvam extension module.

Build and make it importable first, e.g. with maturin:

    maturin develop -m crates/python/Cargo.toml --features extension-module

or by hand:

    cargo build --release -p vam-py --features extension-module
    cp target/release/libpyvam.so python/pyvam.so
"""

import math

import pyvam


def main():
    sim = pyvam.simulate(seed=3, n_schools=60, min_students=40, max_students=80)
    cohort = sim.cohort
    assert cohort.n_schools == 60, cohort
    print(cohort)

    raw = pyvam.fit(cohort, "raw")
    assert raw.adjusted_r_squared == 0.0
    va = pyvam.fit(cohort, "va", "omitted")
    assert va.equivalent_to == "Raw:included"

    cva = pyvam.fit(cohort, "cva-a", "both")
    rows = cva.effects()
    assert len(rows) == 60
    assert {r["category"] for r in rows} <= {"none_or_very_small", "small", "moderate", "large"}
    summary = cva.summary()
    assert 0.0 <= summary["pct_schools_statistically_significant"] <= 100.0
    assert any(c["term"] == "prior_band" for c in cva.coefficients())

    truth = sim.true_effects()
    est = [r["effect"] for r in rows]
    tru = [truth[r["school_id"]] for r in rows]
    print(f"CVA-A:both vs truth r = {pyvam.pearson(est, tru):.3f}")

    fits = pyvam.fit_all(cohort)
    assert len(fits) == 20
    assert sum(f.equivalent_to is None for f in fits) == 15
    report = pyvam.compare(fits, cohort)
    assert len(report["pearson_matrix"]) == 5
    assert report["variant_analysis"] is not None

    assert pyvam.spearman([1, 2, 2, 3], [1, 3, 3, 4]) == 1.0
    assert pyvam.classify(0.2, 0.1, 0.3) == "moderate"
    assert pyvam.classify(0.5, -0.1, 1.1) == "none_or_very_small"
    lam = pyvam.shrinkage_factor(0.035, 0.4, 150)
    assert 0.0 < lam < 1.0 and math.isclose(lam, 0.035 / (0.035 + 0.4 / 150))
    assert len(pyvam.specs()) == 20

    try:
        pyvam.fit(cohort, "cva-z")
    except ValueError as e:
        assert str(e).startswith("E_VALIDATION")
    else:
        raise AssertionError("bad family accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
