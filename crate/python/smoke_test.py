#!/usr/bin/env python3
"""Smoke test for the roelab Python extension.

Builds nothing itself: it locates the compiled cdylib under target/
(`cargo build -p roe-lab-python` first), stages it as an importable
module, and exercises one operation from each part of the toolkit.
"""

import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def stage_module() -> Path:
    candidates = [
        ROOT / "target" / "release" / "libroelab.so",
        ROOT / "target" / "debug" / "libroelab.so",
    ]
    built = [p for p in candidates if p.exists()]
    if not built:
        sys.exit("build the extension first: cargo build -p roe-lab-python")
    newest = max(built, key=lambda p: p.stat().st_mtime)
    stage = Path(tempfile.mkdtemp(prefix="roelab."))
    shutil.copy2(newest, stage / "roelab.so")
    return stage


sys.path.insert(0, str(stage_module()))
import roelab  # noqa: E402

checks = 0


def check(name: str, cond: bool) -> None:
    global checks
    if not cond:
        sys.exit(f"FAIL: {name}")
    checks += 1
    print(f"ok: {name}")


# spaces
p5 = roelab.Space.path(5)
check("path ball", p5.ball(2, 1.0) == [1, 2, 3])
check("path growth", p5.growth(1.0) == 3)
z12 = roelab.Space.cayley(12, [1, 3])
check("cayley diameter", z12.diameter() == 3.0)
check("space json round trip", roelab.Space.from_json(p5.to_json()).ball(2, 1.0) == [1, 2, 3])

# operators
e = roelab.Operator.matrix_unit(p5, 0, 3)
check("propagation", e.propagation() == 3.0)
check("op norm", abs(roelab.Operator.identity(p5).op_norm() - 1.0) < 1e-10)
check("truncation kills far entries", e.truncate(2.0).propagation() == 0.0)
check("separated lower bound", abs(e.separated_lower_bound(2.0) - 1.0) < 1e-9)

# vector measure rounding
mu = roelab.Measure([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
res = mu.round_to_subset([1.0, 1.0])
check("rounding error", res["error"] <= 1e-12)
check("rounding subset", res["subset"] == [2])
check("rounding bound", res["error"] <= res["bound"] + 1e-9)
oracle_subset, oracle_err = mu.brute_force_oracle([1.0, 1.0])
check("oracle agrees", oracle_err <= res["error"] + 1e-12)
outside = mu.hull_membership([5.0, 0.0])
check("hull separation", not outside["inside"] and outside["margin"] > 0)

# rigidity extraction: a permutation within the same space is a bijective
# coarse map, perturbed here by a small banded unitary
perm = [2, 0, 3, 1, 4]
u = roelab.Unitary.from_permutation(p5, p5, perm)
wobble = roelab.Unitary.banded(p5, seed=7, strength=0.08)
rep = u.compose(wobble).extract_map()
check("extraction recovers permutation", rep["f"] == perm)
check("coefficient floor", rep["coefficient_floor"] >= 0.9)
check("closeness", rep["closeness_fg"] == 0.0)

# halving lemma on a conjugated family
uz = roelab.Unitary.banded(z12, seed=3, strength=0.25)
tail = uz.family_tail_bound(2.0)
check("tail certified", tail <= 0.2)
lemma = uz.check_halving_lemma(0.2, 2.0)
check("lemma pass", lemma["pass"] and lemma["min_norm"] >= 1 - 4 * 0.2 - 1e-9)

# localization
params = roelab.derive_localization_params(0.1, 0.5, 2.0, 3.0)
check("localization power count", params["k"] == 14)
ball = p5.ball(2, 1.0)
proj = roelab.Operator.coordinate_projection(p5, ball)
loc = roelab.localize_at_point(proj, proj, 2, epsilon=0.5, delta=1.0, s=0.0)
check("localization fixes the witness", loc["support"] == [2] and loc["defect"] < 1e-12)
check("localization diameter bound", loc["diameter"] <= loc["r"])

print(f"smoke test passed ({checks} checks)")
