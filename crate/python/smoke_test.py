"""Smoke test for the `exswitch` extension module.

Builds the extension with cargo (unless EXSWITCH_PY_LIB points at a built
library), loads it under the name `exswitch` and exercises each binding.
"""

import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def locate_library() -> Path:
    env = os.environ.get("EXSWITCH_PY_LIB")
    if env:
        return Path(env)
    subprocess.run(["cargo", "build", "-p", "exswitch-py"], cwd=ROOT, check=True)
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    for name in ("libexswitch_py.so", "libexswitch_py.dylib", "exswitch_py.dll"):
        p = target / "debug" / name
        if p.exists():
            return p
    raise SystemExit("built library not found under " + str(target))


def load(lib: Path, workdir: Path):
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy(lib, workdir / ("exswitch" + suffix))
    sys.path.insert(0, str(workdir))
    import exswitch  # noqa: E402

    return exswitch


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        ex = load(locate_library(), tmp)

        model = ex.Model.regulator()
        assert model.regimes == 2 and model.state_dim == 1
        assert math.isclose(model.temperature, 0.2)
        assert math.isclose(model.cost(0, 1), 0.5)
        assert len(model.hash()) == 64
        assert ex.Model.regulator(0.1).hash() != model.hash()
        print("model ok:", model)

        grid = ex.Grid.uniform_1d(1.0, 100, -3.0, 3.0, 121)
        field = ex.solve_hjb(model, grid)
        v = field.value(0.0, [0.0], 0)
        # terminal reward at the origin is 2 and the running reward is
        # bounded by 1.9, so V(0, 0, 0) must lie in (0, 2 + 1.9 + λ)
        assert 0.0 < v < 4.2, v
        assert math.isclose(field.value(1.0, [0.3], 1), 2 * math.exp(-2 * 0.09), rel_tol=1e-9)
        print("solve ok: V(0, 0, 0) =", round(v, 5))

        it_field, report = ex.policy_iteration(model, grid)
        assert report["converged"], report
        assert report["monotonicity_violations"] == 0
        assert it_field.sup_distance(field) < 1e-6
        print("policy iteration ok:", len(report["gaps"]), "iterations")

        mean, se = ex.simulate_payoff(model, field, [0.0], 0, 100, 4000, seed=1)
        assert abs(mean - v) < 0.1, (mean, v, se)
        print("simulation ok: %.4f ± %.4f" % (mean, se))

        net = ex.ValueNet(model, hidden=[(16, "tanh"), (16, "tanh")], seed=3)
        assert net.value(1.0, [0.0], 0) == 2.0
        losses = net.train(3, [-4.0], [4.0], batch=4, steps=20, schedule="adam:0.001", seed=5)
        assert len(losses) == 3 and all(math.isfinite(x) for x in losses)
        rates = net.policy(0.5, [0.0])
        assert len(rates) == 4 and math.isclose(rates[0] + rates[1], 0.0, abs_tol=1e-12)
        ck = tmp / "net.json"
        digest = net.save(str(ck))
        back = ex.ValueNet.load(str(ck), model)
        assert back.params == net.params and len(digest) == 64
        print("learner ok: losses", ["%.3e" % x for x in losses])

        try:
            ex.ValueNet.load(str(ck), ex.Model.put_options())
        except ex.ExswitchError as e:
            print("typed error ok:", e)
        else:
            raise AssertionError("loading against the wrong model must fail")
        try:
            field.value(0.0, [0.0, 1.0], 0)
        except ValueError:
            pass
        else:
            raise AssertionError("wrong dimension must fail")

        r = ex.run_criterion(8)
        assert r["passed"], r
        print("criterion 8:", r["observed"])
    print("smoke test passed")


if __name__ == "__main__":
    main()
