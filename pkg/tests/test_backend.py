"""The pure-NumPy fallback runs the same source as the jitted kernels and
must produce the same trajectories."""

import json
import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from stackpush import NUMBA_ENABLED

_PROBE = textwrap.dedent("""
    import json
    import numpy as np
    from stackpush import backend_name, symbols
    from stackpush.physics import world as W

    dom = symbols.make_domain(4)
    sizes = np.random.default_rng(3).uniform(0.8, 1.2, 4)
    state = frozenset(
        {symbols.fluent("hand_empty", "R"),
         symbols.fluent("is_in", "C", "init")}
        | {symbols.fluent("at_container", f"B{i+1}", "C") for i in range(4)})
    w = W.world_for_state(dom, state, sizes, seed=11)
    w.step(240)
    print(json.dumps({
        "backend": backend_name(),
        "pos": w.pos.tolist(),
        "angle": w.angle.tolist(),
        "vel": w.vel.tolist(),
    }))
""")


def _run_probe(numba_flag):
    env = dict(os.environ, STACKPUSH_NUMBA=numba_flag)
    out = subprocess.run([sys.executable, "-c", _PROBE], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.skipif(not NUMBA_ENABLED, reason="numba backend unavailable")
def test_fallback_matches_numba_trajectory():
    jit = _run_probe("1")
    plain = _run_probe("0")
    assert jit["backend"] == "numba"
    assert plain["backend"] == "numpy"
    assert np.allclose(jit["pos"], plain["pos"], rtol=0, atol=1e-12)
    assert np.allclose(jit["angle"], plain["angle"], rtol=0, atol=1e-12)
    assert np.allclose(jit["vel"], plain["vel"], rtol=0, atol=1e-12)


def test_flag_selects_backend():
    out = subprocess.run(
        [sys.executable, "-c",
         "from stackpush import backend_name; print(backend_name())"],
        env=dict(os.environ, STACKPUSH_NUMBA="0"),
        capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
