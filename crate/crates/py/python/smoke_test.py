"""Quick check that the extension module loads and its main entry points work.

Build first, e.g.
    cargo build -p gomkl-py --features extension-module --release
    cp target/release/libpygomkl.so crates/py/python/pygomkl.so
then run this script from crates/py/python (or with PYTHONPATH pointing at
the directory holding pygomkl.so).
"""

import math
import os
import tempfile

import pygomkl as g


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def check_graph():
    w = g.metropolis_weights("ring", 5)
    for row in w:
        assert close(sum(row), 1.0)
    rho, beta = g.spectral_quantities("ring", 5)
    # ring of 5 with Metropolis weights 1/3: eigenvalues 1/3 + 2/3 cos(2πk/5)
    eig = sorted(1 / 3 + 2 / 3 * math.cos(2 * math.pi * k / 5) for k in range(5))
    assert close(rho, 1 - eig[-2], 1e-10), rho
    assert close(beta, max(abs(1 - e) for e in eig), 1e-10), beta
    gamma, c = g.consensus_step_size(rho, beta, 0.5)
    assert 0 < gamma < 1 and c > 0


def check_quantizer():
    q = g.Quantizer(dim=6, levels=7)
    assert close(q.delta, g.compression_delta(3, 7))
    v = [0.5, -1.0, 0.25, 0.0, 2.0, -0.75]
    payload = q.compress(v, seed=3)
    assert len(payload) == q.payload_bytes
    back = q.decode(payload)
    norm = math.sqrt(sum(x * x for x in v))
    for x, y in zip(v, back):
        assert abs(y) <= norm + 1e-12
        assert y == 0 or math.copysign(1, y) == math.copysign(1, x)
    ident = g.Quantizer(dim=6)
    assert ident.delta == 1.0
    assert ident.decode(ident.compress(v, seed=0)) == v


def check_features():
    fm = g.FeatureMap(sigma=1.5, features=200, input_dim=2, seed=1)
    z = fm.features([0.3, -0.2])
    assert len(z) == fm.output_dim == 400
    assert close(sum(x * x for x in z), 1.0, 1e-12)
    again = g.FeatureMap.from_bytes(fm.to_bytes())
    assert again.features([0.3, -0.2]) == z
    exact = g.gaussian_kernel(1.5, [0.3, -0.2], [0.0, 0.4])
    approx = sum(a * b for a, b in zip(z, fm.features([0.0, 0.4])))
    assert abs(exact - approx) < 0.2


def check_learner():
    theta, z, lam = [0.2, -0.1], [1.0, 0.5], 0.01
    val = g.klr_value(theta, z, 1.0, lam)
    grad = g.klr_gradient(theta, z, 1.0, lam)
    h = 1e-6
    for i in range(2):
        up = list(theta)
        up[i] += h
        down = list(theta)
        down[i] -= h
        fd = (g.klr_value(up, z, 1.0, lam) - g.klr_value(down, z, 1.0, lam)) / (2 * h)
        assert abs(fd - grad[i]) < 1e-7
    assert val > 0
    w = g.KernelWeights(3)
    w.hedge_update([0.1, 0.5, 0.9], 1.0)
    p = w.normalized
    assert close(sum(p), 1.0) and p[0] > p[1] > p[2]


def check_simulation():
    x, y = g.make_synthetic(400, dim=2, separation=2.0, seed=4)
    out = g.run_simulation(x, y, nodes=4, features=5, topology="ring", sigmas=[1.0, 3.0])
    curve = out["average_loss_curve"]
    assert len(curve) == 100
    assert close(curve[-1], out["final_average_loss"])
    assert len(out["kernel_weights"]) == 4
    assert out["metrics_csv"].startswith("t,j,p,")
    x, y = g.make_banana(200, noise=0.1, seed=1)
    assert set(y) == {-1.0, 1.0}


def check_experiment():
    with tempfile.TemporaryDirectory() as d:
        conf = os.path.join(d, "exp.conf")
        with open(conf, "w") as f:
            f.write("dataset = synthetic\nsamples = 240\nnodes = 4\nfeatures = 4\nbaselines = none\n")
        summary = g.run_experiment("run", conf, out=os.path.join(d, "out"), seeds=[1, 2])
        assert "seeds: 1,2" in summary
        assert os.path.exists(os.path.join(d, "out", "summary.txt"))
        with open(conf, "a") as f:
            f.write("nodes = 0\n")
        try:
            g.run_experiment("run", conf)
        except ValueError:
            pass
        else:
            raise AssertionError("bad config accepted")


if __name__ == "__main__":
    check_graph()
    check_quantizer()
    check_features()
    check_learner()
    check_simulation()
    check_experiment()
    print("pygomkl smoke test: ok")
