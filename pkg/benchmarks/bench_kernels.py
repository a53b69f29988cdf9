"""Time the compiled and pure numpy kernel backends side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Reports the best wall time per call for the loss/gradient kernel at a few
batch shapes, the Adam step, and one full RAVEN training run.
"""
import timeit

import click
import numpy as np

from raven._backend import get_kernels
from raven.synthbench import SynthConfig, generate_problem
from raven.trainer import TrainConfig, train

SHAPES = [(32, 64, 4, 3), (256, 128, 10, 5), (1024, 256, 10, 8)]


def _backends():
    out = ["python"]
    try:
        get_kernels("cython")
    except ImportError:
        click.echo("compiled extension not built; timing the python backend only")
    else:
        out.insert(0, "cython")
    return out


def _best(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


@click.command()
@click.option("--repeat", default=5, show_default=True, help="Timing repeats; the best is reported.")
def main(repeat):
    backends = _backends()
    rng = np.random.default_rng(0)
    click.echo(f"{'kernel':<34}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))

    def row(label, times):
        line = f"{label:<34}" + "".join(f"{t * 1e6:>10.1f}us" for t in times)
        if len(times) == 2:
            line += f"{times[1] / times[0]:>11.2f}x"
        click.echo(line)

    for B, d, k, m in SHAPES:
        X = rng.normal(size=(4 * B, d))
        W = rng.normal(size=(k, d)) * 0.1
        b = np.zeros(k)
        T = rng.normal(size=(m, 4 * B, k))
        theta = np.full(m, 1.0 / m)
        idx = rng.permutation(4 * B)[:B].astype(np.int64)
        for mode, name in ((0, "PA"), (1, "LS")):
            times = [_best(lambda kern=get_kernels(bk): kern.loss_grad(X, W, b, T, theta, idx, mode), repeat, 20)
                     for bk in backends]
            row(f"loss_grad {name} B={B} d={d} k={k} m={m}", times)

    n = 10 * 257
    times = []
    for bk in backends:
        kern = get_kernels(bk)
        p, g, m1, m2 = (rng.normal(size=n) for _ in range(4))
        m2 = np.abs(m2)
        times.append(_best(lambda: kern.adam_update(p, g, m1, m2, 1e-3, 0.9, 0.999, 1e-8, 10), repeat, 200))
    row(f"adam_update n={n}", times)

    prob = generate_problem(SynthConfig(k=4, d_raw=10, n=2000, shift_magnitude=1.0,
                                        weak_quality=(0.0, 0.35, 0.35), seed=0))
    times = [_best(lambda bk=bk: train(prob["tuning"], TrainConfig(method="raven"), backend=bk), repeat, 1)
             for bk in backends]
    row("train raven n=2000 (full run)", times)


if __name__ == "__main__":
    main()
