"""Compare the compiled kernels against the numpy fallback.

Times every kernel's raw implementation on both backends over a range of
sizes, then a full training step under the default routing and under forced
numpy. The routing table in fieldstream.autodiff.kernels encodes what this
script measures: only the arithmetic-only backward passes beat numpy's
vectorized transcendentals. Invoke from the repository root:

    python3 benchmarks/bench_kernels.py [--reps 200]
"""

import argparse
import time

from fieldstream.autodiff import kernels
from fieldstream.autodiff import rng as rngmod
from fieldstream import autodiff as ad
from fieldstream.fields import generate_records, sample_stream
from fieldstream.model import ModelConfig, StreamModel
from fieldstream.train import record_loss

SIZES = (1_000, 100_000, 1_000_000)
KERNELS = ("tanh_fwd", "tanh_bwd", "gelu_fwd", "gelu_bwd", "softmax_fwd", "softmax_bwd")


def best_of(fn, reps):
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_args(name, size, gen):
    rows = max(size // 256, 1)
    if name.startswith("softmax"):
        m = gen.normal(size=(rows, 256))
        if name.endswith("_fwd"):
            return (m,)
        return (kernels.raw_implementations("softmax_fwd")["numpy"](m),
                gen.normal(size=(rows, 256)))
    x = gen.normal(size=size)
    if name.endswith("_fwd"):
        return (x,)
    g = gen.normal(size=size)
    if name == "tanh_bwd":
        return (kernels.raw_implementations("tanh_fwd")["numpy"](x), g)
    return (x, g)


def train_step_case():
    cfg = ModelConfig(ranks=(8, 8), n_freq=4, embed_hidden=(32, 32), state_order=16,
                      attn_dim=64, heads=2, latent_dim=32, encoder_hidden=(64,),
                      film_width=32, film_hidden=(64, 64))
    model = StreamModel(cfg, seed=0)
    record = generate_records("advecting-gaussians", (24, 24), 8, 1, seed=0)[0]
    stream = sample_stream(record, "uniform", 0.1, seed=0)

    def step():
        loss = record_loss(model, stream)
        ad.backward(loss, model.store)

    return step


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=200,
                        help="repetitions per micro measurement (best-of)")
    args = parser.parse_args()

    backends = kernels.available_backends()
    if len(backends) < 2:
        print(f"only the {backends[0]} backend is built; micro table will "
              f"have a single column")
    print(f"backends: {', '.join(backends)}   (routed in compiled mode: "
          f"{', '.join(sorted(kernels._ROUTED))})\n")

    header = f"{'kernel':<14} {'size':>9} " + " ".join(f"{b:>12}" for b in backends)
    print(header + ("    compiled/numpy" if len(backends) > 1 else ""))
    for size in SIZES:
        gen = rngmod.stream(0, "bench", size)
        for name in KERNELS:
            arrays = kernel_args(name, size, gen)
            impls = kernels.raw_implementations(name)
            reps = max(args.reps // (size // 1000 or 1), 3)
            per_backend = [best_of(lambda f=impls[b]: f(*arrays), reps)
                           for b in backends]
            row = f"{name:<14} {size:>9} "
            row += " ".join(f"{t * 1e6:>10.1f}us" for t in per_backend)
            if len(per_backend) > 1:
                row += f"    {per_backend[0] / per_backend[-1]:.2f}x"
            print(row)
        print()

    print("full training step (forward + backward, one record):")
    for b in backends:
        kernels.use_backend(b)
        step = train_step_case()
        step()  # warm up allocations and caches
        t = best_of(step, 5)
        label = "compiled (routed)" if b == "compiled" else b
        print(f"  {label:<18} {t * 1e3:8.2f} ms")
    kernels.use_backend(backends[-1])


if __name__ == "__main__":
    main()
