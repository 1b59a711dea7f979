"""Convergence experiments: solver strong order, sampling error, bump bias.

Three sweeps on the delayed-drift model, each printed as a small table
(no plotting here; pipe the numbers wherever you like):

1. step halving against the first-interval closed form -> observed strong order;
2. path-count scaling of the Monte Carlo error;
3. bump-size scan of the finite-difference delta against the weight estimator.

Usage: python scripts/convergence_overview.py [--seed N]
"""

import argparse
import sys

import numpy as np

from memdelta.engine import euler_solve, generate_noise_block
from memdelta.greeks import McParams, Payoff, delta_fd, delta_plain, price
from memdelta.models import ahmp_closed_path, ahmp_model
from memdelta.segment import constant_direction, segment_from_closed_form

R, T = 0.5, 1.0


def strong_order(seed: int) -> None:
    model = ahmp_model(0.25, 0.30, R)
    print("\nstep halving vs closed form on [0, r] (800 paths)")
    print(f"{'h':>12} {'rms rel err':>14} {'order':>8}")
    prev = None
    for h in (2.0 ** -5, 2.0 ** -6, 2.0 ** -7, 2.0 ** -8):
        eta = segment_from_closed_form("constant", {"value": 1.0}, h, R)
        noise = generate_noise_block(seed, 0, 800, int(R / h), 1, h)
        path = euler_solve(model, eta, R, h, noise)
        closed = ahmp_closed_path(model, eta, R, noise)
        rel = (path.values[..., -1, 0] - closed.values[..., -1, 0]) / closed.values[..., -1, 0]
        rms = float(np.sqrt(np.mean(rel ** 2)))
        order = f"{np.log2(prev / rms):8.2f}" if prev else "       -"
        print(f"{h:12.6f} {rms:14.6f} {order}")
        prev = rms


def sampling_error(seed: int) -> None:
    model = ahmp_model(0.25, 0.30, R, rate=0.04)
    h = 2.0 ** -6
    eta = segment_from_closed_form("constant", {"value": 1.0}, h, R)
    payoff = Payoff("european_call", 1.0)
    print("\npath-count scaling of the pricing error")
    print(f"{'paths':>8} {'mean':>10} {'stderr':>10}")
    for n in (4_000, 16_000, 64_000):
        est = price(model, eta, payoff, "plain", McParams(n_paths=n, T=T, h=h, seed=seed))
        print(f"{n:8d} {est.mean:10.5f} {est.stderr:10.5f}")


def bump_scan(seed: int) -> None:
    model = ahmp_model(0.25, 0.30, R, rate=0.04)
    h = 2.0 ** -6
    eta = segment_from_closed_form("constant", {"value": 1.0}, h, R)
    payoff = Payoff("european_call", 1.0)
    psi = constant_direction(h, R, 1)
    mc = McParams(n_paths=20_000, T=T, h=h, seed=seed)
    ref = delta_plain(model, eta, payoff, psi, mc)
    print(f"\nbump-size scan of the central difference "
          f"(weight estimate {ref.mean:.5f} +- {ref.stderr:.5f})")
    print(f"{'eps':>10} {'fd mean':>10} {'fd stderr':>10} {'gap to weight':>14}")
    import warnings
    for eps in (1.0, 1e-1, 1e-2, 1e-4, 1e-8, 1e-12):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fd = delta_fd(model, eta, payoff, psi, eps, "plain", mc)
        print(f"{eps:10.0e} {fd.mean:10.5f} {fd.stderr:10.5f} {fd.mean - ref.mean:14.5f}")


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seed", type=int, default=12345)
    args = parser.parse_args()
    strong_order(args.seed)
    sampling_error(args.seed)
    bump_scan(args.seed)
    return 0


if __name__ == "__main__":
    sys.exit(main())
