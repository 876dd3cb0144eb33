"""Conditioning the torus diffusion on its first coordinate, two independent ways."""

import numpy as np

from geomfilter import examples
from geomfilter.connection import decompose
from geomfilter.filter import conditional_sampler, partition_conditioning
from geomfilter.geometry import PointPath
from geomfilter.simulate import NoiseDriver, integrate


def main():
    ex = examples.get("torus")
    dec = decompose(ex.B, ex.A, ex.p, ex.samples)
    print("vertical part coefficient of d^2/dy^2:", 0.5 * dec.BV.a(ex.samples[0])[1, 1])

    u0, dt = np.array([1.0, 2.0]), 1e-2
    truth = integrate(ex.H_B, u0, 1.0, NoiseDriver(8, 0, 2, dt))
    sigma = PointPath(truth.times, truth.points[:, :1])
    cs = conditional_sampler(dec, sigma, u0, 10_000, NoiseDriver(8, 1, 2, dt), record_every=10 ** 9).final
    pc = partition_conditioning(ex.H_B, ex.p, sigma, u0, 8, 0.05, 10_000, NoiseDriver(8, 2, 2, dt))
    exact = u0[1] + ex.reference("conditional_mean_slope") * (sigma.points[-1, 0] - u0[0])
    print(f"E[y_T | x path]: lifted sampler {cs.mean()[1]:.4f} +- {cs.standard_error()[1]:.4f}, "
          f"kernel partition {pc.mean()[1]:.4f} +- {pc.standard_error()[1]:.4f}, closed form {exact:.4f}")


if __name__ == "__main__":
    main()
