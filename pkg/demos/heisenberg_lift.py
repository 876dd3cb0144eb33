"""Horizontal lifts on the Heisenberg group: swept area and Levy's area law."""

import numpy as np

from geomfilter import examples
from geomfilter.connection import decompose, lift_path
from geomfilter.geometry import PointPath
from geomfilter.simulate import NoiseDriver, integrate


def main():
    ex = examples.get("heisenberg")
    dec = decompose(ex.B, ex.A, ex.p, ex.samples)

    ts = np.linspace(0.0, 1.0, 1001)
    parabola = PointPath(ts, np.stack([ts, ts ** 2], 1))
    z = lift_path(dec.conn, parabola, np.zeros(3)).points[-1, 2]
    print(f"lift of (t, t^2): z(1) = {z:.8f}   exact 1/6 = {1 / 6:.8f}")

    paths, dt, lam = 4000, 5e-3, 1.5
    planar = integrate(ex.H_A, np.zeros((paths, 2)), 1.0, NoiseDriver(1, 0, 2, dt))
    lifted = lift_path(dec.conn, planar, np.zeros((paths, 3)), mode="stratonovich")
    cf = np.cos(lam * lifted.points[-1, :, 2])
    print(f"E cos(lam * area) = {cf.mean():.4f} +- {cf.std(ddof=1) / np.sqrt(paths):.4f}   "
          f"sech(lam/2) = {ex.reference('levy_area_cf')(lam, 1.0):.4f}")


if __name__ == "__main__":
    main()
