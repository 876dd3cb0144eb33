"""Derivative flow of the gradient system on the sphere: vertical coefficients and curvature terms."""

import numpy as np

from geomfilter import examples
from geomfilter.equivariant import join_frame
from geomfilter.weitzenboeck import CurvatureData, ExteriorBasis, gl_representation, lambda_wedge, weitzenbock_from_curvature


def main():
    n = 3
    ex = examples.get("sphere_gradient", {"n": n})
    D = ex.extras["derivative_flow"]
    u = ex.samples[0]
    f, g = D.predicted(u), D.generic(u)
    print("coefficient routes agree to", max(np.max(np.abs(f.alpha - g.alpha)), np.max(np.abs(f.beta - g.beta))))

    y = u[:n]
    U = D.orthonormal_frame(y)
    c = D.predicted(join_frame(y, U))
    C = CurvatureData(*D.curvature_in_frame(y, U))
    for k in range(n + 1):
        b = ExteriorBasis(n, k)
        lw = lambda_wedge(c.alpha, c.beta, gl_representation(n), b).matrix
        wc = weitzenbock_from_curvature(C, b, tol=1e-7).matrix
        print(f"degree {k}: eigenvalues {np.round(np.linalg.eigvalsh(0.5 * (lw + lw.T)), 6)}  "
              f"curvature route gap {np.max(np.abs(lw - wc)):.1e}")


if __name__ == "__main__":
    main()
