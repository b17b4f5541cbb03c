#!/usr/bin/env python3
"""Regenerate the mesh files shipped with the example scenarios."""
import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from wpic.mesh import build_mesh, save_mesh  # noqa: E402


def structured_square(n, width, center=(0.0, 0.0)):
    x0 = center[0] - width / 2
    y0 = center[1] - width / 2
    xs = np.linspace(x0, x0 + width, n + 1)
    ys = np.linspace(y0, y0 + width, n + 1)
    verts = np.array([[x, y] for y in ys for x in xs])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris += [[a, b, d], [a, d, c]]
            else:
                tris += [[a, b, c], [b, d, c]]
    return build_mesh(verts, tris)


def main():
    out = pathlib.Path(__file__).resolve().parents[1] / "meshes"
    out.mkdir(exist_ok=True)

    # 1.1 m square, ~0.12 m cells: Courant limit ~0.136 ns, comfortably
    # above the 0.1 ns step of the gyration scenarios
    save_mesh(structured_square(9, 1.1), out / "square_1p1m_9.txt")

    # 0.4 m square, 0.02 m cells for the plasma-ball expansion
    save_mesh(structured_square(20, 0.4), out / "square_0p4m_20.txt")

    print(f"wrote meshes to {out}")


if __name__ == "__main__":
    main()
