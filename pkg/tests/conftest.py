import numpy as np


def u_exact(pts):
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([np.sin(np.pi * x) * np.cos(np.pi * y),
                            -np.cos(np.pi * x) * np.sin(np.pi * y)])


def locate_cells(mesh, pts):
    topo = mesh.topology
    n = topo.cells_per_side
    cells = []
    for p in pts:
        j = min(int(p[0] * n), n - 1)
        i = min(int(p[1] * n), n - 1)
        if topo.cell_shape == "quad":
            cells.append(i * n + j)
        else:
            xi, eta = p[0] * n - j, p[1] * n - i
            cells.append(2 * (i * n + j) + (0 if xi + eta <= 1.0 else 1))
    return cells


def fe_closure(space, coeffs):
    """Point-evaluation closure for a finite-element function."""
    from stokesmg.spaces import evaluate_function

    def fn(pts):
        shape = pts.shape[:1] + space.element.value_shape
        out = np.empty(shape)
        for q, (p, c) in enumerate(zip(pts, locate_cells(space.mesh, pts))):
            ref = space.cell_map(c).inverse_map(p[None, :])
            out[q] = evaluate_function(space, coeffs, c, ref)[0]
        return out
    return fn
