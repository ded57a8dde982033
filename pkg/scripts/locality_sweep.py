"""Leakage of the top direction as the number of projected complement vectors grows."""
import argparse

import numpy as np

from regionedit import jacobian as jac
from regionedit import models
from regionedit.masks import rect_mask
from regionedit.rng import Rng
from regionedit.schedule import make_linear_schedule


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--layout", choices=["split", "blobs"], default="split")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--t", type=int, default=25)
    args = ap.parse_args()
    s = make_linear_schedule(50)
    mask = rect_mask(16, 16, 4, 4, 8, 8)
    if args.layout == "split":
        m = models.split_blob_model(s, mask.bits, seed=args.seed)
    else:
        m = models.blob_analytic_model(s, seed=args.seed)
    spec = jac.MaskedJacobianSpec(m, args.t, m.sample_x0(Rng(args.seed, 80)), mask)
    none = jac.leakage_report(spec, jac.discover(spec, 1, "none", tol=1e-16)[0])
    print(f"# layout={args.layout} seed={args.seed} t={args.t} rank(J_u)="
          f"{np.linalg.matrix_rank(spec.jacobian('complement'))}")
    print("k_u\tsingular_value\tin_norm\tout_norm\tratio\tratio_vs_none")
    print(f"0\t-\t{none.in_mask_norm:.4e}\t{none.out_mask_norm:.4e}\t{none.ratio:.4e}\t1")
    for k_u in range(1, m.d_h):
        ds = jac.discover(spec, 1, "subspace", k_u, tol=1e-16)
        lk = jac.leakage_report(spec, ds[0])
        print(f"{k_u}\t{ds.singular_values[0]:.4e}\t{lk.in_mask_norm:.4e}\t{lk.out_mask_norm:.4e}\t"
              f"{lk.ratio:.4e}\t{lk.ratio / none.ratio:.3e}")


if __name__ == "__main__":
    main()
