"""
Conventional parallel imaging on a simulated 8-coil phantom
===========================================================

GRAPPA fills the missing phase-encode lines with linear kernels calibrated on
the ACS block. VC-GRAPPA adds conjugate-reflected virtual coils, and
SVC-GRAPPA runs VC-GRAPPA on gradient-weighted k-space, then merges the two
gradient estimates by least squares. Results go to ``demo_out/``.
"""

# %%
from pathlib import Path

import numpy as np

from sparkrecon import grappa, kcore, simdata, vcsvc
from sparkrecon.bench import export_pgm

out = Path("demo_out")
out.mkdir(exist_ok=True)

acq = simdata.make_acquisition(simdata.AcquisitionParams(n=128, n_c=8, sigma=0.0, seed=1))
truth = kcore.rss_combine(kcore.ifft2c(acq.kspace))
export_pgm(out / "truth.pgm", truth)
print("coil maps", acq.maps.maps.shape, "k-space", acq.kspace.shape)

# %% [markdown]
# Every r-th line is kept, plus a fully sampled block of 24 lines around the
# center. At r=8 the default four-line kernel no longer fits in 24 ACS lines,
# so the two-line kernel is used.

# %%
def recon(method, und, mask):
    if method == "grappa":
        return grappa.grappa_reconstruct(und, mask)
    if method == "vc-grappa":
        return kcore.substitute_acquired(vcsvc.vc_grappa_reconstruct(und, mask), und, mask)
    return vcsvc.svc_grappa_reconstruct(und, mask)


methods = ("grappa", "vc-grappa", "svc-grappa")
print(f"{'r':>3} " + " ".join(f"{m:>11}" for m in methods))
for r in (2, 4, 8):
    mask = kcore.make_uniform_mask(128, r, 24)
    und = kcore.apply_mask(acq.kspace, mask)
    errs = []
    for m in methods:
        rec = recon(m, und, mask)
        errs.append(kcore.image_rmse(rec, acq.kspace))
        export_pgm(out / f"{m}_r{r}.pgm", kcore.rss_combine(kcore.ifft2c(rec)))
    print(f"{r:>3} " + " ".join(f"{e:11.4f}" for e in errs))

# %% [markdown]
# The gradient-domain variant pays off at the highest acceleration, where
# plain GRAPPA's noise-free aliasing residue is largest.

# %%
mask = kcore.make_uniform_mask(128, 8, 24)
und = kcore.apply_mask(acq.kspace, mask)
diff = np.abs(kcore.rss_combine(kcore.ifft2c(grappa.grappa_reconstruct(und, mask))) - truth)
export_pgm(out / "grappa_r8_diff.pgm", diff)
print("max |error| at r=8:", float(diff.max()))
