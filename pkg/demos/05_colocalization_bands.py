"""Colocalization curves with uniform confidence bands on synthetic images.

Two staining scenarios are simulated as intensity images: a double-staining
analogue (two noisy copies of the same blob) and a cross-staining analogue
(two separated blobs). Resampling keeps the transport problems small, the
curves record transported mass by squared distance, and the paired bootstrap
band shows the double staining is significantly more colocalized at small
scales.
"""

import numpy as np

import rotinf as ri


def blob(shape, cy, cx, width, floor=1e-3):
    ys, xs = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    img = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * width ** 2)) + floor
    return ri.IntensityImage(intensities=img, pixel_size=1.0)


def main():
    shape = (12, 12)
    double_a = blob(shape, 5.5, 5.5, 2.0)
    double_b = blob(shape, 5.5, 5.5, 2.1)
    cross_a = blob(shape, 3.0, 3.0, 1.6)
    cross_b = blob(shape, 8.5, 8.5, 1.6)
    n = 2000

    out_double = ri.rcol_pipeline(double_a, double_b, n=n, seed=1, lam0=0.05,
                                  band="bootstrap", B=100, keep_replicates=True)
    out_cross = ri.rcol_pipeline(cross_a, cross_b, n=n, seed=2, lam0=0.05,
                                 band="bootstrap", B=100, keep_replicates=True)

    print(f"double staining: support {out_double.support_sizes}, "
          f"lambda {out_double.lam:.3f}, band quantile {out_double.u_quantile:.3f}")
    print(f"cross staining:  support {out_cross.support_sizes}, "
          f"lambda {out_cross.lam:.3f}, band quantile {out_cross.u_quantile:.3f}")

    for label, out in (("double", out_double), ("cross", out_cross)):
        curve = out.curve
        probe = np.quantile(curve.thresholds, [0.05, 0.2, 0.5])
        vals = ", ".join(f"RCol({t:.0f})={curve(t):.3f}" for t in probe)
        print(f"  {label}: {vals}")

    diff = ri.rcol_diff(out_double.curve, out_cross.curve,
                        out_double.replicates, out_cross.replicates, alpha=0.05)
    small = diff.thresholds <= np.quantile(diff.thresholds, 0.25)
    significant = diff.lower[small] > 0
    print(f"\ndifference curve on the smallest quarter of scales: "
          f"{significant.sum()} of {small.sum()} thresholds significantly positive")
    t_sig = diff.thresholds[small][significant]
    if t_sig.size:
        print(f"significant from squared distance {t_sig.min():.1f} "
              f"to {t_sig.max():.1f}")

    # Gaussian-limit band as the cheaper alternative on one pairing
    gauss = ri.rcol_pipeline(double_a, double_b, n=n, seed=1, lam0=0.05,
                             band="gaussian", draws=1000)
    print(f"\ngaussian band quantile {gauss.u_quantile:.3f} "
          f"(bootstrap gave {out_double.u_quantile:.3f})")


if __name__ == "__main__":
    main()
