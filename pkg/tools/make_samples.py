"""Regenerate the bundled sample stereo pair and rig.

A textured plane at Z = 1.0 m seen by an already-rectified rig with
fx = 700 px and a 60 mm baseline, i.e. a constant true disparity of 42 px.
"""

from pathlib import Path

import numpy as np
from scipy import ndimage

from stereopipe.calib import CameraIntrinsics, DistortionCoeffs, StereoRig
from stereopipe.image import save_pnm

W, H = 160, 120
DISPARITY = 42
FX = 700.0
BASELINE = 0.06


def main():
    out = Path(__file__).resolve().parent.parent / "src" / "stereopipe" / "samples"
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(42)
    texture = rng.integers(0, 256, (H, W + DISPARITY)).astype(np.float64)
    texture = ndimage.gaussian_filter(texture, 0.6)
    texture = np.clip(np.floor(texture + 0.5), 0, 255).astype(np.uint8)
    # left(x) = right(x - DISPARITY): the right view sees the plane shifted
    left = texture[:, :W]
    right = texture[:, DISPARITY:]
    (out / "left.pgm").write_bytes(save_pnm(left))
    (out / "right.pgm").write_bytes(save_pnm(right))
    K = CameraIntrinsics(fx=FX, fy=FX, cx=W / 2.0, cy=H / 2.0)
    rig = StereoRig.from_calibration(
        K, DistortionCoeffs(), K, DistortionCoeffs(),
        np.eye(3), np.array([-BASELINE, 0.0, 0.0]), (W, H),
    )
    (out / "rig.json").write_text(rig.to_json())
    print(f"wrote samples to {out}")


if __name__ == "__main__":
    main()
