"""Dev scratch: tune the A4 synthetic-recovery run (deleted before ship)."""
import time
import numpy as np
from voxatar.body_model import desk_body, pose_body, inside_body, body_part_colors
from voxatar.config import RunConfig
from voxatar.guidance import MultiViewTargetOracle, NoiseSchedule
from voxatar.optimize import train_coarse, occupancy_iou
from voxatar.raster import Camera, PALETTE
from voxatar.renderer import RenderSettings, render
from voxatar.schedule import StagePlan
from voxatar.regularize import SmoothConfig
from voxatar.voxel_field import Bounds, VoxelField, inverse_activate_density


def ground_truth_field(posed, prims, dims=64, pad=0.06, sigma_in=150.0):
    v = posed.vertices
    lo = v.min(0) - pad
    hi = v.max(0) + pad
    bounds = Bounds(tuple(lo), tuple(hi))
    gt = VoxelField.zeros(bounds, (dims, dims, dims))
    centers = gt.cell_centers()
    occ = inside_body(prims, centers)
    raw_in = inverse_activate_density(sigma_in)
    gt.density_raw = np.where(occ, raw_in, -20.0)
    gt.color = body_part_colors(prims, centers, PALETTE)
    gt.color[~occ] = 0.5
    return gt


def fixed_cameras(fov=55.0, res=64, target=(0, 0, 0),
                  rings=((2.1, (-25.0, 15.0, 55.0)),
                         (1.7, (-15.0, 25.0)),
                         (1.45, (-5.0, 20.0, 45.0))),
                  n_az=8):
    """64 full-body views on concentric rings; the closer rings trade a
    little frame coverage for finer pixel footprint on the surface."""
    tgt = np.asarray(target)
    cams = []
    k = 0
    for radius, elevations in rings:
        for el in elevations:
            for ai in range(n_az):
                az = 360.0 * (ai + 0.37 * k) / n_az
                cams.append(Camera(radius=radius, azimuth=az, elevation=el,
                                   target=tuple(tgt), fov_y=fov,
                                   width=res, height=res))
            k += 1
    return cams


def run(seed=0, iters=1200, doubles=(200, 400, 600), shrink=800, lam=1e-3,
        res=64, lr_d=0.1, lr_c=0.05, n_vox=64 ** 3, outdir="/tmp/a4"):
    template, prims = desk_body()
    posed = pose_body(template)
    gt = ground_truth_field(posed, prims)
    centroid = tuple(posed.vertices.mean(0))
    cams = fixed_cameras(res=res, target=centroid)
    schedule = NoiseSchedule.cosine()
    settings = RenderSettings(background=(1.0, 1.0, 1.0))
    targets = {}
    for cam in cams:
        targets[cam] = render(gt, cam, settings).rgb
    oracle = MultiViewTargetOracle(targets, schedule)

    cfg = RunConfig(
        seed=seed, output_dir=outdir,
        plan=StagePlan(grid_double_steps=doubles, bbox_shrink_step=shrink,
                       radius_stage_steps=(), radius_stages=((1.4, 2.1),),
                       focus_start_step=None, final_n_voxels=n_vox,
                       coarse_iters=iters),
        smooth=SmoothConfig(coefficient=lam),
        resolution=res, background=(1.0, 1.0, 1.0),
        lr_density=lr_d, lr_color=lr_c, snapshot_every=0,
    )
    t0 = time.time()
    field, report = train_coarse(cfg, template=template, oracle=oracle, cameras=cams)
    dt = time.time() - t0
    iou = occupancy_iou(field, gt, 0.1)
    print(f"seed={seed} iters={iters} lam={lam}: IoU={iou:.4f} "
          f"({dt:.0f}s, {1000*dt/iters:.0f}ms/it) dims={field.dims}")
    return field, gt, report, iou


if __name__ == "__main__":
    import sys
    iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1200
    run(iters=iters)
