use super::Volume;
use crate::error::Result;

/// Resample to 1 mm isotropic spacing.
///
/// Output dims are `round(dims * spacing)` per axis. Voxel centres are aligned
/// so both grids cover the same field of view; samples falling outside the
/// input are clamped to the edge voxels. Continuous intents use trilinear
/// interpolation, labels use nearest neighbour.
pub fn conform(v: &Volume) -> Result<Volume> {
    let spacing = v.spacing();
    if spacing == [1.0; 3] {
        return Ok(v.clone());
    }
    let dims = v.dims();
    let mut out_dims = [0usize; 3];
    for a in 0..3 {
        out_dims[a] = ((dims[a] as f64 * spacing[a]).round() as usize).max(1);
    }

    // Input index coordinate of each output voxel centre, per axis.
    let coords: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            (0..out_dims[a])
                .map(|j| ((j as f64 + 0.5) / spacing[a] - 0.5).clamp(0.0, (dims[a] - 1) as f64))
                .collect()
        })
        .collect();

    let label = v.intent().is_label();
    let mut data = Vec::with_capacity(out_dims.iter().product());
    for &z in &coords[2] {
        for &y in &coords[1] {
            for &x in &coords[0] {
                data.push(if label {
                    v.get(nearest(x), nearest(y), nearest(z))
                } else {
                    trilinear(v, x, y, z)
                });
            }
        }
    }
    Ok(Volume::new(out_dims, [1.0; 3], data, v.intent())?.with_orientation(*v.orientation()))
}

fn nearest(x: f64) -> usize {
    // round-half-down keeps ties on the lower voxel
    let f = x.floor();
    if x - f > 0.5 {
        f as usize + 1
    } else {
        f as usize
    }
}

fn axis_weights(x: f64, n: usize) -> (usize, usize, f64) {
    let i0 = (x.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, x - i0 as f64)
}

fn trilinear(v: &Volume, x: f64, y: f64, z: f64) -> f64 {
    let d = v.dims();
    let (x0, x1, fx) = axis_weights(x, d[0]);
    let (y0, y1, fy) = axis_weights(y, d[1]);
    let (z0, z1, fz) = axis_weights(z, d[2]);
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + (b - a) * t };
    let c00 = lerp(v.get(x0, y0, z0), v.get(x1, y0, z0), fx);
    let c10 = lerp(v.get(x0, y1, z0), v.get(x1, y1, z0), fx);
    let c01 = lerp(v.get(x0, y0, z1), v.get(x1, y0, z1), fx);
    let c11 = lerp(v.get(x0, y1, z1), v.get(x1, y1, z1), fx);
    lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
}
