use crate::tensor::{Grid, Real};

/// Source coordinate for output index `i` under corner-aligned sampling: the
/// first and last output samples land exactly on the first and last inputs.
#[inline]
fn source_coord(i: usize, in_len: usize, out_len: usize) -> Real {
    if out_len == 1 || in_len == 1 {
        0.0
    } else {
        i as Real * (in_len - 1) as Real / (out_len - 1) as Real
    }
}

/// Bilinear interpolation with corner-aligned sampling.
pub fn bilinear_resize(map: &Grid<Real>, out_h: usize, out_w: usize) -> Grid<Real> {
    let (h, w) = map.dims();
    Grid::from_fn(out_h.max(1), out_w.max(1), |oy, ox| {
        let sy = source_coord(oy, h, out_h);
        let sx = source_coord(ox, w, out_w);
        let y0 = (sy.floor() as usize).min(h - 1);
        let x0 = (sx.floor() as usize).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let fy = sy - y0 as Real;
        let fx = sx - x0 as Real;
        let top = lerp(map.get(y0, x0), map.get(y0, x1), fx);
        let bottom = lerp(map.get(y1, x0), map.get(y1, x1), fx);
        lerp(top, bottom, fy)
    })
}

#[inline]
fn lerp(a: Real, b: Real, t: Real) -> Real {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}
