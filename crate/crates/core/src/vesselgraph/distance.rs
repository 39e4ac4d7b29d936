use crate::raster::BinaryMask;

/// 1-D squared distance transform (lower envelope of parabolas). `f` must
/// contain at least one finite sample.
fn dt1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let first = f.iter().position(|x| x.is_finite()).expect("a finite sample");
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..f.len() {
        if f[q].is_infinite() {
            continue;
        }
        let mut s;
        loop {
            let p = v[k];
            s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        if s <= z[k] {
            // k == 0 and the new parabola dominates everywhere
            v[0] = q;
            z[1] = f64::INFINITY;
            continue;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact Euclidean distance from every pixel centre to the nearest
/// background pixel centre, treating everything outside the image as
/// background.
pub fn distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = mask.dims();
    let (pw, ph) = (w + 2, h + 2);
    let mut grid = vec![0.0; pw * ph];
    for y in 0..h {
        for x in 0..w {
            if mask.get(x, y) {
                grid[(y + 1) * pw + x + 1] = f64::INFINITY;
            }
        }
    }
    let n = pw.max(ph);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let (mut col, mut out) = (vec![0.0; ph], vec![0.0; ph]);
    for x in 0..pw {
        for y in 0..ph {
            col[y] = grid[y * pw + x];
        }
        dt1d(&col, &mut out, &mut v, &mut z);
        for y in 0..ph {
            grid[y * pw + x] = out[y];
        }
    }
    let mut row_out = vec![0.0; pw];
    for y in 0..ph {
        dt1d(&grid[y * pw..(y + 1) * pw], &mut row_out, &mut v, &mut z);
        grid[y * pw..(y + 1) * pw].copy_from_slice(&row_out);
    }
    let mut res = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            res.push(grid[(y + 1) * pw + x + 1].sqrt());
        }
    }
    res
}

/// Vessel radius at each skeleton pixel: distance to the background minus
/// half a pixel, in row-major order of the skeleton's foreground.
pub fn estimate_radius(mask: &BinaryMask, skel: &BinaryMask) -> Vec<((usize, usize), f64)> {
    let dt = distance_transform(mask);
    let w = mask.width();
    skel.foreground()
        .map(|(x, y)| ((x, y), dt[y * w + x] - 0.5))
        .collect()
}
