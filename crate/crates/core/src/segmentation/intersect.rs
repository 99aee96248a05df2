/// Upper bound on grid cells per axis.
const MAX_CELLS: f64 = 64.0;

/// First crossing between two non-adjacent segments of an open polyline,
/// found with a uniform-grid bucket sweep.
pub fn first_self_intersection(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len();
    if n < 4 {
        return None;
    }
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    let mut longest = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        xmin = xmin.min(p.0);
        xmax = xmax.max(p.0);
        ymin = ymin.min(p.1);
        ymax = ymax.max(p.1);
        if i > 0 {
            longest = longest.max((p.0 - points[i - 1].0).hypot(p.1 - points[i - 1].1));
        }
    }
    if !(xmin.is_finite() && xmax.is_finite() && ymin.is_finite() && ymax.is_finite()) {
        return None;
    }
    let cell = longest.max((xmax - xmin).max(ymax - ymin) / MAX_CELLS).max(1e-9);
    let nx = ((xmax - xmin) / cell) as usize + 1;
    let ny = ((ymax - ymin) / cell) as usize + 1;
    let cells_of = |i: usize| {
        let (a, b) = (points[i], points[i + 1]);
        let cx = |v: f64| (((v - xmin) / cell) as usize).min(nx - 1);
        let cy = |v: f64| (((v - ymin) / cell) as usize).min(ny - 1);
        (cx(a.0.min(b.0)), cx(a.0.max(b.0)), cy(a.1.min(b.1)), cy(a.1.max(b.1)))
    };

    // Bucket every segment (compressed rows: counts, offsets, fill).
    let mut start = vec![0usize; nx * ny + 1];
    for i in 0..n - 1 {
        let (x0, x1, y0, y1) = cells_of(i);
        for gy in y0..=y1 {
            for gx in x0..=x1 {
                start[gy * nx + gx + 1] += 1;
            }
        }
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut fill = start.clone();
    let mut members = vec![0usize; start[nx * ny]];
    for i in 0..n - 1 {
        let (x0, x1, y0, y1) = cells_of(i);
        for gy in y0..=y1 {
            for gx in x0..=x1 {
                let c = gy * nx + gx;
                members[fill[c]] = i;
                fill[c] += 1;
            }
        }
    }

    for i in 2..n - 1 {
        let (a, b) = (points[i], points[i + 1]);
        let (x0, x1, y0, y1) = cells_of(i);
        let mut hit: Option<(usize, (f64, f64))> = None;
        for gy in y0..=y1 {
            for gx in x0..=x1 {
                let c = gy * nx + gx;
                // Members are in increasing segment order.
                for &j in &members[start[c]..start[c + 1]] {
                    if j + 1 >= i {
                        break;
                    }
                    if hit.is_some_and(|(k, _)| k <= j) {
                        continue;
                    }
                    if let Some(p) = segment_crossing(points[j], points[j + 1], a, b) {
                        hit = Some((j, p));
                    }
                }
            }
        }
        if let Some((_, p)) = hit {
            return Some(p);
        }
    }
    None
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Intersection point of closed segments `pq` and `rs`, if any.
fn segment_crossing(p: (f64, f64), q: (f64, f64), r: (f64, f64), s: (f64, f64)) -> Option<(f64, f64)> {
    let d1 = cross(r, s, p);
    let d2 = cross(r, s, q);
    let d3 = cross(p, q, r);
    let d4 = cross(p, q, s);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        let t = d1 / (d1 - d2);
        return Some((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
    }
    let on = |a: (f64, f64), b: (f64, f64), c: (f64, f64), d: f64| {
        d == 0.0 && c.0 >= a.0.min(b.0) && c.0 <= a.0.max(b.0) && c.1 >= a.1.min(b.1) && c.1 <= a.1.max(b.1)
    };
    if on(r, s, p, d1) {
        return Some(p);
    }
    if on(r, s, q, d2) {
        return Some(q);
    }
    if on(p, q, r, d3) {
        return Some(r);
    }
    if on(p, q, s, d4) {
        return Some(s);
    }
    None
}
