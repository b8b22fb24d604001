//! Small dense-vector helpers on `&[f64]`.

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `a + s * b`
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect()
}

pub fn is_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// Closest point of `conv(points)` to `target`, by Gilbert's algorithm.
///
/// Returns the point and its distance. Exact for one or two points.
pub fn closest_in_hull(points: &[Vec<f64>], target: &[f64]) -> (Vec<f64>, f64) {
    assert!(!points.is_empty(), "closest_in_hull on empty point list");
    if points.len() == 1 {
        return (points[0].clone(), dist(&points[0], target));
    }
    if points.len() == 2 {
        let seg = sub(&points[1], &points[0]);
        let len2 = dot(&seg, &seg);
        let w = if len2 == 0.0 {
            0.0
        } else {
            (dot(&sub(target, &points[0]), &seg) / len2).clamp(0.0, 1.0)
        };
        let p = axpy(&points[0], w, &seg);
        let d = dist(&p, target);
        return (p, d);
    }
    // Shift so the target is the origin and minimize |y| over the hull.
    let shifted: Vec<Vec<f64>> = points.iter().map(|p| sub(p, target)).collect();
    let mut y = shifted
        .iter()
        .min_by(|a, b| norm(a).total_cmp(&norm(b)))
        .cloned()
        .unwrap();
    for _ in 0..2000 {
        let yy = dot(&y, &y);
        if yy == 0.0 {
            break;
        }
        let s = shifted.iter().min_by(|a, b| dot(a, &y).total_cmp(&dot(b, &y))).unwrap();
        let gap = yy - dot(s, &y);
        if gap <= 1e-15 * yy.max(1.0) {
            break;
        }
        let d = sub(s, &y);
        let dd = dot(&d, &d);
        if dd == 0.0 {
            break;
        }
        let w = (-dot(&y, &d) / dd).clamp(0.0, 1.0);
        y = axpy(&y, w, &d);
    }
    let d = norm(&y);
    (add(&y, target), d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_distance_of_square() {
        let sq = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        let (_, d) = closest_in_hull(&sq, &[0.5, 0.5]);
        assert!(d < 1e-9);
        let (p, d) = closest_in_hull(&sq, &[2.0, 0.5]);
        assert!((d - 1.0).abs() < 1e-6, "{d}");
        assert!((p[0] - 1.0).abs() < 1e-6 && (p[1] - 0.5).abs() < 1e-6);
        let (_, d) = closest_in_hull(&sq, &[-3.0, -4.0]);
        assert!((d - 5.0).abs() < 1e-6);
    }

    #[test]
    fn segment_projection_is_exact() {
        let seg = vec![vec![0.0, 0.0], vec![0.0, 2.0]];
        let (p, d) = closest_in_hull(&seg, &[1.0, 1.0]);
        assert_eq!(p, vec![0.0, 1.0]);
        assert_eq!(d, 1.0);
    }
}
